//! Configuration-driven commands that write CSV data, JSON summaries and a run manifest.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::discretize::{build_grid, GridScheme, Point};
use crate::error::{Error, Result};
use crate::linalg::weighted_operator_norm;
use crate::lowenergy::{
    coupling_scan, expansion_error_scan, lambda_ladder, low_energy_expansion_with, regularity_test, ve0v_hs,
    ScalingExponents, DEFAULT_TAU_RELATIVE, LADDER_PER_DECADE,
};
use crate::oscint::{born_chain_integral, lemma2_check, BornPhaseInstance, FilonOptions, TabulatedAmplitude};
use crate::potential::{build_potential, PotentialSpec, SampledPotential};
use crate::propagator::{
    born_series_resolvent, free_evolution, lattice_oracle, spectral_evolution, DecayReport, DecayRow, EvolutionConfig, Method,
};
use crate::specfun::Sign;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Classify,
    Expand,
    Evolve,
    Decay,
    Born,
    Lemma2,
    BornChain,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::Classify,
        Command::Expand,
        Command::Evolve,
        Command::Decay,
        Command::Born,
        Command::Lemma2,
        Command::BornChain,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Classify => "classify",
            Command::Expand => "expand",
            Command::Evolve => "evolve",
            Command::Decay => "decay",
            Command::Born => "born",
            Command::Lemma2 => "lemma2",
            Command::BornChain => "born-chain",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Command::ALL.iter().map(|c| c.name()).collect();
            Error::config("command", format!("unknown command '{s}'; expected one of {}", names.join(", ")))
        })
    }
}

fn default_tau() -> f64 {
    DEFAULT_TAU_RELATIVE
}
fn default_fit_lo() -> f64 {
    1e-6
}
fn default_fit_hi() -> f64 {
    1e-3
}
fn default_scaling_lo() -> f64 {
    1e-5
}
fn default_scaling_hi() -> f64 {
    1e-2
}
fn default_per_decade() -> usize {
    LADDER_PER_DECADE
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LowEnergyConfig {
    #[serde(default = "default_tau")]
    pub tau_relative: f64,
    /// Ladder on which `P M⁺(λ)⁻¹ P` is fitted.
    #[serde(default = "default_fit_lo")]
    pub fit_min: f64,
    #[serde(default = "default_fit_hi")]
    pub fit_max: f64,
    /// Ladder for the error scaling diagnostics.
    #[serde(default = "default_scaling_lo")]
    pub scaling_min: f64,
    #[serde(default = "default_scaling_hi")]
    pub scaling_max: f64,
    #[serde(default = "default_per_decade")]
    pub per_decade: usize,
}

impl Default for LowEnergyConfig {
    fn default() -> Self {
        LowEnergyConfig {
            tau_relative: default_tau(),
            fit_min: default_fit_lo(),
            fit_max: default_fit_hi(),
            scaling_min: default_scaling_lo(),
            scaling_max: default_scaling_hi(),
            per_decade: default_per_decade(),
        }
    }
}

impl LowEnergyConfig {
    fn validate(&self) -> Result<()> {
        if !(self.tau_relative > 0.0 && self.tau_relative < 1.0) {
            return Err(Error::config("lowenergy.tau_relative", "must lie in (0, 1)"));
        }
        if !(self.fit_min > 0.0 && self.fit_min < self.fit_max) {
            return Err(Error::config("lowenergy.fit_min", "need 0 < fit_min < fit_max"));
        }
        if !(self.scaling_min > 0.0 && self.scaling_min < self.scaling_max) {
            return Err(Error::config("lowenergy.scaling_min", "need 0 < scaling_min < scaling_max"));
        }
        if self.per_decade < 2 {
            return Err(Error::config("lowenergy.per_decade", "must be at least 2"));
        }
        Ok(())
    }
}

fn default_terms() -> usize {
    6
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BornConfig {
    /// Energy `λ`; defaults to `2·evolution.lambda1`.
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default = "default_terms")]
    pub terms: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub coupling_min: f64,
    pub coupling_max: f64,
    pub steps: usize,
}

impl ScanConfig {
    fn couplings(&self) -> Result<Vec<f64>> {
        if !(self.coupling_min < self.coupling_max && self.steps >= 1) {
            return Err(Error::config("scan.coupling_min", "need coupling_min < coupling_max and steps ≥ 1"));
        }
        let h = (self.coupling_max - self.coupling_min) / self.steps as f64;
        Ok((0..=self.steps).map(|k| self.coupling_min + h * k as f64).collect())
    }
}

fn default_t_ladder() -> Vec<f64> {
    vec![1.0, 10.0, 100.0, 1e3, 1e4]
}
fn default_nodes() -> usize {
    121
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lemma2Config {
    #[serde(default = "default_t_ladder")]
    pub t_list: Vec<f64>,
    /// Table size of the coarse amplitude; the refined run uses `2·nodes − 1`.
    #[serde(default = "default_nodes")]
    pub nodes: usize,
}

impl Default for Lemma2Config {
    fn default() -> Self {
        Lemma2Config { t_list: default_t_ladder(), nodes: default_nodes() }
    }
}

fn default_distances() -> Vec<f64> {
    vec![0.05, 0.1, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0]
}
fn default_cutoffs() -> Vec<f64> {
    vec![1.0, 4.0, 16.0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BornChainConfig {
    #[serde(default = "default_distances")]
    pub distances: Vec<f64>,
    #[serde(default = "default_t_ladder")]
    pub t_list: Vec<f64>,
    /// Cutoff scales `L`; the uncut integral is added whenever its support is bounded.
    #[serde(default = "default_cutoffs")]
    pub cutoff_scales: Vec<f64>,
    #[serde(default)]
    pub quadrature: FilonOptions,
}

impl Default for BornChainConfig {
    fn default() -> Self {
        BornChainConfig {
            distances: default_distances(),
            t_list: default_t_ladder(),
            cutoff_scales: default_cutoffs(),
            quadrature: FilonOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub potential: Option<PotentialSpec>,
    #[serde(default)]
    pub grid: Option<GridScheme>,
    #[serde(default)]
    pub lowenergy: Option<LowEnergyConfig>,
    #[serde(default)]
    pub evolution: Option<EvolutionConfig>,
    #[serde(default)]
    pub born: Option<BornConfig>,
    #[serde(default)]
    pub scan: Option<ScanConfig>,
    #[serde(default)]
    pub lemma2: Option<Lemma2Config>,
    #[serde(default)]
    pub born_chain: Option<BornChainConfig>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path == "." { "config".to_string() } else { path }, e.into_inner().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// SHA-256 of the canonical JSON form, without the output directory, truncated to 16 hex digits.
    pub fn hash(&self) -> String {
        let canonical = RunConfig { output_dir: None, ..self.clone() };
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(&Sha256::digest(&bytes)[..8])
    }

    /// Sample the configured potential on the configured grid.
    pub fn sampled_potential(&self) -> Result<SampledPotential> {
        let spec = self.potential.as_ref().ok_or_else(|| missing("potential"))?;
        let scheme = self.grid.ok_or_else(|| missing("grid"))?;
        build_potential(spec, build_grid(scheme)?)
    }

    fn evolution(&self) -> Result<&EvolutionConfig> {
        let e = self.evolution.as_ref().ok_or_else(|| missing("evolution"))?;
        e.validate()?;
        Ok(e)
    }
}

fn missing(section: &str) -> Error {
    Error::config(section, "section is required by this command")
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: Option<String>,
    pub version: String,
    pub wall_time_s: f64,
    pub outputs: Vec<String>,
    pub status: String,
    pub exit_code: i32,
    pub error: Option<String>,
}

/// Write-then-rename so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.{}.tmp", std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Outputs<'a> {
    dir: &'a Path,
    hash: String,
    written: Vec<PathBuf>,
}

impl Outputs<'_> {
    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        #[derive(Serialize)]
        struct Tagged<'a, T> {
            config_hash: &'a str,
            version: &'a str,
            #[serde(flatten)]
            body: &'a T,
        }
        let mut bytes = serde_json::to_vec_pretty(&Tagged { config_hash: &self.hash, version: VERSION, body: value })?;
        bytes.push(b'\n');
        self.file(name, &bytes)
    }

    fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let mut body = csv::Writer::from_writer(Vec::new());
        for row in rows {
            body.serialize(row)?;
        }
        let body = body.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        let mut w = csv::Writer::from_writer(Vec::new());
        for (k, record) in csv::ReaderBuilder::new().has_headers(false).from_reader(body.as_slice()).records().enumerate() {
            let record = record?;
            let first = if k == 0 { "config_hash" } else { self.hash.as_str() };
            w.write_record(std::iter::once(first).chain(record.iter()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        self.file(name, &bytes)
    }

    fn file(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        write_atomic(&path, bytes)?;
        self.written.push(path);
        Ok(())
    }
}

/// Run one command, writing its artifacts under `out_dir`; returns the files written.
pub fn run(command: Command, config: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let mut out = Outputs { dir: out_dir, hash: config.hash(), written: Vec::new() };
    match command {
        Command::Classify => classify(config, &mut out)?,
        Command::Expand => expand(config, &mut out)?,
        Command::Evolve => evolve(config, &mut out)?,
        Command::Decay => decay(config, &mut out)?,
        Command::Born => born(config, &mut out)?,
        Command::Lemma2 => lemma2(config, &mut out)?,
        Command::BornChain => born_chain(config, &mut out)?,
    }
    Ok(out.written)
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

/// Parse, run and always emit `manifest.json`; returns the process exit status with the manifest.
pub fn execute(command: &str, opts: &RunOptions) -> (i32, RunManifest) {
    let start = Instant::now();
    let mut manifest = RunManifest {
        command: command.to_string(),
        config_hash: None,
        version: VERSION.to_string(),
        wall_time_s: 0.0,
        outputs: Vec::new(),
        status: "ok".into(),
        exit_code: 0,
        error: None,
    };
    let parsed = RunConfig::load(&opts.config).map(|mut c| {
        if let Some(seed) = opts.seed {
            c.seed = seed;
        }
        c
    });
    let out_dir = opts
        .out
        .clone()
        .or_else(|| parsed.as_ref().ok().and_then(|c| c.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"));
    let result = parsed.and_then(|config| {
        manifest.config_hash = Some(config.hash());
        let cmd = Command::from_str(command)?;
        run(cmd, &config, &out_dir)
    });
    match result {
        Ok(files) => manifest.outputs = files.iter().map(|p| p.display().to_string()).collect(),
        Err(e) => {
            manifest.status = "error".into();
            manifest.exit_code = e.exit_code();
            manifest.error = Some(e.to_string());
        }
    }
    manifest.wall_time_s = start.elapsed().as_secs_f64();
    let written = fs::create_dir_all(&out_dir).map_err(Error::from).and_then(|_| {
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        write_atomic(&out_dir.join("manifest.json"), &bytes)
    });
    if let Err(e) = written {
        log::error!("could not write manifest: {e}");
        if manifest.exit_code == 0 {
            manifest.exit_code = e.exit_code();
        }
    }
    (manifest.exit_code, manifest)
}

fn classify(config: &RunConfig, out: &mut Outputs<'_>) -> Result<()> {
    let le = config.lowenergy.clone().unwrap_or_default();
    le.validate()?;
    let pot = config.sampled_potential()?;
    let report = regularity_test(&pot, le.tau_relative)?;
    #[derive(Serialize)]
    struct Summary<'a> {
        #[serde(flatten)]
        report: &'a crate::lowenergy::RegularityReport,
        scan: Option<ScanSummary>,
    }
    #[derive(Serialize)]
    struct ScanSummary {
        flips: usize,
        crossings: Vec<crate::lowenergy::Crossing>,
    }
    let scan = match &config.scan {
        Some(s) => {
            let spec = config.potential.as_ref().expect("checked above");
            let result = coupling_scan(spec, &pot.grid, &s.couplings()?, le.tau_relative)?;
            out.csv("scan.csv", &result.rows)?;
            Some(ScanSummary { flips: result.flips, crossings: result.crossings })
        }
        None => None,
    };
    out.json("classify.json", &Summary { report: &report, scan })
}

fn slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / points.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>()
}

fn expand(config: &RunConfig, out: &mut Outputs<'_>) -> Result<()> {
    let le = config.lowenergy.clone().unwrap_or_default();
    le.validate()?;
    let pot = config.sampled_potential()?;
    let report = regularity_test(&pot, le.tau_relative)?;
    let fit = lambda_ladder(le.fit_min, le.fit_max, le.per_decade);
    let exp = low_energy_expansion_with(&pot, &report, &fit)?;
    let ladder = lambda_ladder(le.scaling_min, le.scaling_max, le.per_decade);

    #[derive(Serialize)]
    struct Row {
        sign: &'static str,
        lambda: f64,
        e_hs: f64,
        e_hs_scaled: f64,
        e_derivative_scaled: Option<f64>,
        ve0v_hs: f64,
        condition: f64,
    }
    let mut rows = Vec::new();
    let mut exponents = Vec::new();
    let mut derivative_spread = Vec::new();
    for sign in [Sign::Plus, Sign::Minus] {
        let scan = expansion_error_scan(&exp, sign, &ladder)?;
        let ve: Vec<f64> = ladder.iter().map(|&l| ve0v_hs(&pot, sign, l)).collect::<Result<_>>()?;
        let e_exp = slope(&scan.iter().map(|r| (r.lambda.ln(), r.hs.ln())).collect::<Vec<_>>());
        let ve_exp = slope(&ladder.iter().zip(&ve).map(|(l, v)| (l.ln(), v.ln())).collect::<Vec<_>>());
        let d: Vec<f64> = scan.iter().filter_map(|r| r.hs_derivative_scaled).collect();
        let (lo, hi) = d.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
        derivative_spread.push(hi / lo);
        exponents.push(ScalingExponents { ve0v: ve_exp, e_plus: e_exp });
        for (r, v) in scan.iter().zip(&ve) {
            rows.push(Row {
                sign: sign.tag(),
                lambda: r.lambda,
                e_hs: r.hs,
                e_hs_scaled: r.hs_scaled,
                e_derivative_scaled: r.hs_derivative_scaled,
                ve0v_hs: *v,
                condition: r.condition,
            });
        }
    }
    out.csv("e_scaling.csv", &rows)?;

    #[derive(Serialize)]
    struct Summary {
        #[serde(flatten)]
        expansion: crate::lowenergy::ExpansionSummary,
        l1_norm: f64,
        expected_a: f64,
        expected_im_z: f64,
        minus_exponents: MinusExponents,
        derivative_max_over_min: [f64; 2],
    }
    #[derive(Serialize)]
    struct MinusExponents {
        ve0v: f64,
        e_minus: f64,
    }
    let minus = exponents.pop().map(|e| MinusExponents { ve0v: e.ve0v, e_minus: e.e_plus }).expect("two signs");
    let plus = exponents.pop().expect("two signs");
    out.json(
        "expand.json",
        &Summary {
            expansion: exp.summary(Some(plus)),
            l1_norm: pot.l1_norm,
            expected_a: -pot.l1_norm / (2.0 * std::f64::consts::PI),
            expected_im_z: pot.l1_norm / 4.0,
            minus_exponents: minus,
            derivative_max_over_min: [derivative_spread[0], derivative_spread[1]],
        },
    )
}

#[derive(Serialize)]
struct MethodSummary {
    method: Method,
    exponent: f64,
    ci: f64,
}

#[derive(Serialize)]
struct CsvDecayRow {
    t: f64,
    value: f64,
    method: Method,
    converged: bool,
}

fn decay_rows(report: &DecayReport) -> Vec<CsvDecayRow> {
    report
        .rows
        .iter()
        .map(|r| CsvDecayRow { t: r.t, value: r.value, method: report.method_tag, converged: r.converged })
        .collect()
}

fn summary(report: &DecayReport) -> MethodSummary {
    MethodSummary { method: report.method_tag, exponent: report.fitted_exponent, ci: report.exponent_ci }
}

fn evolve(config: &RunConfig, out: &mut Outputs<'_>) -> Result<()> {
    let cfg = config.evolution()?;
    let pot = config.sampled_potential()?;
    let result = spectral_evolution(&pot, cfg)?;
    #[derive(Serialize)]
    struct ProbeRow {
        t: f64,
        x: f64,
        y: f64,
        re: f64,
        im: f64,
        abs: f64,
    }
    let mut rows = Vec::new();
    for (t, values) in cfg.t_list.iter().zip(&result.values) {
        for (p, z) in result.probes.iter().zip(values) {
            rows.push(ProbeRow { t: *t, x: p[0], y: p[1], re: z.re, im: z.im, abs: z.norm() });
        }
    }
    out.csv("evolve.csv", &rows)?;
    out.csv("decay.csv", &decay_rows(&result.report))?;
    #[derive(Serialize)]
    struct Summary {
        #[serde(flatten)]
        fit: MethodSummary,
        tail_change: Option<f64>,
        evaluations: usize,
    }
    out.json(
        "evolve.json",
        &Summary { fit: summary(&result.report), tail_change: result.tail_change, evaluations: result.evaluations },
    )
}

/// Unit-mass square bump of half width 0.05 at `center`, evolved freely to the probes.
fn free_report(cfg: &EvolutionConfig) -> Result<DecayReport> {
    let bump = build_grid(GridScheme::cartesian(8, 0.05))?;
    let mut shifted = (*bump).clone();
    shifted.nodes.iter_mut().for_each(|x| {
        x[0] += cfg.source[0];
        x[1] += cfg.source[1];
    });
    let f = vec![1.0 / shifted.total_weight(); shifted.len()];
    let probes: Vec<Point> = cfg.probes.points();
    let rows = cfg
        .t_list
        .iter()
        .map(|&t| Ok(DecayRow { t, value: free_evolution(&f, &shifted, &probes, t)?.sup, converged: true }))
        .collect::<Result<Vec<_>>>()?;
    DecayReport::new(rows, Method::Free)
}

fn decay(config: &RunConfig, out: &mut Outputs<'_>) -> Result<()> {
    let cfg = config.evolution()?;
    let spec = config.potential.as_ref().ok_or_else(|| missing("potential"))?;
    let mut reports = Vec::new();
    if spec.family == crate::potential::PotentialFamily::Zero || spec.amplitude == 0.0 {
        reports.push(free_report(cfg)?);
    } else {
        let pot = config.sampled_potential()?;
        reports.push(spectral_evolution(&pot, cfg)?.report);
    }
    if cfg.lattice.is_some() {
        reports.push(lattice_oracle(spec, cfg)?.0);
    }
    let rows: Vec<CsvDecayRow> = reports.iter().flat_map(decay_rows).collect();
    out.csv("decay.csv", &rows)?;
    #[derive(Serialize)]
    struct Summary {
        methods: Vec<MethodSummary>,
        exponent_difference: Option<f64>,
    }
    let exponent_difference = (reports.len() == 2).then(|| (reports[0].fitted_exponent - reports[1].fitted_exponent).abs());
    out.json("decay.json", &Summary { methods: reports.iter().map(summary).collect(), exponent_difference })
}

fn born(config: &RunConfig, out: &mut Outputs<'_>) -> Result<()> {
    let bc = config.born.clone().unwrap_or(BornConfig { lambda: None, terms: default_terms() });
    let lambda = match (bc.lambda, &config.evolution) {
        (Some(l), _) => l,
        (None, Some(e)) => 2.0 * e.lambda1,
        (None, None) => return Err(Error::config("born.lambda", "set born.lambda or provide an evolution section")),
    };
    if !(lambda > 0.0) {
        return Err(Error::config("born.lambda", "must be positive"));
    }
    let pot = config.sampled_potential()?;
    let series = born_series_resolvent(Sign::Plus, lambda, bc.terms, &pot)?;
    let exact = crate::lowenergy::symmetric_resolvent(Sign::Plus, lambda, &pot)?.matrix;
    let w = &pot.grid.weights;
    let scale = weighted_operator_norm(&exact, w);
    #[derive(Serialize)]
    struct Row {
        terms: usize,
        relative_error: f64,
        ratio: Option<f64>,
        contraction: f64,
    }
    let errors: Vec<f64> = series.partial_sums.iter().map(|s| weighted_operator_norm(&(s - &exact), w) / scale).collect();
    let rho = series.contraction;
    let rows: Vec<Row> = errors
        .iter()
        .enumerate()
        .map(|(n, &e)| Row { terms: n, relative_error: e, ratio: (n > 0).then(|| e / errors[n - 1]), contraction: rho })
        .collect();
    out.csv("born.csv", &rows)?;
    #[derive(Serialize)]
    struct Summary {
        lambda: f64,
        contraction: f64,
        ratios: Vec<f64>,
        ratios_within_half_to_twice_contraction: bool,
    }
    let ratios: Vec<f64> = rows.iter().filter_map(|r| r.ratio).collect();
    let within = ratios.iter().all(|&r| r >= 0.5 * rho && r <= 2.0 * rho);
    out.json("born.json", &Summary { lambda, contraction: rho, ratios, ratios_within_half_to_twice_contraction: within })
}

/// Amplitude families for the stationary phase sweep: value and derivative with their support.
pub fn lemma2_families() -> Vec<(&'static str, fn(f64) -> (f64, f64), f64)> {
    fn gaussian(x: f64) -> (f64, f64) {
        let g = (-x * x).exp();
        (g, -2.0 * x * g)
    }
    fn bump(x: f64) -> (f64, f64) {
        let u = 1.0 - x * x / 4.0;
        if u <= 0.0 {
            return (0.0, 0.0);
        }
        (u.powi(4), -2.0 * x * u.powi(3))
    }
    fn modulated(x: f64) -> (f64, f64) {
        let g = (-0.5 * x * x).exp();
        let c = (3.0 * x).cos();
        (c * g, (-3.0 * (3.0 * x).sin() - x * c) * g)
    }
    vec![("gaussian", gaussian, 6.0), ("polynomial-bump", bump, 2.0), ("modulated-gaussian", modulated, 8.5)]
}

fn quadratic_phase(x: f64) -> (f64, f64, f64) {
    (x * x, 2.0 * x, 2.0)
}

fn lemma2(config: &RunConfig, out: &mut Outputs<'_>) -> Result<()> {
    let lc = config.lemma2.clone().unwrap_or_default();
    if lc.nodes < 5 || lc.t_list.is_empty() {
        return Err(Error::config("lemma2.nodes", "need at least 5 nodes and one time"));
    }
    #[derive(Serialize)]
    struct Row {
        family: &'static str,
        nodes: usize,
        t: f64,
        delta: f64,
        lhs: f64,
        rhs: f64,
        ratio: f64,
    }
    let mut rows = Vec::new();
    let mut c_by_nodes = Vec::new();
    for nodes in [lc.nodes, 2 * lc.nodes - 1] {
        let mut c = 0.0f64;
        for (name, f, half) in lemma2_families() {
            let amp = TabulatedAmplitude::sample(f, -half, half, nodes);
            for &t in &lc.t_list {
                let check = lemma2_check(&amp, quadratic_phase, t)?;
                c = c.max(check.ratio);
                rows.push(Row { family: name, nodes, t, delta: check.delta, lhs: check.lhs, rhs: check.rhs, ratio: check.ratio });
            }
        }
        c_by_nodes.push(c);
    }
    out.csv("lemma2.csv", &rows)?;
    #[derive(Serialize)]
    struct Summary {
        constant_coarse: f64,
        constant_refined: f64,
        drift: f64,
    }
    let (a, b) = (c_by_nodes[0], c_by_nodes[1]);
    out.json("lemma2.json", &Summary { constant_coarse: a, constant_refined: b, drift: a.max(b) / a.min(b) })
}

fn born_chain(config: &RunConfig, out: &mut Outputs<'_>) -> Result<()> {
    let bc = config.born_chain.clone().unwrap_or_default();
    if bc.cutoff_scales.iter().any(|&l| !(l >= 1.0)) {
        return Err(Error::config("born_chain.cutoff_scales", "every cutoff scale must be at least 1"));
    }
    if bc.distances.is_empty() || bc.t_list.is_empty() {
        return Err(Error::config("born_chain.distances", "need at least one distance and one time"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    #[derive(Serialize)]
    struct Row {
        m: usize,
        j: String,
        d: String,
        sign: &'static str,
        cutoff_scale: Option<f64>,
        t: f64,
        lambda0: f64,
        re: f64,
        im: f64,
        t_abs: f64,
        log_weight: f64,
        ratio: f64,
    }
    let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";");
    let mut rows = Vec::new();
    for &d in &bc.distances {
        for &t in &bc.t_list {
            for m in 1..=3usize {
                let ds: Vec<f64> = (0..m).map(|k| if k == 0 { d } else { d * rng.gen_range(0.5..2.0) }).collect();
                let j: Vec<usize> = (0..m).filter(|_| rng.gen_bool(0.5)).collect();
                let sign = if rng.gen_bool(0.5) { Sign::Plus } else { Sign::Minus };
                let inst = BornPhaseInstance::new(j, ds)?;
                let mut scales: Vec<Option<f64>> = bc.cutoff_scales.iter().map(|&l| Some(l)).collect();
                if !inst.j_star().is_empty() {
                    scales.push(None);
                }
                for cutoff in scales {
                    let v = born_chain_integral(&inst, t, cutoff, sign, &bc.quadrature)?;
                    rows.push(Row {
                        m,
                        j: inst.j.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(";"),
                        d: join(&inst.d),
                        sign: sign.tag(),
                        cutoff_scale: cutoff,
                        t,
                        lambda0: inst.lambda0(t),
                        re: v.value[0],
                        im: v.value[1],
                        t_abs: v.t_abs,
                        log_weight: v.log_weight,
                        ratio: v.ratio,
                    });
                }
            }
        }
    }
    out.csv("born_chain.csv", &rows)?;
    #[derive(Serialize)]
    struct Summary {
        points: usize,
        instances: usize,
        global_constant: f64,
    }
    let c = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    out.json(
        "born_chain.json",
        &Summary { points: bc.distances.len() * bc.t_list.len(), instances: rows.len(), global_constant: c },
    )
}

//! Experiment configuration and runner.
//!
//! A run is described by a TOML document with a mandatory `experiment` kind
//! and `seed`, plus the blocks that kind needs:
//!
//! ```toml
//! experiment = "entropy-derivs"
//! seed = 7
//!
//! [model]
//! kind = "harmonic"
//! n = 4
//!
//! [entropy]
//! vbar = [0.5]
//! max_order = 2
//! ```
//!
//! [`run`] writes the data files plus `manifest.json` into the output
//! directory. Data files depend only on the configuration and seed, never on
//! the thread count.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::critical::{certify_window, find_critical_points, CriticalSearchConfig};
use crate::entropy::{
    self, oracle_density_of_states, write_entropy_csv, EntropyRow, GridSpec,
};
use crate::error::{invalid, Error, Result};
use crate::model::{Boundary, LatticeTopology, ModelKind, PotentialModel};
use crate::moments::{sum_function_moments, write_moments_csv, BaseDistribution};
use crate::rng::derive_seed;
use crate::sampler::ShellSamplerConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_FLAGGED: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    CriticalScan,
    EntropyDerivs,
    Khinchin,
    OracleCompare,
    Legendre,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::CriticalScan => "critical-scan",
            ExperimentKind::EntropyDerivs => "entropy-derivs",
            ExperimentKind::Khinchin => "khinchin",
            ExperimentKind::OracleCompare => "oracle-compare",
            ExperimentKind::Legendre => "legendre",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelName {
    Harmonic,
    CoupledRotators,
    Fpu,
    Phi4,
    Linear,
}

fn one() -> usize {
    1
}

fn fixed() -> Boundary {
    Boundary::Fixed
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub kind: ModelName,
    /// Sites per side of the lattice.
    pub n: usize,
    #[serde(default = "one")]
    pub dimension: usize,
    #[serde(default = "fixed")]
    pub boundary: Boundary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope: Option<f64>,
}

impl ModelBlock {
    pub fn build(&self) -> Result<PotentialModel> {
        let need = |x: Option<f64>, field: &str| x.ok_or_else(|| invalid(field, "required for this model kind"));
        let kind = match self.kind {
            ModelName::Harmonic => ModelKind::Harmonic,
            ModelName::CoupledRotators => ModelKind::CoupledRotators,
            ModelName::Fpu => ModelKind::Fpu {
                lambda: need(self.lambda, "model.lambda")?,
            },
            ModelName::Phi4 => ModelKind::Phi4 {
                r: need(self.r, "model.r")?,
                u: need(self.u, "model.u")?,
            },
            ModelName::Linear => ModelKind::Linear {
                slope: need(self.slope, "model.slope")?,
            },
        };
        if self.n == 0 {
            return Err(invalid("model.n", "must be >= 1"));
        }
        let topology = LatticeTopology::new(self.dimension, self.n, self.boundary)?;
        PotentialModel::new(topology, kind)
    }
}

/// Per-site energy window [lo, hi].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowBlock {
    pub lo: f64,
    pub hi: f64,
    /// Sample shells inside each critical-free piece to estimate min ‖∇V‖.
    #[serde(default)]
    pub certify: bool,
}

fn default_order() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntropyBlock {
    pub vbar: Vec<f64>,
    #[serde(default = "default_order")]
    pub max_order: usize,
}

fn default_points() -> usize {
    256
}

fn default_bins() -> usize {
    16_000
}

fn default_step() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    #[serde(default = "default_points")]
    pub points_per_axis: usize,
    #[serde(default = "default_bins")]
    pub bins: usize,
    /// Histogram range in total energy; defaults to the model's energy range
    /// (a box-dependent upper end must be given for unbounded potentials).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_max: Option<f64>,
    /// Box half-width for non-angular models.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_width: Option<f64>,
    /// Kernel bandwidth in total energy; defaults to 0.04, reduced near the
    /// ends of the histogram range.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    /// Finite-difference step in v̄.
    #[serde(default = "default_step")]
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KhinchinBlock {
    pub base: BaseDistribution,
    pub ladder: Vec<usize>,
    pub trials: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LegendreSource {
    /// S^(−) from the brute-force density of states (needs `[grid]`).
    Grid,
    /// The N → ∞ harmonic entropy ½ log(4πe v̄).
    HarmonicLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LegendreBlock {
    pub source: LegendreSource,
    pub vbar_min: f64,
    pub vbar_max: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<WindowBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub critical: Option<CriticalSearchConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler: Option<ShellSamplerConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entropy: Option<EntropyBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub khinchin: Option<KhinchinBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub legendre: Option<LegendreBlock>,
}

fn require<'a, T>(block: &'a Option<T>, name: &str, kind: ExperimentKind) -> Result<&'a T> {
    block
        .as_ref()
        .ok_or_else(|| invalid(name, format!("block required for experiment `{}`", kind.name())))
}

impl RunConfig {
    /// Check that every block the experiment needs is present and valid.
    pub fn validate(&self) -> Result<()> {
        use ExperimentKind::*;
        let kind = self.experiment;
        if let Some(s) = &self.sampler {
            s.validate()?;
        }
        if kind != Khinchin {
            require(&self.model, "model", kind)?.build()?;
        }
        match kind {
            CriticalScan => {
                if let Some(w) = &self.window {
                    if !(w.hi > w.lo) {
                        return Err(invalid("window.hi", "must exceed window.lo"));
                    }
                }
            }
            EntropyDerivs => {
                let e = require(&self.entropy, "entropy", kind)?;
                check_entropy_block(e)?;
            }
            OracleCompare => {
                let e = require(&self.entropy, "entropy", kind)?;
                check_entropy_block(e)?;
                let g = require(&self.grid, "grid", kind)?;
                if !(g.step > 0.0) {
                    return Err(invalid("grid.step", "must be > 0"));
                }
            }
            Khinchin => {
                let k = require(&self.khinchin, "khinchin", kind)?;
                k.base.validate()?;
                if k.trials < crate::moments::MIN_TRIALS {
                    return Err(invalid("khinchin.trials", "must be >= 10000"));
                }
                if k.ladder.len() < 2 || k.ladder.contains(&0) {
                    return Err(invalid("khinchin.ladder", "need at least two positive N values"));
                }
            }
            Legendre => {
                let l = require(&self.legendre, "legendre", kind)?;
                if !(l.vbar_max > l.vbar_min) || l.points < 20 {
                    return Err(invalid("legendre.points", "need >= 20 points on a nonempty range"));
                }
                if l.source == LegendreSource::Grid {
                    require(&self.grid, "grid", kind)?;
                }
                if l.source == LegendreSource::HarmonicLimit && !(l.vbar_min > 0.0) {
                    return Err(invalid("legendre.vbar_min", "must be > 0 for the harmonic limit"));
                }
            }
        }
        Ok(())
    }
}

fn check_entropy_block(e: &EntropyBlock) -> Result<()> {
    if e.vbar.is_empty() {
        return Err(invalid("entropy.vbar", "must list at least one level"));
    }
    if !(1..=4).contains(&e.max_order) {
        return Err(invalid("entropy.max_order", "must lie in 1..=4"));
    }
    Ok(())
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parse and validate a run configuration.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Parse {
        line: e.span().map(|s| line_of(text, s.start)).unwrap_or(0),
        message: e.message().to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Serialize a configuration back to TOML.
pub fn emit_config(cfg: &RunConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::Io(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub experiment: String,
    pub config: RunConfig,
    /// SHA-256 of the canonical TOML emission of `config`.
    pub config_hash: String,
    pub seed: u64,
    pub threads: usize,
    /// Seconds since the Unix epoch.
    pub started: f64,
    pub finished: f64,
    pub tolerances: BTreeMap<String, f64>,
    pub files: Vec<FileRecord>,
    /// Flagged results; any entry makes the exit code 2.
    pub warnings: Vec<String>,
    /// Informational caveats that do not flag the run.
    pub notes: Vec<String>,
    pub error: Option<String>,
    pub exit_code: i32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub manifest: RunManifest,
    pub out_dir: PathBuf,
}

#[derive(Default)]
struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
    warnings: Vec<String>,
    notes: Vec<String>,
    tolerances: BTreeMap<String, f64>,
}

impl Artifacts {
    fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes).as_slice())
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

fn to_json<T: Serialize>(x: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(x).map_err(|e| Error::Io(e.to_string()))?;
    s.push('\n');
    Ok(s.into_bytes())
}

/// Execute the experiment on a pool of `threads` workers and write its
/// artifacts into `out_dir`. Module errors are recorded in the manifest and
/// give exit code 1; only failure to write the manifest itself is returned
/// as an error.
pub fn run(cfg: &RunConfig, out_dir: &Path, threads: usize) -> Result<RunOutcome> {
    let started = now();
    fs::create_dir_all(out_dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Io(e.to_string()))?;
    let result = cfg.validate().and_then(|_| pool.install(|| execute(cfg)));
    let (arts, error) = match result {
        Ok(a) => (a, None),
        Err(e) => (Artifacts::default(), Some(e.to_string())),
    };
    let mut files = Vec::new();
    for (name, bytes) in &arts.files {
        fs::write(out_dir.join(name), bytes)?;
        files.push(FileRecord {
            name: name.clone(),
            sha256: sha256_hex(bytes),
        });
    }
    let exit_code = if error.is_some() {
        EXIT_ERROR
    } else if arts.warnings.is_empty() {
        EXIT_OK
    } else {
        EXIT_FLAGGED
    };
    let canonical = emit_config(cfg)?;
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        experiment: cfg.experiment.name().to_string(),
        config: cfg.clone(),
        config_hash: sha256_hex(canonical.as_bytes()),
        seed: cfg.seed,
        threads: threads.max(1),
        started,
        finished: now(),
        tolerances: arts.tolerances,
        files,
        warnings: arts.warnings,
        notes: arts.notes,
        error,
        exit_code,
    };
    fs::write(out_dir.join("manifest.json"), to_json(&manifest)?)?;
    Ok(RunOutcome {
        exit_code,
        manifest,
        out_dir: out_dir.to_path_buf(),
    })
}

fn execute(cfg: &RunConfig) -> Result<Artifacts> {
    match cfg.experiment {
        ExperimentKind::CriticalScan => critical_scan(cfg),
        ExperimentKind::EntropyDerivs => entropy_derivs(cfg),
        ExperimentKind::Khinchin => khinchin(cfg),
        ExperimentKind::OracleCompare => oracle_compare(cfg),
        ExperimentKind::Legendre => legendre_run(cfg),
    }
}

fn model_of(cfg: &RunConfig) -> Result<PotentialModel> {
    cfg.model.as_ref().expect("validated").build()
}

fn sampler_of(cfg: &RunConfig, purpose: u64) -> ShellSamplerConfig {
    let mut s = cfg.sampler.clone().unwrap_or_default();
    s.seed = derive_seed(cfg.seed, purpose);
    s
}

fn critical_scan(cfg: &RunConfig) -> Result<Artifacts> {
    let model = model_of(cfg)?;
    let mut search_cfg = cfg.critical.clone().unwrap_or_default();
    search_cfg.seed = derive_seed(cfg.seed, 1);
    let window = cfg.window.as_ref().map(|w| (w.lo, w.hi));
    let search = find_critical_points(&model, window, &search_cfg)?;
    let report_window = match window {
        Some(w) => w,
        None => {
            let (lo, hi) = model.energy_range();
            let n = model.n() as f64;
            let top = search.points.iter().map(|p| p.vbar_c).fold(lo / n, f64::max);
            let hi = if hi.is_finite() { hi / n } else { top + 1.0 };
            (lo / n - 1e-9, hi + 1e-9)
        }
    };
    let shell = cfg
        .window
        .as_ref()
        .filter(|w| w.certify)
        .map(|_| sampler_of(cfg, 2));
    let report = certify_window(&model, report_window, &search, shell.as_ref())?;
    let mut arts = Artifacts::default();
    arts.tolerances.insert("newton_tol".into(), search_cfg.newton_tol);
    arts.tolerances.insert("degeneracy_rel_tol".into(), search_cfg.degeneracy_rel_tol);
    for p in report.points.iter().filter(|p| p.degenerate) {
        arts.warnings
            .push(format!("degenerate critical point at v_c = {}", p.v_c));
    }
    if search.unknown_family_found {
        arts.warnings
            .push("critical point outside the structured family".into());
    }
    arts.notes.extend(report.caveats.iter().cloned());
    let mut json = report.to_json()?.into_bytes();
    json.push(b'\n');
    arts.add("critical_points.json", json);
    Ok(arts)
}

fn estimate_rows(
    model: &PotentialModel,
    cfg: &RunConfig,
    arts: &mut Artifacts,
) -> Result<Vec<(EntropyRow, Vec<entropy::DerivativeEstimate>)>> {
    let block = cfg.entropy.as_ref().expect("validated");
    let mut rows = Vec::new();
    for (i, &vbar) in block.vbar.iter().enumerate() {
        let sampler = sampler_of(cfg, 100 + i as u64);
        let est = entropy::entropy_derivatives(model, vbar, block.max_order, &sampler)?;
        for e in &est {
            for f in &e.flags {
                arts.warnings
                    .push(format!("v̄ = {vbar}, k = {}: {f}", e.order));
            }
        }
        rows.push((EntropyRow::from_estimates(vbar, None, &est), est));
    }
    let s = sampler_of(cfg, 0);
    arts.tolerances.insert("epsilon".into(), s.epsilon);
    arts.tolerances.insert("grad_floor".into(), s.grad_floor);
    Ok(rows)
}

fn entropy_derivs(cfg: &RunConfig) -> Result<Artifacts> {
    let model = model_of(cfg)?;
    let mut arts = Artifacts::default();
    let rows = estimate_rows(&model, cfg, &mut arts)?;
    let table: Vec<EntropyRow> = rows.iter().map(|r| r.0.clone()).collect();
    let mut csv = Vec::new();
    write_entropy_csv(&table, &mut csv)?;
    arts.add("entropy.csv", csv);
    let estimates: Vec<&entropy::DerivativeEstimate> = rows.iter().flat_map(|r| r.1.iter()).collect();
    arts.add("estimates.json", to_json(&estimates)?);
    Ok(arts)
}

fn khinchin(cfg: &RunConfig) -> Result<Artifacts> {
    let k = cfg.khinchin.as_ref().expect("validated");
    let report = sum_function_moments(&k.base, &k.ladder, k.trials, derive_seed(cfg.seed, 3))?;
    let mut arts = Artifacts::default();
    for r in &report.rows {
        if !(r.d >= r.b * r.b) {
            arts.warnings
                .push(format!("N = {}: D′ < B′², moment estimates inconsistent", r.n));
        }
    }
    let mut csv = Vec::new();
    write_moments_csv(&report, &mut csv)?;
    arts.add("moments.csv", csv);
    arts.add("moments.json", to_json(&report)?);
    Ok(arts)
}

fn grid_table(model: &PotentialModel, g: &GridBlock) -> Result<entropy::DensityOfStatesTable> {
    let (lo, hi) = model.energy_range();
    let v_min = g.v_min.unwrap_or(lo);
    let v_max = match g.v_max.or(hi.is_finite().then_some(hi)) {
        Some(v) => v,
        None => return Err(invalid("grid.v_max", "required for unbounded potentials")),
    };
    let n = model.n();
    let spec = if model.is_angular() {
        GridSpec::torus(n, g.points_per_axis, v_min, v_max, g.bins)
    } else {
        let hw = g
            .half_width
            .ok_or_else(|| invalid("grid.half_width", "required for non-angular models"))?;
        GridSpec::cube(n, hw, g.points_per_axis, v_min, v_max, g.bins)
    };
    oracle_density_of_states(model, &spec)
}

fn bandwidth(g: &GridBlock, table: &entropy::DensityOfStatesTable, vbar: f64, k: usize) -> f64 {
    g.bandwidth
        .unwrap_or_else(|| table.fitting_bandwidth(vbar, k, g.step, 0.04))
}

fn oracle_compare(cfg: &RunConfig) -> Result<Artifacts> {
    let model = model_of(cfg)?;
    let g = cfg.grid.as_ref().expect("validated");
    let table = grid_table(&model, g)?;
    let mut arts = Artifacts::default();
    let rows = estimate_rows(&model, cfg, &mut arts)?;
    let mut csv = String::from("vbar,k,surface,surface_stderr,oracle,oracle_error,z\n");
    for (row, est) in &rows {
        for e in est {
            let h = bandwidth(g, &table, row.vbar, e.order);
            let o = table.entropy_derivative(row.vbar, e.order, h, g.step)?;
            let z = (e.value - o.value) / (e.stderr.powi(2) + o.error.powi(2)).sqrt();
            let limit = if e.order <= 2 { 3.0 } else { 5.0 };
            if !(z.abs() <= limit) {
                arts.warnings.push(format!(
                    "v̄ = {}, k = {}: surface and grid differ by {z:.2} combined errors",
                    row.vbar, e.order
                ));
            }
            csv.push_str(&format!(
                "{:e},{},{:e},{:e},{:e},{:e},{:e}\n",
                row.vbar, e.order, e.value, e.stderr, o.value, o.error, z
            ));
        }
    }
    arts.tolerances.insert("z_limit_k12".into(), 3.0);
    arts.tolerances.insert("z_limit_k34".into(), 5.0);
    arts.tolerances.insert("grid_step".into(), g.step);
    arts.add("oracle_compare.csv", csv.into_bytes());
    Ok(arts)
}

fn legendre_run(cfg: &RunConfig) -> Result<Artifacts> {
    let l = cfg.legendre.as_ref().expect("validated");
    let vbar: Vec<f64> = (0..l.points)
        .map(|i| l.vbar_min + (l.vbar_max - l.vbar_min) * i as f64 / (l.points - 1) as f64)
        .collect();
    let s: Vec<f64> = match l.source {
        LegendreSource::HarmonicLimit => vbar.iter().map(|&v| entropy::harmonic::limit_entropy(v)).collect(),
        LegendreSource::Grid => {
            let model = model_of(cfg)?;
            let g = cfg.grid.as_ref().expect("validated");
            let table = grid_table(&model, g)?;
            vbar.iter()
                .map(|&v| table.entropy_minus(v, bandwidth(g, &table, v, 0)))
                .collect::<Result<_>>()?
        }
    };
    let curves = entropy::thermo_curves(&vbar, &s)?;
    let mut arts = Artifacts::default();
    if !curves.legendre.concave {
        arts.warnings
            .push("S^(−) is not concave on the grid; f describes its concave hull".into());
    }
    let mut thermo = String::from("vbar,S_minus,beta\n");
    for i in 0..vbar.len() {
        thermo.push_str(&format!("{:e},{:e},{:e}\n", vbar[i], s[i], curves.beta_of_v[i]));
    }
    let mut table = String::from("beta,f,F\n");
    for i in 0..curves.legendre.beta.len() {
        table.push_str(&format!(
            "{:e},{:e},{:e}\n",
            curves.legendre.beta[i], curves.legendre.f[i], curves.free_energy[i]
        ));
    }
    let hull_error = vbar
        .iter()
        .map(|&v| curves.legendre.inverse(v))
        .zip(&s)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    arts.tolerances.insert("double_conjugation_max_error".into(), hull_error);
    arts.add("thermo.csv", thermo.into_bytes());
    arts.add("legendre.csv", table.into_bytes());
    Ok(arts)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "experiment = \"critical-scan\"\nseed = 3\n\n[model]\nkind = \"harmonic\"\nn = 3\n";

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        let m = cfg.model.as_ref().unwrap();
        assert_eq!(m.dimension, 1);
        assert_eq!(m.boundary, Boundary::Fixed);
        assert!(cfg.critical.is_none());
    }

    #[test]
    fn negative_epsilon_names_field() {
        let text = format!("{MINIMAL}\n[sampler]\nepsilon = -1\n");
        match parse_config(&text) {
            Err(Error::InvalidParameter { field, constraint }) => {
                assert_eq!(field, "epsilon");
                assert!(constraint.contains("> 0"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_section_reports_line() {
        let text = format!("{MINIMAL}\n[bogus]\nx = 1\n");
        match parse_config(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 8),
            other => panic!("unexpected {other:?}"),
        }
        let text = format!("{MINIMAL}frobnicate = 2\n");
        assert!(matches!(parse_config(&text), Err(Error::Parse { line: 7, .. })));
    }

    #[test]
    fn missing_seed_and_blocks_rejected() {
        assert!(matches!(
            parse_config("experiment = \"khinchin\"\n"),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            parse_config("experiment = \"khinchin\"\nseed = 1\n"),
            Err(Error::InvalidParameter { .. })
        ));
        assert!(matches!(
            parse_config("experiment = \"critical-scan\"\nseed = 1\n[model]\nkind = \"fpu\"\nn = 3\n"),
            Err(Error::InvalidParameter { .. })
        ));
    }

    #[test]
    fn emission_round_trips() {
        let text = "experiment = \"oracle-compare\"\nseed = 11\n\
            [model]\nkind = \"fpu\"\nn = 2\nlambda = 0.1\n\
            [sampler]\nepsilon = 0.002\nn_steps = 5000\n\
            [entropy]\nvbar = [0.3, 0.4]\nmax_order = 3\n\
            [grid]\nhalf_width = 2.0\nv_max = 3.0\n\
            [critical]\nrandom_seeds = 50\n\
            [khinchin]\nladder = [4, 8]\ntrials = 20000\n[khinchin.base]\nkind = \"uniform\"\nlo = -0.5\nhi = 0.5\n";
        let cfg = parse_config(text).unwrap();
        let again = parse_config(&emit_config(&cfg).unwrap()).unwrap();
        assert_eq!(cfg, again);
    }
}

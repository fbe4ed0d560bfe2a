//! Experiment configuration, execution, persistence and reporting.
//!
//! A run reads one TOML file with the top-level keys `name`, `kind`, `seed`
//! and a `[params]` table whose schema depends on `kind`. It writes
//! `<name>.jsonl` (header record, one record per result row, task errors and
//! notes), `<name>.csv` and `<name>.txt` into the output directory. Output
//! bytes depend only on the canonical configuration and the seed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::brownian::{sample_bridge, BridgeMeasureSpec};
use crate::classical_theory::estimate_zeta;
use crate::exact_oracles::claim2_check;
use crate::gaussian_fields::wick::partial_pairings;
use crate::gaussian_fields::{InteractionPotential, PotentialKind, RegularizationSpec};
use crate::meanfield_experiments::{
    free_kernel_gap, observed_order, run_density_moments, run_nu_sweep, run_riemann_diagnostics, DensityMomentsConfig,
    NuSweepConfig, ResultRow, RiemannCase, RiemannConfig, TrendVerdict,
};
use crate::quantum_theory::{estimate_z_quantum, QuantumModel};
use crate::torus_spectral::{heat_kernel_1d_image, heat_kernel_1d_spectral, SpectralBasis, TorusSpec};
use crate::trapped_gas::{
    counterterm_limit, counterterm_solve, relative_distance, sandwich_constant, TrapInteraction, TrapPotential, TrapSpec,
};

/// Schema tag written into every result header.
pub const RESULT_SCHEMA: &str = "bosefield.result.v1";

/// Prefix of the environment variables mirroring the CLI flags.
pub const ENV_PREFIX: &str = "BOSEFIELD_";

/// Configuration error naming the offending key.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid config key `{}`: {}", self.key, self.message)
    }
}

impl std::error::Error for ConfigError {}

fn bad<T>(key: impl Into<String>, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError { key: key.into(), message: message.into() })
}

/// Quantum Z/Z⁰ with v ≡ 0; every row equals 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreeGasParams {
    pub d: usize,
    pub l: f64,
    pub kappa: f64,
    pub k: usize,
    pub eta: f64,
    pub nus: Vec<f64>,
    pub n_steps: usize,
    pub n_samples: usize,
}

/// Grid-L¹ norm of ν/(e^{νh} − 1) − h^{-1} on the lowest `modes` modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreeKernelParams {
    pub d: usize,
    pub l: f64,
    pub kappa: f64,
    pub modes: usize,
    pub nus: Vec<f64>,
    pub grid: usize,
}

/// Trapped-gas counterterm sweep against the ν → 0 limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountertermParams {
    pub d: usize,
    pub box_half_width: f64,
    pub n: usize,
    pub theta: f64,
    pub b: f64,
    pub potential: TrapPotential,
    pub interaction: TrapInteraction,
    pub kappa: f64,
    pub nus: Vec<f64>,
    pub tol: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum Experiment {
    FreeGas(FreeGasParams),
    NuSweep(NuSweepConfig),
    DensityMoments(DensityMomentsConfig),
    Riemann(RiemannConfig),
    FreeKernel(FreeKernelParams),
    Counterterm(CountertermParams),
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::FreeGas(_) => "free_gas",
            Experiment::NuSweep(_) => "nu_sweep",
            Experiment::DensityMoments(_) => "density_moments",
            Experiment::Riemann(_) => "riemann",
            Experiment::FreeKernel(_) => "free_kernel",
            Experiment::Counterterm(_) => "counterterm",
        }
    }
}

/// Parsed and validated experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    #[serde(flatten)]
    pub experiment: Experiment,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    name: Option<String>,
    kind: String,
    seed: Option<u64>,
    params: toml::Table,
}

const SEEDED_KINDS: [&str; 2] = ["nu_sweep", "density_moments"];

impl ExperimentConfig {
    /// Parses TOML text; `seed_override` replaces the file's `seed`.
    pub fn from_toml(text: &str, seed_override: Option<u64>) -> Result<Self, ConfigError> {
        let table: toml::Table = toml::from_str(text).map_err(|e| ConfigError { key: "<toml>".into(), message: e.to_string() })?;
        let raw: RawConfig = deserialize_at("", toml::Value::Table(table))?;
        let name = raw.name.unwrap_or_else(|| raw.kind.clone());
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return bad("name", "use letters, digits, '_' and '-' only");
        }
        let seed = seed_override.or(raw.seed).unwrap_or(0);
        let mut params = raw.params;
        if params.contains_key("seed") {
            return bad("params.seed", "set the seed at top level or with --seed");
        }
        if SEEDED_KINDS.contains(&raw.kind.as_str()) {
            params.insert("seed".into(), toml::Value::Integer(seed as i64));
        }
        let value = toml::Value::Table(params);
        let experiment = match raw.kind.as_str() {
            "free_gas" => Experiment::FreeGas(parse_params(value)?),
            "nu_sweep" => Experiment::NuSweep(parse_params(value)?),
            "density_moments" => Experiment::DensityMoments(parse_params(value)?),
            "riemann" => Experiment::Riemann(parse_params(value)?),
            "free_kernel" => Experiment::FreeKernel(parse_params(value)?),
            "counterterm" => Experiment::Counterterm(parse_params(value)?),
            other => {
                return bad(
                    "kind",
                    format!("unknown experiment `{other}`; expected free_gas, nu_sweep, density_moments, riemann, free_kernel or counterterm"),
                )
            }
        };
        let config = ExperimentConfig { name, seed, experiment };
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path, seed_override: Option<u64>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError { key: "<file>".into(), message: format!("{}: {e}", path.display()) })?;
        Self::from_toml(&text, seed_override)
    }

    /// Canonical JSON: sorted keys, shortest round-trip floats.
    pub fn canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("configs serialize");
        serde_json::to_string(&value).expect("values serialize")
    }

    /// SHA-256 of the canonical JSON, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    /// Range checks against the module preconditions.
    pub fn validate(&self) -> Result<(), ConfigError> {
        match &self.experiment {
            Experiment::FreeGas(p) => {
                check_torus(p.d, p.l, p.kappa)?;
                check_positive("params.eta", p.eta)?;
                check_nus(&p.nus, false)?;
                check_count("params.n_steps", p.n_steps)?;
                check_count("params.n_samples", p.n_samples)
            }
            Experiment::NuSweep(p) => {
                check_torus(p.d, p.l, p.kappa)?;
                if p.d == 3 {
                    return bad("params.d", "d = 3 sweeps are out of scope; use d = 1 or 2");
                }
                check_positive("params.eta", p.eta)?;
                check_nus(&p.nus, true)?;
                check_count("params.n_steps", p.n_steps)?;
                check_count("params.n_quantum", p.n_quantum)?;
                check_count("params.n_classical", p.n_classical)?;
                if p.points1.is_empty() {
                    return bad("params.points1", "need at least one kernel point");
                }
                for (key, pts, size) in [("params.points1", &p.points1, 1), ("params.points2", &p.points2, 2)] {
                    for pt in pts.iter() {
                        if pt.x.len() != size || pt.xt.len() != size || pt.x.iter().chain(&pt.xt).any(|y| y.len() != p.d) {
                            return bad(key, format!("each point needs {size} positions of dimension {}", p.d));
                        }
                    }
                }
                check_nonnegative("params.tolerance", p.tolerance)
            }
            Experiment::DensityMoments(p) => {
                check_positive("params.l", p.l)?;
                check_positive("params.kappa", p.kappa)?;
                check_nonnegative("params.v_hat_zero", p.v_hat_zero)?;
                check_nus(&p.nus, false)?;
                check_count("params.max_moment", p.max_moment)?;
                check_count("params.n_max", p.n_max)?;
                check_count("params.n_classical", p.n_classical)
            }
            Experiment::Riemann(p) => {
                check_positive("params.kappa", p.kappa)?;
                check_nus(&p.nus, false)?;
                if p.nus.len() < 2 {
                    return bad("params.nus", "need at least two values to fit an order");
                }
                for case in &p.cases {
                    match case {
                        RiemannCase::HeatTrace { d, l, .. } => check_torus(*d, *l, p.kappa)?,
                        RiemannCase::SingularKernel { d } if !(1..=3).contains(d) => return bad("params.cases.d", "dimension must be 1, 2 or 3"),
                        _ => {}
                    }
                }
                Ok(())
            }
            Experiment::FreeKernel(p) => {
                check_torus(p.d, p.l, p.kappa)?;
                check_count("params.modes", p.modes)?;
                check_count("params.grid", p.grid)?;
                check_nus(&p.nus, false)
            }
            Experiment::Counterterm(p) => {
                if !(1..=3).contains(&p.d) {
                    return bad("params.d", "dimension must be 1, 2 or 3");
                }
                check_positive("params.box_half_width", p.box_half_width)?;
                if p.n < 3 {
                    return bad("params.n", "need at least 3 nodes per axis");
                }
                if !(p.theta >= 2.0) {
                    return bad("params.theta", "need theta >= 2");
                }
                check_positive("params.b", p.b)?;
                check_positive("params.kappa", p.kappa)?;
                check_positive("params.tol", p.tol)?;
                check_count("params.max_iter", p.max_iter)?;
                check_nus(&p.nus, true)
            }
        }
    }
}

fn parse_params<T: serde::de::DeserializeOwned>(value: toml::Value) -> Result<T, ConfigError> {
    deserialize_at("params", value)
}

/// Deserializes `value`, naming the deepest key reached on failure.
fn deserialize_at<T: serde::de::DeserializeOwned>(prefix: &str, value: toml::Value) -> Result<T, ConfigError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let message = e.inner().message().to_string();
        let mut key = prefix.to_string();
        let path = e.path().to_string();
        if path != "." {
            if !key.is_empty() {
                key.push('.');
            }
            key.push_str(&path);
        }
        let hint = field_hint(&message);
        if message.starts_with("missing field") {
            key.push_str(if key.is_empty() { hint.trim_start_matches('.') } else { &hint });
        }
        if key.is_empty() {
            key = "<root>".into();
        }
        ConfigError { key, message }
    })
}

/// Extracts `.field` from serde messages such as "missing field `nus`".
fn field_hint(message: &str) -> String {
    let mut parts = message.split('`');
    match (parts.next(), parts.next()) {
        (Some(_), Some(field)) if message.contains("field") => format!(".{field}"),
        _ => String::new(),
    }
}

fn check_positive(key: &str, x: f64) -> Result<(), ConfigError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        bad(key, format!("must be positive and finite, got {x}"))
    }
}

fn check_nonnegative(key: &str, x: f64) -> Result<(), ConfigError> {
    if x >= 0.0 && x.is_finite() {
        Ok(())
    } else {
        bad(key, format!("must be nonnegative and finite, got {x}"))
    }
}

fn check_count(key: &str, n: usize) -> Result<(), ConfigError> {
    if n >= 1 {
        Ok(())
    } else {
        bad(key, "must be at least 1")
    }
}

fn check_torus(d: usize, l: f64, kappa: f64) -> Result<(), ConfigError> {
    if !(1..=3).contains(&d) {
        return bad("params.d", format!("dimension must be 1, 2 or 3, got {d}"));
    }
    check_positive("params.l", l)?;
    check_positive("params.kappa", kappa)
}

fn check_nus(nus: &[f64], decreasing: bool) -> Result<(), ConfigError> {
    if nus.is_empty() {
        return bad("params.nus", "need at least one value");
    }
    for &nu in nus {
        check_positive("params.nus", nu)?;
    }
    if decreasing && nus.windows(2).any(|w| !(w[1] < w[0])) {
        return bad("params.nus", "must be strictly decreasing");
    }
    Ok(())
}

/// A numerical failure of one task; the run continues.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskError {
    pub task: String,
    pub message: String,
}

/// Rows, notes and task failures of one run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunOutput {
    pub rows: Vec<ResultRow>,
    pub notes: Vec<String>,
    pub errors: Vec<TaskError>,
}

impl RunOutput {
    fn fail(&mut self, task: impl Into<String>, e: impl std::fmt::Display) {
        self.errors.push(TaskError { task: task.into(), message: e.to_string() });
    }
}

/// Provenance string: crate name, version and the build revision when known.
pub fn provenance() -> String {
    match option_env!("BOSEFIELD_GIT_REV") {
        Some(rev) => format!("bosefield {} ({rev})", env!("CARGO_PKG_VERSION")),
        None => format!("bosefield {}", env!("CARGO_PKG_VERSION")),
    }
}

/// Executes the experiment on `workers` threads (`None` uses every core).
pub fn execute(config: &ExperimentConfig, workers: Option<usize>) -> RunOutput {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        builder = builder.num_threads(w.max(1));
    }
    match builder.build() {
        Ok(pool) => pool.install(|| execute_inner(config)),
        Err(e) => {
            let mut out = RunOutput::default();
            out.fail("thread_pool", e);
            out
        }
    }
}

fn execute_inner(config: &ExperimentConfig) -> RunOutput {
    let mut out = RunOutput::default();
    match &config.experiment {
        Experiment::FreeGas(p) => run_free_gas(p, config.seed, &mut out),
        Experiment::NuSweep(p) => match run_nu_sweep(p) {
            Ok(r) => {
                out.rows = r.table;
                out.notes.push(trend_note("gap_z", &r.z_trend));
                out.notes.push(trend_note("gap_gamma_hat_1", &r.g1_trend));
            }
            Err(e) => out.fail("nu_sweep", e),
        },
        Experiment::DensityMoments(p) => match run_density_moments(p) {
            Ok(r) => out.rows = r.table,
            Err(e) => out.fail("density_moments", e),
        },
        Experiment::Riemann(p) => match run_riemann_diagnostics(p) {
            Ok(r) => {
                out.rows = r.table;
                for c in r.cases {
                    out.rows.push(ResultRow::exact(None, None, format!("{}_order", c.case.name()), c.observed_order, 0.0));
                }
            }
            Err(e) => out.fail("riemann", e),
        },
        Experiment::FreeKernel(p) => run_free_kernel(p, &mut out),
        Experiment::Counterterm(p) => run_counterterm(p, &mut out),
    }
    out
}

fn trend_note(name: &str, t: &TrendVerdict) -> String {
    format!(
        "{name}: inversions {}, final {:.3e} +- {:.1e}, tolerance {}, converged {}, inconclusive {}",
        t.inversions, t.final_gap, t.final_sigma, t.tolerance, t.converged, t.inconclusive
    )
}

fn run_free_gas(p: &FreeGasParams, seed: u64, out: &mut RunOutput) {
    let setup = || -> crate::Result<(TorusSpec, RegularizationSpec, InteractionPotential)> {
        let spec = TorusSpec::new(p.d, p.l, p.kappa, 64)?;
        let reg = RegularizationSpec::with_eta(p.eta)?;
        let v = InteractionPotential::new(&spec, PotentialKind::Zero)?;
        Ok((spec, reg, v))
    };
    let (spec, reg, v) = match setup() {
        Ok(s) => s,
        Err(e) => return out.fail("setup", e),
    };
    for (j, &nu) in p.nus.iter().enumerate() {
        let task_seed = seed.wrapping_add(j as u64);
        let result = QuantumModel::new(&spec, &reg, &v, nu, p.k, p.n_steps).and_then(|m| estimate_z_quantum(&m, p.n_samples, task_seed, None));
        match result {
            Ok(z) => out.rows.push(ResultRow::from_estimate(Some(nu), Some(p.eta), "z_ratio", &z)),
            Err(e) => out.fail(format!("z_ratio nu={nu}"), e),
        }
    }
}

fn run_free_kernel(p: &FreeKernelParams, out: &mut RunOutput) {
    let basis = match TorusSpec::new(p.d, p.l, p.kappa, 64).and_then(|s| SpectralBasis::lowest(s, p.modes)) {
        Ok(b) => b,
        Err(e) => return out.fail("setup", e),
    };
    let gaps: Vec<f64> = p.nus.iter().map(|&nu| free_kernel_gap(&basis, nu, p.grid)).collect();
    for (&nu, &g) in p.nus.iter().zip(&gaps) {
        out.rows.push(ResultRow::exact(Some(nu), None, "free_kernel_gap", g, 0.0));
    }
    if p.nus.len() >= 2 {
        out.rows.push(ResultRow::exact(None, None, "free_kernel_order", observed_order(&p.nus, &gaps), 0.0));
    }
}

fn run_counterterm(p: &CountertermParams, out: &mut RunOutput) {
    let trap = match TrapSpec::new(p.d, p.box_half_width, p.n, p.theta, p.b, p.potential.clone()) {
        Ok(t) => t,
        Err(e) => return out.fail("setup", e),
    };
    let limit = match counterterm_limit(&trap, &p.interaction, p.kappa, p.tol, p.max_iter) {
        Ok(u) => u,
        Err(e) => return out.fail("limit", e),
    };
    out.rows.push(ResultRow::exact(None, None, "limit_residual", limit.residual, limit.wall_error));
    let mut solved = Vec::new();
    for &nu in &p.nus {
        match counterterm_solve(&trap, &p.interaction, nu, p.kappa, p.tol, p.max_iter) {
            Ok(u) => {
                out.rows.push(ResultRow::exact(Some(nu), None, "residual", u.residual, u.wall_error));
                out.rows.push(ResultRow::exact(Some(nu), None, "iterations", u.iterations as f64, 0.0));
                let dist = relative_distance(&trap, &u.values, &limit.values);
                out.rows.push(ResultRow::exact(Some(nu), None, "gap_distance_to_limit", dist, 0.0));
                solved.push(u.values);
            }
            Err(e) => out.fail(format!("solve nu={nu}"), e),
        }
    }
    let refs: Vec<&[f64]> = solved.iter().map(|v| v.as_slice()).collect();
    match sandwich_constant(&limit.values, &refs) {
        Ok(c) => out.rows.push(ResultRow::exact(None, None, "sandwich_constant", c, 0.0)),
        Err(e) => out.fail("sandwich", e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    record: String,
    schema: String,
    name: String,
    kind: String,
    config_hash: String,
    provenance: String,
    seed: u64,
    config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RowRecord {
    record: String,
    config_hash: String,
    run_seed: u64,
    #[serde(flatten)]
    row: ResultRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TextRecord {
    record: String,
    config_hash: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    task: Option<String>,
    text: String,
}

/// Paths of the files written by one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunFiles {
    pub jsonl: PathBuf,
    pub csv: PathBuf,
    pub summary: PathBuf,
}

/// Serializes a run as JSON lines.
pub fn to_jsonl(config: &ExperimentConfig, output: &RunOutput) -> String {
    let hash = config.hash();
    let header = Header {
        record: "header".into(),
        schema: RESULT_SCHEMA.into(),
        name: config.name.clone(),
        kind: config.experiment.kind().into(),
        config_hash: hash.clone(),
        provenance: provenance(),
        seed: config.seed,
        config: serde_json::to_value(config).expect("configs serialize"),
    };
    let mut s = serde_json::to_string(&header).expect("headers serialize");
    s.push('\n');
    for row in &output.rows {
        let r = RowRecord { record: "row".into(), config_hash: hash.clone(), run_seed: config.seed, row: row.clone() };
        s.push_str(&serde_json::to_string(&r).expect("rows serialize"));
        s.push('\n');
    }
    for note in &output.notes {
        let r = TextRecord { record: "note".into(), config_hash: hash.clone(), task: None, text: note.clone() };
        s.push_str(&serde_json::to_string(&r).expect("notes serialize"));
        s.push('\n');
    }
    for e in &output.errors {
        let r = TextRecord { record: "task_error".into(), config_hash: hash.clone(), task: Some(e.task.clone()), text: e.message.clone() };
        s.push_str(&serde_json::to_string(&r).expect("errors serialize"));
        s.push('\n');
    }
    s
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// CSV export with columns nu, eta, quantity, value_re, value_im, std_error, tail_bound, n_samples, seed.
pub fn to_csv(rows: &[ResultRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["nu", "eta", "quantity", "value_re", "value_im", "std_error", "tail_bound", "n_samples", "seed"])
        .expect("in-memory writes succeed");
    for r in rows {
        w.write_record([
            fmt_opt(r.nu),
            fmt_opt(r.eta),
            r.quantity.clone(),
            r.value_re.to_string(),
            r.value_im.to_string(),
            r.std_error.to_string(),
            r.tail_bound.to_string(),
            r.n_samples.to_string(),
            r.seed.to_string(),
        ])
        .expect("in-memory writes succeed");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush succeeds")).expect("csv is utf-8")
}

fn row_table(rows: &[ResultRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:>10} {:>8} {:<28} {:>14} {:>12} {:>11} {:>11}", "nu", "eta", "quantity", "value_re", "value_im", "std_error", "tail_bound");
    for r in rows {
        let _ = writeln!(
            s,
            "{:>10} {:>8} {:<28} {:>14.7e} {:>12.4e} {:>11.3e} {:>11.3e}",
            fmt_opt(r.nu),
            fmt_opt(r.eta),
            r.quantity,
            r.value_re,
            r.value_im,
            r.std_error,
            r.tail_bound
        );
    }
    s
}

/// Human-readable summary of a run.
pub fn to_summary(config: &ExperimentConfig, output: &RunOutput) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "experiment {} ({})", config.name, config.experiment.kind());
    let _ = writeln!(s, "config_hash {}", config.hash());
    let _ = writeln!(s, "provenance {}", provenance());
    let _ = writeln!(s, "seed {}", config.seed);
    s.push('\n');
    s.push_str(&row_table(&output.rows));
    if !output.notes.is_empty() {
        s.push('\n');
        for n in &output.notes {
            let _ = writeln!(s, "note: {n}");
        }
    }
    if !output.errors.is_empty() {
        s.push('\n');
        for e in &output.errors {
            let _ = writeln!(s, "task error [{}]: {}", e.task, e.message);
        }
    }
    s
}

/// Writes the JSONL, CSV and summary files for a run.
pub fn write_run(out_dir: &Path, config: &ExperimentConfig, output: &RunOutput) -> std::io::Result<RunFiles> {
    std::fs::create_dir_all(out_dir)?;
    let files = RunFiles {
        jsonl: out_dir.join(format!("{}.jsonl", config.name)),
        csv: out_dir.join(format!("{}.csv", config.name)),
        summary: out_dir.join(format!("{}.txt", config.name)),
    };
    std::fs::write(&files.jsonl, to_jsonl(config, output))?;
    std::fs::write(&files.csv, to_csv(&output.rows))?;
    std::fs::write(&files.summary, to_summary(config, output))?;
    Ok(files)
}

/// One result file read back for reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedResult {
    pub name: String,
    pub kind: String,
    pub config_hash: String,
    pub seed: u64,
    pub rows: Vec<ResultRow>,
    pub notes: Vec<String>,
    pub errors: Vec<TaskError>,
}

/// Reads a result file, rejecting anything that is not the current schema.
pub fn load_result(text: &str, origin: &str) -> Result<LoadedResult, String> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let first = lines.next().ok_or_else(|| format!("{origin}: empty result file"))?;
    let header: Header = serde_json::from_str(first).map_err(|e| format!("{origin}: bad header: {e}"))?;
    if header.record != "header" || header.schema != RESULT_SCHEMA {
        return Err(format!("{origin}: schema mismatch: expected {RESULT_SCHEMA}, found {}", header.schema));
    }
    let mut out = LoadedResult {
        name: header.name,
        kind: header.kind,
        config_hash: header.config_hash,
        seed: header.seed,
        rows: Vec::new(),
        notes: Vec::new(),
        errors: Vec::new(),
    };
    for (i, line) in lines.enumerate() {
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| format!("{origin}:{}: {e}", i + 2))?;
        let record = value.get("record").and_then(|r| r.as_str()).unwrap_or_default().to_string();
        match record.as_str() {
            "row" => {
                let r: RowRecord = serde_json::from_value(value).map_err(|e| format!("{origin}:{}: schema mismatch: {e}", i + 2))?;
                out.rows.push(r.row);
            }
            "note" | "task_error" => {
                let r: TextRecord = serde_json::from_value(value).map_err(|e| format!("{origin}:{}: schema mismatch: {e}", i + 2))?;
                if record == "note" {
                    out.notes.push(r.text);
                } else {
                    out.errors.push(TaskError { task: r.task.unwrap_or_default(), message: r.text });
                }
            }
            other => return Err(format!("{origin}:{}: schema mismatch: unknown record `{other}`", i + 2)),
        }
    }
    Ok(out)
}

/// Merged report: a text summary grouped by experiment kind and the merged CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub text: String,
    pub csv: String,
}

fn is_gap(quantity: &str) -> bool {
    quantity.starts_with("gap") || quantity.contains("_gap")
}

/// Merges result files into grouped sections; each section with gap rows gets
/// a ν-by-quantity gap table (ν decreasing).
pub fn report(results: &[LoadedResult]) -> Report {
    let mut groups: BTreeMap<&str, Vec<&LoadedResult>> = BTreeMap::new();
    for r in results {
        groups.entry(r.kind.as_str()).or_default().push(r);
    }
    let mut text = String::new();
    let mut all_rows = Vec::new();
    for (kind, members) in &groups {
        let _ = writeln!(text, "== {kind} ==");
        for m in members {
            let _ = writeln!(text, "-- {} (config {}, seed {})", m.name, &m.config_hash[..m.config_hash.len().min(12)], m.seed);
            text.push_str(&row_table(&m.rows));
            for n in &m.notes {
                let _ = writeln!(text, "note: {n}");
            }
            for e in &m.errors {
                let _ = writeln!(text, "task error [{}]: {}", e.task, e.message);
            }
            all_rows.extend(m.rows.iter().cloned());
        }
        let gaps: Vec<&ResultRow> = members.iter().flat_map(|m| &m.rows).filter(|r| r.nu.is_some() && is_gap(&r.quantity)).collect();
        if !gaps.is_empty() {
            let quantities: BTreeSet<&str> = gaps.iter().map(|r| r.quantity.as_str()).collect();
            let mut nus: Vec<f64> = gaps.iter().filter_map(|r| r.nu).collect();
            nus.sort_by(|a, b| b.total_cmp(a));
            nus.dedup();
            let _ = write!(text, "gap table ({kind})\n{:>10}", "nu");
            for q in &quantities {
                let _ = write!(text, " {:>26}", q);
            }
            text.push('\n');
            for nu in nus {
                let _ = write!(text, "{:>10}", nu);
                for q in &quantities {
                    let cell = gaps
                        .iter()
                        .find(|r| r.nu == Some(nu) && r.quantity == *q)
                        .map(|r| format!("{:.4e} +- {:.1e}", r.value_re, r.std_error))
                        .unwrap_or_else(|| "-".into());
                    let _ = write!(text, " {:>26}", cell);
                }
                text.push('\n');
            }
        }
        text.push('\n');
    }
    Report { text, csv: to_csv(&all_rows) }
}

/// Outcome of one built-in property check.
#[derive(Debug, Clone, PartialEq)]
pub struct SelftestCase {
    pub module: &'static str,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Modules covered by `selftest`.
pub const SELFTEST_MODULES: [&str; 8] = [
    "torus_spectral",
    "brownian",
    "gaussian_fields",
    "classical_theory",
    "quantum_theory",
    "exact_oracles",
    "trapped_gas",
    "meanfield_experiments",
];

fn case(module: &'static str, name: &'static str, r: crate::Result<(bool, String)>) -> SelftestCase {
    match r {
        Ok((passed, detail)) => SelftestCase { module, name, passed, detail },
        Err(e) => SelftestCase { module, name, passed: false, detail: e.to_string() },
    }
}

/// Fast property checks per module; `None` runs all of them.
pub fn selftest(module: Option<&str>) -> Result<Vec<SelftestCase>, ConfigError> {
    if let Some(m) = module {
        if !SELFTEST_MODULES.contains(&m) {
            return bad("module", format!("unknown module `{m}`; expected one of {}", SELFTEST_MODULES.join(", ")));
        }
    }
    let wants = |m: &str| module.is_none_or(|x| x == m);
    let mut out = Vec::new();
    if wants("torus_spectral") {
        out.push(case("torus_spectral", "image_vs_spectral_heat_kernel", (|| {
            let a = heat_kernel_1d_image(1.0, 0.1, 0.3);
            let b = heat_kernel_1d_spectral(1.0, 0.1, 0.3);
            Ok(((a - b).abs() < 1e-12, format!("{a} vs {b}")))
        })()));
    }
    if wants("brownian") {
        out.push(case("brownian", "bridge_endpoints", (|| {
            let spec = BridgeMeasureSpec::new(1.0, 0.0, 0.7, &[0.2], &[0.9], 16)?;
            let path = sample_bridge(&spec, 3)?;
            let (first, last) = (path.points[0][0], path.points[path.len() - 1][0]);
            let off = |a: f64, b: f64| ((a - b) - (a - b).round()).abs();
            Ok((off(first, 0.2) < 1e-12 && off(last, 0.9) < 1e-12, format!("endpoints {first}, {last} modulo 1")))
        })()));
    }
    if wants("gaussian_fields") {
        out.push(case("gaussian_fields", "partial_pairing_counts", (|| {
            let counts = (partial_pairings(2).len(), partial_pairings(4).len());
            Ok((counts == (2, 10), format!("{counts:?}")))
        })()));
    }
    if wants("classical_theory") {
        out.push(case("classical_theory", "free_zeta_is_one", (|| {
            let spec = TorusSpec::new(1, 1.0, 1.0, 8)?;
            let v = InteractionPotential::new(&spec, PotentialKind::Zero)?;
            let z = estimate_zeta(&spec, &v, 8, 64, 1)?;
            Ok(((z.value.re - 1.0).abs() < 1e-12 && z.value.im == 0.0, format!("{}", z.value)))
        })()));
    }
    if wants("quantum_theory") {
        out.push(case("quantum_theory", "free_z_ratio_is_one", (|| {
            let spec = TorusSpec::new(1, 1.0, 1.0, 8)?;
            let reg = RegularizationSpec::with_eta(0.1)?;
            let v = InteractionPotential::new(&spec, PotentialKind::Zero)?;
            let model = QuantumModel::new(&spec, &reg, &v, 0.5, 4, 16)?;
            let z = estimate_z_quantum(&model, 16, 1, None)?;
            Ok(((z.value - 1.0).norm() < 1e-10, format!("{}", z.value)))
        })()));
    }
    if wants("exact_oracles") {
        out.push(case("exact_oracles", "claim2_identity", (|| {
            let ok = (1..=3).all(|p| {
                let g = nalgebra::DMatrix::from_fn(p, p, |i, j| num_complex::Complex64::new(0.1 * (i + 2 * j) as f64, 0.05 * i as f64 - 0.03 * j as f64));
                claim2_check(p, &g)
            });
            Ok((ok, "p = 1..3 on fixed kernels".into()))
        })()));
    }
    if wants("trapped_gas") {
        out.push(case("trapped_gas", "zero_interaction_counterterm", (|| {
            let trap = TrapSpec::new(1, 3.0, 31, 2.0, 0.5, TrapPotential::Harmonic { omega: 1.0 })?;
            let u = counterterm_solve(&trap, &TrapInteraction::Zero, 0.5, 1.0, 1e-10, 10)?;
            let bare = trap.potential_on_grid();
            let err = u.values.iter().zip(&bare).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            Ok((err < 1e-12, format!("max |U - V| = {err:e}")))
        })()));
    }
    if wants("meanfield_experiments") {
        out.push(case("meanfield_experiments", "constant_riemann_gap", (|| {
            let (kappa, nu) = (1.0, 1e-3);
            let (s, i) = RiemannCase::Constant.sum_and_integral(kappa, nu)?;
            let rel = ((s - i).abs() - nu / 2.0).abs() / (nu / 2.0);
            Ok((rel < 1e-2, format!("gap {:e}, relative deviation from nu / 2: {rel:e}", (s - i).abs())))
        })()));
    }
    Ok(out)
}

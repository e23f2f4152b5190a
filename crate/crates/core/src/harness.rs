//! Experiment configuration, single runs, parameter sweeps and record output.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::adomplus::{
    self, auto_consensus_steps, derive_params, effective_chi, AdomPlus, AdomPlusParams,
    AdomPlusState, MultiConsensusMixer, ParamOverrides, SaddlePoint, StopRule,
};
use crate::error::{Error, Result};
use crate::lowerbound::{self, adomplus_ops, CertReport, Certifier, HardInstance, Violation};
use crate::netmodel::{GossipSequence, TopologyKind, TopologySchedule};
use crate::oracle::{self, LocalObjectiveSet};

pub use crate::adomplus::RunRecord;

/// Overrides the directory of every output file.
pub const OUTPUT_DIR_ENV: &str = "TVOPT_OUTPUT_DIR";

pub const RECORDS_CSV_HEADER: &str =
    "k,comm_rounds,grad_calls,err_sq_stacked,err_sq_mean_block,psi_x,psi_yz";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemConfig {
    SyntheticLogistic { n: usize, m: usize, d: usize, kappa: f64, seed: u64 },
    Quadratic { n: usize, d: usize, kappa: f64, seed: u64 },
    HardInstance {
        chi: f64,
        #[serde(rename = "L")]
        l: f64,
        mu: f64,
        d_trunc: usize,
    },
}

impl ProblemConfig {
    pub fn nodes(&self) -> usize {
        match *self {
            ProblemConfig::SyntheticLogistic { n, .. } | ProblemConfig::Quadratic { n, .. } => n,
            ProblemConfig::HardInstance { chi, .. } => 3 * (chi / 3.0).floor().max(0.0) as usize,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Keyword {
    Measured,
    Auto,
}

/// `χ` used for parameter derivation: a declared value or the measured one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ChiSetting {
    Declared(f64),
    Keyword(Keyword),
}

impl Default for ChiSetting {
    fn default() -> Self {
        ChiSetting::Keyword(Keyword::Measured)
    }
}

/// Consensus depth per iteration: a fixed count or `⌈χ ln 2⌉`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConsensusSteps {
    Fixed(usize),
    Keyword(Keyword),
}

impl Default for ConsensusSteps {
    fn default() -> Self {
        ConsensusSteps::Fixed(1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub schedule: TopologyKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub chi: ChiSetting,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmConfig {
    #[serde(default, rename = "T")]
    pub t: ConsensusSteps,
    #[serde(default)]
    pub param_overrides: ParamOverrides,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub format: OutputFormat,
}

fn default_reference_tol() -> f64 {
    1e-11
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub topology: TopologyConfig,
    #[serde(default)]
    pub algorithm: AlgorithmConfig,
    pub stop: StopRule,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub certify: bool,
    /// Gradient-norm tolerance for the reference minimizer.
    #[serde(default = "default_reference_tol")]
    pub reference_tol: f64,
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.stop.validate()?;
        if let ConsensusSteps::Fixed(0) = self.algorithm.t {
            return Err(Error::Config("T must be at least 1".into()));
        }
        if let ConsensusSteps::Keyword(Keyword::Measured) = self.algorithm.t {
            return Err(Error::Config("T must be a positive integer or \"auto\"".into()));
        }
        if let ChiSetting::Keyword(Keyword::Auto) = self.topology.chi {
            return Err(Error::Config("chi must be a number or \"measured\"".into()));
        }
        if let ChiSetting::Declared(c) = self.topology.chi {
            if c.is_nan() || c < 1.0 {
                return Err(Error::Config(format!("declared chi must be >= 1, got {c}")));
            }
        }
        self.algorithm.param_overrides.apply(placeholder_params())?;
        if self.reference_tol.is_nan() || self.reference_tol <= 0.0 {
            return Err(Error::Config("reference_tol must be positive".into()));
        }
        Ok(())
    }

    /// Builds the schedule on the problem's node count.
    pub fn schedule(&self) -> Result<TopologySchedule> {
        TopologySchedule::build(self.topology.schedule.clone(), self.problem.nodes(), self.topology.seed)
    }
}

// Any positive set works here; only the overrides' own positivity is checked.
fn placeholder_params() -> AdomPlusParams {
    derive_params(2.0, 1.0, 1.0).expect("fixed valid arguments")
}

/// The objective and, for the hard instance, its construction.
pub enum BuiltProblem {
    Plain(LocalObjectiveSet),
    Hard(HardInstance),
}

impl BuiltProblem {
    pub fn objective(&self) -> &LocalObjectiveSet {
        match self {
            BuiltProblem::Plain(o) => o,
            BuiltProblem::Hard(h) => &h.objective,
        }
    }
}

pub fn build_problem(problem: &ProblemConfig) -> Result<BuiltProblem> {
    Ok(match *problem {
        ProblemConfig::SyntheticLogistic { n, m, d, kappa, seed } => {
            BuiltProblem::Plain(oracle::gen_synthetic_logistic(n, m, d, seed, kappa)?)
        }
        ProblemConfig::Quadratic { n, d, kappa, seed } => {
            BuiltProblem::Plain(oracle::gen_random_quadratic(n, d, kappa, seed)?)
        }
        ProblemConfig::HardInstance { chi, l, mu, d_trunc } => {
            BuiltProblem::Hard(lowerbound::build_hard_instance(chi, l, mu, d_trunc)?)
        }
    })
}

/// Certification outcome without the per-step vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertSummary {
    pub passed: bool,
    pub steps: usize,
    pub rounds: usize,
    pub first_violation: Option<Violation>,
}

impl From<&CertReport> for CertSummary {
    fn from(r: &CertReport) -> Self {
        Self { passed: r.passed, steps: r.steps, rounds: r.rounds, first_violation: r.first_violation.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub iterations: usize,
    pub comm_rounds: usize,
    pub grad_calls: usize,
    pub converged: bool,
    pub final_err_sq_stacked: f64,
    pub final_err_sq_mean_block: f64,
    pub x_star_norm_sq: f64,
    pub chi_measured: Option<f64>,
    pub chi: f64,
    pub chi_eff: f64,
    #[serde(rename = "T")]
    pub t: usize,
    pub params: AdomPlusParams,
    pub wall_time_secs: f64,
    pub output: Option<PathBuf>,
    pub certification: Option<CertSummary>,
}

pub struct RunResult {
    pub summary: RunSummary,
    pub records: Vec<RunRecord>,
    pub certificate: Option<CertReport>,
    pub final_state: AdomPlusState,
}

/// Resolves `χ`, checking a declared value against the measured one.
fn resolve_chi(setting: ChiSetting, seq: &GossipSequence) -> Result<(f64, f64)> {
    let measured = seq.chi()?;
    match setting {
        ChiSetting::Declared(c) if c < measured * (1.0 - 1e-9) => Err(Error::Config(format!(
            "declared chi {c} is below the measured value {measured}"
        ))),
        ChiSetting::Declared(c) => Ok((c, measured)),
        ChiSetting::Keyword(_) => Ok((measured, measured)),
    }
}

fn output_path(cfg: &OutputConfig, suffix: Option<&str>) -> Option<PathBuf> {
    let ext = match cfg.format {
        OutputFormat::Csv => "csv",
        OutputFormat::Json => "json",
    };
    let env_dir = std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from);
    let base = match (&cfg.path, env_dir) {
        (Some(p), Some(dir)) => dir.join(p.file_name()?),
        (Some(p), None) => p.clone(),
        (None, Some(dir)) => dir.join(format!("records.{ext}")),
        (None, None) => return None,
    };
    Some(match suffix {
        None => base,
        Some(s) => {
            let stem = base.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let ext = base.extension().map(|e| e.to_string_lossy().into_owned());
            let name = match ext {
                Some(e) => format!("{stem}_{s}.{e}"),
                None => format!("{stem}_{s}"),
            };
            base.with_file_name(name)
        }
    })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunResult> {
    run_with_suffix(cfg, None)
}

fn run_with_suffix(cfg: &ExperimentConfig, suffix: Option<&str>) -> Result<RunResult> {
    cfg.validate()?;
    let started = Instant::now();
    let problem = build_problem(&cfg.problem)?;
    let objective = problem.objective();
    let schedule = cfg.schedule()?;
    let seq = GossipSequence::new(&schedule)?;
    let (chi, chi_measured) = resolve_chi(cfg.topology.chi, &seq)?;
    let t = match cfg.algorithm.t {
        ConsensusSteps::Fixed(t) => t,
        ConsensusSteps::Keyword(_) => auto_consensus_steps(chi),
    };
    let chi_eff = effective_chi(chi, t);
    let params = cfg
        .algorithm
        .param_overrides
        .apply(derive_params(objective.l(), objective.mu(), chi_eff)?)?;

    let x_ref = oracle::reference_minimizer(objective, cfg.reference_tol)?;
    let saddle = SaddlePoint::from_minimizer(objective, &x_ref, params.nu)?;
    let mixer = MultiConsensusMixer::new(&seq, t)?;
    let solver = AdomPlus::new(params, objective, mixer)?;
    let state = AdomPlusState::zeros(objective.n(), objective.d());

    let mut certifier = match (&problem, cfg.certify) {
        (BuiltProblem::Hard(h), true) => {
            if !matches!(schedule.kind(), TopologyKind::LowerBoundStar) {
                return Err(Error::Config("certification needs the lower_bound_star schedule".into()));
            }
            Some(Certifier::new(h)?)
        }
        (_, true) => return Err(Error::Config("certification needs a hard_instance problem".into())),
        (_, false) => None,
    };
    let mut cert_error = None;
    let outcome = adomplus::run(&solver, state, &saddle, &cfg.stop, |s| {
        if let Some(c) = certifier.as_mut() {
            let ops = if s.k == 0 { Vec::new() } else { adomplus_ops(s.k - 1, t) };
            if let Err(e) = c.observe(&ops, &s.x) {
                cert_error.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = cert_error {
        return Err(e);
    }
    let certificate = certifier.map(Certifier::finish).transpose()?;

    let out = output_path(&cfg.output, suffix);
    if let Some(path) = &out {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let file = std::fs::File::create(path)?;
        emit(&outcome.records, cfg.output.format, std::io::BufWriter::new(file))?;
    }

    let last = outcome.records.last().expect("run emits at least one record");
    let summary = RunSummary {
        iterations: outcome.state.k,
        comm_rounds: outcome.state.comm_rounds,
        grad_calls: outcome.state.grad_calls,
        converged: outcome.converged,
        final_err_sq_stacked: last.err_sq_stacked,
        final_err_sq_mean_block: last.err_sq_mean_block,
        x_star_norm_sq: saddle.x.norm_sq(),
        chi_measured: Some(chi_measured),
        chi,
        chi_eff,
        t,
        params,
        wall_time_secs: started.elapsed().as_secs_f64(),
        output: out,
        certification: certificate.as_ref().map(CertSummary::from),
    };
    Ok(RunResult { summary, records: outcome.records, certificate, final_state: outcome.state })
}

/// Writes records as CSV (fixed header, shortest round-trip floats) or as a
/// JSON array with the same field names.
pub fn emit(records: &[RunRecord], format: OutputFormat, mut w: impl Write) -> Result<()> {
    match format {
        OutputFormat::Csv => {
            writeln!(w, "{RECORDS_CSV_HEADER}")?;
            for r in records {
                writeln!(
                    w,
                    "{},{},{},{:?},{:?},{:?},{:?}",
                    r.k, r.comm_rounds, r.grad_calls, r.err_sq_stacked, r.err_sq_mean_block, r.psi_x, r.psi_yz
                )?;
            }
        }
        OutputFormat::Json => {
            serde_json::to_writer(&mut w, records)?;
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn records_csv(records: &[RunRecord]) -> String {
    let mut buf = Vec::new();
    emit(records, OutputFormat::Csv, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("ascii output")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Kappa,
    Chi,
    #[serde(rename = "T")]
    T,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kappa" => Ok(SweepAxis::Kappa),
            "chi" => Ok(SweepAxis::Chi),
            "T" | "t" => Ok(SweepAxis::T),
            other => Err(Error::InvalidArgument(format!("unknown sweep axis {other:?}"))),
        }
    }
}

/// `base` with one coordinate replaced. On the hard instance, `kappa` sets
/// `L = kappa·mu`; elsewhere `chi` becomes a declared value.
pub fn with_axis_value(base: &ExperimentConfig, axis: SweepAxis, value: f64) -> Result<ExperimentConfig> {
    let mut cfg = base.clone();
    match axis {
        SweepAxis::Kappa => match &mut cfg.problem {
            ProblemConfig::SyntheticLogistic { kappa, .. } | ProblemConfig::Quadratic { kappa, .. } => {
                *kappa = value
            }
            ProblemConfig::HardInstance { l, mu, .. } => *l = value * *mu,
        },
        SweepAxis::Chi => match &mut cfg.problem {
            ProblemConfig::HardInstance { chi, .. } => *chi = value,
            _ => cfg.topology.chi = ChiSetting::Declared(value),
        },
        SweepAxis::T => {
            if value < 1.0 || value.fract() != 0.0 {
                return Err(Error::InvalidArgument(format!("T must be a positive integer, got {value}")));
            }
            cfg.algorithm.t = ConsensusSteps::Fixed(value as usize);
        }
    }
    Ok(cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub iterations_to_eps: Option<usize>,
    pub comm_rounds_to_eps: Option<usize>,
    pub grad_calls_to_eps: Option<usize>,
    pub error: Option<String>,
}

pub const SWEEP_CSV_HEADER: &str = "value,iterations_to_eps,comm_rounds_to_eps,grad_calls_to_eps,error";

/// One run per value, executed on separate threads; a failed run fills its
/// row's `error` and leaves the others untouched.
pub fn sweep(base: &ExperimentConfig, axis: SweepAxis, values: &[f64]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("sweep needs at least one value".into()));
    }
    let outcomes: Vec<Result<RunSummary>> = std::thread::scope(|scope| {
        let handles: Vec<_> = values
            .iter()
            .map(|&v| {
                scope.spawn(move || {
                    let cfg = with_axis_value(base, axis, v)?;
                    let suffix = format!("{}", v);
                    run_with_suffix(&cfg, Some(&suffix)).map(|r| r.summary)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Config("sweep worker panicked".into()))))
            .collect()
    });
    Ok(values
        .iter()
        .zip(outcomes)
        .map(|(&value, outcome)| match outcome {
            Ok(s) if s.converged => SweepRow {
                value,
                iterations_to_eps: Some(s.iterations),
                comm_rounds_to_eps: Some(s.comm_rounds),
                grad_calls_to_eps: Some(s.grad_calls),
                error: None,
            },
            Ok(s) => SweepRow {
                value,
                iterations_to_eps: None,
                comm_rounds_to_eps: None,
                grad_calls_to_eps: None,
                error: Some(format!("target not reached within {} iterations", s.iterations)),
            },
            Err(e) => SweepRow {
                value,
                iterations_to_eps: None,
                comm_rounds_to_eps: None,
                grad_calls_to_eps: None,
                error: Some(e.to_string()),
            },
        })
        .collect())
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    fn opt(v: Option<usize>) -> String {
        v.map(|v| v.to_string()).unwrap_or_default()
    }
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let err = r.error.as_deref().unwrap_or("").replace(['"', ','], ";");
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.value,
            opt(r.iterations_to_eps),
            opt(r.comm_rounds_to_eps),
            opt(r.grad_calls_to_eps),
            err
        ));
    }
    out
}

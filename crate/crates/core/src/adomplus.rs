//! ADOM+: accelerated primal decentralized optimization over time-varying
//! networks, with optional multi-consensus.
//!
//! Each iteration makes one call to `∇F` and one (multi-)gossip exchange that
//! carries two payloads: `γν⁻¹(y_g+z_g) + m` and `y_g + z_g`. The x and y
//! updates are implicit in each other; because every coefficient is a scalar
//! the coupled pair is solved in closed form, y first, then x.

use serde::{Deserialize, Serialize};

use crate::dvector::{multi_mix, project_consensus, DistVec};
use crate::error::{Error, Result};
use crate::netmodel::GossipSequence;
use crate::oracle::LocalObjectiveSet;

/// Any coordinate above this magnitude aborts a run.
pub const DIVERGENCE_LIMIT: f64 = 1e100;

/// Iteration cap for runs that only specify a target accuracy.
pub const DEFAULT_ITERATION_CAP: usize = 50_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdomPlusParams {
    pub tau1: f64,
    pub tau2: f64,
    pub eta: f64,
    pub alpha: f64,
    pub nu: f64,
    pub beta: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub theta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub zeta: f64,
}

/// The step sizes and momentum weights under which the potential
/// `Ψ_x + Ψ_yz` contracts by `1 − √μ / (32χ√L)` per iteration.
pub fn derive_params(l: f64, mu: f64, chi: f64) -> Result<AdomPlusParams> {
    if !(mu > 0.0 && l > mu && l.is_finite()) {
        return Err(Error::InvalidArgument(format!("need L > mu > 0, got L = {l}, mu = {mu}")));
    }
    if !(chi >= 1.0 && chi.is_finite()) {
        return Err(Error::InvalidArgument(format!("need chi >= 1, got {chi}")));
    }
    let tau2 = (mu / l).sqrt();
    let tau1 = 1.0 / (1.0 / tau2 + 0.5);
    let eta = 1.0 / (l * tau2);
    let alpha = mu / 2.0;
    let nu = mu / 2.0;
    let beta = 1.0 / (2.0 * l);
    let sigma2 = mu.sqrt() / (16.0 * chi * l.sqrt());
    let sigma1 = 1.0 / (1.0 / sigma2 + 0.5);
    let zeta = 0.5;
    let delta = 1.0 / (17.0 * l);
    let gamma = nu / (14.0 * sigma2 * chi * chi);
    let theta = nu / (4.0 * sigma2);
    Ok(AdomPlusParams { tau1, tau2, eta, alpha, nu, beta, sigma1, sigma2, theta, gamma, delta, zeta })
}

/// Guaranteed per-iteration contraction `√μ / (32χ√L)` of the potential.
pub fn theoretical_rate(l: f64, mu: f64, chi: f64) -> f64 {
    mu.sqrt() / (32.0 * chi * l.sqrt())
}

/// `T = ⌈χ ln 2⌉`, the multi-consensus depth that halves disagreement.
pub fn auto_consensus_steps(chi: f64) -> usize {
    ((chi * std::f64::consts::LN_2).ceil() as usize).max(1)
}

/// Network constant seen by the algorithm when each iteration mixes with
/// `W(k;T)`. Plain gossip keeps `χ`; the halving depth gives `2`; depths in
/// between use the contraction `(1 − 1/χ)^T` directly.
pub fn effective_chi(chi: f64, t: usize) -> f64 {
    if t <= 1 {
        chi
    } else if t >= auto_consensus_steps(chi) {
        chi.min(2.0)
    } else {
        let contraction = (1.0 - 1.0 / chi).powi(t as i32);
        (1.0 / (1.0 - contraction)).min(chi)
    }
}

impl AdomPlusParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("tau1", self.tau1),
            ("tau2", self.tau2),
            ("eta", self.eta),
            ("alpha", self.alpha),
            ("nu", self.nu),
            ("beta", self.beta),
            ("sigma1", self.sigma1),
            ("sigma2", self.sigma2),
            ("theta", self.theta),
            ("gamma", self.gamma),
            ("delta", self.delta),
            ("zeta", self.zeta),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("parameter {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Manual replacements for individual parameters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamOverrides {
    pub tau1: Option<f64>,
    pub tau2: Option<f64>,
    pub eta: Option<f64>,
    pub alpha: Option<f64>,
    pub nu: Option<f64>,
    pub beta: Option<f64>,
    pub sigma1: Option<f64>,
    pub sigma2: Option<f64>,
    pub theta: Option<f64>,
    pub gamma: Option<f64>,
    pub delta: Option<f64>,
    pub zeta: Option<f64>,
}

impl ParamOverrides {
    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }

    pub fn apply(&self, base: AdomPlusParams) -> Result<AdomPlusParams> {
        let pick = |o: Option<f64>, v: f64| o.unwrap_or(v);
        let p = AdomPlusParams {
            tau1: pick(self.tau1, base.tau1),
            tau2: pick(self.tau2, base.tau2),
            eta: pick(self.eta, base.eta),
            alpha: pick(self.alpha, base.alpha),
            nu: pick(self.nu, base.nu),
            beta: pick(self.beta, base.beta),
            sigma1: pick(self.sigma1, base.sigma1),
            sigma2: pick(self.sigma2, base.sigma2),
            theta: pick(self.theta, base.theta),
            gamma: pick(self.gamma, base.gamma),
            delta: pick(self.delta, base.delta),
            zeta: pick(self.zeta, base.zeta),
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdomPlusState {
    pub k: usize,
    pub comm_rounds: usize,
    pub grad_calls: usize,
    pub x: DistVec,
    pub y: DistVec,
    pub z: DistVec,
    pub m: DistVec,
    pub x_f: DistVec,
    pub y_f: DistVec,
    pub z_f: DistVec,
    /// Intermediates of the most recent step (equal to `x, y, z` before the
    /// first step).
    pub x_g: DistVec,
    pub y_g: DistVec,
    pub z_g: DistVec,
}

impl AdomPlusState {
    /// Starts from `(x⁰, y⁰, z⁰, m⁰)` with `x_f⁰ = x⁰`, `y_f⁰ = y⁰`, `z_f⁰ = z⁰`.
    /// `z⁰` must lie in `ℒ⊥`.
    pub fn new(x: DistVec, y: DistVec, z: DistVec, m: DistVec) -> Result<Self> {
        x.same_shape(&y)?;
        x.same_shape(&z)?;
        x.same_shape(&m)?;
        let scale = 1.0 + z.max_abs();
        if z.block_sum().iter().any(|s| s.abs() > 1e-10 * scale * z.n() as f64) {
            return Err(Error::InvalidArgument("z0 must have zero block sum".into()));
        }
        Ok(Self {
            k: 0,
            comm_rounds: 0,
            grad_calls: 0,
            x_f: x.clone(),
            y_f: y.clone(),
            z_f: z.clone(),
            x_g: x.clone(),
            y_g: y.clone(),
            z_g: z.clone(),
            x,
            y,
            z,
            m,
        })
    }

    pub fn zeros(n: usize, d: usize) -> Self {
        let z = DistVec::zeros(n, d);
        Self::new(z.clone(), z.clone(), z.clone(), z).expect("zero state is valid")
    }

    /// `(x*, y*, z*)` with `m = 0`.
    pub fn at_saddle(saddle: &SaddlePoint) -> Result<Self> {
        let m = DistVec::zeros(saddle.x.n(), saddle.x.d());
        Self::new(saddle.x.clone(), saddle.y.clone(), saddle.z.clone(), m)
    }

    fn check_finite(&self) -> Result<()> {
        let fields = [
            ("x", &self.x),
            ("y", &self.y),
            ("z", &self.z),
            ("m", &self.m),
            ("x_f", &self.x_f),
            ("y_f", &self.y_f),
            ("z_f", &self.z_f),
        ];
        for (name, v) in fields {
            let max = v.max_abs();
            if !v.is_finite() || max > DIVERGENCE_LIMIT {
                return Err(Error::Divergence {
                    iteration: self.k,
                    detail: format!("|{name}|_max = {max:e}"),
                });
            }
        }
        Ok(())
    }
}

/// The per-iteration communication primitive: applies the iteration-`k`
/// mixing operator to two vectors in the same simulated exchange.
pub trait Mixer {
    fn rounds_per_iteration(&self) -> usize;
    fn mix_pair(&self, k: usize, a: &DistVec, b: &DistVec) -> Result<(DistVec, DistVec)>;
}

/// `W(k;T) ⊗ I_d` over a cyclic gossip sequence; `T = 1` is plain gossip.
#[derive(Clone, Copy, Debug)]
pub struct MultiConsensusMixer<'a> {
    seq: &'a GossipSequence,
    t: usize,
}

impl<'a> MultiConsensusMixer<'a> {
    pub fn new(seq: &'a GossipSequence, t: usize) -> Result<Self> {
        if t == 0 {
            return Err(Error::InvalidArgument("consensus steps T must be at least 1".into()));
        }
        Ok(Self { seq, t })
    }
}

impl Mixer for MultiConsensusMixer<'_> {
    fn rounds_per_iteration(&self) -> usize {
        self.t
    }

    fn mix_pair(&self, k: usize, a: &DistVec, b: &DistVec) -> Result<(DistVec, DistVec)> {
        Ok((multi_mix(self.seq, k, self.t, a)?, multi_mix(self.seq, k, self.t, b)?))
    }
}

pub struct AdomPlus<'a, M> {
    params: AdomPlusParams,
    objective: &'a LocalObjectiveSet,
    mixer: M,
}

impl<'a, M: Mixer> AdomPlus<'a, M> {
    pub fn new(params: AdomPlusParams, objective: &'a LocalObjectiveSet, mixer: M) -> Result<Self> {
        params.validate()?;
        Ok(Self { params, objective, mixer })
    }

    pub fn params(&self) -> &AdomPlusParams {
        &self.params
    }

    pub fn objective(&self) -> &LocalObjectiveSet {
        self.objective
    }

    pub fn mixer(&self) -> &M {
        &self.mixer
    }

    /// One pass of the update lines; advances `k` by one, the gradient meter
    /// by one and the communication meter by `T`.
    pub fn step(&self, s: &mut AdomPlusState) -> Result<()> {
        let p = &self.params;
        let (n, d) = (self.objective.n(), self.objective.d());
        if s.x.n() != n || s.x.d() != d {
            return Err(Error::dims(format!("{n}x{d}"), format!("{}x{}", s.x.n(), s.x.d())));
        }

        let x_g = DistVec::lincomb(p.tau1, &s.x, 1.0 - p.tau1, &s.x_f);
        let mut g = self.objective.grad_f(&x_g)?;
        g.axpy(-p.nu, &x_g);
        let y_g = DistVec::lincomb(p.sigma1, &s.y, 1.0 - p.sigma1, &s.y_f);
        let z_g = DistVec::lincomb(p.sigma1, &s.z, 1.0 - p.sigma1, &s.z_f);
        let yz_g = y_g.add(&z_g);

        // x⁺ = (a + η y⁺) / (1 + ηα) with a = x + ηα x_g − η g.
        let x_den = 1.0 + p.eta * p.alpha;
        let mut a = s.x.clone();
        a.axpy(p.eta * p.alpha, &x_g);
        a.axpy(-p.eta, &g);

        let y_den = 1.0 + p.theta * p.beta + p.theta * p.eta / x_den;
        let mut y_new = s.y.clone();
        y_new.axpy(p.theta * p.beta, &g);
        y_new.axpy(-p.theta / p.nu, &yz_g);
        y_new.axpy(-p.theta / x_den, &a);
        y_new.scale(1.0 / y_den);

        let mut x_new = a;
        x_new.axpy(p.eta, &y_new);
        x_new.scale(1.0 / x_den);

        let mut x_f = x_g.clone();
        x_f.axpy(p.tau2, &x_new.sub(&s.x));
        let mut y_f = y_g.clone();
        y_f.axpy(p.sigma2, &y_new.sub(&s.y));

        let mut u = s.m.clone();
        u.axpy(p.gamma / p.nu, &yz_g);
        let (wu, wyz) = self.mixer.mix_pair(s.k, &u, &yz_g)?;

        let mut z_new = s.z.clone();
        z_new.axpy(p.gamma * p.delta, &z_g.sub(&s.z));
        z_new.axpy(-1.0, &wu);
        let m_new = u.sub(&wu);
        let mut z_f = z_g.clone();
        z_f.axpy(-p.zeta, &wyz);

        s.x = x_new;
        s.y = y_new;
        s.z = z_new;
        s.m = m_new;
        s.x_f = x_f;
        s.y_f = y_f;
        s.z_f = z_f;
        s.x_g = x_g;
        s.y_g = y_g;
        s.z_g = z_g;
        s.k += 1;
        s.grad_calls += 1;
        s.comm_rounds += self.mixer.rounds_per_iteration();
        s.check_finite()
    }
}

/// Solution `(x*, y*, z*)` of the saddle-point reformulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaddlePoint {
    pub x: DistVec,
    pub y: DistVec,
    pub z: DistVec,
}

impl SaddlePoint {
    /// Lifts a minimizer of `Σ f_i` to consensus blocks and sets
    /// `y* = ∇F(x*) − νx*`, `z* = P(−νx* − y*)`.
    pub fn from_minimizer(objective: &LocalObjectiveSet, x_ref: &[f64], nu: f64) -> Result<Self> {
        if x_ref.len() != objective.d() {
            return Err(Error::dims(objective.d(), x_ref.len()));
        }
        let x = DistVec::consensus(objective.n(), x_ref);
        let mut y = objective.grad_f(&x)?;
        y.axpy(-nu, &x);
        let mut w = y.clone();
        w.scale(-1.0);
        w.axpy(-nu, &x);
        let z = project_consensus(&w);
        Ok(Self { x, y, z })
    }

    /// Residual norms of the three optimality conditions:
    /// `‖∇F(x*) − νx* − y*‖`, `‖ν⁻¹(y*+z*) + x*‖`, `‖P(y*+z*)‖`.
    pub fn residuals(&self, objective: &LocalObjectiveSet, nu: f64) -> Result<[f64; 3]> {
        let mut rx = objective.grad_f(&self.x)?;
        rx.axpy(-nu, &self.x);
        rx.axpy(-1.0, &self.y);
        let yz = self.y.add(&self.z);
        let mut ry = yz.clone();
        ry.scale(1.0 / nu);
        ry.axpy(1.0, &self.x);
        Ok([rx.norm_sq().sqrt(), ry.norm_sq().sqrt(), project_consensus(&yz).norm_sq().sqrt()])
    }
}

/// The potential `Ψ_x + Ψ_yz` and its named components.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReport {
    /// `(1/η + α)‖x − x*‖²`
    pub x_distance: f64,
    /// `(2/τ₂)(D_F(x_f, x*) − (ν/2)‖x_f − x*‖²)`
    pub x_bregman: f64,
    /// `(1/θ + β/2)‖y − y*‖²`
    pub y_distance: f64,
    /// `β/(2σ₂)‖y_f − y*‖²`
    pub yf_distance: f64,
    /// `(1/γ)‖ẑ − z*‖²` with `ẑ = z − Pm`
    pub zhat_distance: f64,
    /// `(4/(3γ))‖m‖²_P`
    pub momentum: f64,
    /// `(1/(νσ₂))‖y_f + z_f − (y* + z*)‖²`
    pub coupled: f64,
    pub psi_x: f64,
    pub psi_yz: f64,
    pub total: f64,
}

pub fn lyapunov(
    state: &AdomPlusState,
    params: &AdomPlusParams,
    objective: &LocalObjectiveSet,
    saddle: &SaddlePoint,
) -> Result<LyapunovReport> {
    let p = params;
    let x_distance = (1.0 / p.eta + p.alpha) * state.x.dist_sq(&saddle.x);
    let bregman = objective.bregman(&state.x_f, &saddle.x)?;
    let x_bregman = (2.0 / p.tau2) * (bregman - 0.5 * p.nu * state.x_f.dist_sq(&saddle.x));

    let y_distance = (1.0 / p.theta + p.beta / 2.0) * state.y.dist_sq(&saddle.y);
    let yf_distance = p.beta / (2.0 * p.sigma2) * state.y_f.dist_sq(&saddle.y);
    let pm = project_consensus(&state.m);
    let zhat = state.z.sub(&pm);
    let zhat_distance = zhat.dist_sq(&saddle.z) / p.gamma;
    let momentum = 4.0 / (3.0 * p.gamma) * pm.norm_sq();
    let coupled = state
        .y_f
        .add(&state.z_f)
        .dist_sq(&saddle.y.add(&saddle.z))
        / (p.nu * p.sigma2);

    let psi_x = x_distance + x_bregman;
    let psi_yz = y_distance + yf_distance + zhat_distance + momentum + coupled;
    Ok(LyapunovReport {
        x_distance,
        x_bregman,
        y_distance,
        yf_distance,
        zhat_distance,
        momentum,
        coupled,
        psi_x,
        psi_yz,
        total: psi_x + psi_yz,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorMetric {
    /// `‖x̄ − x*‖²` where `x̄` is the mean block.
    #[default]
    MeanBlock,
    /// `‖x − x*‖²` over the stacked vector.
    Stacked,
    /// `‖x − x*‖² / ‖x*‖²` over the stacked vector.
    StackedRelative,
    /// `‖x̄ − x*‖² / ‖x*‖²` per block.
    MeanBlockRelative,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    pub budget: Option<usize>,
    pub target_eps: Option<f64>,
    #[serde(default)]
    pub metric: ErrorMetric,
}

impl StopRule {
    pub fn budget(iterations: usize) -> Self {
        Self { budget: Some(iterations), target_eps: None, metric: ErrorMetric::default() }
    }

    pub fn target(eps: f64, metric: ErrorMetric) -> Self {
        Self { budget: None, target_eps: Some(eps), metric }
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget.is_none() && self.target_eps.is_none() {
            return Err(Error::InvalidArgument("a run needs a budget or a target accuracy".into()));
        }
        if let Some(eps) = self.target_eps {
            if eps.is_nan() || eps < 0.0 {
                return Err(Error::InvalidArgument(format!("target_eps must be >= 0, got {eps}")));
            }
        }
        Ok(())
    }
}

/// Per-iteration telemetry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub k: usize,
    pub comm_rounds: usize,
    pub grad_calls: usize,
    pub err_sq_stacked: f64,
    pub err_sq_mean_block: f64,
    pub psi_x: f64,
    pub psi_yz: f64,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub records: Vec<RunRecord>,
    pub state: AdomPlusState,
    pub converged: bool,
}

impl RunOutcome {
    pub fn iterations(&self) -> usize {
        self.state.k
    }
}

fn record(
    state: &AdomPlusState,
    params: &AdomPlusParams,
    objective: &LocalObjectiveSet,
    saddle: &SaddlePoint,
) -> Result<RunRecord> {
    let ly = lyapunov(state, params, objective, saddle)?;
    let mean = state.x.mean_block();
    let err_mean: f64 = mean.iter().zip(saddle.x.block(0)).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(RunRecord {
        k: state.k,
        comm_rounds: state.comm_rounds,
        grad_calls: state.grad_calls,
        err_sq_stacked: state.x.dist_sq(&saddle.x),
        err_sq_mean_block: err_mean,
        psi_x: ly.psi_x,
        psi_yz: ly.psi_yz,
    })
}

/// Iterates until the budget is spent or the chosen error metric reaches
/// `target_eps`. One record is emitted for the initial state and one per
/// iteration; `observer` sees every state including the initial one.
pub fn run<M: Mixer>(
    solver: &AdomPlus<'_, M>,
    mut state: AdomPlusState,
    saddle: &SaddlePoint,
    stop: &StopRule,
    mut observer: impl FnMut(&AdomPlusState),
) -> Result<RunOutcome> {
    stop.validate()?;
    let cap = stop.budget.unwrap_or(DEFAULT_ITERATION_CAP);
    // Relative metrics divide by ‖x*‖² of the stacked vector or of one block.
    let stacked_sq = saddle.x.norm_sq().max(f64::MIN_POSITIVE);
    let block_sq = (stacked_sq / saddle.x.n() as f64).max(f64::MIN_POSITIVE);
    let reached = |r: &RunRecord| -> bool {
        let Some(eps) = stop.target_eps else { return false };
        let err = match stop.metric {
            ErrorMetric::MeanBlock => r.err_sq_mean_block,
            ErrorMetric::Stacked => r.err_sq_stacked,
            ErrorMetric::StackedRelative => r.err_sq_stacked / stacked_sq,
            ErrorMetric::MeanBlockRelative => r.err_sq_mean_block / block_sq,
        };
        err <= eps
    };

    observer(&state);
    let first = record(&state, &solver.params, solver.objective, saddle)?;
    let mut converged = reached(&first);
    let mut records = vec![first];
    let start_k = state.k;
    while !converged && state.k - start_k < cap {
        solver.step(&mut state)?;
        observer(&state);
        let r = record(&state, &solver.params, solver.objective, saddle)?;
        converged = reached(&r);
        records.push(r);
    }
    Ok(RunOutcome { records, state, converged })
}

pub const TRAJECTORY_CSV_HEADER: &str =
    "k,comm_rounds,grad_calls,err_sq_stacked,err_sq_mean_block,psi_x,psi_yz,psi_total";

pub fn trajectory_csv(records: &[RunRecord]) -> String {
    let mut out = String::from(TRAJECTORY_CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{:?},{:?},{:?},{:?},{:?}\n",
            r.k,
            r.comm_rounds,
            r.grad_calls,
            r.err_sq_stacked,
            r.err_sq_mean_block,
            r.psi_x,
            r.psi_yz,
            r.psi_x + r.psi_yz
        ));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CheckpointHeader {
    k: usize,
    comm_rounds: usize,
    grad_calls: usize,
    n: usize,
    d: usize,
    chi_eff: f64,
    params: AdomPlusParams,
    fields: Vec<String>,
}

const CHECKPOINT_FIELDS: [&str; 7] = ["x", "y", "z", "m", "x_f", "y_f", "z_f"];

/// A JSON header line followed by the raw little-endian blocks of
/// `x, y, z, m, x_f, y_f, z_f`.
pub fn write_checkpoint(
    mut w: impl std::io::Write,
    state: &AdomPlusState,
    params: &AdomPlusParams,
    chi_eff: f64,
) -> Result<()> {
    let header = CheckpointHeader {
        k: state.k,
        comm_rounds: state.comm_rounds,
        grad_calls: state.grad_calls,
        n: state.x.n(),
        d: state.x.d(),
        chi_eff,
        params: *params,
        fields: CHECKPOINT_FIELDS.iter().map(|s| s.to_string()).collect(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for v in [&state.x, &state.y, &state.z, &state.m, &state.x_f, &state.y_f, &state.z_f] {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Inverse of `write_checkpoint`; the transient `x_g, y_g, z_g` are reset to
/// `x, y, z`.
pub fn read_checkpoint(bytes: &[u8]) -> Result<(AdomPlusState, AdomPlusParams, f64)> {
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Config("checkpoint has no header line".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[..split])?;
    if header.fields != CHECKPOINT_FIELDS {
        return Err(Error::Config(format!("unexpected checkpoint fields {:?}", header.fields)));
    }
    let body = &bytes[split + 1..];
    let len = header.n * header.d * 8;
    if body.len() != len * CHECKPOINT_FIELDS.len() {
        return Err(Error::dims(len * CHECKPOINT_FIELDS.len(), body.len()));
    }
    let mut parts = body
        .chunks(len)
        .map(|c| DistVec::from_le_bytes(header.n, header.d, c))
        .collect::<Result<Vec<_>>>()?
        .into_iter();
    let mut next = || parts.next().expect("seven fields");
    let (x, y, z, m) = (next(), next(), next(), next());
    let (x_f, y_f, z_f) = (next(), next(), next());
    let state = AdomPlusState {
        k: header.k,
        comm_rounds: header.comm_rounds,
        grad_calls: header.grad_calls,
        x_g: x.clone(),
        y_g: y.clone(),
        z_g: z.clone(),
        x,
        y,
        z,
        m,
        x_f,
        y_f,
        z_f,
    };
    Ok((state, header.params, header.chi_eff))
}

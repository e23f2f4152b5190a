//! The worst-case construction for decentralized first-order methods over
//! time-varying stars, plus a certifier that replays any traced run against
//! the span bound it implies.
//!
//! Nodes are zero-based internally. `node_label` converts to the one-based
//! labels used in reports.

use serde::{Deserialize, Serialize};

use crate::dvector::DistVec;
use crate::error::{Error, Result};
use crate::netmodel::{TopologyKind, TopologySchedule};
use crate::oracle::{Hessian, LocalObjectiveSet, QuadraticNode};

/// Coordinates below this magnitude count as zero in the support check.
pub const SUPPORT_ZERO: f64 = 1e-12;

/// Center of the round-`q` star: cycles through the middle third.
pub fn star_center(n: usize, q: usize) -> usize {
    let third = n / 3;
    third + q % third
}

pub fn node_label(i: usize) -> usize {
    i + 1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeGroup {
    /// Odd-link chain plus the anchor term on the first coordinate.
    First,
    /// Pure regularizer; the relay group that hosts every star center.
    Relay,
    /// Even-link chain.
    Last,
}

pub fn node_group(n: usize, i: usize) -> NodeGroup {
    let third = n / 3;
    if i < third {
        NodeGroup::First
    } else if i < 2 * third {
        NodeGroup::Relay
    } else {
        NodeGroup::Last
    }
}

/// `ρ = (s − 1)/(s + 1)` with `s = √(2L/(3μ) + 1/3)`.
pub fn rho(l: f64, mu: f64) -> f64 {
    let s = (2.0 * l / (3.0 * mu) + 1.0 / 3.0).sqrt();
    (s - 1.0) / (s + 1.0)
}

/// `(ρ, ρ², …, ρ^d)`.
pub fn hard_solution(l: f64, mu: f64, d: usize) -> Result<Vec<f64>> {
    if !(mu > 0.0 && l > mu && l.is_finite()) {
        return Err(Error::InvalidArgument(format!("need L > mu > 0, got L = {l}, mu = {mu}")));
    }
    let r = rho(l, mu);
    let mut out = Vec::with_capacity(d);
    let mut p = 1.0;
    for _ in 0..d {
        p *= r;
        out.push(p);
    }
    Ok(out)
}

/// Whether `ρ ≥ max(0, 1 − √(6μ/L))`, the inequality behind the relaxed curve.
pub fn rho_inequality_holds(l: f64, mu: f64) -> bool {
    rho(l, mu) >= (1.0 - (6.0 * mu / l).sqrt()).max(0.0)
}

#[derive(Clone, Debug)]
pub struct HardInstance {
    pub chi: f64,
    pub n: usize,
    pub l: f64,
    pub mu: f64,
    pub d_trunc: usize,
    pub rho: f64,
    pub objective: LocalObjectiveSet,
}

fn chain_node(group: NodeGroup, l: f64, mu: f64, d: usize) -> QuadraticNode {
    // Each squared link c·(x_a − x_b)² contributes 2c to the two diagonal
    // entries and −2c off the diagonal; c = (L − μ)/4.
    let c = (l - mu) / 4.0;
    let mut diag = vec![mu; d];
    let mut off = vec![0.0; d - 1];
    let mut linear = vec![0.0; d];
    let mut offset = 0.0;
    let first_link = match group {
        NodeGroup::First => {
            diag[0] += 2.0 * c;
            linear[0] = -2.0 * c;
            offset = c;
            Some(1)
        }
        NodeGroup::Relay => None,
        NodeGroup::Last => Some(0),
    };
    if let Some(start) = first_link {
        let mut a = start;
        while a + 1 < d {
            diag[a] += 2.0 * c;
            diag[a + 1] += 2.0 * c;
            off[a] = -2.0 * c;
            a += 2;
        }
    }
    QuadraticNode { hessian: Hessian::Tridiagonal { diag, off }, linear, offset }
}

/// Builds the split chain objective on `n = 3⌊χ/3⌋` nodes, truncated to
/// `d_trunc` coordinates.
pub fn build_hard_instance(chi: f64, l: f64, mu: f64, d_trunc: usize) -> Result<HardInstance> {
    if !(chi >= 3.0 && chi.is_finite()) {
        return Err(Error::InvalidArgument(format!("need chi >= 3, got {chi}")));
    }
    if !(mu > 0.0 && l > mu && l.is_finite()) {
        return Err(Error::InvalidArgument(format!("need L > mu > 0, got L = {l}, mu = {mu}")));
    }
    if d_trunc < 4 {
        return Err(Error::InvalidArgument(format!("need d_trunc >= 4, got {d_trunc}")));
    }
    let n = 3 * (chi / 3.0).floor() as usize;
    let nodes = (0..n).map(|i| chain_node(node_group(n, i), l, mu, d_trunc)).collect();
    let objective = LocalObjectiveSet::quadratic(n, d_trunc, nodes, l, mu)?;
    Ok(HardInstance { chi, n, l, mu, d_trunc, rho: rho(l, mu), objective })
}

impl HardInstance {
    pub fn group_size(&self) -> usize {
        self.n / 3
    }

    pub fn group(&self, i: usize) -> NodeGroup {
        node_group(self.n, i)
    }

    pub fn star_center(&self, q: usize) -> usize {
        star_center(self.n, q)
    }

    pub fn schedule(&self) -> Result<TopologySchedule> {
        TopologySchedule::build(TopologyKind::LowerBoundStar, self.n, 0)
    }

    pub fn solution(&self) -> Vec<f64> {
        hard_solution(self.l, self.mu, self.d_trunc).expect("validated at construction")
    }

    /// `ρ⁴/(1 − ρ²)`.
    pub fn curve_constant(&self) -> f64 {
        self.rho.powi(4) / (1.0 - self.rho * self.rho)
    }

    /// Allowance `2ρ^{2d}/(1 − ρ²)` for the coordinates cut by truncation.
    pub fn truncation_slack(&self) -> f64 {
        2.0 * self.rho.powi(2 * self.d_trunc as i32) / (1.0 - self.rho * self.rho)
    }

    /// `Σ_{l > s} ρ^{2l} = ρ^{2s+2}/(1 − ρ²)`: the squared distance to `x*` of
    /// any vector supported on the first `s` coordinates.
    pub fn tail_distance(&self, s: usize) -> f64 {
        self.rho.powi(2 * s as i32 + 2) / (1.0 - self.rho * self.rho)
    }
}

/// Worst-case span lengths `s_i` of every node's local memory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanTracker {
    n: usize,
    s: Vec<usize>,
    q: usize,
}

impl SpanTracker {
    pub fn new(n: usize) -> Result<Self> {
        if n < 3 || !n.is_multiple_of(3) {
            return Err(Error::InvalidArgument(format!("need n divisible by 3, got {n}")));
        }
        Ok(Self { n, s: vec![0; n], q: 0 })
    }

    /// A tracker resumed at given spans after `rounds` communication rounds.
    pub fn from_parts(spans: Vec<usize>, rounds: usize) -> Result<Self> {
        let mut t = Self::new(spans.len())?;
        t.s = spans;
        t.q = rounds;
        Ok(t)
    }

    pub fn spans(&self) -> &[usize] {
        &self.s
    }

    /// Communication rounds performed so far.
    pub fn rounds(&self) -> usize {
        self.q
    }

    /// One local computation: first-group nodes extend an even span, last-group
    /// nodes extend an odd span, relay nodes never extend.
    pub fn compute(&mut self) {
        for (i, s) in self.s.iter_mut().enumerate() {
            let grow = match node_group(self.n, i) {
                NodeGroup::First => 1 - *s % 2,
                NodeGroup::Relay => 0,
                NodeGroup::Last => *s % 2,
            };
            *s += grow;
        }
    }

    /// One round on the current star: the center learns the global maximum,
    /// leaves learn the center's previous span.
    pub fn communicate(&mut self) {
        let center = star_center(self.n, self.q);
        let old_center = self.s[center];
        let global = *self.s.iter().max().expect("n >= 3");
        for (i, s) in self.s.iter_mut().enumerate() {
            *s = if i == center { global } else { (*s).max(old_center) };
        }
        self.q += 1;
    }

    /// `2⌊q/|V₂|⌋ + (0 or 1)`, the bound valid before round `q` is performed.
    pub fn span_bound(&self, i: usize) -> usize {
        let third = self.n / 3;
        let center = star_center(self.n, self.q);
        let tight = node_group(self.n, i) == NodeGroup::Last || (center..2 * third).contains(&i);
        2 * (self.q / third) + usize::from(!tight)
    }

    pub fn span_bound_holds(&self) -> bool {
        (0..self.n).all(|i| self.s[i] <= self.span_bound(i))
    }
}

/// One primitive of a traced run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum SpanOp {
    Compute,
    Communicate { round: usize },
}

/// The primitives one ADOM+ iteration performs: one gradient evaluation
/// followed by `t` rounds starting at round `k·t`.
pub fn adomplus_ops(k: usize, t: usize) -> Vec<SpanOp> {
    let mut ops = vec![SpanOp::Compute];
    ops.extend((k * t..(k + 1) * t).map(|round| SpanOp::Communicate { round }));
    ops
}

/// A traced iterate together with the primitives executed since the last one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub ops: Vec<SpanOp>,
    pub x: DistVec,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    Support,
    Distance,
    SpanBound,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub step: usize,
    /// One-based node label.
    pub node: usize,
    pub check: CheckKind,
    pub detail: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub q: usize,
    pub exact: f64,
    pub relaxed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertReport {
    pub passed: bool,
    pub steps: usize,
    pub rounds: usize,
    pub support_ok: Vec<bool>,
    pub distance_ok: Vec<bool>,
    pub span_bound_ok: Vec<bool>,
    pub first_violation: Option<Violation>,
    pub curve: Vec<CurvePoint>,
}

impl CertReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Streaming form of `certify_run`.
pub struct Certifier<'a> {
    instance: &'a HardInstance,
    tracker: SpanTracker,
    x_star: Vec<f64>,
    slack: f64,
    support_ok: Vec<bool>,
    distance_ok: Vec<bool>,
    span_bound_ok: Vec<bool>,
    first_violation: Option<Violation>,
}

impl<'a> Certifier<'a> {
    pub fn new(instance: &'a HardInstance) -> Result<Self> {
        Ok(Self {
            instance,
            tracker: SpanTracker::new(instance.n)?,
            x_star: instance.solution(),
            slack: instance.truncation_slack(),
            support_ok: Vec::new(),
            distance_ok: Vec::new(),
            span_bound_ok: Vec::new(),
            first_violation: None,
        })
    }

    pub fn tracker(&self) -> &SpanTracker {
        &self.tracker
    }

    fn flag(&mut self, node: usize, check: CheckKind, detail: String) {
        if self.first_violation.is_none() {
            self.first_violation = Some(Violation {
                step: self.support_ok.len(),
                node: node_label(node),
                check,
                detail,
            });
        }
    }

    /// Applies `ops` to the tracker, then checks the iterate `x`.
    pub fn observe(&mut self, ops: &[SpanOp], x: &DistVec) -> Result<()> {
        let inst = self.instance;
        if x.n() != inst.n || x.d() != inst.d_trunc {
            return Err(Error::dims(
                format!("{}x{}", inst.n, inst.d_trunc),
                format!("{}x{}", x.n(), x.d()),
            ));
        }
        // The span bound must hold at every time step, so it is checked before each
        // primitive as well as after the last.
        let mut bounded = true;
        for op in ops {
            bounded &= self.tracker.span_bound_holds();
            match *op {
                SpanOp::Compute => self.tracker.compute(),
                SpanOp::Communicate { round } => {
                    if round != self.tracker.rounds() {
                        return Err(Error::TraceMismatch(format!(
                            "expected round {}, trace has round {round}",
                            self.tracker.rounds()
                        )));
                    }
                    self.tracker.communicate();
                }
            }
        }
        bounded &= self.tracker.span_bound_holds();

        let mut support = true;
        let mut distance = true;
        for i in 0..inst.n {
            let s = self.tracker.spans()[i];
            let block = x.block(i);
            let prefix = block.iter().rposition(|v| v.abs() > SUPPORT_ZERO).map_or(0, |j| j + 1);
            if prefix > s {
                support = false;
                self.flag(i, CheckKind::Support, format!("support prefix {prefix} exceeds span {s}"));
            }
            let dist: f64 = block.iter().zip(&self.x_star).map(|(a, b)| (a - b).powi(2)).sum();
            let bound = inst.tail_distance(s) - self.slack;
            if dist < bound {
                distance = false;
                self.flag(i, CheckKind::Distance, format!("distance {dist:e} below bound {bound:e}"));
            }
        }
        if !bounded {
            self.flag(0, CheckKind::SpanBound, format!("span bound broken after {} rounds", self.tracker.rounds()));
        }
        self.support_ok.push(support);
        self.distance_ok.push(distance);
        self.span_bound_ok.push(bounded);
        Ok(())
    }

    pub fn finish(self) -> Result<CertReport> {
        let rounds = self.tracker.rounds();
        let curve = lower_bound_curve(self.instance.chi, self.instance.l, self.instance.mu, rounds)?;
        let passed = self.first_violation.is_none();
        Ok(CertReport {
            passed,
            steps: self.support_ok.len(),
            rounds,
            support_ok: self.support_ok,
            distance_ok: self.distance_ok,
            span_bound_ok: self.span_bound_ok,
            first_violation: self.first_violation,
            curve,
        })
    }
}

pub fn certify_run(trace: &[TraceStep], instance: &HardInstance) -> Result<CertReport> {
    let mut cert = Certifier::new(instance)?;
    for step in trace {
        cert.observe(&step.ops, &step.x)?;
    }
    cert.finish()
}

/// `C·ρ^{24q/χ}` and its relaxation `C·max(0, 1 − 24√(6μ)/√L)^{q/χ}` for
/// `q = 0..=q_max`, with `C = ρ⁴/(1 − ρ²)`.
pub fn lower_bound_curve(chi: f64, l: f64, mu: f64, q_max: usize) -> Result<Vec<CurvePoint>> {
    if !(chi >= 3.0 && chi.is_finite()) {
        return Err(Error::InvalidArgument(format!("need chi >= 3, got {chi}")));
    }
    if !(mu > 0.0 && l > mu && l.is_finite()) {
        return Err(Error::InvalidArgument(format!("need L > mu > 0, got L = {l}, mu = {mu}")));
    }
    let r = rho(l, mu);
    let c = r.powi(4) / (1.0 - r * r);
    let base = (1.0 - 24.0 * (6.0 * mu).sqrt() / l.sqrt()).max(0.0);
    Ok((0..=q_max)
        .map(|q| {
            let e = q as f64 / chi;
            // A clamped base makes the relaxed curve identically zero, q = 0 included.
            let relaxed = if base > 0.0 { c * base.powf(e) } else { 0.0 };
            CurvePoint { q, exact: c * r.powf(24.0 * e), relaxed }
        })
        .collect())
}

pub const CURVE_CSV_HEADER: &str = "q,exact,relaxed";

pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut out = String::from(CURVE_CSV_HEADER);
    out.push('\n');
    for p in curve {
        out.push_str(&format!("{},{:?},{:?}\n", p.q, p.exact, p.relaxed));
    }
    out
}

/// Reference local-computation count `√κ·ln(1/ε)`.
pub fn computation_reference(kappa: f64, eps: f64) -> f64 {
    kappa.sqrt() * (1.0 / eps).ln()
}

/// Reference communication count `χ·√κ·ln(1/ε)`.
pub fn communication_reference(chi: f64, kappa: f64, eps: f64) -> f64 {
    chi * computation_reference(kappa, eps)
}

//! Local objectives `f_i` and their first-order oracles.
//!
//! Two families are supported: ℓ2-regularized logistic regression (primal
//! oracle only) and quadratics `½xᵀQx + cᵀx + const` (primal and dual).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dvector::DistVec;
use crate::error::{Error, Result};

/// Probability that a planted label is flipped by the synthetic generator.
pub const LABEL_NOISE: f64 = 0.05;

/// Iteration cap of the centralized reference solver.
pub const REFERENCE_MAX_ITERS: usize = 10_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalObjectiveSet {
    n: usize,
    d: usize,
    l: f64,
    mu: f64,
    kind: ObjectiveKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ObjectiveKind {
    Logistic(LogisticData),
    Quadratic(QuadraticData),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticData {
    /// Samples per node.
    pub m: usize,
    pub reg: f64,
    /// Per node, an `m × d` feature matrix in row-major order.
    pub features: Vec<Vec<f64>>,
    /// Per node, `m` labels in `{−1, +1}`.
    pub labels: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticData {
    pub nodes: Vec<QuadraticNode>,
}

/// `f(x) = ½ xᵀ Q x + cᵀ x + offset`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticNode {
    pub hessian: Hessian,
    pub linear: Vec<f64>,
    #[serde(default)]
    pub offset: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Hessian {
    /// Row-major `d × d`, symmetric.
    Dense { data: Vec<f64> },
    /// Symmetric tridiagonal: `diag` has length `d`, `off` has length `d − 1`.
    Tridiagonal { diag: Vec<f64>, off: Vec<f64> },
}

impl Hessian {
    pub fn dim(&self) -> usize {
        match self {
            Hessian::Dense { data } => (data.len() as f64).sqrt().round() as usize,
            Hessian::Tridiagonal { diag, .. } => diag.len(),
        }
    }

    fn check_shape(&self, d: usize) -> Result<()> {
        let ok = match self {
            Hessian::Dense { data } => data.len() == d * d,
            Hessian::Tridiagonal { diag, off } => diag.len() == d && off.len() + 1 == d.max(1),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::dims(format!("Hessian of dimension {d}"), format!("{:?}", self.dim())))
        }
    }

    /// `out ← Q x`
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Hessian::Dense { data } => {
                let d = x.len();
                for (i, o) in out.iter_mut().enumerate() {
                    *o = data[i * d..(i + 1) * d].iter().zip(x).map(|(a, b)| a * b).sum();
                }
            }
            Hessian::Tridiagonal { diag, off } => {
                let d = x.len();
                for i in 0..d {
                    let mut s = diag[i] * x[i];
                    if i > 0 {
                        s += off[i - 1] * x[i - 1];
                    }
                    if i + 1 < d {
                        s += off[i] * x[i + 1];
                    }
                    out[i] = s;
                }
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Hessian::Dense { data } => {
                let d = self.dim();
                DMatrix::from_row_slice(d, d, data)
            }
            Hessian::Tridiagonal { diag, off } => {
                let d = diag.len();
                let mut m = DMatrix::from_diagonal(&DVector::from_column_slice(diag));
                for (i, &o) in off.iter().enumerate() {
                    m[(i, i + 1)] = o;
                    m[(i + 1, i)] = o;
                }
                debug_assert_eq!(m.nrows(), d);
                m
            }
        }
    }

    /// Solves `Q x = rhs` for positive definite `Q`.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        match self {
            Hessian::Dense { .. } => {
                let chol = self
                    .to_dense()
                    .cholesky()
                    .ok_or(Error::UnsupportedOracle("dual gradient needs a positive definite Hessian"))?;
                Ok(chol.solve(&DVector::from_column_slice(rhs)).iter().copied().collect())
            }
            Hessian::Tridiagonal { diag, off } => tridiagonal_ldl_solve(diag, off, rhs),
        }
    }
}

/// LDLᵀ elimination for a symmetric positive definite tridiagonal system.
fn tridiagonal_ldl_solve(diag: &[f64], off: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let d = diag.len();
    let mut dd = vec![0.0; d];
    let mut ll = vec![0.0; d.saturating_sub(1)];
    for i in 0..d {
        dd[i] = diag[i] - if i > 0 { ll[i - 1] * ll[i - 1] * dd[i - 1] } else { 0.0 };
        if dd[i] <= 0.0 {
            return Err(Error::UnsupportedOracle("dual gradient needs a positive definite Hessian"));
        }
        if i + 1 < d {
            ll[i] = off[i] / dd[i];
        }
    }
    let mut x = rhs.to_vec();
    for i in 1..d {
        x[i] -= ll[i - 1] * x[i - 1];
    }
    for i in 0..d {
        x[i] /= dd[i];
    }
    for i in (0..d.saturating_sub(1)).rev() {
        x[i] -= ll[i] * x[i + 1];
    }
    Ok(x)
}

fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl LocalObjectiveSet {
    pub fn logistic(n: usize, d: usize, data: LogisticData, l: f64, mu: f64) -> Result<Self> {
        if data.features.len() != n || data.labels.len() != n {
            return Err(Error::dims(format!("{n} nodes"), data.features.len()));
        }
        for (a, b) in data.features.iter().zip(&data.labels) {
            if a.len() != data.m * d || b.len() != data.m {
                return Err(Error::dims(format!("{}x{d} features", data.m), a.len()));
            }
        }
        if data.reg <= 0.0 {
            return Err(Error::InvalidArgument("logistic regularization must be positive".into()));
        }
        Self::checked(n, d, l, mu, ObjectiveKind::Logistic(data))
    }

    pub fn quadratic(n: usize, d: usize, nodes: Vec<QuadraticNode>, l: f64, mu: f64) -> Result<Self> {
        if nodes.len() != n {
            return Err(Error::dims(format!("{n} nodes"), nodes.len()));
        }
        for node in &nodes {
            node.hessian.check_shape(d)?;
            if node.linear.len() != d {
                return Err(Error::dims(d, node.linear.len()));
            }
        }
        Self::checked(n, d, l, mu, ObjectiveKind::Quadratic(QuadraticData { nodes }))
    }

    fn checked(n: usize, d: usize, l: f64, mu: f64, kind: ObjectiveKind) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::InvalidArgument("need n, d >= 1".into()));
        }
        if !(mu > 0.0 && l >= mu && l.is_finite()) {
            return Err(Error::InvalidArgument(format!("need L >= mu > 0, got L = {l}, mu = {mu}")));
        }
        Ok(Self { n, d, l, mu, kind })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn l(&self) -> f64 {
        self.l
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn kappa(&self) -> f64 {
        self.l / self.mu
    }

    pub fn kind(&self) -> &ObjectiveKind {
        &self.kind
    }

    pub fn value_block(&self, i: usize, x: &[f64]) -> f64 {
        match &self.kind {
            ObjectiveKind::Logistic(data) => {
                let a = &data.features[i];
                let b = &data.labels[i];
                let loss: f64 = (0..data.m)
                    .map(|j| softplus(-b[j] * dot(&a[j * self.d..(j + 1) * self.d], x)))
                    .sum();
                loss / data.m as f64 + 0.5 * data.reg * dot(x, x)
            }
            ObjectiveKind::Quadratic(q) => {
                let node = &q.nodes[i];
                let mut qx = vec![0.0; self.d];
                node.hessian.apply(x, &mut qx);
                0.5 * dot(x, &qx) + dot(&node.linear, x) + node.offset
            }
        }
    }

    pub fn grad_block_into(&self, i: usize, x: &[f64], out: &mut [f64]) {
        match &self.kind {
            ObjectiveKind::Logistic(data) => {
                let a = &data.features[i];
                let b = &data.labels[i];
                let inv_m = 1.0 / data.m as f64;
                out.iter_mut().zip(x).for_each(|(o, v)| *o = data.reg * v);
                for j in 0..data.m {
                    let row = &a[j * self.d..(j + 1) * self.d];
                    let coef = -b[j] * sigmoid(-b[j] * dot(row, x)) * inv_m;
                    out.iter_mut().zip(row).for_each(|(o, r)| *o += coef * r);
                }
            }
            ObjectiveKind::Quadratic(q) => {
                let node = &q.nodes[i];
                node.hessian.apply(x, out);
                out.iter_mut().zip(&node.linear).for_each(|(o, c)| *o += c);
            }
        }
    }

    pub fn grad_block(&self, i: usize, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        self.grad_block_into(i, x, &mut out);
        out
    }

    fn check(&self, x: &DistVec) -> Result<()> {
        if x.n() != self.n || x.d() != self.d {
            return Err(Error::dims(
                format!("{}x{}", self.n, self.d),
                format!("{}x{}", x.n(), x.d()),
            ));
        }
        Ok(())
    }

    /// `∇F(x)` for `F(x) = Σ_i f_i(x_i)`.
    pub fn grad_f(&self, x: &DistVec) -> Result<DistVec> {
        self.check(x)?;
        let mut out = DistVec::zeros(self.n, self.d);
        for i in 0..self.n {
            self.grad_block_into(i, x.block(i), out.block_mut(i));
        }
        Ok(out)
    }

    pub fn value_f(&self, x: &DistVec) -> Result<f64> {
        self.check(x)?;
        Ok((0..self.n).map(|i| self.value_block(i, x.block(i))).sum())
    }

    /// `D_F(x, y) = F(x) − F(y) − ⟨∇F(y), x − y⟩`, evaluated exactly as
    /// `½ (x−y)ᵀ Q (x−y)` for quadratics.
    pub fn bregman(&self, x: &DistVec, y: &DistVec) -> Result<f64> {
        self.check(x)?;
        self.check(y)?;
        let mut total = 0.0;
        let mut buf = vec![0.0; self.d];
        for i in 0..self.n {
            let (xi, yi) = (x.block(i), y.block(i));
            let delta: Vec<f64> = xi.iter().zip(yi).map(|(a, b)| a - b).collect();
            total += match &self.kind {
                ObjectiveKind::Quadratic(q) => {
                    q.nodes[i].hessian.apply(&delta, &mut buf);
                    0.5 * dot(&delta, &buf)
                }
                ObjectiveKind::Logistic(_) => {
                    self.grad_block_into(i, yi, &mut buf);
                    self.value_block(i, xi) - self.value_block(i, yi) - dot(&buf, &delta)
                }
            };
        }
        Ok(total)
    }

    /// `∇f_i*(y) = Q_i⁻¹ (y − c_i)`; quadratics only.
    pub fn dual_grad_block(&self, i: usize, y: &[f64]) -> Result<Vec<f64>> {
        match &self.kind {
            ObjectiveKind::Logistic(_) => {
                Err(Error::UnsupportedOracle("logistic objectives have no closed-form conjugate gradient"))
            }
            ObjectiveKind::Quadratic(q) => {
                if y.len() != self.d {
                    return Err(Error::dims(self.d, y.len()));
                }
                let node = &q.nodes[i];
                let rhs: Vec<f64> = y.iter().zip(&node.linear).map(|(a, c)| a - c).collect();
                node.hessian.solve(&rhs)
            }
        }
    }

    /// `(1/n) Σ_i ∇f_i(x)` at a single point.
    pub fn grad_mean(&self, x: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; self.d];
        let mut buf = vec![0.0; self.d];
        for i in 0..self.n {
            self.grad_block_into(i, x, &mut buf);
            acc.iter_mut().zip(&buf).for_each(|(a, b)| *a += b);
        }
        acc.iter_mut().for_each(|a| *a /= self.n as f64);
        acc
    }

    /// Smallest and largest Hessian eigenvalue over all nodes (quadratics).
    pub fn hessian_spectrum_bounds(&self) -> Result<(f64, f64)> {
        let ObjectiveKind::Quadratic(q) = &self.kind else {
            return Err(Error::UnsupportedOracle("spectrum bounds need a quadratic family"));
        };
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for node in &q.nodes {
            let eig = SymmetricEigen::new(node.hessian.to_dense());
            lo = lo.min(eig.eigenvalues.min());
            hi = hi.max(eig.eigenvalues.max());
        }
        Ok((lo, hi))
    }
}

/// Gaussian features with a planted separator and 5% label noise. The
/// regularizer `r` solves `(L_data + r) / r = kappa_target` where
/// `L_data = max_i λ_max(A_iᵀA_i) / (4m)`.
pub fn gen_synthetic_logistic(
    n: usize,
    m: usize,
    d: usize,
    seed: u64,
    kappa_target: f64,
) -> Result<LocalObjectiveSet> {
    if n == 0 || m == 0 || d == 0 {
        return Err(Error::InvalidArgument("need n, m, d >= 1".into()));
    }
    if !(kappa_target > 1.0 && kappa_target.is_finite()) {
        return Err(Error::InvalidArgument(format!("kappa must exceed 1, got {kappa_target}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let norm = dot(&u, &u).sqrt();
    u.iter_mut().for_each(|v| *v /= norm);

    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut l_data: f64 = 0.0;
    for _ in 0..n {
        let a: Vec<f64> = (0..m * d).map(|_| rng.sample(StandardNormal)).collect();
        let b: Vec<f64> = (0..m)
            .map(|j| {
                let clean = if dot(&a[j * d..(j + 1) * d], &u) >= 0.0 { 1.0 } else { -1.0 };
                if rng.random::<f64>() < LABEL_NOISE {
                    -clean
                } else {
                    clean
                }
            })
            .collect();
        let am = DMatrix::from_row_slice(m, d, &a);
        let gram = am.transpose() * &am;
        l_data = l_data.max(SymmetricEigen::new(gram).eigenvalues.max() / (4.0 * m as f64));
        features.push(a);
        labels.push(b);
    }
    let reg = l_data / (kappa_target - 1.0);
    let data = LogisticData { m, reg, features, labels };
    LocalObjectiveSet::logistic(n, d, data, l_data + reg, reg)
}

/// Random dense quadratics with `μ = 1`, `L = kappa`; every node's spectrum
/// touches both ends of `[μ, L]`.
pub fn gen_random_quadratic(n: usize, d: usize, kappa: f64, seed: u64) -> Result<LocalObjectiveSet> {
    if d < 2 {
        return Err(Error::InvalidArgument("random quadratic family needs d >= 2".into()));
    }
    if !(kappa >= 1.0 && kappa.is_finite()) {
        return Err(Error::InvalidArgument(format!("kappa must be >= 1, got {kappa}")));
    }
    let (mu, l) = (1.0, kappa);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes = Vec::with_capacity(n);
    for _ in 0..n {
        let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let qr = g.qr();
        let basis = qr.q();
        let mut eig = vec![mu, l];
        eig.extend((2..d).map(|_| mu + (l - mu) * rng.random::<f64>()));
        let q = &basis * DMatrix::from_diagonal(&DVector::from_vec(eig)) * basis.transpose();
        let q = (&q + q.transpose()) * 0.5;
        let mut data = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                data.push(q[(i, j)]);
            }
        }
        let linear = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        nodes.push(QuadraticNode { hessian: Hessian::Dense { data }, linear, offset: 0.0 });
    }
    LocalObjectiveSet::quadratic(n, d, nodes, l, mu)
}

/// Minimizer of `(1/n) Σ f_i` by Nesterov's constant-momentum method, stopped
/// once the averaged gradient norm is at most `tol`.
pub fn reference_minimizer(objective: &LocalObjectiveSet, tol: f64) -> Result<Vec<f64>> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::InvalidArgument(format!("tol must be positive, got {tol}")));
    }
    let (l, mu) = (objective.l(), objective.mu());
    let sqrt_kappa = (l / mu).sqrt();
    let momentum = (sqrt_kappa - 1.0) / (sqrt_kappa + 1.0);
    let d = objective.d();
    let mut x = vec![0.0; d];
    let mut x_prev = x.clone();
    for _ in 0..REFERENCE_MAX_ITERS {
        let g = objective.grad_mean(&x);
        if dot(&g, &g).sqrt() <= tol {
            return Ok(x);
        }
        let y: Vec<f64> = x.iter().zip(&x_prev).map(|(a, b)| a + momentum * (a - b)).collect();
        let gy = objective.grad_mean(&y);
        x_prev = std::mem::replace(&mut x, y.iter().zip(&gy).map(|(a, g)| a - g / l).collect());
    }
    Err(Error::IterationCap { cap: REFERENCE_MAX_ITERS })
}

pub const CONSTANTS_CSV_HEADER: &str = "name,L,mu,kappa";

/// One CSV row of `(L, μ, κ)` per named objective set.
pub fn constants_csv(sets: &[(&str, &LocalObjectiveSet)]) -> String {
    let mut out = String::from(CONSTANTS_CSV_HEADER);
    out.push('\n');
    for (name, s) in sets {
        out.push_str(&format!("{},{},{},{}\n", name, s.l(), s.mu(), s.kappa()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iso_quadratic(n: usize, d: usize, scale: f64, linear: Vec<Vec<f64>>) -> LocalObjectiveSet {
        let nodes = linear
            .into_iter()
            .map(|c| QuadraticNode {
                hessian: Hessian::Tridiagonal { diag: vec![scale; d], off: vec![0.0; d - 1] },
                linear: c,
                offset: 0.0,
            })
            .collect();
        LocalObjectiveSet::quadratic(n, d, nodes, scale, scale).unwrap()
    }

    #[test]
    fn quadratic_grad_and_dual() {
        let f = iso_quadratic(1, 2, 2.0, vec![vec![0.0, 0.0]]);
        assert_eq!(f.grad_block(0, &[1.0, 1.0]), vec![2.0, 2.0]);
        assert_eq!(f.dual_grad_block(0, &[2.0, 2.0]).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn logistic_grad_at_zero() {
        let f = gen_synthetic_logistic(2, 5, 3, 11, 10.0).unwrap();
        let ObjectiveKind::Logistic(data) = f.kind() else { unreachable!() };
        let g = f.grad_block(1, &[0.0; 3]);
        for (c, gc) in g.iter().enumerate() {
            let expect: f64 = (0..5)
                .map(|j| -data.labels[1][j] * data.features[1][j * 3 + c] * 0.5)
                .sum::<f64>()
                / 5.0;
            assert!((gc - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn logistic_has_no_dual_oracle() {
        let f = gen_synthetic_logistic(2, 5, 3, 1, 10.0).unwrap();
        assert!(matches!(f.dual_grad_block(0, &[0.0; 3]), Err(Error::UnsupportedOracle(_))));
    }

    #[test]
    fn synthetic_kappa_and_determinism() {
        let a = gen_synthetic_logistic(3, 8, 4, 5, 10.0).unwrap();
        let b = gen_synthetic_logistic(3, 8, 4, 5, 10.0).unwrap();
        assert_eq!(a, b);
        assert!((a.kappa() - 10.0).abs() < 1e-9);
        assert!(gen_synthetic_logistic(3, 8, 4, 5, 1.0).is_err());
    }

    #[test]
    fn reference_for_isotropic_quadratic_is_mean() {
        let v = [vec![1.0, -2.0], vec![3.0, 0.0], vec![-1.0, 5.0]];
        let f = iso_quadratic(3, 2, 1.0, v.iter().map(|c| c.iter().map(|x| -x).collect()).collect());
        let x = reference_minimizer(&f, 1e-12).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-11);
        assert!((x[1] - 1.0).abs() < 1e-11);
    }

    #[test]
    fn tridiagonal_solve_matches_dense() {
        let h = Hessian::Tridiagonal { diag: vec![4.0, 5.0, 6.0, 3.0], off: vec![-1.0, 2.0, -0.5] };
        let rhs = [1.0, -2.0, 0.5, 3.0];
        let x = h.solve(&rhs).unwrap();
        let dense = h.to_dense().lu().solve(&DVector::from_column_slice(&rhs)).unwrap();
        for (a, b) in x.iter().zip(dense.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_constants() {
        let node = QuadraticNode {
            hessian: Hessian::Dense { data: vec![1.0] },
            linear: vec![0.0],
            offset: 0.0,
        };
        assert!(LocalObjectiveSet::quadratic(1, 1, vec![node.clone()], 0.5, 1.0).is_err());
        assert!(LocalObjectiveSet::quadratic(2, 1, vec![node], 1.0, 1.0).is_err());
    }

    #[test]
    fn constants_summary() {
        let f = iso_quadratic(1, 2, 2.0, vec![vec![0.0, 0.0]]);
        assert_eq!(constants_csv(&[("iso", &f)]), "name,L,mu,kappa\niso,2,2,1\n");
    }
}

//! Stacked vectors in `(ℝ^d)^n`: one `d`-dimensional block per node.
//!
//! Storage is node-major and contiguous. Gossip mixing acts on the node index
//! only (`W ⊗ I_d`), and the consensus projection subtracts the mean block.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::netmodel::{GossipMatrix, GossipSequence};

#[derive(Clone, Debug, PartialEq)]
pub struct DistVec {
    n: usize,
    d: usize,
    data: Vec<f64>,
}

impl DistVec {
    pub fn zeros(n: usize, d: usize) -> Self {
        Self { n, d, data: vec![0.0; n * d] }
    }

    pub fn from_flat(n: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * d {
            return Err(Error::dims(n * d, data.len()));
        }
        Ok(Self { n, d, data })
    }

    pub fn from_blocks(blocks: &[Vec<f64>]) -> Result<Self> {
        let n = blocks.len();
        let d = blocks.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n * d);
        for b in blocks {
            if b.len() != d {
                return Err(Error::dims(d, b.len()));
            }
            data.extend_from_slice(b);
        }
        Ok(Self { n, d, data })
    }

    /// Every block equal to `block`.
    pub fn consensus(n: usize, block: &[f64]) -> Self {
        let d = block.len();
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            data.extend_from_slice(block);
        }
        Self { n, d, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn block(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn block_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn blocks(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics, so a zero-dimensional vector yields no blocks.
        self.data.chunks_exact(self.d.max(1)).take(if self.d == 0 { 0 } else { self.n })
    }

    pub fn same_shape(&self, other: &Self) -> Result<()> {
        if self.n != other.n || self.d != other.d {
            return Err(Error::dims(
                format!("{}x{}", self.n, self.d),
                format!("{}x{}", other.n, other.d),
            ));
        }
        Ok(())
    }

    pub fn dot(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.data.len(), other.data.len());
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn dist_sq(&self, other: &Self) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).powi(2)).sum()
    }

    /// `self ← self + a·x`
    pub fn axpy(&mut self, a: f64, x: &Self) {
        debug_assert_eq!(self.data.len(), x.data.len());
        self.data.iter_mut().zip(&x.data).for_each(|(s, v)| *s += a * v);
    }

    pub fn scale(&mut self, a: f64) {
        self.data.iter_mut().for_each(|s| *s *= a);
    }

    /// `a·x + b·y`
    pub fn lincomb(a: f64, x: &Self, b: f64, y: &Self) -> Self {
        debug_assert_eq!(x.data.len(), y.data.len());
        let data = x.data.iter().zip(&y.data).map(|(u, v)| a * u + b * v).collect();
        Self { n: x.n, d: x.d, data }
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self::lincomb(1.0, self, -1.0, other)
    }

    pub fn add(&self, other: &Self) -> Self {
        Self::lincomb(1.0, self, 1.0, other)
    }

    pub fn mean_block(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.d];
        for b in self.blocks() {
            mean.iter_mut().zip(b).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= self.n as f64);
        mean
    }

    /// Per-coordinate sum over blocks; zero exactly on `ℒ⊥`.
    pub fn block_sum(&self) -> Vec<f64> {
        let mut sum = vec![0.0; self.d];
        for b in self.blocks() {
            sum.iter_mut().zip(b).for_each(|(m, v)| *m += v);
        }
        sum
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Little-endian `f64`s, node-major, no header.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn from_le_bytes(n: usize, d: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != 8 * n * d {
            return Err(Error::dims(8 * n * d, bytes.len()));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Ok(Self { n, d, data })
    }
}

#[derive(Serialize, Deserialize)]
struct DistVecJson {
    n: usize,
    d: usize,
    blocks: Vec<Vec<f64>>,
}

impl Serialize for DistVec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        DistVecJson {
            n: self.n,
            d: self.d,
            blocks: self.blocks().map(<[f64]>::to_vec).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for DistVec {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let raw = DistVecJson::deserialize(de)?;
        if raw.blocks.len() != raw.n || raw.blocks.iter().any(|b| b.len() != raw.d) {
            return Err(serde::de::Error::custom("block layout does not match n and d"));
        }
        let mut v = DistVec::zeros(raw.n, raw.d);
        for (i, b) in raw.blocks.iter().enumerate() {
            v.block_mut(i).copy_from_slice(b);
        }
        Ok(v)
    }
}

/// `(W ⊗ I_d) v`: block `i` of the result is `Σ_j W[i][j] v_j`, summed in
/// ascending `j` over the nonzero entries of row `i`.
pub fn mix(w: &GossipMatrix, v: &DistVec) -> Result<DistVec> {
    if w.n() != v.n {
        return Err(Error::dims(format!("{} blocks", w.n()), format!("{} blocks", v.n)));
    }
    let mut out = DistVec::zeros(v.n, v.d);
    for (i, row) in w.rows().iter().enumerate() {
        let dst = &mut out.data[i * v.d..(i + 1) * v.d];
        for &(j, wij) in row {
            let src = &v.data[j * v.d..(j + 1) * v.d];
            dst.iter_mut().zip(src).for_each(|(o, s)| *o += wij * s);
        }
    }
    Ok(out)
}

/// `P v` with `P = (I_n − 11ᵀ/n) ⊗ I_d`.
pub fn project_consensus(v: &DistVec) -> DistVec {
    let mean = v.mean_block();
    let mut out = v.clone();
    for i in 0..v.n {
        out.block_mut(i).iter_mut().zip(&mean).for_each(|(o, m)| *o -= m);
    }
    out
}

/// `W(k;T) v = v − ∏_{q=kT}^{kT+T−1} (I − W(q)) v`, applied as `T` sequential
/// mixes (one communication round each). The last round of the window is the
/// outermost factor.
pub fn multi_mix(seq: &GossipSequence, k: usize, t: usize, v: &DistVec) -> Result<DistVec> {
    if t == 0 {
        return Err(Error::InvalidArgument("consensus steps T must be at least 1".into()));
    }
    let mut r = v.clone();
    for q in k * t..(k + 1) * t {
        let wr = mix(seq.at(q), &r)?;
        r.axpy(-1.0, &wr);
    }
    Ok(v.sub(&r))
}

/// `‖P v‖²`
pub fn consensus_gap(v: &DistVec) -> f64 {
    project_consensus(v).norm_sq()
}

/// Membership in the consensus space `ℒ`, up to `tol` on `‖Pv‖²`.
pub fn in_consensus_space(v: &DistVec, tol: f64) -> bool {
    consensus_gap(v) <= tol
}

/// Membership in `ℒ⊥` (zero block sum), up to `tol` per coordinate.
pub fn in_orthogonal_space(v: &DistVec, tol: f64) -> bool {
    v.block_sum().iter().all(|s| s.abs() <= tol)
}

//! Scalar, vector and matrix primitives, the seeded PRNG, and the
//! finite-difference oracle that every analytic gradient in this crate is
//! checked against.
//!
//! Everything here is `f64`; gradient verification at 1e-4 relative error is
//! not reliable in single precision.

use crate::error::{Error, Result};

/// Dense row-major matrix with shape fixed at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from row-major data; the length must be `rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                op: "Matrix::from_vec",
                expected: format!("{rows}x{cols} = {} values", rows * cols),
                got: format!("{} values", data.len()),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Extracts column `c` as an owned vector.
    pub fn col(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    /// `self * v`.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::Dimension {
                op: "matvec",
                expected: format!("matrix {}x{} times vector of {}", self.rows, self.cols, self.cols),
                got: format!("vector of {}", v.len()),
            });
        }
        let mut out = Vec::with_capacity(self.rows);
        for r in 0..self.rows {
            out.push(self.row(r).iter().zip(v).map(|(a, b)| a * b).sum());
        }
        Ok(out)
    }

    /// `self^T * v`.
    pub fn matvec_t(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.rows {
            return Err(Error::Dimension {
                op: "matvec_t",
                expected: format!(
                    "matrix {}x{} transposed times vector of {}",
                    self.rows, self.cols, self.rows
                ),
                got: format!("vector of {}", v.len()),
            });
        }
        let mut out = vec![0.0; self.cols];
        for (r, &vr) in v.iter().enumerate() {
            for (o, &w) in out.iter_mut().zip(self.row(r)) {
                *o += w * vr;
            }
        }
        Ok(out)
    }

    /// Rank-1 update `self += u * v^T`.
    pub fn add_outer(&mut self, u: &[f64], v: &[f64]) -> Result<()> {
        if u.len() != self.rows || v.len() != self.cols {
            return Err(Error::Dimension {
                op: "add_outer",
                expected: format!("{}x{}", self.rows, self.cols),
                got: format!("{}x{}", u.len(), v.len()),
            });
        }
        for (&ur, row) in u.iter().zip(self.data.chunks_exact_mut(self.cols)) {
            for (w, &vc) in row.iter_mut().zip(v) {
                *w += ur * vc;
            }
        }
        Ok(())
    }

    pub fn fill_uniform(&mut self, rng: &mut Rng, limit: f64) {
        for v in &mut self.data {
            *v = rng.uniform(-limit, limit);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Logistic sigmoid. Saturates to 0/1 for large |x|; never NaN for finite x.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Softmax with max-subtraction so large logits cannot overflow.
pub fn stable_softmax(z: &[f64]) -> Result<Vec<f64>> {
    if z.is_empty() {
        return Err(Error::Dimension {
            op: "stable_softmax",
            expected: "at least 1 logit".to_string(),
            got: "0 logits".to_string(),
        });
    }
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    Ok(out)
}

/// Elementwise tanh.
pub fn tanh_vec(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x.tanh()).collect()
}

/// Elementwise (Hadamard) product.
pub fn hadamard(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            op: "hadamard",
            expected: format!("vectors of equal length {}", a.len()),
            got: format!("lengths {} and {}", a.len(), b.len()),
        });
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).collect())
}

/// `a += b`.
pub fn add_assign(a: &mut [f64], b: &[f64]) {
    debug_assert_eq!(a.len(), b.len());
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Relative error `|a - b| / max(|a|, |b|, 1e-8)`, the formula all gradient
/// comparisons in this crate use.
pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs().max(b.abs()).max(1e-8))
}

/// Largest elementwise [`rel_error`] between two equally long slices.
pub fn max_rel_error(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| rel_error(x, y))
        .fold(0.0, f64::max)
}

/// Central-difference gradient of `f` at `theta`:
/// `(f(theta + h e_i) - f(theta - h e_i)) / (2h)` per coordinate.
///
/// `f` must be pure; a non-finite evaluation is reported as an error.
pub fn finite_diff_gradient<F>(mut f: F, theta: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if h <= 0.0 {
        return Err(Error::Config(format!("finite-difference step must be > 0, got {h}")));
    }
    let mut probe = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = f(&probe)?;
        probe[i] = orig - h;
        let minus = f(&probe)?;
        probe[i] = orig;
        let g = (plus - minus) / (2.0 * h);
        if !g.is_finite() {
            return Err(Error::NonFinite {
                tensor: format!("finite-difference gradient coordinate {i}"),
            });
        }
        grad.push(g);
    }
    Ok(grad)
}

/// SplitMix64: a counter-based PRNG (Steele, Lea & Flood 2014). The state is a
/// counter advanced by a fixed odd increment and hashed per draw, so a given
/// seed yields the same stream on every platform and in every build.
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { state: seed }
    }

    /// Derives an independent stream from a seed and a sequence of indices
    /// (sample number, epoch, ...). Each index is folded through the mix
    /// function so nearby indices do not produce overlapping streams.
    pub fn derive(seed: u64, indices: &[u64]) -> Self {
        let mut s = mix64(seed ^ GOLDEN_GAMMA);
        for &ix in indices {
            s = mix64(s ^ ix.wrapping_mul(GOLDEN_GAMMA));
        }
        Rng { state: s }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal via Box-Muller (one draw kept per pair of uniforms).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64(); // in (0, 1], keeps ln finite
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.index(i + 1);
            xs.swap(i, j);
        }
    }
}

//! Joint soft spatial attention over the K*K regions of a frame.
//!
//! One softmax per frame scores the regions from the previous step's
//! concatenated layer-1 hidden states of both streams; the same weight
//! vector then forms the attended input of each stream. Because the scores
//! depend on the previous hidden states, attention is a second recurrent
//! path that backpropagation has to traverse alongside the LSTM recurrence.

use crate::error::{Error, Result};
use crate::numerics::{add_assign, stable_softmax, Matrix, Rng};

/// One frame's spatial feature grid for a single stream: column `i` of
/// `regions` is the D-dimensional descriptor of region `i` (of K*K).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCube {
    pub regions: Matrix,
    pub frame_index: usize,
}

impl FeatureCube {
    /// `regions` must be D x K^2 with column i the i-th region vector.
    pub fn new(regions: Matrix, frame_index: usize) -> Self {
        FeatureCube {
            regions,
            frame_index,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.regions.rows()
    }

    pub fn region_count(&self) -> usize {
        self.regions.cols()
    }

    pub fn region(&self, i: usize) -> Vec<f64> {
        self.regions.col(i)
    }
}

/// Region-scoring weights; row i scores region i against the concatenated
/// hidden vector `[h_p; h_q]` (width 2H).
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub w: Matrix,
}

impl AttentionParams {
    pub fn zeros(region_count: usize, hidden2: usize) -> Self {
        AttentionParams {
            w: Matrix::zeros(region_count, hidden2),
        }
    }

    pub fn init(region_count: usize, hidden2: usize, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(region_count, hidden2);
        let lim = (6.0 / (region_count + hidden2) as f64).sqrt();
        p.w.fill_uniform(rng, lim);
        p
    }

    pub fn region_count(&self) -> usize {
        self.w.rows()
    }
}

/// Normalized per-frame region weights: positive, summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    l: Vec<f64>,
}

impl AttentionWeights {
    /// Uniform weights `1/n` for each of `n` regions; used for the first
    /// frame (zero hidden states give exactly this) and for the
    /// attention-disabled ablation.
    pub fn uniform(n: usize) -> Self {
        AttentionWeights {
            l: vec![1.0 / n as f64; n],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.l
    }

    pub fn len(&self) -> usize {
        self.l.len()
    }

    pub fn is_empty(&self) -> bool {
        self.l.is_empty()
    }
}

/// Gradients produced by [`attention_backward`].
#[derive(Debug, Clone)]
pub struct AttentionStepGrads {
    pub params: Matrix,
    pub h_p_prev: Vec<f64>,
    pub h_q_prev: Vec<f64>,
}

/// Scores all regions from the concatenated previous hidden states and
/// normalizes with the stable softmax. One weight vector serves both
/// streams.
pub fn attention_weights(
    params: &AttentionParams,
    h_p_prev: &[f64],
    h_q_prev: &[f64],
) -> Result<AttentionWeights> {
    let width = params.w.cols();
    if h_p_prev.len() + h_q_prev.len() != width {
        return Err(Error::Dimension {
            op: "attention_weights",
            expected: format!("concatenated hidden of {width}"),
            got: format!("{} + {}", h_p_prev.len(), h_q_prev.len()),
        });
    }
    let mut concat = Vec::with_capacity(width);
    concat.extend_from_slice(h_p_prev);
    concat.extend_from_slice(h_q_prev);
    let logits = params.w.matvec(&concat)?;
    Ok(AttentionWeights {
        l: stable_softmax(&logits)?,
    })
}

/// Weighted average of the cube's region vectors: `x = sum_i l_i region_i`.
pub fn attend(l: &AttentionWeights, cube: &FeatureCube) -> Result<Vec<f64>> {
    if l.len() != cube.region_count() {
        return Err(Error::Dimension {
            op: "attend",
            expected: format!("{} weights", cube.region_count()),
            got: format!("{} weights", l.len()),
        });
    }
    cube.regions.matvec(l.as_slice())
}

/// Adjoint of the weights-then-attend pipeline for one frame.
///
/// Returns gradients for the scoring matrix and for the previous hidden
/// states of both streams; the latter feed the recurrent attention path
/// during backpropagation through time.
#[allow(clippy::too_many_arguments)]
pub fn attention_backward(
    params: &AttentionParams,
    h_p_prev: &[f64],
    h_q_prev: &[f64],
    l: &AttentionWeights,
    cube_p: &FeatureCube,
    cube_q: &FeatureCube,
    grad_x_p: &[f64],
    grad_x_q: &[f64],
) -> Result<AttentionStepGrads> {
    let n = params.region_count();
    if l.len() != n || cube_p.region_count() != n || cube_q.region_count() != n {
        return Err(Error::Dimension {
            op: "attention_backward",
            expected: format!("{n} regions"),
            got: format!(
                "l of {}, cubes of {} and {}",
                l.len(),
                cube_p.region_count(),
                cube_q.region_count()
            ),
        });
    }

    // dL/dl_i = p_i . grad_x_p + q_i . grad_x_q
    let mut grad_l = cube_p.regions.matvec_t(grad_x_p)?;
    add_assign(&mut grad_l, &cube_q.regions.matvec_t(grad_x_q)?);

    // Softmax Jacobian: grad_z = l .* (grad_l - <l, grad_l>)
    let weights = l.as_slice();
    let inner: f64 = weights.iter().zip(&grad_l).map(|(a, b)| a * b).sum();
    let grad_z: Vec<f64> = weights
        .iter()
        .zip(&grad_l)
        .map(|(&li, &gi)| li * (gi - inner))
        .collect();

    let mut concat = Vec::with_capacity(h_p_prev.len() + h_q_prev.len());
    concat.extend_from_slice(h_p_prev);
    concat.extend_from_slice(h_q_prev);

    let mut grad_w = Matrix::zeros(params.w.rows(), params.w.cols());
    grad_w.add_outer(&grad_z, &concat)?;

    let grad_concat = params.w.matvec_t(&grad_z)?;
    let (gp, gq) = grad_concat.split_at(h_p_prev.len());

    Ok(AttentionStepGrads {
        params: grad_w,
        h_p_prev: gp.to_vec(),
        h_q_prev: gq.to_vec(),
    })
}

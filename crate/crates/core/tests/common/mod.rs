//! Shared helpers for the integration tests: random instances and
//! conversions into the independent reference model's representation.

use han_core::attention::FeatureCube;
use han_core::model::{HanModel, ModelConfig};
use han_core::numerics::{Matrix, Rng};

pub fn random_cubes(config: &ModelConfig, seq_len: usize, rng: &mut Rng) -> Vec<FeatureCube> {
    (0..seq_len)
        .map(|t| {
            let mut m = Matrix::zeros(config.feature_dim, config.region_count());
            for v in m.as_mut_slice() {
                *v = rng.uniform(-1.0, 1.0);
            }
            FeatureCube::new(m, t)
        })
        .collect()
}

fn to_nested(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

fn to_oracle_lstm(p: &han_core::lstm::LstmParams) -> han_oracle::Lstm {
    han_oracle::Lstm {
        w_ix: to_nested(&p.w_ix),
        w_fx: to_nested(&p.w_fx),
        w_ox: to_nested(&p.w_ox),
        w_gx: to_nested(&p.w_gx),
        w_ih: to_nested(&p.w_ih),
        w_fh: to_nested(&p.w_fh),
        w_oh: to_nested(&p.w_oh),
        w_gh: to_nested(&p.w_gh),
        b_i: p.b_i.clone(),
        b_f: p.b_f.clone(),
        b_o: p.b_o.clone(),
        b_g: p.b_g.clone(),
    }
}

/// Maps the main model onto the reference model's plain representation.
pub fn to_oracle_model(model: &HanModel) -> han_oracle::Model {
    han_oracle::Model {
        p1: to_oracle_lstm(&model.lstm_p1),
        p2: to_oracle_lstm(&model.lstm_p2),
        q1: to_oracle_lstm(&model.lstm_q1),
        q2: to_oracle_lstm(&model.lstm_q2),
        w_attn: to_nested(&model.attn.w),
        w_s: to_nested(&model.w_s),
        b_s: model.b_s.clone(),
    }
}

/// Cube sequence as `[frame][region][dim]` nested vectors.
pub fn to_oracle_frames(cubes: &[FeatureCube]) -> Vec<han_oracle::Frame> {
    cubes
        .iter()
        .map(|cube| (0..cube.region_count()).map(|i| cube.region(i)).collect())
        .collect()
}

/// The main model's gradients in the reference model's flat order. Both
/// sides serialize blocks the same way, so the flat vectors correspond
/// element by element.
pub fn grads_to_flat(grads: &han_core::model::HanGrads) -> Vec<f64> {
    grads.flatten()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs())
        .fold(0.0, f64::max)
}

//! Helpers for the acceptance suite: random instances, conversions into the
//! independent reference model, dataset splitting, and the order-blind
//! mean-pool baseline.

use han_core::attention::FeatureCube;
use han_core::data::{Dataset, Sample};
use han_core::model::{HanModel, Mode, ModelConfig};
use han_core::numerics::{Matrix, Rng};
use han_core::synth::GeneratedDataset;

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

pub fn to_oracle_frames(cubes: &[FeatureCube]) -> Vec<han_oracle::Frame> {
    cubes
        .iter()
        .map(|cube| (0..cube.region_count()).map(|i| cube.region(i)).collect())
        .collect()
}

pub fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Stratified split: the first `per_class_eval` samples of each class go to
/// the held-out set.
pub fn split_dataset(
    ds: &Dataset,
    per_class_eval: usize,
    classes: usize,
) -> (Vec<Sample>, Vec<Sample>) {
    let mut train = Vec::new();
    let mut eval = Vec::new();
    let mut seen = vec![0usize; classes];
    for s in &ds.samples {
        if seen[s.label] < per_class_eval {
            eval.push(s.clone());
        } else {
            train.push(s.clone());
        }
        seen[s.label] += 1;
    }
    (train, eval)
}

/// Order-blind baseline: average each sample's cubes over time and regions
/// (both streams concatenated), fit class centroids on the training set, and
/// classify held-out samples by the nearest centroid.
pub fn mean_pool_baseline_accuracy(
    train: &[Sample],
    eval: &[Sample],
    classes: usize,
) -> f64 {
    let pool = |s: &Sample| -> Vec<f64> {
        let d = s.cubes_p[0].feature_dim();
        let n = s.cubes_p[0].region_count();
        let frames = s.cubes_p.len();
        let mut feature = vec![0.0; 2 * d];
        for t in 0..frames {
            for region in 0..n {
                for dim in 0..d {
                    feature[dim] += s.cubes_p[t].regions.get(dim, region);
                    feature[d + dim] += s.cubes_q[t].regions.get(dim, region);
                }
            }
        }
        let scale = 1.0 / (frames * n) as f64;
        feature.iter().map(|v| v * scale).collect()
    };

    let mut centroids = vec![vec![0.0; 2 * train[0].cubes_p[0].feature_dim()]; classes];
    let mut counts = vec![0usize; classes];
    for s in train {
        let f = pool(s);
        for (c, v) in centroids[s.label].iter_mut().zip(&f) {
            *c += v;
        }
        counts[s.label] += 1;
    }
    for (centroid, count) in centroids.iter_mut().zip(&counts) {
        for v in centroid.iter_mut() {
            *v /= (*count).max(1) as f64;
        }
    }

    let mut correct = 0usize;
    for s in eval {
        let f = pool(s);
        let mut best = 0;
        let mut best_dist = f64::MAX;
        for (class, centroid) in centroids.iter().enumerate() {
            let dist: f64 = f
                .iter()
                .zip(centroid)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if dist < best_dist {
                best_dist = dist;
                best = class;
            }
        }
        if best == s.label {
            correct += 1;
        }
    }
    correct as f64 / eval.len() as f64
}

/// Mean attention weight assigned to the ground-truth signal region over all
/// frames of the given samples (eval mode).
pub fn mean_attention_on_truth(
    model: &HanModel,
    generated: &GeneratedDataset,
    samples: &[Sample],
) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for s in samples {
        let truth = &generated
            .truth
            .iter()
            .find(|(id, _)| id == &s.id)
            .expect("sample missing from sidecar")
            .1;
        let out = model.forward(&s.cubes_p, &s.cubes_q, Mode::Eval).unwrap();
        for (t, l) in out.trace.attn.iter().enumerate() {
            total += l.as_slice()[truth[t]];
            count += 1;
        }
    }
    total / count as f64
}

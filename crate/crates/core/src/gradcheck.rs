//! Whole-model gradient verification: analytic backpropagation against
//! central finite differences of the loss, block by block.

use crate::attention::FeatureCube;
use crate::error::Result;
use crate::model::{HanModel, Mode, ModelConfig};
use crate::numerics::{finite_diff_gradient, max_rel_error, Matrix, Rng};
use crate::train::{nll_grad_logits, nll_loss};

/// Default finite-difference step for whole-model checks. The loss is of
/// order 1, so f64 rounding leaves ~1e-12 of noise on a central difference
/// at this step; smaller steps let that noise dominate the relative error of
/// near-zero gradient coordinates.
pub const DEFAULT_STEP: f64 = 1e-4;

/// Per-block comparison result.
#[derive(Debug, Clone)]
pub struct BlockCheck {
    pub name: String,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockCheck>,
    pub tolerance: f64,
    pub seconds: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.max_rel_error <= self.tolerance)
    }

    pub fn worst(&self) -> Option<&BlockCheck> {
        self.blocks
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

/// Builds a seeded model and input, computes analytic gradients of the NLL
/// and compares them per parameter block against finite differences.
///
/// `corrupt_block`, when set, perturbs that block's analytic gradient before
/// the comparison; it exists so the failure path of the self-check can be
/// exercised end to end.
pub fn run_gradient_check(
    config: &ModelConfig,
    seed: u64,
    step: f64,
    tolerance: f64,
    corrupt_block: Option<&str>,
) -> Result<GradCheckReport> {
    let start = std::time::Instant::now();
    config.validate()?;
    let mut rng = Rng::derive(seed, &[0]);
    let model = HanModel::init(*config, &mut rng)?;

    let mut data_rng = Rng::derive(seed, &[1]);
    let make_cubes = |rng: &mut Rng| -> Vec<FeatureCube> {
        (0..config.frames)
            .map(|t| {
                let mut m = Matrix::zeros(config.feature_dim, config.region_count());
                for v in m.as_mut_slice() {
                    *v = rng.uniform(-1.0, 1.0);
                }
                FeatureCube::new(m, t)
            })
            .collect()
    };
    let cubes_p = make_cubes(&mut data_rng);
    let cubes_q = make_cubes(&mut data_rng);
    let label = data_rng.index(config.classes);

    // Analytic path.
    let out = model.forward(&cubes_p, &cubes_q, Mode::Eval)?;
    let grad_logits = nll_grad_logits(&out.probs, label)?;
    let grads = model.backward(&out.trace, &grad_logits)?;
    let mut analytic = grads.flatten();

    if let Some(block) = corrupt_block {
        let layout = model.layout();
        let (_, offset, len) = layout
            .iter()
            .find(|(name, _, _)| name == block)
            .ok_or_else(|| {
                crate::error::Error::Config(format!("unknown parameter block `{block}`"))
            })?
            .clone();
        for v in &mut analytic[offset..offset + len] {
            *v = *v * 1.1 + 0.05;
        }
    }

    // Finite-difference path over the flat parameter vector.
    let theta = model.flatten();
    let mut probe = model.clone();
    let numeric = finite_diff_gradient(
        |t| {
            probe.set_from_flat(t)?;
            let out = probe.forward(&cubes_p, &cubes_q, Mode::Eval)?;
            nll_loss(&out.probs, label)
        },
        &theta,
        step,
    )?;

    let blocks = model
        .layout()
        .into_iter()
        .map(|(name, offset, len)| BlockCheck {
            name,
            max_rel_error: max_rel_error(
                &analytic[offset..offset + len],
                &numeric[offset..offset + len],
            ),
        })
        .collect();

    Ok(GradCheckReport {
        blocks,
        tolerance,
        seconds: start.elapsed().as_secs_f64(),
    })
}

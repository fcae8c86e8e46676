//! The full network: per-stream two-layer skip-k hierarchical LSTMs fed by
//! jointly attended inputs, final-state concatenation, and the softmax
//! classifier.
//!
//! Layer 1 of each stream consumes one attended input per frame. Layer 2
//! consumes layer-1 hidden states only at the scheduled indices
//! `{k, 2k, ...} U {T}`, so it models transitions between frame chunks
//! rather than between frames. The video encoding `h_f` concatenates the
//! final hidden states of all four LSTMs in the order `[p1, p2, q1, q2]`.

use crate::attention::{
    attend, attention_backward, attention_weights, AttentionParams, AttentionWeights,
    FeatureCube,
};
use crate::error::{Error, Result};
use crate::lstm::{lstm_step, lstm_step_backward, GateActivations, LstmParams, LstmState};
use crate::numerics::{add_assign, stable_softmax, Matrix, Rng};
use crate::train::{dropout_apply, Phase};

/// Structural hyperparameters. `layers` is fixed at 2 in this artifact.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    /// Regions per frame side (K); a frame has K*K regions.
    pub regions_per_side: usize,
    /// Feature dimension per region (D).
    pub feature_dim: usize,
    /// LSTM hidden size (H).
    pub hidden: usize,
    /// LSTM layers per stream (L); must be 2.
    pub layers: usize,
    /// Skip stride between layer-1 outputs consumed by layer 2 (k).
    pub skip: usize,
    /// Nominal sequence length (T).
    pub frames: usize,
    /// Number of classes (C).
    pub classes: usize,
}

impl ModelConfig {
    pub fn region_count(&self) -> usize {
        self.regions_per_side * self.regions_per_side
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("regions_per_side", self.regions_per_side),
            ("feature_dim", self.feature_dim),
            ("hidden", self.hidden),
            ("layers", self.layers),
            ("skip", self.skip),
            ("frames", self.frames),
            ("classes", self.classes),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.layers != 2 {
            return Err(Error::Config(format!(
                "layers must be 2, got {}",
                self.layers
            )));
        }
        if self.classes < 2 {
            return Err(Error::Config(format!(
                "classes must be >= 2, got {}",
                self.classes
            )));
        }
        Ok(())
    }

    /// Errors with the first differing field if two configurations disagree.
    pub fn ensure_matches(&self, other: &ModelConfig) -> Result<()> {
        let pairs = [
            ("regions_per_side", self.regions_per_side, other.regions_per_side),
            ("feature_dim", self.feature_dim, other.feature_dim),
            ("hidden", self.hidden, other.hidden),
            ("layers", self.layers, other.layers),
            ("skip", self.skip, other.skip),
            ("frames", self.frames, other.frames),
            ("classes", self.classes, other.classes),
        ];
        for (field, a, b) in pairs {
            if a != b {
                return Err(Error::ConfigMismatch {
                    field,
                    expected: a as u64,
                    got: b as u64,
                });
            }
        }
        Ok(())
    }
}

/// Time indices (1-based) at which layer 2 consumes a layer-1 output:
/// every k-th step plus the final step.
pub fn layer2_schedule(seq_len: usize, skip: usize) -> Result<Vec<usize>> {
    if seq_len == 0 {
        return Err(Error::EmptySequence);
    }
    if skip == 0 {
        return Err(Error::Config("skip stride must be >= 1".to_string()));
    }
    let mut schedule: Vec<usize> = (1..=seq_len / skip).map(|j| j * skip).collect();
    if schedule.last() != Some(&seq_len) {
        schedule.push(seq_len);
    }
    Ok(schedule)
}

/// Video encoding: `[h_T^{p,1}; h_T^{p,2}; h_T^{q,1}; h_T^{q,2}]`, width 4H.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoEncoding {
    pub h_f: Vec<f64>,
}

/// All parameters of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct HanModel {
    config: ModelConfig,
    /// Ablation switch: force uniform attention weights on every frame and
    /// cut the attention path out of backpropagation. Not serialized; set it
    /// again after loading a checkpoint trained this way.
    pub uniform_attention: bool,
    pub lstm_p1: LstmParams,
    pub lstm_p2: LstmParams,
    pub lstm_q1: LstmParams,
    pub lstm_q2: LstmParams,
    pub attn: AttentionParams,
    pub w_s: Matrix,
    pub b_s: Vec<f64>,
}

/// Gradients for every parameter in [`HanModel`]; shapes mirror the model.
#[derive(Debug, Clone)]
pub struct HanGrads {
    pub lstm_p1: LstmParams,
    pub lstm_p2: LstmParams,
    pub lstm_q1: LstmParams,
    pub lstm_q2: LstmParams,
    pub attn: Matrix,
    pub w_s: Matrix,
    pub b_s: Vec<f64>,
}

/// Everything the backward pass needs from a forward pass, including the
/// attended inputs and both layers' cached states and gates. Borrows the
/// input cubes.
pub struct ForwardTrace<'a> {
    pub cubes_p: &'a [FeatureCube],
    pub cubes_q: &'a [FeatureCube],
    pub seq_len: usize,
    pub attn: Vec<AttentionWeights>,
    pub x_p: Vec<Vec<f64>>,
    pub x_q: Vec<Vec<f64>>,
    /// Layer-1 states, index 0 holding the zero initial state.
    pub p1_states: Vec<LstmState>,
    pub q1_states: Vec<LstmState>,
    pub p1_gates: Vec<GateActivations>,
    pub q1_gates: Vec<GateActivations>,
    /// 1-based time indices consumed by layer 2.
    pub schedule: Vec<usize>,
    /// Layer-2 inputs after dropout, one per scheduled index.
    pub p2_inputs: Vec<Vec<f64>>,
    pub q2_inputs: Vec<Vec<f64>>,
    /// Dropout scale masks for the layer-2 inputs (all ones when inactive).
    pub p2_masks: Vec<Vec<f64>>,
    pub q2_masks: Vec<Vec<f64>>,
    pub p2_states: Vec<LstmState>,
    pub q2_states: Vec<LstmState>,
    pub p2_gates: Vec<GateActivations>,
    pub q2_gates: Vec<GateActivations>,
    pub h_f: Vec<f64>,
    pub hf_mask: Vec<f64>,
    pub hf_dropped: Vec<f64>,
    pub probs: Vec<f64>,
    pub uniform_attention: bool,
}

/// Result of a forward pass.
pub struct Forward<'a> {
    pub probs: Vec<f64>,
    pub encoding: VideoEncoding,
    pub trace: ForwardTrace<'a>,
}

/// Forward-pass mode. Training mode activates dropout and needs a
/// deterministic RNG for the masks; evaluation is a pure function.
pub enum Mode<'r> {
    Eval,
    Train { dropout: f64, rng: &'r mut Rng },
}

impl HanModel {
    /// Zero-valued parameters (useful for gradient containers and tests).
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let h = config.hidden;
        let d = config.feature_dim;
        let n = config.region_count();
        Ok(HanModel {
            config,
            uniform_attention: false,
            lstm_p1: LstmParams::zeros(h, d),
            lstm_p2: LstmParams::zeros(h, h),
            lstm_q1: LstmParams::zeros(h, d),
            lstm_q2: LstmParams::zeros(h, h),
            attn: AttentionParams::zeros(n, 2 * h),
            w_s: Matrix::zeros(config.classes, 4 * h),
            b_s: vec![0.0; config.classes],
        })
    }

    /// Seeded scaled-uniform initialization; biases start at zero. A given
    /// seed yields bit-identical parameters on every platform.
    pub fn init(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let h = config.hidden;
        let d = config.feature_dim;
        let n = config.region_count();
        let mut model = Self::zeros(config)?;
        model.lstm_p1 = LstmParams::init(h, d, rng);
        model.lstm_p2 = LstmParams::init(h, h, rng);
        model.lstm_q1 = LstmParams::init(h, d, rng);
        model.lstm_q2 = LstmParams::init(h, h, rng);
        model.attn = AttentionParams::init(n, 2 * h, rng);
        let lim = (6.0 / (4 * h + config.classes) as f64).sqrt();
        model.w_s.fill_uniform(rng, lim);
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Visits every parameter tensor in the fixed serialization order.
    pub fn visit_params<'a>(&'a self, f: &mut impl FnMut(String, &'a [f64])) {
        for (prefix, lstm) in [
            ("p1", &self.lstm_p1),
            ("p2", &self.lstm_p2),
            ("q1", &self.lstm_q1),
            ("q2", &self.lstm_q2),
        ] {
            lstm.visit(&mut |name, data| f(format!("{prefix}.{name}"), data));
        }
        f("attn.w".to_string(), self.attn.w.as_slice());
        f("classifier.w".to_string(), self.w_s.as_slice());
        f("classifier.b".to_string(), &self.b_s);
    }

    pub fn visit_params_mut(&mut self, f: &mut impl FnMut(String, &mut [f64])) {
        for (prefix, lstm) in [
            ("p1", &mut self.lstm_p1),
            ("p2", &mut self.lstm_p2),
            ("q1", &mut self.lstm_q1),
            ("q2", &mut self.lstm_q2),
        ] {
            lstm.visit_mut(&mut |name, data| f(format!("{prefix}.{name}"), data));
        }
        f("attn.w".to_string(), self.attn.w.as_mut_slice());
        f("classifier.w".to_string(), self.w_s.as_mut_slice());
        f("classifier.b".to_string(), &mut self.b_s);
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, data| n += data.len());
        n
    }

    /// All parameters as one flat vector in serialization order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.visit_params(&mut |_, data| out.extend_from_slice(data));
        out
    }

    /// Overwrites all parameters from a flat vector in serialization order.
    pub fn set_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Dimension {
                op: "set_from_flat",
                expected: format!("{} values", self.param_count()),
                got: format!("{} values", flat.len()),
            });
        }
        let mut pos = 0;
        self.visit_params_mut(&mut |_, data| {
            data.copy_from_slice(&flat[pos..pos + data.len()]);
            pos += data.len();
        });
        Ok(())
    }

    /// `(name, offset, len)` of every parameter block in the flat layout.
    pub fn layout(&self) -> Vec<(String, usize, usize)> {
        let mut out = Vec::new();
        let mut pos = 0;
        self.visit_params(&mut |name, data| {
            out.push((name, pos, data.len()));
            pos += data.len();
        });
        out
    }

    fn check_streams(&self, cubes_p: &[FeatureCube], cubes_q: &[FeatureCube]) -> Result<usize> {
        if cubes_p.len() != cubes_q.len() {
            return Err(Error::Dimension {
                op: "forward",
                expected: format!("both streams of length {}", cubes_p.len()),
                got: format!("{} and {}", cubes_p.len(), cubes_q.len()),
            });
        }
        if cubes_p.is_empty() {
            return Err(Error::EmptySequence);
        }
        let n = self.config.region_count();
        let d = self.config.feature_dim;
        for cube in cubes_p.iter().chain(cubes_q.iter()) {
            if cube.region_count() != n || cube.feature_dim() != d {
                return Err(Error::Dimension {
                    op: "forward",
                    expected: format!("cubes of {d}x{n}"),
                    got: format!("{}x{}", cube.feature_dim(), cube.region_count()),
                });
            }
        }
        Ok(cubes_p.len())
    }

    /// Runs the network over one sample. Works for any nonzero sequence
    /// length; the layer-2 schedule is derived from the actual length.
    pub fn forward<'a>(
        &self,
        cubes_p: &'a [FeatureCube],
        cubes_q: &'a [FeatureCube],
        mode: Mode<'_>,
    ) -> Result<Forward<'a>> {
        let seq_len = self.check_streams(cubes_p, cubes_q)?;
        let h = self.config.hidden;
        let n = self.config.region_count();

        let (dropout_rate, mut rng) = match mode {
            Mode::Eval => (0.0, None),
            Mode::Train { dropout, rng } => (dropout, Some(rng)),
        };

        let mut attn_weights = Vec::with_capacity(seq_len);
        let mut x_p = Vec::with_capacity(seq_len);
        let mut x_q = Vec::with_capacity(seq_len);
        let mut p1_states = vec![LstmState::zeros(h)];
        let mut q1_states = vec![LstmState::zeros(h)];
        let mut p1_gates = Vec::with_capacity(seq_len);
        let mut q1_gates = Vec::with_capacity(seq_len);

        for t in 0..seq_len {
            let l = if self.uniform_attention {
                AttentionWeights::uniform(n)
            } else {
                attention_weights(&self.attn, &p1_states[t].h, &q1_states[t].h)?
            };
            let xp = attend(&l, &cubes_p[t])?;
            let xq = attend(&l, &cubes_q[t])?;
            let (sp, gp) = lstm_step(&self.lstm_p1, &p1_states[t], &xp)?;
            let (sq, gq) = lstm_step(&self.lstm_q1, &q1_states[t], &xq)?;
            attn_weights.push(l);
            x_p.push(xp);
            x_q.push(xq);
            p1_states.push(sp);
            q1_states.push(sq);
            p1_gates.push(gp);
            q1_gates.push(gq);
        }

        // (inputs, dropout masks, states, gates) of one layer-2 pass.
        type Layer2Run = (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<LstmState>, Vec<GateActivations>);
        let schedule = layer2_schedule(seq_len, self.config.skip)?;
        let run_layer2 = |params: &LstmParams,
                          states_l1: &[LstmState],
                          rng: &mut Option<&mut Rng>|
         -> Result<Layer2Run> {
            let mut inputs = Vec::with_capacity(schedule.len());
            let mut masks = Vec::with_capacity(schedule.len());
            let mut states = vec![LstmState::zeros(h)];
            let mut gates = Vec::with_capacity(schedule.len());
            for (j, &t) in schedule.iter().enumerate() {
                let raw = &states_l1[t].h;
                let (input, mask) = match rng {
                    Some(r) => dropout_apply(raw, dropout_rate, Phase::Train, r)?,
                    None => (raw.clone(), vec![1.0; raw.len()]),
                };
                let (s, g) = lstm_step(params, &states[j], &input)?;
                inputs.push(input);
                masks.push(mask);
                states.push(s);
                gates.push(g);
            }
            Ok((inputs, masks, states, gates))
        };

        let (p2_inputs, p2_masks, p2_states, p2_gates) =
            run_layer2(&self.lstm_p2, &p1_states, &mut rng)?;
        let (q2_inputs, q2_masks, q2_states, q2_gates) =
            run_layer2(&self.lstm_q2, &q1_states, &mut rng)?;

        let mut h_f = Vec::with_capacity(4 * h);
        h_f.extend_from_slice(&p1_states[seq_len].h);
        h_f.extend_from_slice(&p2_states[schedule.len()].h);
        h_f.extend_from_slice(&q1_states[seq_len].h);
        h_f.extend_from_slice(&q2_states[schedule.len()].h);

        let (hf_dropped, hf_mask) = match rng {
            Some(r) => dropout_apply(&h_f, dropout_rate, Phase::Train, r)?,
            None => (h_f.clone(), vec![1.0; h_f.len()]),
        };

        let mut logits = self.w_s.matvec(&hf_dropped)?;
        add_assign(&mut logits, &self.b_s);
        let probs = stable_softmax(&logits)?;

        Ok(Forward {
            probs: probs.clone(),
            encoding: VideoEncoding { h_f: h_f.clone() },
            trace: ForwardTrace {
                cubes_p,
                cubes_q,
                seq_len,
                attn: attn_weights,
                x_p,
                x_q,
                p1_states,
                q1_states,
                p1_gates,
                q1_gates,
                schedule,
                p2_inputs,
                q2_inputs,
                p2_masks,
                q2_masks,
                p2_states,
                q2_states,
                p2_gates,
                q2_gates,
                h_f,
                hf_mask,
                hf_dropped,
                probs,
                uniform_attention: self.uniform_attention,
            },
        })
    }

    /// Backpropagation through time over the whole trace, traversing both
    /// recurrent paths: the LSTM recurrence and the attention dependence on
    /// the previous step's layer-1 hidden states, plus the cross-layer edges
    /// at the scheduled indices.
    pub fn backward(&self, trace: &ForwardTrace<'_>, grad_logits: &[f64]) -> Result<HanGrads> {
        let h = self.config.hidden;
        let c = self.config.classes;
        if grad_logits.len() != c {
            return Err(Error::Dimension {
                op: "backward",
                expected: format!("{c} logit gradients"),
                got: format!("{}", grad_logits.len()),
            });
        }
        if trace.h_f.len() != 4 * h || trace.uniform_attention != self.uniform_attention {
            return Err(Error::Dimension {
                op: "backward",
                expected: format!("trace for hidden {h} (uniform_attention {})", self.uniform_attention),
                got: format!(
                    "h_f of {} (uniform_attention {})",
                    trace.h_f.len(),
                    trace.uniform_attention
                ),
            });
        }

        let mut grads = HanGrads::zeros(&self.config);

        // Classifier.
        grads.w_s.add_outer(grad_logits, &trace.hf_dropped)?;
        add_assign(&mut grads.b_s, grad_logits);
        let grad_hf_dropped = self.w_s.matvec_t(grad_logits)?;
        let grad_h_f: Vec<f64> = grad_hf_dropped
            .iter()
            .zip(&trace.hf_mask)
            .map(|(g, m)| g * m)
            .collect();
        let (gh_p1_final, rest) = grad_h_f.split_at(h);
        let (gh_p2_final, rest) = rest.split_at(h);
        let (gh_q1_final, gh_q2_final) = rest.split_at(h);

        // Layer 2 of each stream; emits gradients into layer-1 h at the
        // scheduled indices.
        let mut l2_to_p1 = vec![vec![0.0; h]; trace.seq_len + 1];
        let mut l2_to_q1 = vec![vec![0.0; h]; trace.seq_len + 1];
        let layer2_backward = |params: &LstmParams,
                                   grads_out: &mut LstmParams,
                                   states: &[LstmState],
                                   gates: &[GateActivations],
                                   inputs: &[Vec<f64>],
                                   masks: &[Vec<f64>],
                                   into_l1: &mut [Vec<f64>],
                                   grad_final: &[f64]|
         -> Result<()> {
            let steps = trace.schedule.len();
            let mut carry_h = vec![0.0; h];
            let mut carry_c = vec![0.0; h];
            for j in (0..steps).rev() {
                let mut gh = carry_h.clone();
                if j == steps - 1 {
                    add_assign(&mut gh, grad_final);
                }
                let back = lstm_step_backward(
                    params, &states[j], &inputs[j], &gates[j], &gh, &carry_c,
                )?;
                grads_out.accumulate(&back.params);
                let t = trace.schedule[j];
                for (dst, (gx, m)) in into_l1[t].iter_mut().zip(back.x.iter().zip(&masks[j])) {
                    *dst += gx * m;
                }
                carry_h = back.prev_state.h;
                carry_c = back.prev_state.c;
            }
            Ok(())
        };
        layer2_backward(
            &self.lstm_p2,
            &mut grads.lstm_p2,
            &trace.p2_states,
            &trace.p2_gates,
            &trace.p2_inputs,
            &trace.p2_masks,
            &mut l2_to_p1,
            gh_p2_final,
        )?;
        layer2_backward(
            &self.lstm_q2,
            &mut grads.lstm_q2,
            &trace.q2_states,
            &trace.q2_gates,
            &trace.q2_inputs,
            &trace.q2_masks,
            &mut l2_to_q1,
            gh_q2_final,
        )?;

        // Joint layer-1 BPTT. The attention at frame t conditions on the
        // hidden states at t-1, so its backward feeds the carry for t-1.
        let mut carry_p_h = vec![0.0; h];
        let mut carry_p_c = vec![0.0; h];
        let mut carry_q_h = vec![0.0; h];
        let mut carry_q_c = vec![0.0; h];
        for t in (1..=trace.seq_len).rev() {
            let mut gh_p = carry_p_h.clone();
            add_assign(&mut gh_p, &l2_to_p1[t]);
            let mut gh_q = carry_q_h.clone();
            add_assign(&mut gh_q, &l2_to_q1[t]);
            if t == trace.seq_len {
                add_assign(&mut gh_p, gh_p1_final);
                add_assign(&mut gh_q, gh_q1_final);
            }

            let back_p = lstm_step_backward(
                &self.lstm_p1,
                &trace.p1_states[t - 1],
                &trace.x_p[t - 1],
                &trace.p1_gates[t - 1],
                &gh_p,
                &carry_p_c,
            )?;
            let back_q = lstm_step_backward(
                &self.lstm_q1,
                &trace.q1_states[t - 1],
                &trace.x_q[t - 1],
                &trace.q1_gates[t - 1],
                &gh_q,
                &carry_q_c,
            )?;
            grads.lstm_p1.accumulate(&back_p.params);
            grads.lstm_q1.accumulate(&back_q.params);

            carry_p_h = back_p.prev_state.h;
            carry_p_c = back_p.prev_state.c;
            carry_q_h = back_q.prev_state.h;
            carry_q_c = back_q.prev_state.c;

            if !self.uniform_attention {
                let ab = attention_backward(
                    &self.attn,
                    &trace.p1_states[t - 1].h,
                    &trace.q1_states[t - 1].h,
                    &trace.attn[t - 1],
                    &trace.cubes_p[t - 1],
                    &trace.cubes_q[t - 1],
                    &back_p.x,
                    &back_q.x,
                )?;
                add_assign(grads.attn.as_mut_slice(), ab.params.as_slice());
                add_assign(&mut carry_p_h, &ab.h_p_prev);
                add_assign(&mut carry_q_h, &ab.h_q_prev);
            }
        }

        Ok(grads)
    }
}

impl LstmParams {
    /// `self += other`, tensor by tensor.
    pub fn accumulate(&mut self, other: &LstmParams) {
        add_assign(self.w_ix.as_mut_slice(), other.w_ix.as_slice());
        add_assign(self.w_fx.as_mut_slice(), other.w_fx.as_slice());
        add_assign(self.w_ox.as_mut_slice(), other.w_ox.as_slice());
        add_assign(self.w_gx.as_mut_slice(), other.w_gx.as_slice());
        add_assign(self.w_ih.as_mut_slice(), other.w_ih.as_slice());
        add_assign(self.w_fh.as_mut_slice(), other.w_fh.as_slice());
        add_assign(self.w_oh.as_mut_slice(), other.w_oh.as_slice());
        add_assign(self.w_gh.as_mut_slice(), other.w_gh.as_slice());
        add_assign(&mut self.b_i, &other.b_i);
        add_assign(&mut self.b_f, &other.b_f);
        add_assign(&mut self.b_o, &other.b_o);
        add_assign(&mut self.b_g, &other.b_g);
    }
}

impl HanGrads {
    pub fn zeros(config: &ModelConfig) -> Self {
        let h = config.hidden;
        let d = config.feature_dim;
        HanGrads {
            lstm_p1: LstmParams::zeros(h, d),
            lstm_p2: LstmParams::zeros(h, h),
            lstm_q1: LstmParams::zeros(h, d),
            lstm_q2: LstmParams::zeros(h, h),
            attn: Matrix::zeros(config.region_count(), 2 * h),
            w_s: Matrix::zeros(config.classes, 4 * h),
            b_s: vec![0.0; config.classes],
        }
    }

    pub fn visit<'a>(&'a self, f: &mut impl FnMut(String, &'a [f64])) {
        for (prefix, lstm) in [
            ("p1", &self.lstm_p1),
            ("p2", &self.lstm_p2),
            ("q1", &self.lstm_q1),
            ("q2", &self.lstm_q2),
        ] {
            lstm.visit(&mut |name, data| f(format!("{prefix}.{name}"), data));
        }
        f("attn.w".to_string(), self.attn.as_slice());
        f("classifier.w".to_string(), self.w_s.as_slice());
        f("classifier.b".to_string(), &self.b_s);
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(String, &mut [f64])) {
        for (prefix, lstm) in [
            ("p1", &mut self.lstm_p1),
            ("p2", &mut self.lstm_p2),
            ("q1", &mut self.lstm_q1),
            ("q2", &mut self.lstm_q2),
        ] {
            lstm.visit_mut(&mut |name, data| f(format!("{prefix}.{name}"), data));
        }
        f("attn.w".to_string(), self.attn.as_mut_slice());
        f("classifier.w".to_string(), self.w_s.as_mut_slice());
        f("classifier.b".to_string(), &mut self.b_s);
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit(&mut |_, data| out.extend_from_slice(data));
        out
    }

    /// `self += other`.
    pub fn accumulate(&mut self, other: &HanGrads) {
        self.lstm_p1.accumulate(&other.lstm_p1);
        self.lstm_p2.accumulate(&other.lstm_p2);
        self.lstm_q1.accumulate(&other.lstm_q1);
        self.lstm_q2.accumulate(&other.lstm_q2);
        add_assign(self.attn.as_mut_slice(), other.attn.as_slice());
        add_assign(self.w_s.as_mut_slice(), other.w_s.as_slice());
        add_assign(&mut self.b_s, &other.b_s);
    }

    /// Multiplies every gradient by `factor` (batch averaging).
    pub fn scale(&mut self, factor: f64) {
        self.visit_mut(&mut |_, data| {
            for v in data {
                *v *= factor;
            }
        });
    }
}

//! Independent reference implementation used to cross-check the main crate
//! in tests: a plain two-layer stacked LSTM per stream with joint spatial
//! attention, written with nested `Vec` matrices and explicit scalar loops,
//! and its own hand-derived backward pass.
//!
//! Layer 2 consumes every layer-1 output (dense stacking), which is what the
//! hierarchical model degenerates to at skip stride 1. No dropout, no
//! optimizer; this crate exists to produce reference forward values, losses
//! and gradients.
//!
//! Frames are `[region][dim]` matrices; a sequence is `Vec<Frame>`.

// Index-based scalar loops are this crate's whole point; the iterator
// rewrites clippy suggests would erase the contrast with the main crate.
#![allow(clippy::needless_range_loop)]

pub type Mat = Vec<Vec<f64>>;
pub type Frame = Vec<Vec<f64>>;

/// One LSTM cell's weights: `[hidden][input]` input matrices,
/// `[hidden][hidden]` recurrent matrices, one bias per gate.
#[derive(Debug, Clone, Default)]
pub struct Lstm {
    pub w_ix: Mat,
    pub w_fx: Mat,
    pub w_ox: Mat,
    pub w_gx: Mat,
    pub w_ih: Mat,
    pub w_fh: Mat,
    pub w_oh: Mat,
    pub w_gh: Mat,
    pub b_i: Vec<f64>,
    pub b_f: Vec<f64>,
    pub b_o: Vec<f64>,
    pub b_g: Vec<f64>,
}

fn zero_mat(rows: usize, cols: usize) -> Mat {
    vec![vec![0.0; cols]; rows]
}

impl Lstm {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        Lstm {
            w_ix: zero_mat(hidden, input),
            w_fx: zero_mat(hidden, input),
            w_ox: zero_mat(hidden, input),
            w_gx: zero_mat(hidden, input),
            w_ih: zero_mat(hidden, hidden),
            w_fh: zero_mat(hidden, hidden),
            w_oh: zero_mat(hidden, hidden),
            w_gh: zero_mat(hidden, hidden),
            b_i: vec![0.0; hidden],
            b_f: vec![0.0; hidden],
            b_o: vec![0.0; hidden],
            b_g: vec![0.0; hidden],
        }
    }

    fn hidden(&self) -> usize {
        self.w_ix.len()
    }

    fn input(&self) -> usize {
        self.w_ix[0].len()
    }
}

/// The whole reference network.
#[derive(Debug, Clone)]
pub struct Model {
    pub p1: Lstm,
    pub p2: Lstm,
    pub q1: Lstm,
    pub q2: Lstm,
    /// `[regions][2 * hidden]` attention scoring weights.
    pub w_attn: Mat,
    /// `[classes][4 * hidden]` classifier weights.
    pub w_s: Mat,
    pub b_s: Vec<f64>,
}

impl Model {
    pub fn zeros(hidden: usize, feature_dim: usize, regions: usize, classes: usize) -> Self {
        Model {
            p1: Lstm::zeros(hidden, feature_dim),
            p2: Lstm::zeros(hidden, hidden),
            q1: Lstm::zeros(hidden, feature_dim),
            q2: Lstm::zeros(hidden, hidden),
            w_attn: zero_mat(regions, 2 * hidden),
            w_s: zero_mat(classes, 4 * hidden),
            b_s: vec![0.0; classes],
        }
    }

    /// Flat parameter vector. Order: for each of p1, p2, q1, q2 the tensors
    /// w_ix, w_fx, w_ox, w_gx, w_ih, w_fh, w_oh, w_gh, b_i, b_f, b_o, b_g
    /// (matrices row-major), then w_attn, w_s, b_s.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for lstm in [&self.p1, &self.p2, &self.q1, &self.q2] {
            for m in [
                &lstm.w_ix, &lstm.w_fx, &lstm.w_ox, &lstm.w_gx, &lstm.w_ih, &lstm.w_fh,
                &lstm.w_oh, &lstm.w_gh,
            ] {
                for row in m {
                    out.extend_from_slice(row);
                }
            }
            for b in [&lstm.b_i, &lstm.b_f, &lstm.b_o, &lstm.b_g] {
                out.extend_from_slice(b);
            }
        }
        for m in [&self.w_attn, &self.w_s] {
            for row in m {
                out.extend_from_slice(row);
            }
        }
        out.extend_from_slice(&self.b_s);
        out
    }

    /// Inverse of [`Model::flatten`]; shapes come from `self`.
    pub fn set_from_flat(&mut self, flat: &[f64]) {
        let mut pos = 0;
        let take_mat = |m: &mut Mat, pos: &mut usize| {
            for row in m {
                let n = row.len();
                row.copy_from_slice(&flat[*pos..*pos + n]);
                *pos += n;
            }
        };
        for lstm in [&mut self.p1, &mut self.p2, &mut self.q1, &mut self.q2] {
            for m in [
                &mut lstm.w_ix, &mut lstm.w_fx, &mut lstm.w_ox, &mut lstm.w_gx,
                &mut lstm.w_ih, &mut lstm.w_fh, &mut lstm.w_oh, &mut lstm.w_gh,
            ] {
                take_mat(m, &mut pos);
            }
            for b in [&mut lstm.b_i, &mut lstm.b_f, &mut lstm.b_o, &mut lstm.b_g] {
                let n = b.len();
                b.copy_from_slice(&flat[pos..pos + n]);
                pos += n;
            }
        }
        take_mat(&mut self.w_attn, &mut pos);
        take_mat(&mut self.w_s, &mut pos);
        let n = self.b_s.len();
        self.b_s.copy_from_slice(&flat[pos..pos + n]);
        pos += n;
        assert_eq!(pos, flat.len(), "flat parameter vector length mismatch");
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|v| v / sum).collect()
}

#[derive(Debug, Clone, Default)]
struct StepCache {
    i: Vec<f64>,
    f: Vec<f64>,
    o: Vec<f64>,
    g: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
struct LstmRun {
    /// States indexed 0..=T, index 0 the zero initial state.
    h: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    gates: Vec<StepCache>,
    inputs: Vec<Vec<f64>>,
}

fn lstm_run_new(hidden: usize) -> LstmRun {
    LstmRun {
        h: vec![vec![0.0; hidden]],
        c: vec![vec![0.0; hidden]],
        gates: Vec::new(),
        inputs: Vec::new(),
    }
}

fn lstm_forward_step(lstm: &Lstm, run: &mut LstmRun, x: &[f64]) {
    let hidden = lstm.hidden();
    let t = run.gates.len();
    let (h_prev, c_prev) = (run.h[t].clone(), run.c[t].clone());
    let mut cache = StepCache {
        i: vec![0.0; hidden],
        f: vec![0.0; hidden],
        o: vec![0.0; hidden],
        g: vec![0.0; hidden],
    };
    let mut h = vec![0.0; hidden];
    let mut c = vec![0.0; hidden];
    for k in 0..hidden {
        let mut pre_i = lstm.b_i[k];
        let mut pre_f = lstm.b_f[k];
        let mut pre_o = lstm.b_o[k];
        let mut pre_g = lstm.b_g[k];
        for (j, &xv) in x.iter().enumerate() {
            pre_i += lstm.w_ix[k][j] * xv;
            pre_f += lstm.w_fx[k][j] * xv;
            pre_o += lstm.w_ox[k][j] * xv;
            pre_g += lstm.w_gx[k][j] * xv;
        }
        for (j, &hv) in h_prev.iter().enumerate() {
            pre_i += lstm.w_ih[k][j] * hv;
            pre_f += lstm.w_fh[k][j] * hv;
            pre_o += lstm.w_oh[k][j] * hv;
            pre_g += lstm.w_gh[k][j] * hv;
        }
        cache.i[k] = sigmoid(pre_i);
        cache.f[k] = sigmoid(pre_f);
        cache.o[k] = sigmoid(pre_o);
        cache.g[k] = pre_g.tanh();
        c[k] = cache.f[k] * c_prev[k] + cache.i[k] * cache.g[k];
        h[k] = cache.o[k] * c[k].tanh();
    }
    run.h.push(h);
    run.c.push(c);
    run.gates.push(cache);
    run.inputs.push(x.to_vec());
}

/// Gradients emitted by one cell-step backward.
struct StepGrads {
    gx: Vec<f64>,
    gh_prev: Vec<f64>,
    gc_prev: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn lstm_backward_step(
    lstm: &Lstm,
    grads: &mut Lstm,
    run: &LstmRun,
    t: usize,
    gh: &[f64],
    gc: &[f64],
) -> StepGrads {
    let hidden = lstm.hidden();
    let input = lstm.input();
    let cache = &run.gates[t];
    let h_prev = &run.h[t];
    let c_prev = &run.c[t];
    let c_now = &run.c[t + 1];
    let x = &run.inputs[t];

    let mut d_pre = [
        vec![0.0; hidden], // i
        vec![0.0; hidden], // f
        vec![0.0; hidden], // o
        vec![0.0; hidden], // g
    ];
    let mut gc_prev = vec![0.0; hidden];
    for k in 0..hidden {
        let (i, f, o, g) = (cache.i[k], cache.f[k], cache.o[k], cache.g[k]);
        let tc = c_now[k].tanh();
        let dc = gc[k] + gh[k] * o * (1.0 - tc * tc);
        d_pre[2][k] = gh[k] * tc * o * (1.0 - o);
        d_pre[1][k] = dc * c_prev[k] * f * (1.0 - f);
        d_pre[0][k] = dc * g * i * (1.0 - i);
        d_pre[3][k] = dc * i * (1.0 - g * g);
        gc_prev[k] = dc * f;
    }

    {
        let wx = [
            &mut grads.w_ix,
            &mut grads.w_fx,
            &mut grads.w_ox,
            &mut grads.w_gx,
        ];
        for (gate, gw) in wx.into_iter().enumerate() {
            for k in 0..hidden {
                for j in 0..input {
                    gw[k][j] += d_pre[gate][k] * x[j];
                }
            }
        }
        let wh = [
            &mut grads.w_ih,
            &mut grads.w_fh,
            &mut grads.w_oh,
            &mut grads.w_gh,
        ];
        for (gate, gw) in wh.into_iter().enumerate() {
            for k in 0..hidden {
                for j in 0..hidden {
                    gw[k][j] += d_pre[gate][k] * h_prev[j];
                }
            }
        }
        let biases = [
            &mut grads.b_i,
            &mut grads.b_f,
            &mut grads.b_o,
            &mut grads.b_g,
        ];
        for (gate, gb) in biases.into_iter().enumerate() {
            for k in 0..hidden {
                gb[k] += d_pre[gate][k];
            }
        }
    }

    let mut gx = vec![0.0; input];
    let mut gh_prev = vec![0.0; hidden];
    let wx = [&lstm.w_ix, &lstm.w_fx, &lstm.w_ox, &lstm.w_gx];
    let wh = [&lstm.w_ih, &lstm.w_fh, &lstm.w_oh, &lstm.w_gh];
    for gate in 0..4 {
        for k in 0..hidden {
            let d = d_pre[gate][k];
            for j in 0..input {
                gx[j] += wx[gate][k][j] * d;
            }
            for j in 0..hidden {
                gh_prev[j] += wh[gate][k][j] * d;
            }
        }
    }

    StepGrads { gx, gh_prev, gc_prev }
}

/// Everything the backward pass needs from a forward run.
pub struct Trace {
    seq_len: usize,
    attn: Vec<Vec<f64>>,
    p1: LstmRun,
    p2: LstmRun,
    q1: LstmRun,
    q2: LstmRun,
    h_f: Vec<f64>,
    pub probs: Vec<f64>,
}

impl Trace {
    pub fn h_f(&self) -> &[f64] {
        &self.h_f
    }

    pub fn attention(&self, t: usize) -> &[f64] {
        &self.attn[t]
    }
}

/// Dense two-layer stacked forward pass over both streams with joint
/// attention conditioned on the previous layer-1 hidden states.
pub fn forward(model: &Model, frames_p: &[Frame], frames_q: &[Frame]) -> Trace {
    assert_eq!(frames_p.len(), frames_q.len());
    let seq_len = frames_p.len();
    let hidden = model.p1.hidden();
    let regions = model.w_attn.len();

    let mut p1 = lstm_run_new(hidden);
    let mut p2 = lstm_run_new(hidden);
    let mut q1 = lstm_run_new(hidden);
    let mut q2 = lstm_run_new(hidden);
    let mut attn = Vec::with_capacity(seq_len);

    for t in 0..seq_len {
        let mut concat = p1.h[t].clone();
        concat.extend_from_slice(&q1.h[t]);
        let mut z = vec![0.0; regions];
        for (i, row) in model.w_attn.iter().enumerate() {
            for (j, &w) in row.iter().enumerate() {
                z[i] += w * concat[j];
            }
        }
        let l = softmax(&z);

        let dim = frames_p[t][0].len();
        let mut x_p = vec![0.0; dim];
        let mut x_q = vec![0.0; dim];
        for (i, &li) in l.iter().enumerate() {
            for d in 0..dim {
                x_p[d] += li * frames_p[t][i][d];
                x_q[d] += li * frames_q[t][i][d];
            }
        }
        attn.push(l);

        lstm_forward_step(&model.p1, &mut p1, &x_p);
        lstm_forward_step(&model.q1, &mut q1, &x_q);
        let in_p2 = p1.h[t + 1].clone();
        let in_q2 = q1.h[t + 1].clone();
        lstm_forward_step(&model.p2, &mut p2, &in_p2);
        lstm_forward_step(&model.q2, &mut q2, &in_q2);
    }

    let mut h_f = p1.h[seq_len].clone();
    h_f.extend_from_slice(&p2.h[seq_len]);
    h_f.extend_from_slice(&q1.h[seq_len]);
    h_f.extend_from_slice(&q2.h[seq_len]);

    let classes = model.w_s.len();
    let mut logits = model.b_s.clone();
    for c in 0..classes {
        for (j, &hv) in h_f.iter().enumerate() {
            logits[c] += model.w_s[c][j] * hv;
        }
    }
    let probs = softmax(&logits);

    Trace {
        seq_len,
        attn,
        p1,
        p2,
        q1,
        q2,
        h_f,
        probs,
    }
}

pub fn nll_loss(probs: &[f64], label: usize) -> f64 {
    -probs[label].ln()
}

pub fn nll_grad_logits(probs: &[f64], label: usize) -> Vec<f64> {
    probs
        .iter()
        .enumerate()
        .map(|(i, &p)| if i == label { p - 1.0 } else { p })
        .collect()
}

/// Full backpropagation through time, including the attention dependence on
/// the previous hidden states. Returns gradients shaped like the model.
pub fn backward(
    model: &Model,
    trace: &Trace,
    frames_p: &[Frame],
    frames_q: &[Frame],
    grad_logits: &[f64],
) -> Model {
    let hidden = model.p1.hidden();
    let regions = model.w_attn.len();
    let feature_dim = model.p1.input();
    let classes = model.w_s.len();
    let seq_len = trace.seq_len;

    let mut grads = Model::zeros(hidden, feature_dim, regions, classes);

    // Classifier.
    let mut grad_h_f = vec![0.0; 4 * hidden];
    for c in 0..classes {
        grads.b_s[c] += grad_logits[c];
        for j in 0..4 * hidden {
            grads.w_s[c][j] += grad_logits[c] * trace.h_f[j];
            grad_h_f[j] += model.w_s[c][j] * grad_logits[c];
        }
    }

    // Carries into the h/c states produced at step t+1, initialized with the
    // h_f contributions at the final step.
    let mut carry = [
        (grad_h_f[..hidden].to_vec(), vec![0.0; hidden]), // p1
        (grad_h_f[hidden..2 * hidden].to_vec(), vec![0.0; hidden]), // p2
        (grad_h_f[2 * hidden..3 * hidden].to_vec(), vec![0.0; hidden]), // q1
        (grad_h_f[3 * hidden..].to_vec(), vec![0.0; hidden]), // q2
    ];

    for t in (0..seq_len).rev() {
        // Layer 2 first: its input at step t is the layer-1 state h[t+1].
        let p2_back = lstm_backward_step(&model.p2, &mut grads.p2, &trace.p2, t, &carry[1].0, &carry[1].1);
        let q2_back = lstm_backward_step(&model.q2, &mut grads.q2, &trace.q2, t, &carry[3].0, &carry[3].1);
        carry[1] = (p2_back.gh_prev, p2_back.gc_prev);
        carry[3] = (q2_back.gh_prev, q2_back.gc_prev);

        let mut gh_p1 = carry[0].0.clone();
        let mut gh_q1 = carry[2].0.clone();
        for k in 0..hidden {
            gh_p1[k] += p2_back.gx[k];
            gh_q1[k] += q2_back.gx[k];
        }

        let p1_back = lstm_backward_step(&model.p1, &mut grads.p1, &trace.p1, t, &gh_p1, &carry[0].1);
        let q1_back = lstm_backward_step(&model.q1, &mut grads.q1, &trace.q1, t, &gh_q1, &carry[2].1);

        // Attention at frame t: scores from [h_p1[t]; h_q1[t]].
        let l = &trace.attn[t];
        let mut grad_l = vec![0.0; regions];
        let dim = frames_p[t][0].len();
        for i in 0..regions {
            for d in 0..dim {
                grad_l[i] += frames_p[t][i][d] * p1_back.gx[d];
                grad_l[i] += frames_q[t][i][d] * q1_back.gx[d];
            }
        }
        let inner: f64 = l.iter().zip(&grad_l).map(|(a, b)| a * b).sum();
        let grad_z: Vec<f64> = l
            .iter()
            .zip(&grad_l)
            .map(|(&li, &gi)| li * (gi - inner))
            .collect();

        let mut concat = trace.p1.h[t].clone();
        concat.extend_from_slice(&trace.q1.h[t]);
        let mut grad_concat = vec![0.0; 2 * hidden];
        for i in 0..regions {
            for j in 0..2 * hidden {
                grads.w_attn[i][j] += grad_z[i] * concat[j];
                grad_concat[j] += model.w_attn[i][j] * grad_z[i];
            }
        }

        let mut next_p1 = p1_back.gh_prev;
        let mut next_q1 = q1_back.gh_prev;
        for k in 0..hidden {
            next_p1[k] += grad_concat[k];
            next_q1[k] += grad_concat[hidden + k];
        }
        carry[0] = (next_p1, p1_back.gc_prev);
        carry[2] = (next_q1, q1_back.gc_prev);
    }

    grads
}

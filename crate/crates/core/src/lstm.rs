//! LSTM cell: forward step and its analytic adjoint.
//!
//! The cell computes, per step,
//!
//! ```text
//! i = sigmoid(W_ix x + W_ih h_prev + b_i)
//! f = sigmoid(W_fx x + W_fh h_prev + b_f)
//! o = sigmoid(W_ox x + W_oh h_prev + b_o)
//! g = tanh  (W_gx x + W_gh h_prev + b_g)
//! c = f .* c_prev + i .* g
//! h = o .* tanh(c)
//! ```

use crate::error::{Error, Result};
use crate::numerics::{add_assign, sigmoid, Matrix, Rng};

/// Weights of one LSTM cell: an input and a recurrent matrix plus a bias per
/// gate. Also used as the gradient container, since gradients mirror the
/// parameter shapes exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w_ix: Matrix,
    pub w_fx: Matrix,
    pub w_ox: Matrix,
    pub w_gx: Matrix,
    pub w_ih: Matrix,
    pub w_fh: Matrix,
    pub w_oh: Matrix,
    pub w_gh: Matrix,
    pub b_i: Vec<f64>,
    pub b_f: Vec<f64>,
    pub b_o: Vec<f64>,
    pub b_g: Vec<f64>,
}

/// Hidden and cell state. `h` stays in (-1, 1) after a forward step since
/// `h = o .* tanh(c)` with `o` in (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

/// Gate values cached by the forward step for the backward step.
/// `i`, `f`, `o` lie in (0, 1); `g` in (-1, 1).
#[derive(Debug, Clone)]
pub struct GateActivations {
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub o: Vec<f64>,
    pub g: Vec<f64>,
}

/// Gradients flowing out of a backward step, split by destination.
#[derive(Debug, Clone)]
pub struct LstmStepGrads {
    pub params: LstmParams,
    pub prev_state: LstmState,
    pub x: Vec<f64>,
}

impl LstmParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        LstmParams {
            w_ix: Matrix::zeros(hidden, input),
            w_fx: Matrix::zeros(hidden, input),
            w_ox: Matrix::zeros(hidden, input),
            w_gx: Matrix::zeros(hidden, input),
            w_ih: Matrix::zeros(hidden, hidden),
            w_fh: Matrix::zeros(hidden, hidden),
            w_oh: Matrix::zeros(hidden, hidden),
            w_gh: Matrix::zeros(hidden, hidden),
            b_i: vec![0.0; hidden],
            b_f: vec![0.0; hidden],
            b_o: vec![0.0; hidden],
            b_g: vec![0.0; hidden],
        }
    }

    /// Scaled-uniform initialization: matrices drawn from
    /// `+-sqrt(6 / (fan_in + fan_out))`, biases zero. Keeps gates
    /// unsaturated at the start of training.
    pub fn init(hidden: usize, input: usize, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(hidden, input);
        let lim_x = (6.0 / (input + hidden) as f64).sqrt();
        let lim_h = (6.0 / (hidden + hidden) as f64).sqrt();
        p.w_ix.fill_uniform(rng, lim_x);
        p.w_fx.fill_uniform(rng, lim_x);
        p.w_ox.fill_uniform(rng, lim_x);
        p.w_gx.fill_uniform(rng, lim_x);
        p.w_ih.fill_uniform(rng, lim_h);
        p.w_fh.fill_uniform(rng, lim_h);
        p.w_oh.fill_uniform(rng, lim_h);
        p.w_gh.fill_uniform(rng, lim_h);
        p
    }

    pub fn hidden_size(&self) -> usize {
        self.w_ix.rows()
    }

    pub fn input_size(&self) -> usize {
        self.w_ix.cols()
    }

    /// Visits every tensor in the fixed serialization order.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'static str, &'a [f64])) {
        f("w_ix", self.w_ix.as_slice());
        f("w_fx", self.w_fx.as_slice());
        f("w_ox", self.w_ox.as_slice());
        f("w_gx", self.w_gx.as_slice());
        f("w_ih", self.w_ih.as_slice());
        f("w_fh", self.w_fh.as_slice());
        f("w_oh", self.w_oh.as_slice());
        f("w_gh", self.w_gh.as_slice());
        f("b_i", &self.b_i);
        f("b_f", &self.b_f);
        f("b_o", &self.b_o);
        f("b_g", &self.b_g);
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&'static str, &mut [f64])) {
        f("w_ix", self.w_ix.as_mut_slice());
        f("w_fx", self.w_fx.as_mut_slice());
        f("w_ox", self.w_ox.as_mut_slice());
        f("w_gx", self.w_gx.as_mut_slice());
        f("w_ih", self.w_ih.as_mut_slice());
        f("w_fh", self.w_fh.as_mut_slice());
        f("w_oh", self.w_oh.as_mut_slice());
        f("w_gh", self.w_gh.as_mut_slice());
        f("b_i", &mut self.b_i);
        f("b_f", &mut self.b_f);
        f("b_o", &mut self.b_o);
        f("b_g", &mut self.b_g);
    }
}

fn check_finite(name: &str, v: &[f64]) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            tensor: name.to_string(),
        });
    }
    Ok(())
}

fn check_shapes(params: &LstmParams, prev: &LstmState, x: &[f64]) -> Result<()> {
    let h = params.hidden_size();
    let d = params.input_size();
    if x.len() != d || prev.h.len() != h || prev.c.len() != h {
        return Err(Error::Dimension {
            op: "lstm_step",
            expected: format!("x of {d}, state of {h}"),
            got: format!("x of {}, h of {}, c of {}", x.len(), prev.h.len(), prev.c.len()),
        });
    }
    Ok(())
}

/// One forward step. Returns the new state and the gate activations needed
/// by [`lstm_step_backward`].
pub fn lstm_step(
    params: &LstmParams,
    prev: &LstmState,
    x: &[f64],
) -> Result<(LstmState, GateActivations)> {
    check_shapes(params, prev, x)?;
    check_finite("x", x)?;
    check_finite("h_prev", &prev.h)?;
    check_finite("c_prev", &prev.c)?;

    let hidden = params.hidden_size();
    let gate = |wx: &Matrix, wh: &Matrix, b: &[f64]| -> Result<Vec<f64>> {
        let mut pre = wx.matvec(x)?;
        add_assign(&mut pre, &wh.matvec(&prev.h)?);
        add_assign(&mut pre, b);
        Ok(pre)
    };

    let mut i = gate(&params.w_ix, &params.w_ih, &params.b_i)?;
    let mut f = gate(&params.w_fx, &params.w_fh, &params.b_f)?;
    let mut o = gate(&params.w_ox, &params.w_oh, &params.b_o)?;
    let mut g = gate(&params.w_gx, &params.w_gh, &params.b_g)?;
    for k in 0..hidden {
        i[k] = sigmoid(i[k]);
        f[k] = sigmoid(f[k]);
        o[k] = sigmoid(o[k]);
        g[k] = g[k].tanh();
    }

    let mut c = vec![0.0; hidden];
    let mut h = vec![0.0; hidden];
    for k in 0..hidden {
        c[k] = f[k] * prev.c[k] + i[k] * g[k];
        h[k] = o[k] * c[k].tanh();
    }

    Ok((LstmState { h, c }, GateActivations { i, f, o, g }))
}

/// Exact reverse-mode derivatives of one step with respect to the
/// parameters, the previous state and the input. `grad_h` / `grad_c` are the
/// upstream gradients on the step's outputs; `gates` must come from the
/// matching forward call.
pub fn lstm_step_backward(
    params: &LstmParams,
    prev: &LstmState,
    x: &[f64],
    gates: &GateActivations,
    grad_h: &[f64],
    grad_c: &[f64],
) -> Result<LstmStepGrads> {
    check_shapes(params, prev, x)?;
    let hidden = params.hidden_size();
    if grad_h.len() != hidden || grad_c.len() != hidden || gates.i.len() != hidden {
        return Err(Error::Dimension {
            op: "lstm_step_backward",
            expected: format!("gradients and gates of {hidden}"),
            got: format!(
                "grad_h of {}, grad_c of {}, gates of {}",
                grad_h.len(),
                grad_c.len(),
                gates.i.len()
            ),
        });
    }

    // Recompute c_t from the cached gates; cheaper than caching it.
    let mut d_pre_i = vec![0.0; hidden];
    let mut d_pre_f = vec![0.0; hidden];
    let mut d_pre_o = vec![0.0; hidden];
    let mut d_pre_g = vec![0.0; hidden];
    let mut grad_c_prev = vec![0.0; hidden];
    for k in 0..hidden {
        let (i, f, o, g) = (gates.i[k], gates.f[k], gates.o[k], gates.g[k]);
        let c = f * prev.c[k] + i * g;
        let tc = c.tanh();
        let dc = grad_c[k] + grad_h[k] * o * (1.0 - tc * tc);
        d_pre_o[k] = grad_h[k] * tc * o * (1.0 - o);
        d_pre_f[k] = dc * prev.c[k] * f * (1.0 - f);
        d_pre_i[k] = dc * g * i * (1.0 - i);
        d_pre_g[k] = dc * i * (1.0 - g * g);
        grad_c_prev[k] = dc * f;
    }

    let mut gp = LstmParams::zeros(hidden, params.input_size());
    gp.w_ix.add_outer(&d_pre_i, x)?;
    gp.w_fx.add_outer(&d_pre_f, x)?;
    gp.w_ox.add_outer(&d_pre_o, x)?;
    gp.w_gx.add_outer(&d_pre_g, x)?;
    gp.w_ih.add_outer(&d_pre_i, &prev.h)?;
    gp.w_fh.add_outer(&d_pre_f, &prev.h)?;
    gp.w_oh.add_outer(&d_pre_o, &prev.h)?;
    gp.w_gh.add_outer(&d_pre_g, &prev.h)?;
    gp.b_i.copy_from_slice(&d_pre_i);
    gp.b_f.copy_from_slice(&d_pre_f);
    gp.b_o.copy_from_slice(&d_pre_o);
    gp.b_g.copy_from_slice(&d_pre_g);

    let mut grad_x = params.w_ix.matvec_t(&d_pre_i)?;
    add_assign(&mut grad_x, &params.w_fx.matvec_t(&d_pre_f)?);
    add_assign(&mut grad_x, &params.w_ox.matvec_t(&d_pre_o)?);
    add_assign(&mut grad_x, &params.w_gx.matvec_t(&d_pre_g)?);

    let mut grad_h_prev = params.w_ih.matvec_t(&d_pre_i)?;
    add_assign(&mut grad_h_prev, &params.w_fh.matvec_t(&d_pre_f)?);
    add_assign(&mut grad_h_prev, &params.w_oh.matvec_t(&d_pre_o)?);
    add_assign(&mut grad_h_prev, &params.w_gh.matvec_t(&d_pre_g)?);

    Ok(LstmStepGrads {
        params: gp,
        prev_state: LstmState {
            h: grad_h_prev,
            c: grad_c_prev,
        },
        x: grad_x,
    })
}

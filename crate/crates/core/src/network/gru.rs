//! Gated recurrent units, one direction at a time, and the bidirectional
//! wrapper. No gate biases.

use serde::{Deserialize, Serialize};

use crate::tensor::{sigmoid, Matrix, Real};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruDirection<T> {
    /// `H × I`
    pub w_z: Matrix<T>,
    pub w_r: Matrix<T>,
    pub w_h: Matrix<T>,
    /// `H × H`
    pub u_z: Matrix<T>,
    pub u_r: Matrix<T>,
    pub u_h: Matrix<T>,
}

impl<T: Real> GruDirection<T> {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_z: Matrix::zeros(hidden, input),
            w_r: Matrix::zeros(hidden, input),
            w_h: Matrix::zeros(hidden, input),
            u_z: Matrix::zeros(hidden, hidden),
            u_r: Matrix::zeros(hidden, hidden),
            u_h: Matrix::zeros(hidden, hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_z.rows()
    }

    pub fn input(&self) -> usize {
        self.w_z.cols()
    }

    pub fn tensors(&self) -> [(&'static str, &Matrix<T>); 6] {
        [
            ("w_z", &self.w_z),
            ("w_r", &self.w_r),
            ("w_h", &self.w_h),
            ("u_z", &self.u_z),
            ("u_r", &self.u_r),
            ("u_h", &self.u_h),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Matrix<T>); 6] {
        [
            ("w_z", &mut self.w_z),
            ("w_r", &mut self.w_r),
            ("w_h", &mut self.w_h),
            ("u_z", &mut self.u_z),
            ("u_r", &mut self.u_r),
            ("u_h", &mut self.u_h),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruParameters<T> {
    pub forward: GruDirection<T>,
    pub backward: GruDirection<T>,
}

impl<T: Real> GruParameters<T> {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            forward: GruDirection::zeros(input, hidden),
            backward: GruDirection::zeros(input, hidden),
        }
    }
}

/// Intermediate values of one update.
#[derive(Clone, Debug)]
pub struct GruStep<T> {
    pub h_prev: Vec<T>,
    pub z: Vec<T>,
    pub r: Vec<T>,
    pub candidate: Vec<T>,
    pub h: Vec<T>,
}

pub fn gru_step_cached<T: Real>(x: &[T], h_prev: &[T], p: &GruDirection<T>) -> GruStep<T> {
    let hsz = p.hidden();
    let mut z = vec![T::zero(); hsz];
    let mut r = vec![T::zero(); hsz];
    let mut a = vec![T::zero(); hsz];

    p.w_z.matvec(x, &mut z);
    p.u_z.matvec_acc(h_prev, &mut z);
    z.iter_mut().for_each(|v| *v = sigmoid(*v));

    p.w_r.matvec(x, &mut r);
    p.u_r.matvec_acc(h_prev, &mut r);
    r.iter_mut().for_each(|v| *v = sigmoid(*v));

    let gated: Vec<T> = r.iter().zip(h_prev).map(|(&ri, &hi)| ri * hi).collect();
    p.w_h.matvec(x, &mut a);
    p.u_h.matvec_acc(&gated, &mut a);
    let candidate: Vec<T> = a.iter().map(|v| v.tanh()).collect();

    let h = (0..hsz)
        .map(|i| (T::one() - z[i]) * h_prev[i] + z[i] * candidate[i])
        .collect();
    GruStep {
        h_prev: h_prev.to_vec(),
        z,
        r,
        candidate,
        h,
    }
}

/// `h_t` from `x_t` and `h_{t-1}`.
pub fn gru_step<T: Real>(x: &[T], h_prev: &[T], p: &GruDirection<T>) -> Vec<T> {
    gru_step_cached(x, h_prev, p).h
}

/// Backpropagates `d_h` through one update. Accumulates weight gradients into
/// `grad` and the input gradient into `d_x`; returns the gradient on `h_{t-1}`.
pub fn gru_step_backward<T: Real>(
    x: &[T],
    step: &GruStep<T>,
    p: &GruDirection<T>,
    d_h: &[T],
    grad: &mut GruDirection<T>,
    d_x: &mut [T],
) -> Vec<T> {
    let hsz = p.hidden();
    let one = T::one();
    let mut d_prev: Vec<T> = (0..hsz).map(|i| d_h[i] * (one - step.z[i])).collect();

    let d_az: Vec<T> = (0..hsz)
        .map(|i| d_h[i] * (step.candidate[i] - step.h_prev[i]) * step.z[i] * (one - step.z[i]))
        .collect();
    let d_ah: Vec<T> = (0..hsz)
        .map(|i| d_h[i] * step.z[i] * (one - step.candidate[i] * step.candidate[i]))
        .collect();

    let gated: Vec<T> = (0..hsz).map(|i| step.r[i] * step.h_prev[i]).collect();
    grad.w_h.add_outer(&d_ah, x);
    grad.u_h.add_outer(&d_ah, &gated);
    p.w_h.matvec_t_acc(&d_ah, d_x);
    let mut d_gated = vec![T::zero(); hsz];
    p.u_h.matvec_t_acc(&d_ah, &mut d_gated);

    let d_ar: Vec<T> = (0..hsz)
        .map(|i| d_gated[i] * step.h_prev[i] * step.r[i] * (one - step.r[i]))
        .collect();
    for i in 0..hsz {
        d_prev[i] += d_gated[i] * step.r[i];
    }

    grad.w_r.add_outer(&d_ar, x);
    grad.u_r.add_outer(&d_ar, &step.h_prev);
    p.w_r.matvec_t_acc(&d_ar, d_x);
    p.u_r.matvec_t_acc(&d_ar, &mut d_prev);

    grad.w_z.add_outer(&d_az, x);
    grad.u_z.add_outer(&d_az, &step.h_prev);
    p.w_z.matvec_t_acc(&d_az, d_x);
    p.u_z.matvec_t_acc(&d_az, &mut d_prev);

    d_prev
}

/// One direction run over a masked sequence. Masked steps carry the previous
/// state unchanged.
#[derive(Clone, Debug)]
pub struct DirectionTrace<T> {
    pub reverse: bool,
    /// Indexed by time; `None` at masked steps.
    pub steps: Vec<Option<GruStep<T>>>,
    /// State after processing time `t`, indexed by time.
    pub states: Vec<Vec<T>>,
    pub final_state: Vec<T>,
}

fn order(len: usize, reverse: bool) -> Box<dyn Iterator<Item = usize>> {
    if reverse {
        Box::new((0..len).rev())
    } else {
        Box::new(0..len)
    }
}

pub fn run_direction<T: Real>(seq: &[Vec<T>], mask: &[bool], p: &GruDirection<T>, reverse: bool) -> DirectionTrace<T> {
    assert_eq!(seq.len(), mask.len(), "mask length must match sequence length");
    let mut h = vec![T::zero(); p.hidden()];
    let mut steps: Vec<Option<GruStep<T>>> = vec![None; seq.len()];
    let mut states = vec![Vec::new(); seq.len()];
    for t in order(seq.len(), reverse) {
        if mask[t] {
            let step = gru_step_cached(&seq[t], &h, p);
            h = step.h.clone();
            steps[t] = Some(step);
        }
        states[t] = h.clone();
    }
    DirectionTrace {
        reverse,
        steps,
        states,
        final_state: h,
    }
}

/// Backpropagation through time for one direction. `d_states[t]` is the
/// gradient on the state emitted at time `t` (empty vector for none) and
/// `d_final` the gradient on the final state.
pub fn direction_backward<T: Real>(
    seq: &[Vec<T>],
    trace: &DirectionTrace<T>,
    p: &GruDirection<T>,
    d_states: &[Vec<T>],
    d_final: &[T],
    grad: &mut GruDirection<T>,
    d_seq: &mut [Vec<T>],
) {
    let mut d_h = d_final.to_vec();
    let processing: Vec<usize> = order(seq.len(), trace.reverse).collect();
    for &t in processing.iter().rev() {
        if let Some(extra) = d_states.get(t).filter(|v| !v.is_empty()) {
            for (a, &b) in d_h.iter_mut().zip(extra) {
                *a += b;
            }
        }
        if let Some(step) = &trace.steps[t] {
            d_h = gru_step_backward(&seq[t], step, p, &d_h, grad, &mut d_seq[t]);
        }
    }
}

#[derive(Clone, Debug)]
pub struct BiGruOutput<T> {
    /// `[→h_t, ←h_t]` per time step.
    pub outputs: Vec<Vec<T>>,
    /// `[→h at the last real step, ←h at the first real step]`.
    pub final_state: Vec<T>,
}

pub fn bigru_forward<T: Real>(seq: &[Vec<T>], p: &GruParameters<T>, mask: &[bool]) -> BiGruOutput<T> {
    let fwd = run_direction(seq, mask, &p.forward, false);
    let bwd = run_direction(seq, mask, &p.backward, true);
    let outputs = fwd
        .states
        .iter()
        .zip(&bwd.states)
        .map(|(f, b)| f.iter().chain(b).copied().collect())
        .collect();
    let final_state = fwd.final_state.iter().chain(&bwd.final_state).copied().collect();
    BiGruOutput { outputs, final_state }
}

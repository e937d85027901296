//! Dense and LSTM layers with explicit backward passes.
//!
//! Recurrent layers process a batch of independent sequences step by step;
//! each step's input is a `[batch, features]` matrix.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

fn uniform<R: Rng + ?Sized>(rng: &mut R, shape: (usize, usize), bound: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.random_range(-bound..=bound))
}

/// `y = x W + b` with `W` stored as `[in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Linear {
            weight: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        Linear {
            weight: uniform(rng, (inputs, outputs), bound),
            bias: Array1::from_shape_simple_fn(outputs, || rng.random_range(-bound..=bound)),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight);
        y += &self.bias;
        y
    }

    /// Accumulates parameter gradients into `grad`; returns `dL/dx`.
    pub fn backward(&self, x: &ArrayView2<f64>, gy: &ArrayView2<f64>, grad: &mut Linear) -> Array2<f64> {
        self.backward_params(x, gy, grad);
        gy.dot(&self.weight.t())
    }

    pub fn backward_params(&self, x: &ArrayView2<f64>, gy: &ArrayView2<f64>, grad: &mut Linear) {
        general_mat_mul(1.0, &x.t(), gy, 1.0, &mut grad.weight);
        grad.bias += &gy.sum_axis(Axis(0));
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Single-layer LSTM; gate blocks are ordered input, forget, cell, output.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub w_input: Array2<f64>,
    pub w_hidden: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone)]
struct LstmStep {
    x: Array2<f64>,
    h_prev: Array2<f64>,
    c_prev: Array2<f64>,
    /// Activated gates `[batch, 4H]`.
    gates: Array2<f64>,
    tanh_c: Array2<f64>,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct LstmTrace {
    steps: Vec<LstmStep>,
}

impl Lstm {
    pub fn zeros(inputs: usize, hidden: usize) -> Self {
        Lstm {
            w_input: Array2::zeros((inputs, 4 * hidden)),
            w_hidden: Array2::zeros((hidden, 4 * hidden)),
            bias: Array1::zeros(4 * hidden),
        }
    }

    pub fn init<R: Rng + ?Sized>(inputs: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Lstm {
            w_input: uniform(rng, (inputs, 4 * hidden), bound),
            w_hidden: uniform(rng, (hidden, 4 * hidden), bound),
            bias: Array1::from_shape_simple_fn(4 * hidden, || rng.random_range(-bound..=bound)),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hidden.nrows()
    }

    /// Runs the sequence `xs` from initial states `h0`, `c0` (`[batch, H]`).
    pub fn forward(&self, xs: Vec<Array2<f64>>, h0: Array2<f64>, c0: Array2<f64>) -> (Vec<Array2<f64>>, LstmTrace) {
        let hid = self.hidden();
        let mut h = h0;
        let mut c = c0;
        let mut outputs = Vec::with_capacity(xs.len());
        let mut steps = Vec::with_capacity(xs.len());
        for x in xs {
            let mut z = x.dot(&self.w_input);
            general_mat_mul(1.0, &h, &self.w_hidden, 1.0, &mut z);
            z += &self.bias;
            for mut row in z.rows_mut() {
                let r = row.as_slice_mut().expect("standard layout");
                for v in &mut r[..2 * hid] {
                    *v = sigmoid(*v);
                }
                for v in &mut r[2 * hid..3 * hid] {
                    *v = v.tanh();
                }
                for v in &mut r[3 * hid..] {
                    *v = sigmoid(*v);
                }
            }
            let mut c_new = Array2::zeros(c.raw_dim());
            let mut tanh_c = Array2::zeros(c.raw_dim());
            let mut h_new = Array2::zeros(c.raw_dim());
            for (b, gates) in z.rows().into_iter().enumerate() {
                let g = gates.as_slice().expect("standard layout");
                for j in 0..hid {
                    let cn = g[hid + j] * c[[b, j]] + g[j] * g[2 * hid + j];
                    let tc = cn.tanh();
                    c_new[[b, j]] = cn;
                    tanh_c[[b, j]] = tc;
                    h_new[[b, j]] = g[3 * hid + j] * tc;
                }
            }
            let h_prev = std::mem::replace(&mut h, h_new);
            let c_prev = std::mem::replace(&mut c, c_new);
            outputs.push(h.clone());
            steps.push(LstmStep {
                x,
                h_prev,
                c_prev,
                gates: z,
                tanh_c,
            });
        }
        (outputs, LstmTrace { steps })
    }

    /// Backpropagation through time. `grad_hs[s]` is the loss gradient with
    /// respect to output `s`. Returns input gradients per step plus the
    /// gradients of the initial hidden and cell states.
    pub fn backward(
        &self,
        trace: &LstmTrace,
        grad_hs: &[Array2<f64>],
        grad: &mut Lstm,
    ) -> (Vec<Array2<f64>>, Array2<f64>, Array2<f64>) {
        let hid = self.hidden();
        let n_steps = trace.steps.len();
        let batch = trace.steps.first().map_or(0, |s| s.x.nrows());
        let mut dh_next = Array2::<f64>::zeros((batch, hid));
        let mut dc_next = Array2::<f64>::zeros((batch, hid));
        let mut grad_xs = vec![Array2::zeros((0, 0)); n_steps];
        for s in (0..n_steps).rev() {
            let step = &trace.steps[s];
            let mut dz = Array2::<f64>::zeros((batch, 4 * hid));
            let mut dc_prev = Array2::<f64>::zeros((batch, hid));
            for b in 0..batch {
                let g = step.gates.row(b);
                let g = g.as_slice().expect("standard layout");
                let mut dzr = dz.row_mut(b);
                let dzr = dzr.as_slice_mut().expect("standard layout");
                for j in 0..hid {
                    let (i, f, gg, o) = (g[j], g[hid + j], g[2 * hid + j], g[3 * hid + j]);
                    let tc = step.tanh_c[[b, j]];
                    let dh = grad_hs[s][[b, j]] + dh_next[[b, j]];
                    let dc = dc_next[[b, j]] + dh * o * (1.0 - tc * tc);
                    dzr[j] = dc * gg * i * (1.0 - i);
                    dzr[hid + j] = dc * step.c_prev[[b, j]] * f * (1.0 - f);
                    dzr[2 * hid + j] = dc * i * (1.0 - gg * gg);
                    dzr[3 * hid + j] = dh * tc * o * (1.0 - o);
                    dc_prev[[b, j]] = dc * f;
                }
            }
            general_mat_mul(1.0, &step.x.t(), &dz, 1.0, &mut grad.w_input);
            general_mat_mul(1.0, &step.h_prev.t(), &dz, 1.0, &mut grad.w_hidden);
            grad.bias += &dz.sum_axis(Axis(0));
            grad_xs[s] = dz.dot(&self.w_input.t());
            dh_next = dz.dot(&self.w_hidden.t());
            dc_next = dc_prev;
        }
        (grad_xs, dh_next, dc_next)
    }
}

/// A recurrent slot: a real LSTM, or a per-step dense map with no
/// recurrence (which makes the whole network linear in its input).
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Lstm(Lstm),
    Dense(Linear),
}

#[derive(Debug, Clone)]
pub enum CellTrace {
    Lstm(LstmTrace),
    Dense(Vec<Array2<f64>>),
}

impl Cell {
    pub fn hidden(&self) -> usize {
        match self {
            Cell::Lstm(l) => l.hidden(),
            Cell::Dense(d) => d.outputs(),
        }
    }

    pub fn zeros_like(&self) -> Cell {
        match self {
            Cell::Lstm(l) => Cell::Lstm(Lstm::zeros(l.w_input.nrows(), l.hidden())),
            Cell::Dense(d) => Cell::Dense(Linear::zeros(d.inputs(), d.outputs())),
        }
    }

    /// `h0` is ignored by dense cells.
    pub fn forward(&self, xs: Vec<Array2<f64>>, h0: Option<Array2<f64>>) -> (Vec<Array2<f64>>, CellTrace) {
        match self {
            Cell::Lstm(l) => {
                let batch = xs.first().map_or(0, |x| x.nrows());
                let h0 = h0.unwrap_or_else(|| Array2::zeros((batch, l.hidden())));
                let c0 = Array2::zeros((batch, l.hidden()));
                let (hs, tr) = l.forward(xs, h0, c0);
                (hs, CellTrace::Lstm(tr))
            }
            Cell::Dense(d) => {
                let hs = xs.iter().map(|x| d.forward(&x.view())).collect();
                (hs, CellTrace::Dense(xs))
            }
        }
    }

    /// Returns per-step input gradients and the initial-hidden-state
    /// gradient (zero for dense cells).
    pub fn backward(&self, trace: &CellTrace, grad_hs: &[Array2<f64>], grad: &mut Cell) -> (Vec<Array2<f64>>, Array2<f64>) {
        match (self, trace, grad) {
            (Cell::Lstm(l), CellTrace::Lstm(tr), Cell::Lstm(g)) => {
                let (gx, gh0, _) = l.backward(tr, grad_hs, g);
                (gx, gh0)
            }
            (Cell::Dense(d), CellTrace::Dense(xs), Cell::Dense(g)) => {
                let gx = xs
                    .iter()
                    .zip(grad_hs)
                    .map(|(x, gy)| d.backward(&x.view(), &gy.view(), g))
                    .collect();
                let batch = xs.first().map_or(0, |x| x.nrows());
                (gx, Array2::zeros((batch, d.outputs())))
            }
            _ => panic!("cell, trace and gradient kinds differ"),
        }
    }
}

/// Gathers column block `[from, from + width)` of each step output.
pub(crate) fn split_columns(x: &Array2<f64>, from: usize, width: usize) -> Array2<f64> {
    x.slice(s![.., from..from + width]).to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    // sum of all outputs weighted by fixed random coefficients
    fn probe_loss(l: &Lstm, xs: &[Array2<f64>], h0: &Array2<f64>, c0: &Array2<f64>, w: &[Array2<f64>]) -> f64 {
        let (hs, _) = l.forward(xs.to_vec(), h0.clone(), c0.clone());
        hs.iter().zip(w).map(|(h, w)| (h * w).sum()).sum()
    }

    #[test]
    fn lstm_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (batch, inp, hid, steps) = (3, 4, 5, 6);
        let lstm = Lstm::init(inp, hid, &mut rng);
        let xs: Vec<_> = (0..steps).map(|_| uniform(&mut rng, (batch, inp), 1.0)).collect();
        let h0 = uniform(&mut rng, (batch, hid), 0.5);
        let c0 = uniform(&mut rng, (batch, hid), 0.5);
        let w: Vec<_> = (0..steps).map(|_| uniform(&mut rng, (batch, hid), 1.0)).collect();

        let (_, trace) = lstm.forward(xs.clone(), h0.clone(), c0.clone());
        let mut grad = Lstm::zeros(inp, hid);
        let (gx, gh0, gc0) = lstm.backward(&trace, &w, &mut grad);

        let h = 1e-6;
        let fd = |f: &dyn Fn(f64) -> f64| (f(h) - f(-h)) / (2.0 * h);
        for &(r, c) in &[(0, 0), (2, 7), (3, 19)] {
            let num = fd(&|d| {
                let mut l = lstm.clone();
                l.w_input[[r, c]] += d;
                probe_loss(&l, &xs, &h0, &c0, &w)
            });
            assert!((num - grad.w_input[[r, c]]).abs() < 1e-7);
        }
        for &(r, c) in &[(1, 3), (4, 18)] {
            let num = fd(&|d| {
                let mut l = lstm.clone();
                l.w_hidden[[r, c]] += d;
                probe_loss(&l, &xs, &h0, &c0, &w)
            });
            assert!((num - grad.w_hidden[[r, c]]).abs() < 1e-7);
        }
        let num = fd(&|d| {
            let mut l = lstm.clone();
            l.bias[11] += d;
            probe_loss(&l, &xs, &h0, &c0, &w)
        });
        assert!((num - grad.bias[11]).abs() < 1e-7);
        let num = fd(&|d| {
            let mut x2 = xs.clone();
            x2[2][[1, 3]] += d;
            probe_loss(&lstm, &x2, &h0, &c0, &w)
        });
        assert!((num - gx[2][[1, 3]]).abs() < 1e-7);
        let num = fd(&|d| {
            let mut h = h0.clone();
            h[[2, 4]] += d;
            probe_loss(&lstm, &xs, &h, &c0, &w)
        });
        assert!((num - gh0[[2, 4]]).abs() < 1e-7);
        let num = fd(&|d| {
            let mut c = c0.clone();
            c[[0, 1]] += d;
            probe_loss(&lstm, &xs, &h0, &c, &w)
        });
        assert!((num - gc0[[0, 1]]).abs() < 1e-7);
    }

    #[test]
    fn linear_backward_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let lin = Linear::init(3, 2, &mut rng);
        let x = uniform(&mut rng, (4, 3), 1.0);
        let gy = uniform(&mut rng, (4, 2), 1.0);
        let mut g = Linear::zeros(3, 2);
        let gx = lin.backward(&x.view(), &gy.view(), &mut g);
        assert_eq!(gx.dim(), (4, 3));
        let expected_w = x.t().dot(&gy);
        assert!((&g.weight - &expected_w).iter().all(|v| v.abs() < 1e-14));
        assert!((&g.bias - &gy.sum_axis(Axis(0))).iter().all(|v| v.abs() < 1e-14));
    }
}

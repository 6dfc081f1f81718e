use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::params::{LayoutBuilder, ParamSlice, ParamVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => tanh(x),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation's output.
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Architecture descriptor: dense torso, optional GRU, linear output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Hidden size of a GRU placed after the torso.
    pub gru: Option<usize>,
    pub outputs: usize,
    /// Init gain of the output layer.
    pub output_gain: f64,
}

#[derive(Debug, Clone)]
struct Dense {
    input: usize,
    output: usize,
    w: usize,
    b: usize,
}

impl Dense {
    fn forward(&self, p: &[f64], x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        let w = &p[self.w..self.w + self.input * self.output];
        let b = &p[self.b..self.b + self.output];
        out.extend(w.chunks_exact(self.input).zip(b).map(|(row, bi)| bi + dot(row, x)));
    }

    /// Accumulates parameter gradients; writes the input gradient when requested.
    fn backward(&self, p: &[f64], x: &[f64], dy: &[f64], grad: &mut [f64], dx: Option<&mut Vec<f64>>) {
        let gw = &mut grad[self.w..self.w + self.input * self.output];
        for (row, &d) in gw.chunks_exact_mut(self.input).zip(dy) {
            if d != 0.0 {
                axpy(d, x, row);
            }
        }
        for (gb, &d) in grad[self.b..self.b + self.output].iter_mut().zip(dy) {
            *gb += d;
        }
        if let Some(dx) = dx {
            dx.clear();
            dx.resize(self.input, 0.0);
            let w = &p[self.w..self.w + self.input * self.output];
            for (row, &d) in w.chunks_exact(self.input).zip(dy) {
                if d != 0.0 {
                    axpy(d, row, dx);
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Gru {
    hidden: usize,
    w_ih: Dense,
    w_hh: Dense,
}

/// Cached intermediates of one GRU step.
#[derive(Debug, Clone)]
struct GruCache {
    h_prev: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    /// `W_hn h_prev + b_hn`.
    hn: Vec<f64>,
    h: Vec<f64>,
}

#[derive(Debug, Clone)]
struct StepCache {
    input: Vec<f64>,
    acts: Vec<Vec<f64>>,
    gru: Option<GruCache>,
    output: Vec<f64>,
}

/// Activations recorded by [`Network::forward_seq`], consumed by [`Network::backward_seq`].
#[derive(Debug, Clone, Default)]
pub struct Trace {
    steps: Vec<StepCache>,
    reset_before: Vec<bool>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn output(&self, t: usize) -> &[f64] {
        &self.steps[t].output
    }

    pub fn outputs(&self) -> impl Iterator<Item = &[f64]> {
        self.steps.iter().map(|s| s.output.as_slice())
    }

    /// Recurrent state entering step `t`.
    pub fn hidden_before(&self, t: usize) -> Option<&[f64]> {
        self.steps[t].gru.as_ref().map(|g| g.h_prev.as_slice())
    }

    pub fn final_hidden(&self) -> Option<&[f64]> {
        self.steps.last()?.gru.as_ref().map(|g| g.h.as_slice())
    }
}

/// Fixed-architecture network over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Network {
    spec: NetSpec,
    layout: Vec<ParamSlice>,
    torso: Vec<Dense>,
    gru: Option<Gru>,
    head: Dense,
    n_params: usize,
}

/// Eight independent partial sums so the loop vectorizes; the summation
/// order is fixed, so results are deterministic.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `tanh` through one `exp`; about 3× cheaper than libm's and within a few
/// ulps in absolute terms.
fn tanh(x: f64) -> f64 {
    1.0 - 2.0 / (1.0 + (2.0 * x).exp())
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Network {
    pub fn new(spec: NetSpec) -> Self {
        let mut b = LayoutBuilder::default();
        let dense = |b: &mut LayoutBuilder, name: &str, input: usize, output: usize| Dense {
            input,
            output,
            w: b.add(format!("{name}.weight"), &[output, input]),
            b: b.add(format!("{name}.bias"), &[output]),
        };
        let mut torso = Vec::new();
        let mut width = spec.input;
        for (i, &h) in spec.hidden.iter().enumerate() {
            torso.push(dense(&mut b, &format!("fc{i}"), width, h));
            width = h;
        }
        let gru = spec.gru.map(|h| {
            let g = Gru {
                hidden: h,
                w_ih: dense(&mut b, "gru.ih", width, 3 * h),
                w_hh: dense(&mut b, "gru.hh", h, 3 * h),
            };
            width = h;
            g
        });
        let head = dense(&mut b, "out", width, spec.outputs);
        let layout = b.finish();
        let n_params = layout.iter().map(|s| s.len()).sum();
        Self {
            spec,
            layout,
            torso,
            gru,
            head,
            n_params,
        }
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn layout(&self) -> &[ParamSlice] {
        &self.layout
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn is_recurrent(&self) -> bool {
        self.gru.is_some()
    }

    pub fn hidden_size(&self) -> usize {
        self.gru.as_ref().map_or(0, |g| g.hidden)
    }

    pub fn zero_params(&self) -> ParamVector {
        ParamVector::zeros(self.layout.clone())
    }

    /// Orthogonal init with gain 1 on hidden layers and `output_gain` on the
    /// output layer; biases start at zero.
    pub fn init_params(&self, rng: &mut impl Rng) -> ParamVector {
        let mut p = self.zero_params();
        for d in &self.torso {
            orthogonal(rng, &mut p.data[d.w..d.w + d.input * d.output], d.output, d.input, 1.0);
        }
        if let Some(g) = &self.gru {
            for d in [&g.w_ih, &g.w_hh] {
                for gate in 0..3 {
                    let start = d.w + gate * g.hidden * d.input;
                    orthogonal(
                        rng,
                        &mut p.data[start..start + g.hidden * d.input],
                        g.hidden,
                        d.input,
                        1.0,
                    );
                }
            }
        }
        let h = &self.head;
        orthogonal(
            rng,
            &mut p.data[h.w..h.w + h.input * h.output],
            h.output,
            h.input,
            self.spec.output_gain,
        );
        p
    }

    /// Offset and length of the output layer bias.
    pub fn output_bias_range(&self) -> std::ops::Range<usize> {
        self.head.b..self.head.b + self.head.output
    }

    /// Offset range of the output-layer row for output `k` (weights then bias index).
    pub fn output_row(&self, k: usize) -> (std::ops::Range<usize>, usize) {
        let start = self.head.w + k * self.head.input;
        (start..start + self.head.input, self.head.b + k)
    }

    fn check(&self, p: &[f64], x: &[f64]) -> Result<()> {
        if p.len() != self.n_params {
            return Err(Error::ShapeMismatch {
                what: "parameters",
                expected: self.n_params,
                got: p.len(),
            });
        }
        if x.len() != self.spec.input {
            return Err(Error::ShapeMismatch {
                what: "network input",
                expected: self.spec.input,
                got: x.len(),
            });
        }
        Ok(())
    }

    fn step(&self, p: &[f64], x: &[f64], h_prev: Option<&[f64]>) -> StepCache {
        let mut acts = Vec::with_capacity(self.torso.len());
        let mut cur: &[f64] = x;
        for d in &self.torso {
            let mut y = Vec::with_capacity(d.output);
            d.forward(p, cur, &mut y);
            for v in &mut y {
                *v = self.spec.activation.apply(*v);
            }
            acts.push(y);
            cur = acts.last().map(Vec::as_slice).unwrap_or(x);
        }
        let gru = self.gru.as_ref().map(|g| {
            let h_prev = h_prev.map_or_else(|| vec![0.0; g.hidden], <[f64]>::to_vec);
            let mut gi = Vec::new();
            let mut gh = Vec::new();
            g.w_ih.forward(p, cur, &mut gi);
            g.w_hh.forward(p, &h_prev, &mut gh);
            let n_h = g.hidden;
            let r: Vec<f64> = (0..n_h).map(|i| sigmoid(gi[i] + gh[i])).collect();
            let z: Vec<f64> = (0..n_h).map(|i| sigmoid(gi[n_h + i] + gh[n_h + i])).collect();
            let hn: Vec<f64> = gh[2 * n_h..].to_vec();
            let n: Vec<f64> = (0..n_h).map(|i| tanh(gi[2 * n_h + i] + r[i] * hn[i])).collect();
            let h: Vec<f64> = (0..n_h).map(|i| (1.0 - z[i]) * n[i] + z[i] * h_prev[i]).collect();
            GruCache { h_prev, r, z, n, hn, h }
        });
        let feat = gru.as_ref().map_or(cur, |g| g.h.as_slice());
        let mut output = Vec::with_capacity(self.head.output);
        self.head.forward(p, feat, &mut output);
        StepCache {
            input: x.to_vec(),
            acts,
            gru,
            output,
        }
    }

    /// Single step without recording; returns outputs and the next recurrent state.
    pub fn forward(&self, p: &[f64], x: &[f64], h: Option<&[f64]>) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
        self.check(p, x)?;
        self.check_hidden(h)?;
        let s = self.step(p, x, h);
        Ok((s.output, s.gru.map(|g| g.h)))
    }

    fn check_hidden(&self, h: Option<&[f64]>) -> Result<()> {
        if let Some(h) = h {
            if h.len() != self.hidden_size() {
                return Err(Error::ShapeMismatch {
                    what: "recurrent state",
                    expected: self.hidden_size(),
                    got: h.len(),
                });
            }
        }
        Ok(())
    }

    /// Unrolls over a sequence, recording everything needed for backprop.
    ///
    /// `reset_before[t]` zeroes the recurrent state entering step `t`.
    pub fn forward_seq<X: AsRef<[f64]>>(
        &self,
        p: &[f64],
        xs: &[X],
        h0: Option<&[f64]>,
        reset_before: &[bool],
    ) -> Result<Trace> {
        if reset_before.len() != xs.len() {
            return Err(Error::ShapeMismatch {
                what: "reset mask",
                expected: xs.len(),
                got: reset_before.len(),
            });
        }
        self.check_hidden(h0)?;
        let mut steps: Vec<StepCache> = Vec::with_capacity(xs.len());
        for (t, x) in xs.iter().enumerate() {
            let x = x.as_ref();
            self.check(p, x)?;
            let h_prev = if reset_before[t] {
                None
            } else if t == 0 {
                h0
            } else {
                steps[t - 1].gru.as_ref().map(|g| g.h.as_slice())
            };
            let s = self.step(p, x, h_prev);
            steps.push(s);
        }
        Ok(Trace {
            steps,
            reset_before: reset_before.to_vec(),
        })
    }

    /// Backpropagates `d_outputs[t]` (∂loss/∂output at step t) through the
    /// recorded unroll, accumulating into `grad`.
    pub fn backward_seq(&self, p: &[f64], trace: &Trace, d_outputs: &[Vec<f64>], grad: &mut [f64]) -> Result<()> {
        if trace.is_empty() {
            return Err(Error::NoForward);
        }
        if d_outputs.len() != trace.len() {
            return Err(Error::ShapeMismatch {
                what: "output gradients",
                expected: trace.len(),
                got: d_outputs.len(),
            });
        }
        if grad.len() != self.n_params {
            return Err(Error::ShapeMismatch {
                what: "gradient buffer",
                expected: self.n_params,
                got: grad.len(),
            });
        }
        let act = self.spec.activation;
        let mut dh_next = vec![0.0; self.hidden_size()];
        let mut d_feat = Vec::new();
        let mut d_tmp = Vec::new();
        for t in (0..trace.len()).rev() {
            let s = &trace.steps[t];
            let torso_out: &[f64] = s.acts.last().map_or(&s.input, Vec::as_slice);
            let feat = s.gru.as_ref().map_or(torso_out, |g| g.h.as_slice());
            self.head.backward(p, feat, &d_outputs[t], grad, Some(&mut d_feat));

            if let (Some(g), Some(c)) = (&self.gru, &s.gru) {
                let n_h = g.hidden;
                let mut dgi = vec![0.0; 3 * n_h];
                let mut dgh = vec![0.0; 3 * n_h];
                let mut dh_prev = vec![0.0; n_h];
                for i in 0..n_h {
                    let dh = d_feat[i] + dh_next[i];
                    let dn = dh * (1.0 - c.z[i]);
                    let dz = dh * (c.h_prev[i] - c.n[i]);
                    dh_prev[i] = dh * c.z[i];
                    let da_n = dn * (1.0 - c.n[i] * c.n[i]);
                    let dr = da_n * c.hn[i];
                    let da_r = dr * c.r[i] * (1.0 - c.r[i]);
                    let da_z = dz * c.z[i] * (1.0 - c.z[i]);
                    dgi[i] = da_r;
                    dgi[n_h + i] = da_z;
                    dgi[2 * n_h + i] = da_n;
                    dgh[i] = da_r;
                    dgh[n_h + i] = da_z;
                    dgh[2 * n_h + i] = da_n * c.r[i];
                }
                g.w_ih.backward(p, torso_out, &dgi, grad, Some(&mut d_tmp));
                let mut dh_from_hh = Vec::new();
                g.w_hh.backward(p, &c.h_prev, &dgh, grad, Some(&mut dh_from_hh));
                for i in 0..n_h {
                    dh_prev[i] += dh_from_hh[i];
                }
                dh_next = if trace.reset_before[t] { vec![0.0; n_h] } else { dh_prev };
                std::mem::swap(&mut d_feat, &mut d_tmp);
            }

            for k in (0..self.torso.len()).rev() {
                let y = &s.acts[k];
                let da: Vec<f64> = d_feat
                    .iter()
                    .zip(y)
                    .map(|(d, &yv)| d * act.grad_from_output(yv))
                    .collect();
                let x_in: &[f64] = if k == 0 { &s.input } else { &s.acts[k - 1] };
                let want_dx = k > 0;
                self.torso[k].backward(p, x_in, &da, grad, want_dx.then_some(&mut d_tmp));
                if want_dx {
                    std::mem::swap(&mut d_feat, &mut d_tmp);
                }
            }
        }
        Ok(())
    }
}

/// Fill a `rows × cols` row-major block with a scaled (semi-)orthogonal matrix.
fn orthogonal(rng: &mut impl Rng, out: &mut [f64], rows: usize, cols: usize, gain: f64) {
    // Orthonormalize along the shorter dimension.
    let (n_vec, dim, transpose) = if rows <= cols {
        (rows, cols, false)
    } else {
        (cols, rows, true)
    };
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n_vec);
    while basis.len() < n_vec {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        for b in &basis {
            let proj = dot(&v, b);
            axpy(-proj, b, &mut v);
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    for (i, b) in basis.iter().enumerate() {
        for (j, &x) in b.iter().enumerate() {
            let (r, c) = if transpose { (j, i) } else { (i, j) };
            out[r * cols + c] = gain * x;
        }
    }
}

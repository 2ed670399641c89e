//! Dense feed-forward networks over flat parameter vectors, with a
//! hand-written reverse pass.
//!
//! Parameters for layer `l` are stored as a row-major `(out, in)` weight
//! block followed by an `out`-length bias. Hidden layers apply the chosen
//! activation; the output layer is linear.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::RngState;

/// Row-major `rows x cols` matrix of batch activations.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Batch {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidDimension(format!(
                "batch of {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::InvalidDimension("ragged batch rows".into()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self + s * other`, elementwise.
    pub fn axpy(&self, s: f64, other: &Batch) -> Batch {
        debug_assert_eq!(self.data.len(), other.data.len());
        Batch {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + s * b).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Batch {
        Batch { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn add_assign_scaled(&mut self, s: f64, other: &Batch) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn select_rows(&self, idx: &[usize]) -> Batch {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Batch { rows: idx.len(), cols: self.cols, data }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::Config(format!("unknown activation {other:?}"))),
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// Layer widths `[input, hidden.., output]` plus the hidden activation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpShape {
    sizes: Vec<usize>,
    activation: Activation,
}

/// Activations recorded by a forward pass; `acts[0]` is the input.
#[derive(Debug, Clone)]
pub struct MlpTape {
    acts: Vec<Batch>,
}

impl MlpTape {
    pub fn output(&self) -> &Batch {
        &self.acts[self.acts.len() - 1]
    }
}

impl MlpShape {
    pub fn new(sizes: Vec<usize>, activation: Activation) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {sizes:?}")));
        }
        Ok(Self { sizes, activation })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        self.sizes[self.sizes.len() - 1]
    }

    pub fn param_count(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let mut offset = 0;
        self.sizes.windows(2).map(move |w| {
            let start = offset;
            offset += w[0] * w[1] + w[1];
            (start, w[0], w[1])
        })
    }

    /// Uniform fan-in initialization, `U(-1/sqrt(in), 1/sqrt(in))`, for weights and biases.
    pub fn init(&self, rng: &mut RngState, params: &mut [f64]) {
        for (offset, fan_in, fan_out) in self.layers() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut params[offset..offset + fan_in * fan_out + fan_out] {
                *p = bound * (2.0 * rng.uniform() - 1.0);
            }
        }
    }

    pub fn forward(&self, params: &[f64], input: Batch) -> Result<MlpTape> {
        if input.cols != self.input_dim() {
            return Err(Error::Config(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                input.cols
            )));
        }
        if params.len() != self.param_count() {
            return Err(Error::Config(format!(
                "network has {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let n_layers = self.sizes.len() - 1;
        let mut acts = Vec::with_capacity(n_layers + 1);
        acts.push(input);
        for (l, (offset, fan_in, fan_out)) in self.layers().enumerate() {
            let w = &params[offset..offset + fan_in * fan_out];
            let b = &params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            let x = &acts[l];
            let act = if l + 1 == n_layers { Activation::Identity } else { self.activation };
            let mut y = Batch::zeros(x.rows, fan_out);
            for r in 0..x.rows {
                let xr = x.row(r);
                let yr = y.row_mut(r);
                for j in 0..fan_out {
                    let wj = &w[j * fan_in..(j + 1) * fan_in];
                    let s: f64 = wj.iter().zip(xr).map(|(a, b)| a * b).sum();
                    yr[j] = act.apply(s + b[j]);
                }
            }
            acts.push(y);
        }
        Ok(MlpTape { acts })
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the input batch.
    pub fn backward(&self, params: &[f64], tape: &MlpTape, d_out: &Batch, grads: &mut [f64]) -> Batch {
        let n_layers = self.sizes.len() - 1;
        let layers: Vec<_> = self.layers().collect();
        let mut delta = d_out.clone();
        for l in (0..n_layers).rev() {
            let (offset, fan_in, fan_out) = layers[l];
            let act = if l + 1 == n_layers { Activation::Identity } else { self.activation };
            let y = &tape.acts[l + 1];
            if act != Activation::Identity {
                for (d, &yv) in delta.data.iter_mut().zip(&y.data) {
                    *d *= act.derivative_from_output(yv);
                }
            }
            let x = &tape.acts[l];
            let w = &params[offset..offset + fan_in * fan_out];
            let (gw, gb) = grads[offset..offset + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
            let mut d_in = Batch::zeros(x.rows, fan_in);
            for r in 0..x.rows {
                let dr = delta.row(r);
                let xr = x.row(r);
                let dir = d_in.row_mut(r);
                for j in 0..fan_out {
                    let g = dr[j];
                    if g == 0.0 {
                        continue;
                    }
                    gb[j] += g;
                    let gwj = &mut gw[j * fan_in..(j + 1) * fan_in];
                    let wj = &w[j * fan_in..(j + 1) * fan_in];
                    for k in 0..fan_in {
                        gwj[k] += g * xr[k];
                        dir[k] += g * wj[k];
                    }
                }
            }
            delta = d_in;
        }
        delta
    }
}

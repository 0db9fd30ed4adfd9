use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{MapError, Result};

/// Fully connected network: ReLU hidden layers, one linear output.
///
/// Weights are stored `(fan_in, fan_out)` so a batch `X` maps to `X W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Intermediates of a batched forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Layer inputs: the network input followed by each post-ReLU hidden activation.
    inputs: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        MlpGrads {
            weights: mlp.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: mlp.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.weights.iter_mut().for_each(|w| *w *= k);
        self.biases.iter_mut().for_each(|b| *b *= k);
    }

    pub fn add(&mut self, other: &MlpGrads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            v.push(w.as_slice().expect("standard layout"));
            v.push(b.as_slice().expect("standard layout"));
        }
        v
    }
}

impl Mlp {
    /// He-normal weights (std `sqrt(2 / fan_in)`), zero biases.
    pub fn new(input: usize, hidden: usize, layers: usize, rng: &mut impl Rng) -> Result<Self> {
        if input == 0 || hidden == 0 {
            return Err(MapError::Config("MLP widths must be positive".into()));
        }
        let mut dims = vec![input];
        dims.extend(std::iter::repeat(hidden).take(layers));
        dims.push(1);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in dims.windows(2) {
            let normal = Normal::new(0.0, (2.0 / w[0] as f64).sqrt()).expect("valid std");
            weights.push(Array2::from_shape_fn((w[0], w[1]), |_| normal.sample(rng)));
            biases.push(Array1::zeros(w[1]));
        }
        Ok(Mlp { weights, biases })
    }

    pub fn input_width(&self) -> usize {
        self.weights[0].nrows()
    }

    /// Layer widths from input to output.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_width()];
        d.extend(self.weights.iter().map(|w| w.ncols()));
        d
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|x| x.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|x| x.is_finite()))
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = Vec::new();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            v.push(w.as_slice_mut().expect("standard layout"));
            v.push(b.as_slice_mut().expect("standard layout"));
        }
        v
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<(Array1<f64>, MlpCache)> {
        if x.ncols() != self.input_width() {
            return Err(MapError::Shape(format!(
                "MLP expects {} inputs, got {}",
                self.input_width(),
                x.ncols()
            )));
        }
        let last = self.weights.len() - 1;
        let mut inputs = vec![x.to_owned()];
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = inputs[k].dot(w);
            z += b;
            if k < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            inputs.push(z);
        }
        let out = inputs.pop().expect("output layer").index_axis_move(Axis(1), 0);
        Ok((out, MlpCache { inputs }))
    }

    /// Reverse pass for upstream gradient `dout` (one entry per row). Returns
    /// parameter gradients and the gradient with respect to the input batch.
    pub fn backward(&self, cache: &MlpCache, dout: &Array1<f64>) -> Result<(MlpGrads, Array2<f64>)> {
        let n = cache.inputs[0].nrows();
        if dout.len() != n {
            return Err(MapError::Shape(format!("upstream gradient has {} rows, batch has {n}", dout.len())));
        }
        let layers = self.weights.len();
        let mut gw = Vec::with_capacity(layers);
        let mut gb = Vec::with_capacity(layers);
        let mut dz = dout.view().insert_axis(Axis(1)).to_owned();
        for k in (0..layers).rev() {
            let a = &cache.inputs[k];
            gw.push(a.t().dot(&dz).as_standard_layout().into_owned());
            gb.push(dz.sum_axis(Axis(0)));
            let mut da = dz.dot(&self.weights[k].t());
            if k > 0 {
                da.zip_mut_with(a, |d, &act| {
                    if act <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            dz = da;
        }
        gw.reverse();
        gb.reverse();
        Ok((MlpGrads { weights: gw, biases: gb }, dz))
    }

    /// Single-input evaluation by explicit loops.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut a = x.to_vec();
        let last = self.weights.len() - 1;
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = b.to_vec();
            for (i, &ai) in a.iter().enumerate() {
                if ai == 0.0 {
                    continue;
                }
                for (j, zj) in z.iter_mut().enumerate() {
                    *zj += ai * w[(i, j)];
                }
            }
            if k < last {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            a = z;
        }
        a[0]
    }
}

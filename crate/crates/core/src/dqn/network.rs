use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::env::ActionId;
use crate::error::{Error, Result};

/// Feed-forward Q-function: affine layers with rectifiers between them and
/// one linear output per action.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    dims: Vec<usize>,
    /// `weights[l]` is `dims[l+1] × dims[l]`.
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
}

/// Parameter gradients, shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

impl QNetwork {
    /// `input → hidden... → 5` with Glorot-uniform weights and zero biases.
    pub fn new(input: usize, hidden: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(ActionId::COUNT);
        let mut net = Self::zeros(&dims)?;
        for w in &mut net.weights {
            let (fan_out, fan_in) = w.dim();
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            w.mapv_inplace(|_| rng.random_range(-limit..=limit));
        }
        Ok(net)
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::invalid("network needs an input and an output layer of positive width"));
        }
        Ok(QNetwork {
            dims: dims.to_vec(),
            weights: dims.windows(2).map(|w| Array2::zeros((w[1], w[0]))).collect(),
            biases: dims[1..].iter().map(|&d| Array1::zeros(d)).collect(),
        })
    }

    pub fn from_parts(weights: Vec<Array2<f64>>, biases: Vec<Array1<f64>>) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::invalid("weights and biases must pair up"));
        }
        let mut dims = vec![weights[0].ncols()];
        for (w, b) in weights.iter().zip(&biases) {
            if w.ncols() != *dims.last().unwrap() || w.nrows() != b.len() {
                return Err(Error::invalid("layer shapes do not chain"));
            }
            dims.push(w.nrows());
        }
        Ok(QNetwork {
            dims,
            weights,
            biases,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn hidden_layers(&self) -> usize {
        self.dims.len() - 2
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Array1<f64>] {
        &mut self.biases
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// All parameters, layer by layer, each weight matrix row-major then its bias.
    pub fn params(&self) -> Vec<f64> {
        Gradients {
            weights: self.weights.clone(),
            biases: self.biases.clone(),
        }
        .flatten()
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                expected: self.num_params(),
                got: params.len(),
            });
        }
        let mut it = params.iter().copied();
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            w.iter_mut().for_each(|x| *x = it.next().unwrap());
            b.iter_mut().for_each(|x| *x = it.next().unwrap());
        }
        Ok(())
    }

    fn check(&self, got: usize) -> Result<()> {
        if got != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got,
            });
        }
        Ok(())
    }

    /// Q-values for one feature vector.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x.len())?;
        let mut h = Array1::from(x.to_vec());
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            h = w.dot(&h) + b;
            if l < last {
                h.mapv_inplace(relu);
            }
        }
        Ok(h.to_vec())
    }

    /// Q-values for a batch, one row per input row.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check(x.ncols())?;
        Ok(self.activations(x).pop().unwrap())
    }

    /// Post-activation outputs of every layer, input first.
    fn activations(&self, x: ArrayView2<'_, f64>) -> Vec<Array2<f64>> {
        let mut acts = Vec::with_capacity(self.weights.len() + 1);
        acts.push(x.to_owned());
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = acts[l].dot(&w.t());
            z += b;
            if l < last {
                z.mapv_inplace(relu);
            }
            acts.push(z);
        }
        acts
    }

    /// Mean squared TD error on the taken actions and its gradient:
    /// `L = (1/B) Σ (ŷ_i − Q(s_i, a_i))²`. Other outputs get no gradient.
    pub fn loss_and_gradients(
        &self,
        x: ArrayView2<'_, f64>,
        actions: &[usize],
        targets: &[f64],
    ) -> Result<(f64, Gradients)> {
        self.check(x.ncols())?;
        let n = x.nrows();
        if n == 0 || actions.len() != n || targets.len() != n {
            return Err(Error::invalid("batch rows, actions and targets must agree and be non-empty"));
        }
        let acts = self.activations(x);
        let out = acts.last().unwrap();
        let mut delta = Array2::zeros(out.raw_dim());
        let mut loss = 0.0;
        for i in 0..n {
            let a = actions[i];
            if a >= out.ncols() {
                return Err(Error::invalid(format!("action index {a} out of range")));
            }
            let err = targets[i] - out[[i, a]];
            loss += err * err;
            delta[[i, a]] = -2.0 * err / n as f64;
        }
        loss /= n as f64;

        let layers = self.weights.len();
        let mut gw = vec![Array2::zeros((0, 0)); layers];
        let mut gb = vec![Array1::zeros(0); layers];
        for l in (0..layers).rev() {
            gw[l] = delta.t().dot(&acts[l]);
            gb[l] = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut back = delta.dot(&self.weights[l]);
                back.zip_mut_with(&acts[l], |d, &h| {
                    if h <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = back;
            }
        }
        Ok((loss, Gradients { weights: gw, biases: gb }))
    }

    /// Plain gradient descent: `θ ← θ − η ∇L`.
    pub fn apply(&mut self, grads: &Gradients, lr: f64) {
        for (w, g) in self.weights.iter_mut().zip(&grads.weights) {
            w.scaled_add(-lr, g);
        }
        for (b, g) in self.biases.iter_mut().zip(&grads.biases) {
            b.scaled_add(-lr, g);
        }
    }

    /// Row-major weight arrays, one per layer.
    pub fn weight_rows(&self) -> Vec<Vec<f64>> {
        self.weights.iter().map(|w| w.iter().copied().collect()).collect()
    }

    pub fn from_rows(dims: &[usize], weights: &[Vec<f64>], biases: &[Vec<f64>]) -> Result<Self> {
        let mut net = Self::zeros(dims)?;
        if weights.len() != net.weights.len() || biases.len() != net.biases.len() {
            return Err(Error::Config("checkpoint layer count does not match layer_dims".into()));
        }
        for l in 0..net.weights.len() {
            let (r, c) = net.weights[l].dim();
            if weights[l].len() != r * c || biases[l].len() != r {
                return Err(Error::Config(format!("checkpoint layer {l} has the wrong shape")));
            }
            net.weights[l] = Array2::from_shape_vec((r, c), weights[l].clone())
                .map_err(|e| Error::Config(e.to_string()))?;
            net.biases[l] = Array1::from(biases[l].clone());
        }
        Ok(net)
    }

    /// Stacks feature vectors into a batch matrix.
    pub fn stack(rows: &[&[f64]], dim: usize) -> Result<Array2<f64>> {
        let mut m = Array2::zeros((rows.len(), dim));
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: r.len(),
                });
            }
            m.slice_mut(s![i, ..]).assign(&ndarray::ArrayView1::from(*r));
        }
        Ok(m)
    }
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

use rand::Rng as _;

use super::matrix::{softmax_in_place, Matrix};
use crate::error::{DuetError, Result};
use crate::seeding::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active; masks drawn from the model's own generator.
    Train,
    /// Dropout disabled; forward is deterministic.
    Eval,
    /// Dropout active at inference for Monte-Carlo sampling.
    McEval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `fan_in x fan_out`
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Inverted-dropout scale factors per hidden layer: 0 for dropped units,
/// `1 / keep` for kept ones. Shape `batch x width`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks(pub Vec<Matrix>);

#[derive(Debug, Clone)]
struct ForwardCache {
    input: Matrix,
    /// Input to every layer (index 0 is the batch itself).
    layer_inputs: Vec<Matrix>,
    /// Pre-activation of each hidden layer.
    pre_activations: Vec<Matrix>,
    masks: Option<DropoutMasks>,
    probs: Matrix,
}

/// Gradients with the same layout as the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| Layer {
                    weights: Matrix::zeros(l.weights.rows(), l.weights.cols()),
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.data_mut().iter_mut().zip(b.weights.data()) {
                *x += scale * y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += scale * y;
            }
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weights.data());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }
}

/// Feed-forward classifier: ReLU hidden layers each followed by dropout,
/// softmax output.
#[derive(Debug, Clone)]
pub struct MlpModel {
    dims: Vec<usize>,
    pub(crate) layers: Vec<Layer>,
    dropout_rate: f64,
    seed: u64,
    pub(crate) rng: Rng,
    mode: Mode,
    cache: Option<ForwardCache>,
}

impl MlpModel {
    /// `dims = [input, hidden..., output]`. Weights use He-uniform
    /// initialization for hidden layers and Glorot-uniform for the output.
    pub fn new(dims: &[usize], dropout_rate: f64, seed: u64) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(DuetError::Argument(format!("invalid layer dims {dims:?}")));
        }
        if *dims.last().unwrap() < 2 {
            return Err(DuetError::Argument("output layer needs at least 2 classes".into()));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(DuetError::Argument(format!(
                "dropout rate must be in [0, 1), got {dropout_rate}"
            )));
        }
        let mut init = seeding::child(seed, "init");
        let n_layers = dims.len() - 1;
        let layers = (0..n_layers)
            .map(|l| {
                let (fan_in, fan_out) = (dims[l], dims[l + 1]);
                let bound = if l + 1 < n_layers {
                    (6.0 / fan_in as f64).sqrt()
                } else {
                    (6.0 / (fan_in + fan_out) as f64).sqrt()
                };
                let data = (0..fan_in * fan_out)
                    .map(|_| init.random_range(-bound..bound))
                    .collect();
                Layer {
                    weights: Matrix::from_vec(fan_in, fan_out, data).expect("sized"),
                    bias: vec![0.0; fan_out],
                }
            })
            .collect();
        Ok(Self {
            dims: dims.to_vec(),
            layers,
            dropout_rate,
            seed,
            rng: seeding::child(seed, "dropout"),
            mode: Mode::Train,
            cache: None,
        })
    }

    pub(crate) fn from_parts(
        dims: Vec<usize>,
        layers: Vec<Layer>,
        dropout_rate: f64,
        seed: u64,
        rng: Rng,
    ) -> Result<Self> {
        if layers.len() + 1 != dims.len() {
            return Err(DuetError::Shape("layer count does not match dims".into()));
        }
        for (l, layer) in layers.iter().enumerate() {
            if layer.weights.rows() != dims[l] || layer.weights.cols() != dims[l + 1] || layer.bias.len() != dims[l + 1]
            {
                return Err(DuetError::Shape(format!("layer {l} does not match dims {dims:?}")));
            }
        }
        Ok(Self {
            dims,
            layers,
            dropout_rate,
            seed,
            rng,
            mode: Mode::Eval,
            cache: None,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rng(&self) -> &Rng {
        &self.rng
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Re-seeds the dropout generator.
    pub fn reset_rng(&mut self, seed: u64) {
        self.rng = seeding::rng(seed);
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weights.data().len() + l.bias.len()).sum()
    }

    pub fn parameters_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_parameters());
        for l in &self.layers {
            out.extend_from_slice(l.weights.data());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_parameters_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_parameters() {
            return Err(DuetError::Shape(format!(
                "expected {} parameters, got {}",
                self.num_parameters(),
                params.len()
            )));
        }
        let mut offset = 0;
        for l in &mut self.layers {
            let nw = l.weights.data().len();
            l.weights.data_mut().copy_from_slice(&params[offset..offset + nw]);
            offset += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[offset..offset + nb]);
            offset += nb;
        }
        self.cache = None;
        Ok(())
    }

    pub(crate) fn invalidate_cache(&mut self) {
        self.cache = None;
    }

    fn check_input(&self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.input_dim() {
            return Err(DuetError::Shape(format!(
                "batch has {} columns, model expects {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn draw_masks(&self, rows: usize, rng: &mut Rng) -> DropoutMasks {
        let keep = 1.0 - self.dropout_rate;
        let hidden = &self.dims[1..self.dims.len() - 1];
        DropoutMasks(
            hidden
                .iter()
                .map(|&w| {
                    let data = (0..rows * w)
                        .map(|_| {
                            if self.dropout_rate == 0.0 || rng.random::<f64>() < keep {
                                1.0 / keep
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    Matrix::from_vec(rows, w, data).expect("sized")
                })
                .collect(),
        )
    }

    fn run(&self, batch: &Matrix, masks: Option<DropoutMasks>) -> Result<(Matrix, ForwardCache)> {
        self.check_input(batch)?;
        if let Some(m) = &masks {
            let ok = m.0.len() + 2 == self.dims.len()
                && m.0
                    .iter()
                    .zip(&self.dims[1..])
                    .all(|(mask, &w)| mask.rows() == batch.rows() && mask.cols() == w);
            if !ok {
                return Err(DuetError::Shape("dropout masks do not match batch".into()));
            }
        }
        let n_layers = self.layers.len();
        let mut layer_inputs = Vec::with_capacity(n_layers);
        let mut pre_activations = Vec::with_capacity(n_layers - 1);
        let mut a = batch.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = a.matmul(&layer.weights)?;
            for r in 0..z.rows() {
                for (x, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
                    *x += b;
                }
            }
            layer_inputs.push(a);
            if l + 1 == n_layers {
                a = z;
                break;
            }
            let mut h = z.clone();
            h.data_mut().iter_mut().for_each(|x| *x = x.max(0.0));
            if let Some(m) = &masks {
                for (x, s) in h.data_mut().iter_mut().zip(m.0[l].data()) {
                    *x *= s;
                }
            }
            pre_activations.push(z);
            a = h;
        }
        let logits = a;
        let mut probs = logits.clone();
        for r in 0..probs.rows() {
            softmax_in_place(probs.row_mut(r));
        }
        Ok((
            logits,
            ForwardCache {
                input: batch.clone(),
                layer_inputs,
                pre_activations,
                masks,
                probs,
            },
        ))
    }

    fn dropout_active(&self) -> bool {
        self.mode != Mode::Eval && self.dims.len() > 2
    }

    /// Class probabilities for `batch`. Train and McEval modes draw fresh
    /// dropout masks from the model generator. Caches activations for
    /// [`MlpModel::backward`].
    pub fn forward(&mut self, batch: &Matrix) -> Result<Matrix> {
        self.check_input(batch)?;
        let masks = if self.dropout_active() {
            let mut rng = self.rng.clone();
            let m = self.draw_masks(batch.rows(), &mut rng);
            self.rng = rng;
            Some(m)
        } else {
            None
        };
        let (_, cache) = self.run(batch, masks)?;
        let probs = cache.probs.clone();
        self.cache = Some(cache);
        Ok(probs)
    }

    /// Forward pass with caller-supplied masks (frozen dropout).
    pub fn forward_masked(&mut self, batch: &Matrix, masks: &DropoutMasks) -> Result<Matrix> {
        let (_, cache) = self.run(batch, Some(masks.clone()))?;
        let probs = cache.probs.clone();
        self.cache = Some(cache);
        Ok(probs)
    }

    /// Masks used by the most recent cached forward pass.
    pub fn last_masks(&self) -> Option<&DropoutMasks> {
        self.cache.as_ref().and_then(|c| c.masks.as_ref())
    }

    /// Deterministic eval-mode probabilities; does not touch the cache.
    pub fn predict_proba(&self, batch: &Matrix) -> Result<Matrix> {
        Ok(self.run(batch, None)?.1.probs)
    }

    /// Eval-mode logits (pre-softmax).
    pub fn logits(&self, batch: &Matrix) -> Result<Matrix> {
        Ok(self.run(batch, None)?.0)
    }

    /// One stochastic pass with masks drawn from `rng`; returns
    /// `(logits, probs)`. Does not touch the model generator or cache.
    pub fn stochastic_pass(&self, batch: &Matrix, rng: &mut Rng) -> Result<(Matrix, Matrix)> {
        let masks = (self.dims.len() > 2).then(|| self.draw_masks(batch.rows(), rng));
        let (logits, cache) = self.run(batch, masks)?;
        Ok((logits, cache.probs))
    }

    pub fn predict(&self, batch: &Matrix) -> Result<Vec<usize>> {
        let probs = self.predict_proba(batch)?;
        Ok(probs.iter_rows().map(argmax).collect())
    }

    /// Exact parameter gradients given `dL/dprobs` for the cached batch.
    pub fn backward(&self, batch: &Matrix, loss_grad: &Matrix) -> Result<Gradients> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| DuetError::State("backward called without a cached forward pass".into()))?;
        if cache.input != *batch {
            return Err(DuetError::State(
                "cached forward pass belongs to a different batch".into(),
            ));
        }
        let probs = &cache.probs;
        if loss_grad.rows() != probs.rows() || loss_grad.cols() != probs.cols() {
            return Err(DuetError::Shape(format!(
                "loss gradient is {}x{}, expected {}x{}",
                loss_grad.rows(),
                loss_grad.cols(),
                probs.rows(),
                probs.cols()
            )));
        }
        // softmax Jacobian: dz = p * (g - <g, p>)
        let mut dz = Matrix::zeros(probs.rows(), probs.cols());
        for r in 0..probs.rows() {
            let p = probs.row(r);
            let g = loss_grad.row(r);
            let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
            for ((d, &pi), &gi) in dz.row_mut(r).iter_mut().zip(p).zip(g) {
                *d = pi * (gi - dot);
            }
        }
        let n_layers = self.layers.len();
        let mut grads: Vec<Option<Layer>> = vec![None; n_layers];
        for l in (0..n_layers).rev() {
            let input = &cache.layer_inputs[l];
            let dw = input.t_matmul(&dz)?;
            let mut db = vec![0.0; dz.cols()];
            for row in dz.iter_rows() {
                for (b, d) in db.iter_mut().zip(row) {
                    *b += d;
                }
            }
            grads[l] = Some(Layer { weights: dw, bias: db });
            if l == 0 {
                break;
            }
            let mut da = dz.matmul_t(&self.layers[l].weights)?;
            if let Some(m) = &cache.masks {
                for (x, s) in da.data_mut().iter_mut().zip(m.0[l - 1].data()) {
                    *x *= s;
                }
            }
            for (x, z) in da.data_mut().iter_mut().zip(cache.pre_activations[l - 1].data()) {
                if *z <= 0.0 {
                    *x = 0.0;
                }
            }
            dz = da;
        }
        Ok(Gradients {
            layers: grads.into_iter().map(|g| g.expect("filled")).collect(),
        })
    }
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::nn::adam::AdamState;
use crate::nn::layers::{
    check_dropout_rate, conv_backward_col, conv_from_col, dense_backward_raw, dense_raw,
    dropout_mask, im2col, leaky_relu_grad, leaky_relu_scalar, max_pool_backward, max_pool_raw,
    relu_grad, relu_scalar, softmax_cross_entropy_grad, softmax_slice, ConvLayer, DenseLayer,
};
use crate::nn::{NnError, Result, Tensor};
use crate::scalar::Scalar;

/// Samples per gradient-reduction chunk. Chunk sums are combined in chunk
/// order, so gradients do not depend on the number of worker threads.
const GRAD_CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Conv(ConvLayer<T>),
    LeakyRelu,
    Relu,
    MaxPool,
    Dropout { rate: f64 },
    Flatten,
    Dense(DenseLayer<T>),
    Softmax,
}

impl<T: Scalar> Layer<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::LeakyRelu => "leaky_relu",
            Layer::Relu => "relu",
            Layer::MaxPool => "max_pool",
            Layer::Dropout { .. } => "dropout",
            Layer::Flatten => "flatten",
            Layer::Dense(_) => "dense",
            Layer::Softmax => "softmax",
        }
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mismatch = |what: &str| {
            Err(NnError::Shape(format!("{} cannot take input {input:?}: {what}", self.name())))
        };
        match self {
            Layer::Conv(c) => match input {
                [ch, h, w] if *ch == c.in_channels() => Ok(vec![c.out_channels(), *h, *w]),
                _ => mismatch("expects [C,H,W] with matching C"),
            },
            Layer::MaxPool => match input {
                [ch, h, w] if h % 2 == 0 && w % 2 == 0 => Ok(vec![*ch, h / 2, w / 2]),
                _ => mismatch("expects [C,H,W] with even H and W"),
            },
            Layer::Flatten => Ok(vec![input.iter().product()]),
            Layer::Dense(d) => match input {
                [n] if *n == d.inputs() => Ok(vec![d.outputs()]),
                _ => mismatch("expects a flat vector of matching length"),
            },
            Layer::Softmax => match input {
                [_] => Ok(input.to_vec()),
                _ => mismatch("expects a flat vector"),
            },
            Layer::Dropout { rate } => {
                check_dropout_rate(*rate)?;
                Ok(input.to_vec())
            }
            Layer::LeakyRelu | Layer::Relu => Ok(input.to_vec()),
        }
    }
}

/// Per-sample values retained by a training forward pass.
#[derive(Debug, Clone)]
enum Cache<T> {
    Conv { col: Vec<T> },
    Activation { pre: Vec<T> },
    Pool { argmax: Vec<u32> },
    Dropout { mask: Option<Vec<T>> },
    Dense { input: Vec<T> },
    Nothing,
}

#[derive(Debug, Clone)]
struct Trace<T> {
    caches: Vec<Vec<Cache<T>>>,
    probabilities: Tensor<T>,
}

/// One gradient tensor per parameter tensor, in [`Network::parameters`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    fn zeros_like(params: &[&Tensor<T>]) -> Self {
        Self { tensors: params.iter().map(|p| Tensor::zeros(p.shape())).collect() }
    }

    fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += *y;
            }
        }
    }

    pub fn max_abs(&self) -> T {
        self.tensors
            .iter()
            .flat_map(|t| t.data().iter())
            .fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

/// Ordered layer stack ending in a softmax, with Adam optimizer state.
#[derive(Debug, Clone)]
pub struct Network<T> {
    input_shape: Vec<usize>,
    layers: Vec<Layer<T>>,
    shapes: Vec<Vec<usize>>,
    pub(crate) optimizer: AdamState<T>,
    trace: Option<Trace<T>>,
}

impl<T: Scalar> Network<T> {
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer<T>>) -> Result<Self> {
        if !matches!(layers.last(), Some(Layer::Softmax)) {
            return Err(NnError::Shape("network must end with a softmax layer".into()));
        }
        if layers[..layers.len() - 1].iter().any(|l| matches!(l, Layer::Softmax)) {
            return Err(NnError::Shape("softmax is only allowed as the last layer".into()));
        }
        let mut shapes = vec![input_shape.clone()];
        for layer in &layers {
            let next = layer.output_shape(shapes.last().expect("non-empty"))?;
            shapes.push(next);
        }
        let mut net = Self {
            input_shape,
            layers,
            shapes,
            optimizer: AdamState::default(),
            trace: None,
        };
        net.optimizer = AdamState::zeros_like(&net.parameters());
        Ok(net)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_len(&self) -> usize {
        self.shapes.last().map(|s| s.iter().product()).unwrap_or(0)
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    /// Input shape of every layer followed by the network output shape.
    pub fn shape_trace(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn adam_state(&self) -> &AdamState<T> {
        &self.optimizer
    }

    pub fn set_adam_state(&mut self, state: AdamState<T>) -> Result<()> {
        state.check_matches(&self.parameters())?;
        self.optimizer = state;
        Ok(())
    }

    /// Parameter tensors: for each conv or dense layer, weights then biases.
    pub fn parameters(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => out.extend([&c.filters, &c.biases]),
                Layer::Dense(d) => out.extend([&d.weights, &d.biases]),
                _ => {}
            }
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(c) => out.extend([&mut c.filters, &mut c.biases]),
                Layer::Dense(d) => out.extend([&mut d.weights, &mut d.biases]),
                _ => {}
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|t| t.len()).sum()
    }

    fn sample_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    fn split_batch<'a>(&self, batch: &'a Tensor<T>) -> Result<(usize, &'a [T])> {
        let s = batch.shape();
        if s.len() != self.input_shape.len() + 1 || s[1..] != self.input_shape[..] {
            return Err(NnError::Shape(format!(
                "batch shape {s:?} does not match [B, {:?}]",
                self.input_shape
            )));
        }
        Ok((s[0], batch.data()))
    }

    fn forward_sample(
        &self,
        x: &[T],
        mut dropout: Option<&mut dyn RngCore>,
        keep: bool,
    ) -> (Vec<T>, Vec<Cache<T>>) {
        let mut act = x.to_vec();
        let mut caches = Vec::with_capacity(if keep { self.layers.len() } else { 0 });
        for (layer, shape) in self.layers.iter().zip(&self.shapes) {
            let cache = match layer {
                Layer::Conv(c) => {
                    let (h, w) = (shape[1], shape[2]);
                    let col = im2col(&act, shape[0], h, w, c.kernel());
                    act = conv_from_col(&col, c, h * w);
                    Cache::Conv { col }
                }
                Layer::LeakyRelu | Layer::Relu => {
                    let leaky = matches!(layer, Layer::LeakyRelu);
                    let pre = if keep { act.clone() } else { Vec::new() };
                    for v in act.iter_mut() {
                        *v = if leaky { leaky_relu_scalar(*v) } else { relu_scalar(*v) };
                    }
                    Cache::Activation { pre }
                }
                Layer::MaxPool => {
                    let (out, argmax) = max_pool_raw(&act, shape[0], shape[1], shape[2]);
                    act = out;
                    Cache::Pool { argmax }
                }
                Layer::Dropout { rate } => {
                    let mask = match dropout.as_deref_mut() {
                        Some(rng) if *rate > 0.0 => {
                            let m = dropout_mask::<T>(act.len(), *rate, rng);
                            act.iter_mut().zip(&m).for_each(|(a, k)| *a *= *k);
                            Some(m)
                        }
                        _ => None,
                    };
                    Cache::Dropout { mask }
                }
                Layer::Flatten | Layer::Softmax => {
                    if matches!(layer, Layer::Softmax) {
                        act = softmax_slice(&act);
                    }
                    Cache::Nothing
                }
                Layer::Dense(d) => {
                    let out = dense_raw(&act, d);
                    let input = std::mem::replace(&mut act, out);
                    Cache::Dense { input: if keep { input } else { Vec::new() } }
                }
            };
            if keep {
                caches.push(cache);
            }
        }
        (act, caches)
    }

    /// Inference forward pass: dropout is the identity and nothing is cached.
    /// Returns `[B, 16]` class probabilities.
    pub fn predict(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let (b, data) = self.split_batch(batch)?;
        let n = self.sample_len();
        let rows: Vec<Vec<T>> = data
            .par_chunks_exact(n)
            .map(|x| self.forward_sample(x, None, false).0)
            .collect();
        Tensor::new(vec![b, self.output_len()], rows.concat())
    }

    /// Training forward pass. Retains the per-layer caches needed by
    /// [`Network::backward`]. With `rng == None` dropout is disabled.
    ///
    /// One seed per sample is drawn from `rng` up front, so the dropout masks
    /// do not depend on how samples are scheduled across threads.
    pub fn forward_train(
        &mut self,
        batch: &Tensor<T>,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<Tensor<T>> {
        let (b, data) = self.split_batch(batch)?;
        let n = self.sample_len();
        let seeds: Option<Vec<u64>> = rng.map(|r| (0..b).map(|_| r.random()).collect());
        let results: Vec<(Vec<T>, Vec<Cache<T>>)> = data
            .par_chunks_exact(n)
            .enumerate()
            .map(|(i, x)| match &seeds {
                Some(s) => {
                    let mut r = ChaCha8Rng::seed_from_u64(s[i]);
                    self.forward_sample(x, Some(&mut r), true)
                }
                None => self.forward_sample(x, None, true),
            })
            .collect();
        let mut probs = Vec::with_capacity(b * self.output_len());
        let mut caches = Vec::with_capacity(b);
        for (p, c) in results {
            probs.extend(p);
            caches.push(c);
        }
        let probabilities = Tensor::new(vec![b, self.output_len()], probs)?;
        self.trace = Some(Trace { caches, probabilities: probabilities.clone() });
        Ok(probabilities)
    }

    /// Gradients of the mean cross-entropy loss for the batch seen by the last
    /// [`Network::forward_train`]. Consumes the cached trace.
    pub fn backward(&mut self, labels: &[u8]) -> Result<Gradients<T>> {
        let trace = self.trace.take().ok_or(NnError::NoForwardCache)?;
        let upstream = softmax_cross_entropy_grad(&trace.probabilities, labels)?;
        self.backward_from(&trace, &upstream)
    }

    /// Backward pass from an arbitrary upstream gradient on the softmax input.
    pub fn backward_with_upstream(&mut self, upstream: &Tensor<T>) -> Result<Gradients<T>> {
        let trace = self.trace.take().ok_or(NnError::NoForwardCache)?;
        if upstream.shape() != trace.probabilities.shape() {
            return Err(NnError::Shape(format!(
                "upstream gradient {:?} vs output {:?}",
                upstream.shape(),
                trace.probabilities.shape()
            )));
        }
        self.backward_from(&trace, upstream)
    }

    fn backward_from(&self, trace: &Trace<T>, upstream: &Tensor<T>) -> Result<Gradients<T>> {
        let classes = self.output_len();
        let params = self.parameters();
        let grad_rows: Vec<&[T]> = upstream.data().chunks_exact(classes).collect();
        let indices: Vec<usize> = (0..trace.caches.len()).collect();
        let partials: Vec<Gradients<T>> = indices
            .par_chunks(GRAD_CHUNK)
            .map(|chunk| {
                let mut acc = Gradients::zeros_like(&params);
                for &i in chunk {
                    self.backward_sample(&trace.caches[i], grad_rows[i], &mut acc);
                }
                acc
            })
            .collect();
        let mut total = Gradients::zeros_like(&params);
        for p in &partials {
            total.add_assign(p);
        }
        Ok(total)
    }

    fn backward_sample(&self, caches: &[Cache<T>], grad_logits: &[T], acc: &mut Gradients<T>) {
        let mut g = grad_logits.to_vec();
        let mut slot = self.parameters().len();
        let last = self.layers.len() - 1;
        for li in (0..last).rev() {
            let shape = &self.shapes[li];
            let needs_input_grad = li > 0;
            match (&self.layers[li], &caches[li]) {
                (Layer::Conv(c), Cache::Conv { col }) => {
                    slot -= 2;
                    let (gw, gb) = two_mut(&mut acc.tensors, slot);
                    let gi = conv_backward_col(
                        col,
                        c,
                        &g,
                        shape[1] * shape[2],
                        gw.data_mut(),
                        gb.data_mut(),
                        needs_input_grad.then_some((shape[1], shape[2])),
                    );
                    match gi {
                        Some(gi) => g = gi,
                        None => return,
                    }
                }
                (Layer::Dense(d), Cache::Dense { input }) => {
                    slot -= 2;
                    let (gw, gb) = two_mut(&mut acc.tensors, slot);
                    let gi = dense_backward_raw(
                        input,
                        d,
                        &g,
                        gw.data_mut(),
                        gb.data_mut(),
                        needs_input_grad,
                    );
                    match gi {
                        Some(gi) => g = gi,
                        None => return,
                    }
                }
                (Layer::LeakyRelu, Cache::Activation { pre }) => {
                    g.iter_mut().zip(pre).for_each(|(gv, &x)| *gv *= leaky_relu_grad(x));
                }
                (Layer::Relu, Cache::Activation { pre }) => {
                    g.iter_mut().zip(pre).for_each(|(gv, &x)| *gv *= relu_grad(x));
                }
                (Layer::MaxPool, Cache::Pool { argmax }) => {
                    g = max_pool_backward(&g, argmax, shape.iter().product());
                }
                (Layer::Dropout { .. }, Cache::Dropout { mask }) => {
                    if let Some(m) = mask {
                        g.iter_mut().zip(m).for_each(|(gv, &k)| *gv *= k);
                    }
                }
                (Layer::Flatten, _) => {}
                (layer, _) => unreachable!("cache does not match layer {}", layer.name()),
            }
        }
    }

    /// Mean cross-entropy of the inference-mode outputs.
    pub fn loss(&self, batch: &Tensor<T>, labels: &[u8]) -> Result<T> {
        crate::nn::layers::cross_entropy_loss(&self.predict(batch)?, labels)
    }

    /// Index of the most probable class for every sample (lowest index on ties).
    pub fn classify(&self, batch: &Tensor<T>) -> Result<Vec<u8>> {
        let probs = self.predict(batch)?;
        Ok(probs.data().chunks_exact(self.output_len()).map(argmax).collect())
    }
}

pub fn argmax<T: Scalar>(row: &[T]) -> u8 {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best as u8
}

fn two_mut<T>(v: &mut [T], i: usize) -> (&mut T, &mut T) {
    let (a, b) = v.split_at_mut(i + 1);
    (&mut a[i], &mut b[0])
}

/// Architecture knobs for the convolutional classifier.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CnnConfig {
    pub input_side: usize,
    pub conv1_filters: usize,
    pub conv1_kernel: usize,
    pub conv2_filters: usize,
    pub conv2_kernel: usize,
    pub hidden_units: usize,
    pub classes: usize,
    pub dropout_pool: f64,
    pub dropout_fc: f64,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            input_side: 20,
            conv1_filters: 16,
            conv1_kernel: 5,
            conv2_filters: 32,
            conv2_kernel: 3,
            hidden_units: 128,
            classes: 16,
            dropout_pool: 0.25,
            dropout_fc: 0.5,
        }
    }
}

/// Architecture knobs for the fully connected classifier.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MlpConfig {
    pub input_side: usize,
    pub hidden_units: usize,
    pub classes: usize,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self { input_side: 20, hidden_units: 128, classes: 16 }
    }
}

/// Uniform fan-in/fan-out scaled initialization, `U(-a, a)` with
/// `a = sqrt(6 / (fan_in + fan_out))`.
fn init_uniform<T: Scalar, R: Rng>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Tensor<T> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.random_range(-a..a))).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}

fn conv_init<T: Scalar, R: Rng>(m: usize, c: usize, k: usize, rng: &mut R) -> Layer<T> {
    let filters = init_uniform(&[m, c, k, k], c * k * k, m * k * k, rng);
    Layer::Conv(ConvLayer::new(filters, Tensor::zeros(&[m])).expect("valid conv"))
}

fn dense_init<T: Scalar, R: Rng>(n_in: usize, n_out: usize, rng: &mut R) -> Layer<T> {
    let weights = init_uniform(&[n_out, n_in], n_in, n_out, rng);
    Layer::Dense(DenseLayer::new(weights, Tensor::zeros(&[n_out])).expect("valid dense"))
}

/// conv(k1) → leaky ReLU → pool → dropout → conv(k2) → leaky ReLU → pool →
/// dropout → flatten → dense → ReLU → dropout → dense → ReLU → dropout →
/// dense → softmax.
pub fn build_cnn<T: Scalar>(config: &CnnConfig, seed: u64) -> Result<Network<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = config.input_side;
    if side % 4 != 0 {
        return Err(NnError::Shape(format!("CNN input side {side} must be divisible by 4")));
    }
    let flat = config.conv2_filters * (side / 4) * (side / 4);
    let h = config.hidden_units;
    let layers = vec![
        conv_init(config.conv1_filters, 1, config.conv1_kernel, &mut rng),
        Layer::LeakyRelu,
        Layer::MaxPool,
        Layer::Dropout { rate: config.dropout_pool },
        conv_init(config.conv2_filters, config.conv1_filters, config.conv2_kernel, &mut rng),
        Layer::LeakyRelu,
        Layer::MaxPool,
        Layer::Dropout { rate: config.dropout_pool },
        Layer::Flatten,
        dense_init(flat, h, &mut rng),
        Layer::Relu,
        Layer::Dropout { rate: config.dropout_fc },
        dense_init(h, h, &mut rng),
        Layer::Relu,
        Layer::Dropout { rate: config.dropout_fc },
        dense_init(h, config.classes, &mut rng),
        Layer::Softmax,
    ];
    Network::new(vec![1, side, side], layers)
}

/// flatten → dense → ReLU → dense → ReLU → dense → softmax.
pub fn build_mlp<T: Scalar>(config: &MlpConfig, seed: u64) -> Result<Network<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = config.input_side;
    let h = config.hidden_units;
    let layers = vec![
        Layer::Flatten,
        dense_init(side * side, h, &mut rng),
        Layer::Relu,
        dense_init(h, h, &mut rng),
        Layer::Relu,
        dense_init(h, config.classes, &mut rng),
        Layer::Softmax,
    ];
    Network::new(vec![1, side, side], layers)
}

//! The embedding network: a small dense trunk followed by an optional
//! PCA-initialized linear bottleneck, with hand-written backpropagation.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use crate::dataset::{ByteCursor, FeatureMatrix, LabeledSet};
use crate::error::{DtcError, Result};
use crate::optim::{Optimizer, OptimizerKind};
use crate::rng;

const CHECKPOINT_MAGIC: &[u8; 4] = b"DTCE";
const CHECKPOINT_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
}

impl Activation {
    fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Tanh => 1,
        }
    }

    fn from_tag(tag: u8) -> Option<Activation> {
        match tag {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// Fully connected layer computing `act(x W^T + b)`; `weight` is out x in.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    fn xavier(n_in: usize, n_out: usize, activation: Activation, rng: &mut impl rand::Rng) -> Self {
        let std = (2.0 / (n_in + n_out) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("valid std");
        DenseLayer {
            weight: Array2::from_shape_fn((n_out, n_in), |_| normal.sample(rng)),
            bias: Array1::zeros(n_out),
            activation,
        }
    }

    pub fn n_in(&self) -> usize {
        self.weight.ncols()
    }

    pub fn n_out(&self) -> usize {
        self.weight.nrows()
    }

    fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.dot(&self.weight.t());
        out += &self.bias;
        if self.activation == Activation::Tanh {
            out.mapv_inplace(f64::tanh);
        }
        out
    }
}

/// The PCA head `z -> A z + b`, with `A` of shape c x d.
#[derive(Debug, Clone, PartialEq)]
pub struct Bottleneck {
    pub projection: Array2<f64>,
    pub offset: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    input_dim: usize,
    layers: Vec<DenseLayer>,
    bottleneck: Option<Bottleneck>,
}

/// Activations saved by [`EncoderParams::forward_cached`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input of every trunk layer plus the trunk output (len = layers + 1).
    activations: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

/// Gradients laid out like [`EncoderParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
    pub bottleneck: Option<(Array2<f64>, Array1<f64>)>,
}

impl EncoderGrads {
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in &self.layers {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        if let Some((a, b)) = &self.bottleneck {
            out.extend(a.iter());
            out.extend(b.iter());
        }
        out
    }
}

impl EncoderParams {
    /// Random trunk with tanh hidden layers of the given widths.
    pub fn new_random(input_dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden.contains(&0) {
            return Err(DtcError::param("layer widths must be >= 1"));
        }
        let mut rng = rng::stream(seed, 0x454e_4349);
        let mut layers = Vec::with_capacity(hidden.len());
        let mut n_in = input_dim;
        for &width in hidden {
            layers.push(DenseLayer::xavier(n_in, width, Activation::Tanh, &mut rng));
            n_in = width;
        }
        Ok(EncoderParams {
            input_dim,
            layers,
            bottleneck: None,
        })
    }

    pub fn identity(input_dim: usize) -> Self {
        EncoderParams {
            input_dim,
            layers: Vec::new(),
            bottleneck: None,
        }
    }

    pub fn from_parts(
        input_dim: usize,
        layers: Vec<DenseLayer>,
        bottleneck: Option<Bottleneck>,
    ) -> Result<Self> {
        let mut n_in = input_dim;
        if input_dim == 0 {
            return Err(DtcError::param("input dimension must be >= 1"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.n_in() != n_in || l.bias.len() != l.n_out() || l.n_out() == 0 {
                return Err(DtcError::param(format!("layer {i} has inconsistent dimensions")));
            }
            n_in = l.n_out();
        }
        if let Some(b) = &bottleneck {
            if b.projection.ncols() != n_in
                || b.offset.len() != b.projection.nrows()
                || b.projection.nrows() == 0
            {
                return Err(DtcError::param("bottleneck has inconsistent dimensions"));
            }
        }
        let params = EncoderParams {
            input_dim,
            layers,
            bottleneck,
        };
        if params.to_flat().iter().any(|v| !v.is_finite()) {
            return Err(DtcError::Validation("encoder parameters must be finite".into()));
        }
        Ok(params)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn trunk_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, DenseLayer::n_out)
    }

    pub fn output_dim(&self) -> usize {
        self.bottleneck
            .as_ref()
            .map_or(self.trunk_dim(), |b| b.projection.nrows())
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn bottleneck(&self) -> Option<&Bottleneck> {
        self.bottleneck.as_ref()
    }

    pub fn n_trunk_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn n_params(&self) -> usize {
        self.n_trunk_params()
            + self
                .bottleneck
                .as_ref()
                .map_or(0, |b| b.projection.len() + b.offset.len())
    }

    /// Parameters in layer order, weights row-major before biases.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        if let Some(b) = &self.bottleneck {
            out.extend(b.projection.iter());
            out.extend(b.offset.iter());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_params(), "flat parameter length");
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            l.weight.iter_mut().for_each(|w| *w = it.next().unwrap());
            l.bias.iter_mut().for_each(|w| *w = it.next().unwrap());
        }
        if let Some(b) = &mut self.bottleneck {
            b.projection.iter_mut().for_each(|w| *w = it.next().unwrap());
            b.offset.iter_mut().for_each(|w| *w = it.next().unwrap());
        }
    }

    fn check_input(&self, x: ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim {
            return Err(DtcError::param(format!(
                "input dimension {} does not match encoder input {}",
                x.ncols(),
                self.input_dim
            )));
        }
        Ok(())
    }

    /// Trunk features, ignoring any bottleneck.
    pub fn trunk_forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let mut h = x.to_owned();
        for l in &self.layers {
            h = l.apply(h.view());
        }
        Ok(h)
    }

    pub fn forward_values(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let h = self.trunk_forward(x)?;
        Ok(match &self.bottleneck {
            Some(b) => {
                let mut z = h.dot(&b.projection.t());
                z += &b.offset;
                z
            }
            None => h,
        })
    }

    pub fn forward(&self, batch: &FeatureMatrix) -> Result<FeatureMatrix> {
        let z = self.forward_values(batch.values())?;
        batch.with_values(z)
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        self.check_input(x)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_owned());
        for l in &self.layers {
            let next = l.apply(activations.last().expect("nonempty").view());
            activations.push(next);
        }
        let trunk = activations.last().expect("nonempty");
        let output = match &self.bottleneck {
            Some(b) => {
                let mut z = trunk.dot(&b.projection.t());
                z += &b.offset;
                z
            }
            None => trunk.clone(),
        };
        Ok(ForwardCache {
            activations,
            output,
        })
    }

    /// Backpropagates `upstream` (dL/d output) through a cached forward pass.
    /// Returns parameter gradients and dL/d input.
    pub fn backward_cached(
        &self,
        cache: &ForwardCache,
        upstream: ArrayView2<f64>,
    ) -> Result<(EncoderGrads, Array2<f64>)> {
        if upstream.dim() != cache.output.dim() {
            return Err(DtcError::param(format!(
                "upstream gradient shape {:?} does not match output {:?}",
                upstream.dim(),
                cache.output.dim()
            )));
        }
        let trunk_out = cache.activations.last().expect("nonempty");
        let (bottleneck, mut grad) = match &self.bottleneck {
            Some(b) => {
                let grad_a = upstream.t().dot(trunk_out);
                let grad_b = upstream.sum_axis(Axis(0));
                (Some((grad_a, grad_b)), upstream.dot(&b.projection))
            }
            None => (None, upstream.to_owned()),
        };
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate().rev() {
            if l.activation == Activation::Tanh {
                let out = &cache.activations[i + 1];
                grad.zip_mut_with(out, |g, &h| *g *= 1.0 - h * h);
            }
            let input = &cache.activations[i];
            let grad_w = grad.t().dot(input);
            let grad_b = grad.sum_axis(Axis(0));
            grad = grad.dot(&l.weight);
            layers.push((grad_w, grad_b));
        }
        layers.reverse();
        Ok((EncoderGrads { layers, bottleneck }, grad))
    }

    pub fn backward(
        &self,
        batch: ArrayView2<f64>,
        upstream: ArrayView2<f64>,
    ) -> Result<(EncoderGrads, Array2<f64>)> {
        let cache = self.forward_cached(batch)?;
        self.backward_cached(&cache, upstream)
    }

    /// Appends the PCA projection as the encoder head.
    pub fn install_bottleneck(&self, pca: &PcaModel) -> Result<EncoderParams> {
        if self.bottleneck.is_some() {
            return Err(DtcError::param("bottleneck already present"));
        }
        if pca.mean.len() != self.trunk_dim() {
            return Err(DtcError::param(format!(
                "PCA dimension {} does not match trunk output {}",
                pca.mean.len(),
                self.trunk_dim()
            )));
        }
        let projection = pca.components.clone();
        let offset = -projection.dot(&pca.mean);
        Ok(EncoderParams {
            input_dim: self.input_dim,
            layers: self.layers.clone(),
            bottleneck: Some(Bottleneck { projection, offset }),
        })
    }

    pub fn to_checkpoint(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.push(CHECKPOINT_VERSION);
        out.extend_from_slice(&(self.input_dim as u32).to_le_bytes());
        let n_layers = self.layers.len() + usize::from(self.bottleneck.is_some());
        out.extend_from_slice(&(n_layers as u32).to_le_bytes());
        for l in &self.layers {
            out.extend_from_slice(&(l.n_in() as u32).to_le_bytes());
            out.extend_from_slice(&(l.n_out() as u32).to_le_bytes());
            out.push(l.activation.tag());
        }
        if let Some(b) = &self.bottleneck {
            out.extend_from_slice(&(b.projection.ncols() as u32).to_le_bytes());
            out.extend_from_slice(&(b.projection.nrows() as u32).to_le_bytes());
            out.push(BOTTLENECK_TAG);
        }
        for v in self.to_flat() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_checkpoint(bytes: &[u8]) -> Result<EncoderParams> {
        let mut cur = ByteCursor { bytes, pos: 0 };
        if cur.take(4)? != CHECKPOINT_MAGIC {
            return Err(cur.err("bad magic, expected DTCE"));
        }
        let version = cur.u8()?;
        if version != CHECKPOINT_VERSION {
            return Err(cur.err(&format!("unsupported checkpoint version {version}")));
        }
        let input_dim = cur.u32()? as usize;
        let n_layers = cur.u32()? as usize;
        let mut shapes = Vec::with_capacity(n_layers);
        for i in 0..n_layers {
            let n_in = cur.u32()? as usize;
            let n_out = cur.u32()? as usize;
            let tag = cur.u8()?;
            if tag == BOTTLENECK_TAG && i + 1 != n_layers {
                return Err(cur.err("bottleneck must be the last layer"));
            }
            shapes.push((n_in, n_out, tag));
        }
        let read_matrix = |cur: &mut ByteCursor, rows: usize, cols: usize| -> Result<Array2<f64>> {
            let mut v = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                v.push(cur.f64()?);
            }
            Ok(Array2::from_shape_vec((rows, cols), v).expect("shape"))
        };
        let mut layers = Vec::new();
        let mut bottleneck = None;
        for (n_in, n_out, tag) in shapes {
            let w = read_matrix(&mut cur, n_out, n_in)?;
            let b = read_matrix(&mut cur, 1, n_out)?.into_shape_with_order(n_out).expect("shape");
            if tag == BOTTLENECK_TAG {
                bottleneck = Some(Bottleneck {
                    projection: w,
                    offset: b,
                });
            } else {
                let activation = Activation::from_tag(tag)
                    .ok_or_else(|| cur.err(&format!("unknown activation tag {tag}")))?;
                layers.push(DenseLayer {
                    weight: w,
                    bias: b,
                    activation,
                });
            }
        }
        if cur.pos != bytes.len() {
            return Err(cur.err("trailing bytes"));
        }
        EncoderParams::from_parts(input_dim, layers, bottleneck)
    }
}

const BOTTLENECK_TAG: u8 = 2;

/// Principal axes of a feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Array1<f64>,
    /// c x d, orthonormal rows.
    pub components: Array2<f64>,
    pub explained_variance: Array1<f64>,
}

impl PcaModel {
    pub fn transform(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let centered = &x - &self.mean;
        centered.dot(&self.components.t())
    }

    pub fn reconstruct(&self, projected: ArrayView2<f64>) -> Array2<f64> {
        projected.dot(&self.components) + &self.mean
    }
}

/// Top-`n_components` principal directions via eigendecomposition of the
/// sample covariance. Each component's largest-magnitude entry is positive.
pub fn fit_pca(features: ArrayView2<f64>, n_components: usize) -> Result<PcaModel> {
    let (n, d) = features.dim();
    if n_components == 0 || n_components > n.min(d) {
        return Err(DtcError::param(format!(
            "cannot retain {n_components} components from {n} rows of dimension {d}"
        )));
    }
    let mean = features.mean_axis(Axis(0)).expect("n >= 1");
    let centered = &features - &mean;
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    let cov = centered.t().dot(&centered) / denom;

    let cov = nalgebra::DMatrix::from_fn(d, d, |i, j| 0.5 * (cov[[i, j]] + cov[[j, i]]));
    let eig = nalgebra::SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("finite eigenvalues")
            .then(a.cmp(&b))
    });

    let mut components = Array2::zeros((n_components, d));
    let mut explained = Array1::zeros(n_components);
    for (row, &col) in order.iter().take(n_components).enumerate() {
        let v = eig.eigenvectors.column(col);
        let pivot = (0..d)
            .max_by(|&a, &b| v[a].abs().partial_cmp(&v[b].abs()).expect("finite").then(b.cmp(&a)))
            .expect("d >= 1");
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..d {
            components[[row, j]] = sign * v[j];
        }
        explained[row] = eig.eigenvalues[col].max(0.0);
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance: explained,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            hidden: vec![64],
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.02,
            optimizer: OptimizerKind::SGD_MOMENTUM,
        }
    }
}

/// Result of supervised pretraining; the classification head is kept only
/// for diagnostics.
#[derive(Debug, Clone)]
pub struct Pretrained {
    pub encoder: EncoderParams,
    pub head: DenseLayer,
    /// Mean cross-entropy over the training set, before training and after
    /// each epoch (len = epochs + 1).
    pub epoch_losses: Vec<f64>,
}

impl Pretrained {
    pub fn head_logits(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let h = self.encoder.trunk_forward(x)?;
        Ok(self.head.apply(h.view()))
    }

    pub fn head_accuracy(&self, x: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
        let logits = self.head_logits(x)?;
        let correct = logits
            .rows()
            .into_iter()
            .zip(labels)
            .filter(|(row, &l)| argmax(row.iter().copied()) == l)
            .count();
        Ok(correct as f64 / labels.len().max(1) as f64)
    }
}

pub(crate) fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

/// Trains a trunk with a temporary softmax head under cross-entropy.
pub fn pretrain_encoder(
    labeled: &LabeledSet,
    config: &PretrainConfig,
    seed: u64,
) -> Result<Pretrained> {
    let n_classes = labeled.n_classes();
    if n_classes < 2 {
        return Err(DtcError::param("pretraining needs at least 2 classes"));
    }
    if config.batch_size == 0 || !(config.learning_rate > 0.0) {
        return Err(DtcError::param("batch size and learning rate must be positive"));
    }
    let x = labeled.features().values();
    let labels = labeled.labels();
    let mut encoder = EncoderParams::new_random(x.ncols(), &config.hidden, seed)?;
    let mut head_rng = rng::stream(seed, 0x4845_4144);
    let mut head = DenseLayer::xavier(encoder.trunk_dim(), n_classes, Activation::Identity, &mut head_rng);

    let n_trunk = encoder.n_params();
    let mut flat: Vec<f64> = encoder.to_flat();
    flat.extend(head.weight.iter());
    flat.extend(head.bias.iter());
    let mut opt = Optimizer::new(config.optimizer, config.learning_rate, flat.len());
    let mut shuffle_rng = rng::stream(seed, 0x5348_5546);
    let mut order: Vec<usize> = (0..x.nrows()).collect();

    let full_loss = |encoder: &EncoderParams, head: &DenseLayer| -> Result<f64> {
        let h = encoder.trunk_forward(x)?;
        let logits = head.apply(h.view());
        Ok(cross_entropy(&logits, labels).0)
    };
    let mut epoch_losses = vec![full_loss(&encoder, &head)?];

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(config.batch_size) {
            let xb = x.select(Axis(0), chunk);
            let lb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let cache = encoder.forward_cached(xb.view())?;
            let logits = head.apply(cache.output.view());
            let (_, grad_logits) = cross_entropy(&logits, &lb);
            let grad_hw = grad_logits.t().dot(&cache.output);
            let grad_hb = grad_logits.sum_axis(Axis(0));
            let grad_h = grad_logits.dot(&head.weight);
            let (grads, _) = encoder.backward_cached(&cache, grad_h.view())?;
            let mut g = grads.to_flat();
            g.extend(grad_hw.iter());
            g.extend(grad_hb.iter());
            opt.step(&mut flat, &g);
            encoder.set_flat(&flat[..n_trunk]);
            let (hw, hb) = flat[n_trunk..].split_at(head.weight.len());
            head.weight.iter_mut().zip(hw).for_each(|(w, v)| *w = *v);
            head.bias.iter_mut().zip(hb).for_each(|(w, v)| *w = *v);
        }
        let loss = full_loss(&encoder, &head)?;
        if !loss.is_finite() {
            return Err(DtcError::Training {
                epoch,
                message: "non-finite pretraining loss".into(),
            });
        }
        epoch_losses.push(loss);
    }
    Ok(Pretrained {
        encoder,
        head,
        epoch_losses,
    })
}

/// Mean softmax cross-entropy and its gradient w.r.t. the logits.
fn cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> (f64, Array2<f64>) {
    let n = logits.nrows() as f64;
    let mut grad = logits.clone();
    let mut loss = 0.0;
    for (mut row, &label) in grad.rows_mut().into_iter().zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let total: f64 = row.sum();
        row.mapv_inplace(|v| v / total);
        loss -= row[label].max(f64::MIN_POSITIVE).ln();
        row[label] -= 1.0;
    }
    grad /= n;
    (loss / n, grad)
}

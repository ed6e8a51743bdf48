use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, domain};

use super::dense::DenseMatrix;
use super::sparse::SparseAdjacency;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    /// Two graph-convolution layers followed by one linear classifier.
    Gcn2Mlp1,
    /// Two-layer perceptron without graph propagation.
    Mlp2,
}

impl Arch {
    pub fn tag(self) -> u8 {
        match self {
            Arch::Gcn2Mlp1 => 0,
            Arch::Mlp2 => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Arch::Gcn2Mlp1),
            1 => Some(Arch::Mlp2),
            _ => None,
        }
    }

    fn layer_count(self) -> usize {
        match self {
            Arch::Gcn2Mlp1 => 3,
            Arch::Mlp2 => 2,
        }
    }

    /// Whether layer `l` reads a graph-propagated input.
    fn propagates(self, l: usize) -> bool {
        self == Arch::Gcn2Mlp1 && l < 2
    }
}

/// One affine map `x·W + b`; `weight` is `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: DenseMatrix,
    pub bias: Option<Vec<f64>>,
}

impl Layer {
    fn zeros_like(&self) -> Self {
        Layer {
            weight: DenseMatrix::zeros(self.weight.rows(), self.weight.cols()),
            bias: self.bias.as_ref().map(|b| vec![0.0; b.len()]),
        }
    }

    fn signature(&self) -> (usize, usize, bool) {
        (self.weight.rows(), self.weight.cols(), self.bias.is_some())
    }
}

fn slices(layers: &[Layer]) -> Vec<&[f64]> {
    let mut out = Vec::with_capacity(layers.len() * 2);
    for l in layers {
        out.push(l.weight.data());
        if let Some(b) = &l.bias {
            out.push(b.as_slice());
        }
    }
    out
}

fn slices_mut(layers: &mut [Layer]) -> Vec<&mut [f64]> {
    let mut out = Vec::with_capacity(layers.len() * 2);
    for l in layers {
        out.push(l.weight.data_mut());
        if let Some(b) = &mut l.bias {
            out.push(b.as_mut_slice());
        }
    }
    out
}

/// A set of tensors shaped like a model's parameters: gradients, Fisher
/// diagonals, optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn signature(&self) -> Vec<(usize, usize, bool)> {
        self.layers.iter().map(Layer::signature).collect()
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        slices(&self.layers)
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        slices_mut(&mut self.layers)
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.slices().into_iter().flat_map(|s| s.iter().copied())
    }

    pub fn scale(&mut self, s: f64) {
        for sl in self.slices_mut() {
            sl.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) -> Result<()> {
        if self.signature() != other.signature() {
            return Err(Error::shape("Gradients::add_assign", format!("{:?}", self.signature()), format!("{:?}", other.signature())));
        }
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }

    pub fn max_abs(&self) -> f64 {
        self.values().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Zero-pads every tensor up to `target`'s shapes (used when the classifier head grows).
    pub fn pad_to(&self, target: &[(usize, usize, bool)]) -> Result<Gradients> {
        if target.len() != self.layers.len() {
            return Err(Error::shape("Gradients::pad_to", self.layers.len(), target.len()));
        }
        let mut layers = Vec::with_capacity(target.len());
        for (l, &(rows, cols, has_bias)) in self.layers.iter().zip(target) {
            let (r0, c0) = l.weight.shape();
            if r0 > rows || c0 > cols || l.bias.is_some() != has_bias {
                return Err(Error::shape("Gradients::pad_to", format!("{rows}x{cols}"), format!("{r0}x{c0}")));
            }
            let mut w = DenseMatrix::zeros(rows, cols);
            for r in 0..r0 {
                w.row_mut(r)[..c0].copy_from_slice(l.weight.row(r));
            }
            let bias = l.bias.as_ref().map(|b| {
                let mut nb = vec![0.0; cols];
                nb[..b.len()].copy_from_slice(b);
                nb
            });
            layers.push(Layer { weight: w, bias });
        }
        Ok(Gradients { layers })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: Arch,
    layers: Vec<Layer>,
    hidden_dim: usize,
    dropout_rate: f64,
}

fn glorot_fill(w: &mut DenseMatrix, fan_in: usize, fan_out: usize, cols: std::ops::Range<usize>, rng: &mut impl Rng) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for r in 0..w.rows() {
        for c in cols.clone() {
            w.set(r, c, rng.random_range(-limit..limit));
        }
    }
}

impl ModelParams {
    /// Seeded Glorot-uniform initialization. Graph-convolution layers carry a
    /// bias only when `conv_bias` is set; the output layer always has one.
    pub fn init(
        arch: Arch,
        input_dim: usize,
        hidden_dim: usize,
        num_classes: usize,
        dropout_rate: f64,
        conv_bias: bool,
        seed: u64,
    ) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 || num_classes == 0 {
            return Err(Error::Invalid("model dimensions must be positive".into()));
        }
        let dims: Vec<usize> = match arch {
            Arch::Gcn2Mlp1 => vec![input_dim, hidden_dim, hidden_dim, num_classes],
            Arch::Mlp2 => vec![input_dim, hidden_dim, num_classes],
        };
        let mut rng = rng::stream(seed, rng::tag(domain::INIT, 0));
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let mut w = DenseMatrix::zeros(fan_in, fan_out);
            glorot_fill(&mut w, fan_in, fan_out, 0..fan_out, &mut rng);
            let is_output = l == dims.len() - 2;
            let bias = (is_output || !arch.propagates(l) || conv_bias).then(|| vec![0.0; fan_out]);
            layers.push(Layer { weight: w, bias });
        }
        Self::from_layers(arch, layers, dropout_rate)
    }

    /// Validates the layer chain for `arch`.
    pub fn from_layers(arch: Arch, layers: Vec<Layer>, dropout_rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::Invalid(format!("dropout rate {dropout_rate} outside [0, 1)")));
        }
        if layers.len() != arch.layer_count() {
            return Err(Error::shape("ModelParams", arch.layer_count(), layers.len()));
        }
        for w in layers.windows(2) {
            if w[0].weight.cols() != w[1].weight.rows() {
                return Err(Error::shape("ModelParams layer chain", w[0].weight.cols(), w[1].weight.rows()));
            }
        }
        for l in &layers {
            if let Some(b) = &l.bias {
                if b.len() != l.weight.cols() {
                    return Err(Error::shape("ModelParams bias", l.weight.cols(), b.len()));
                }
            }
        }
        if arch == Arch::Gcn2Mlp1 && layers[1].weight.rows() != layers[1].weight.cols() {
            return Err(Error::shape("ModelParams hidden", layers[1].weight.rows(), layers[1].weight.cols()));
        }
        let hidden_dim = layers[0].weight.cols();
        Ok(Self {
            arch,
            layers,
            hidden_dim,
            dropout_rate,
        })
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().expect("non-empty").weight.cols()
    }

    pub fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn signature(&self) -> Vec<(usize, usize, bool)> {
        self.layers.iter().map(Layer::signature).collect()
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        slices(&self.layers)
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        slices_mut(&mut self.layers)
    }

    pub fn zeros_like(&self) -> Gradients {
        Gradients {
            layers: self.layers.iter().map(Layer::zeros_like).collect(),
        }
    }

    /// The parameters viewed as a gradient-shaped tensor set.
    pub fn as_tensors(&self) -> Gradients {
        Gradients {
            layers: self.layers.clone(),
        }
    }

    /// Appends seeded Glorot columns to the output layer until it has `total` classes.
    pub fn grow_classes(&mut self, total: usize, seed: u64) -> Result<()> {
        let out = self.layers.last_mut().expect("non-empty");
        let (rows, old) = out.weight.shape();
        if total < old {
            return Err(Error::Invalid(format!("cannot shrink classifier from {old} to {total}")));
        }
        if total == old {
            return Ok(());
        }
        let mut w = DenseMatrix::zeros(rows, total);
        for r in 0..rows {
            w.row_mut(r)[..old].copy_from_slice(out.weight.row(r));
        }
        let mut rng = rng::stream(seed, rng::tag(domain::HEAD_GROWTH, total as u64));
        glorot_fill(&mut w, rows, total, old..total, &mut rng);
        out.weight = w;
        if let Some(b) = &mut out.bias {
            b.resize(total, 0.0);
        }
        Ok(())
    }
}

/// Activations retained by [`model_forward`] for [`model_backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<'a> {
    arch: Arch,
    signature: Vec<(usize, usize, bool)>,
    propagation: Option<&'a SparseAdjacency>,
    /// Input to each affine layer (after propagation where applicable).
    inputs: Vec<DenseMatrix>,
    /// Pre-activations of hidden layers.
    pre: Vec<DenseMatrix>,
    /// Scaled dropout masks of hidden layers (training mode only).
    masks: Vec<Option<DenseMatrix>>,
    logits_shape: (usize, usize),
}

impl ForwardCache<'_> {
    /// Final hidden representation, i.e. the input to the classifier layer.
    pub fn hidden(&self) -> &DenseMatrix {
        self.inputs.last().expect("non-empty")
    }
}

fn dropout_mask(rows: usize, cols: usize, rate: f64, seed: u64, layer: usize) -> DenseMatrix {
    let mut rng = rng::stream(seed, rng::tag(domain::DROPOUT, layer as u64));
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    let data = (0..rows * cols)
        .map(|_| if rng.random::<f64>() < keep { scale } else { 0.0 })
        .collect();
    DenseMatrix::from_vec(rows, cols, data).expect("mask shape")
}

fn affine(x: &DenseMatrix, layer: &Layer) -> Result<DenseMatrix> {
    let mut z = x.matmul(&layer.weight)?;
    if let Some(b) = &layer.bias {
        z.add_row_vector(b)?;
    }
    Ok(z)
}

/// Forward pass. Dropout is applied after each hidden ReLU only when
/// `dropout_seed` is given.
pub fn model_forward<'a>(
    p: &ModelParams,
    propagation: Option<&'a SparseAdjacency>,
    x: &DenseMatrix,
    dropout_seed: Option<u64>,
) -> Result<(DenseMatrix, ForwardCache<'a>)> {
    match (p.arch, propagation) {
        (Arch::Gcn2Mlp1, None) => return Err(Error::Invalid("gcn2_mlp1 requires a propagation operator".into())),
        (Arch::Mlp2, Some(_)) => return Err(Error::Invalid("mlp2 takes no propagation operator".into())),
        _ => {}
    }
    if x.cols() != p.input_dim() {
        return Err(Error::shape("model_forward input", p.input_dim(), x.cols()));
    }
    let n_layers = p.layers.len();
    let mut inputs = Vec::with_capacity(n_layers);
    let mut pre = Vec::with_capacity(n_layers - 1);
    let mut masks = Vec::with_capacity(n_layers - 1);
    let mut h = x.clone();
    for (l, layer) in p.layers.iter().enumerate() {
        let input = match propagation {
            Some(s) if p.arch.propagates(l) => s.spmm(&h)?,
            _ => h,
        };
        let z = affine(&input, layer)?;
        inputs.push(input);
        if l + 1 == n_layers {
            if !z.is_finite() {
                return Err(Error::NonFinite("logits".into()));
            }
            let logits_shape = z.shape();
            return Ok((
                z,
                ForwardCache {
                    arch: p.arch,
                    signature: p.signature(),
                    propagation,
                    inputs,
                    pre,
                    masks,
                    logits_shape,
                },
            ));
        }
        if !z.is_finite() {
            return Err(Error::NonFinite(format!("pre-activation of layer {l}")));
        }
        let mut act = z.clone();
        act.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        let mask = match dropout_seed {
            Some(seed) if p.dropout_rate > 0.0 => {
                let m = dropout_mask(act.rows(), act.cols(), p.dropout_rate, seed, l);
                act.data_mut().iter_mut().zip(m.data()).for_each(|(a, k)| *a *= k);
                Some(m)
            }
            _ => None,
        };
        pre.push(z);
        masks.push(mask);
        h = act;
    }
    unreachable!("layer loop returns at the output layer")
}

/// Exact parameter gradients for the loss whose logit-gradient is `dlogits`.
pub fn model_backward(p: &ModelParams, cache: &ForwardCache<'_>, dlogits: &DenseMatrix) -> Result<Gradients> {
    if cache.arch != p.arch || cache.signature != p.signature() {
        return Err(Error::Invalid("forward cache does not match these parameters".into()));
    }
    if dlogits.shape() != cache.logits_shape {
        return Err(Error::shape(
            "model_backward dlogits",
            format!("{:?}", cache.logits_shape),
            format!("{:?}", dlogits.shape()),
        ));
    }
    let transposed = cache.propagation.map(SparseAdjacency::transpose);
    let n_layers = p.layers.len();
    let mut grads: Vec<Option<Layer>> = vec![None; n_layers];
    let mut delta = dlogits.clone();
    for l in (0..n_layers).rev() {
        let layer = &p.layers[l];
        let weight = cache.inputs[l].t_matmul(&delta)?;
        let bias = layer.bias.as_ref().map(|_| delta.col_sums());
        grads[l] = Some(Layer { weight, bias });
        if l == 0 {
            break;
        }
        // gradient w.r.t. this layer's input
        let d_input = delta.matmul_t(&layer.weight)?;
        let d_act = match &transposed {
            Some(st) if p.arch.propagates(l) => st.spmm(&d_input)?,
            _ => d_input,
        };
        let z = &cache.pre[l - 1];
        let mut d_pre = d_act;
        for (i, d) in d_pre.data_mut().iter_mut().enumerate() {
            if z.data()[i] <= 0.0 {
                *d = 0.0;
            }
        }
        if let Some(m) = &cache.masks[l - 1] {
            d_pre.data_mut().iter_mut().zip(m.data()).for_each(|(d, k)| *d *= k);
        }
        delta = d_pre;
    }
    Ok(Gradients {
        layers: grads.into_iter().map(|g| g.expect("every layer visited")).collect(),
    })
}

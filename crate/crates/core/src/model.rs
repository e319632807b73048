//! Embedding encoder (a plain MLP with unit-normalized output), the class
//! prototype matrix, and exact backpropagation through both normalizations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{dot, norm2, Matrix, Rng};

/// Pre-normalization norms below this signal a dead initialization.
const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    ReLU,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `d_out x d_in`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// Architecture of an encoder: input width, hidden widths, embedding width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
}

impl EncoderConfig {
    pub fn new(input_dim: usize, hidden: Vec<usize>, embed_dim: usize) -> Self {
        EncoderConfig {
            input_dim,
            hidden,
            embed_dim,
        }
    }
}

/// Feed-forward encoder producing L2-normalized embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    layers: Vec<Layer>,
    input_dim: usize,
    embed_dim: usize,
}

/// Anything that maps an input batch to unit-norm embedding rows.
pub trait Embedder {
    fn embed_dim(&self) -> usize;
    fn embed(&self, batch: &Matrix) -> Result<Matrix>;
}

impl EncoderModel {
    /// Kaiming-uniform fan-in initialization, biases zero, hidden layers ReLU,
    /// final layer linear.
    pub fn init(cfg: &EncoderConfig, rng: &mut Rng) -> Result<Self> {
        if cfg.input_dim == 0 || cfg.embed_dim == 0 {
            return Err(Error::arg("encoder dimensions must be positive"));
        }
        let mut dims = vec![cfg.input_dim];
        dims.extend_from_slice(&cfg.hidden);
        dims.push(cfg.embed_dim);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in 0..dims.len() - 1 {
            let (d_in, d_out) = (dims[w], dims[w + 1]);
            let bound = (6.0 / d_in as f64).sqrt();
            let mut weight = Matrix::zeros(d_out, d_in);
            for v in weight.data_mut() {
                *v = rng.uniform(-bound, bound);
            }
            let activation = if w + 1 == dims.len() - 1 {
                Activation::None
            } else {
                Activation::ReLU
            };
            layers.push(Layer {
                weight,
                bias: vec![0.0; d_out],
                activation,
            });
        }
        Ok(EncoderModel {
            layers,
            input_dim: cfg.input_dim,
            embed_dim: cfg.embed_dim,
        })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::arg("encoder needs at least one layer"));
        }
        for w in layers.windows(2) {
            if w[0].weight.rows() != w[1].weight.cols() {
                return Err(Error::shape("encoder layer widths do not chain"));
            }
        }
        let input_dim = layers[0].weight.cols();
        let embed_dim = layers[layers.len() - 1].weight.rows();
        Ok(EncoderModel {
            layers,
            input_dim,
            embed_dim,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn config(&self) -> EncoderConfig {
        let hidden = self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.weight.rows())
            .collect();
        EncoderConfig::new(self.input_dim, hidden, self.embed_dim)
    }

    /// Forward pass. Every output row has unit L2 norm; the cache retains
    /// everything backward needs (layer inputs, pre-activations, the
    /// pre-normalization vectors and their norms).
    pub fn forward(&self, batch: &Matrix) -> Result<(Matrix, ForwardCache)> {
        if batch.cols() != self.input_dim {
            return Err(Error::shape(format!(
                "encoder expects input width {}, got {}",
                self.input_dim,
                batch.cols()
            )));
        }
        if batch.rows() == 0 {
            return Err(Error::arg("encoder_forward: empty batch"));
        }
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut x = batch.clone();
        for layer in &self.layers {
            layer_inputs.push(x.clone());
            let mut z = x.matmul_nt(&layer.weight)?;
            for i in 0..z.rows() {
                for (v, b) in z.row_mut(i).iter_mut().zip(&layer.bias) {
                    *v += b;
                }
            }
            pre_activations.push(z.clone());
            if layer.activation == Activation::ReLU {
                for v in z.data_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            x = z;
        }
        let pre_norm = x;
        let mut norms = Vec::with_capacity(pre_norm.rows());
        let mut embeddings = Matrix::zeros(pre_norm.rows(), self.embed_dim);
        for i in 0..pre_norm.rows() {
            let n = norm2(pre_norm.row(i));
            if n < DEGENERATE_NORM {
                return Err(Error::DegenerateEmbedding(format!(
                    "row {i} has pre-normalization norm {n:e}"
                )));
            }
            norms.push(n);
            for (e, &u) in embeddings.row_mut(i).iter_mut().zip(pre_norm.row(i)) {
                *e = u / n;
            }
        }
        let cache = ForwardCache {
            layer_inputs,
            pre_activations,
            pre_norm,
            norms,
            embeddings: embeddings.clone(),
        };
        Ok((embeddings, cache))
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.data().len() + l.bias.len())
            .sum()
    }

    /// Appends all parameters (per layer: weight row-major, then bias).
    pub fn write_params(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(&l.bias);
        }
    }

    /// Reads parameters back in the `write_params` order; returns the number
    /// of values consumed.
    pub fn read_params(&mut self, flat: &[f64]) -> Result<usize> {
        let need = self.param_count();
        if flat.len() < need {
            return Err(Error::shape(format!(
                "parameter vector too short: {} < {}",
                flat.len(),
                need
            )));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let wlen = l.weight.data().len();
            l.weight.data_mut().copy_from_slice(&flat[off..off + wlen]);
            off += wlen;
            let blen = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + blen]);
            off += blen;
        }
        Ok(off)
    }
}

impl Embedder for EncoderModel {
    fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    fn embed(&self, batch: &Matrix) -> Result<Matrix> {
        Ok(self.forward(batch)?.0)
    }
}

/// Intermediate state of one forward pass, consumed by backward.
pub struct ForwardCache {
    layer_inputs: Vec<Matrix>,
    pre_activations: Vec<Matrix>,
    pre_norm: Matrix,
    norms: Vec<f64>,
    embeddings: Matrix,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.pre_norm.rows()
    }

    pub fn embeddings(&self) -> &Matrix {
        &self.embeddings
    }
}

/// Per-layer gradients in the same order as the parameters.
#[derive(Debug, Clone)]
pub struct EncoderGrads {
    pub layers: Vec<(Matrix, Vec<f64>)>,
}

impl EncoderGrads {
    pub fn write_flat(&self, out: &mut Vec<f64>) {
        for (w, b) in &self.layers {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b);
        }
    }
}

/// Backpropagates a gradient with respect to the unit embeddings through the
/// normalization and every layer of the encoder.
pub fn encoder_backward(
    model: &EncoderModel,
    cache: &ForwardCache,
    grad_embed: &Matrix,
) -> Result<EncoderGrads> {
    let n = cache.batch_size();
    if grad_embed.rows() != n || grad_embed.cols() != model.embed_dim {
        return Err(Error::shape(format!(
            "grad_embed is {}x{}, expected {}x{}",
            grad_embed.rows(),
            grad_embed.cols(),
            n,
            model.embed_dim
        )));
    }
    // Through e = u / ||u||:  dL/du = (g - (g . e) e) / ||u||.
    let mut delta = Matrix::zeros(n, model.embed_dim);
    for i in 0..n {
        let g = grad_embed.row(i);
        let e = cache.embeddings.row(i);
        let ge = dot(g, e);
        let inv = 1.0 / cache.norms[i];
        for (d, (&gk, &ek)) in delta.row_mut(i).iter_mut().zip(g.iter().zip(e)) {
            *d = (gk - ge * ek) * inv;
        }
    }

    let mut grads = vec![None; model.layers.len()];
    for (idx, layer) in model.layers.iter().enumerate().rev() {
        if layer.activation == Activation::ReLU {
            let z = &cache.pre_activations[idx];
            for (d, &zv) in delta.data_mut().iter_mut().zip(z.data()) {
                if zv <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        let x = &cache.layer_inputs[idx];
        // dL/dW = delta^T x,  dL/db = column sums of delta.
        let grad_w = delta.matmul_tn(x)?;
        let mut grad_b = vec![0.0; layer.bias.len()];
        for i in 0..n {
            for (gb, &d) in grad_b.iter_mut().zip(delta.row(i)) {
                *gb += d;
            }
        }
        grads[idx] = Some((grad_w, grad_b));
        if idx > 0 {
            delta = delta.matmul(&layer.weight)?;
        }
    }
    Ok(EncoderGrads {
        layers: grads.into_iter().map(|g| g.unwrap()).collect(),
    })
}

/// Class prototype matrix, one row per class. Rows are re-normalized on every
/// cosine computation so frozen weights stay byte-stable.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub weights: Matrix,
    pub frozen: bool,
}

impl Classifier {
    pub fn init(num_classes: usize, embed_dim: usize, rng: &mut Rng) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::arg("classifier needs at least 2 classes"));
        }
        let bound = (6.0 / embed_dim as f64).sqrt();
        let mut weights = Matrix::zeros(num_classes, embed_dim);
        for v in weights.data_mut() {
            *v = rng.uniform(-bound, bound);
        }
        Ok(Classifier {
            weights,
            frozen: false,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn embed_dim(&self) -> usize {
        self.weights.cols()
    }

    /// A frozen byte copy, as inherited by a student.
    pub fn frozen_copy(&self) -> Classifier {
        Classifier {
            weights: self.weights.clone(),
            frozen: true,
        }
    }

    /// Raw weights as little-endian bytes, for freeze auditing.
    pub fn weight_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.weights.data().len() * 8);
        for v in self.weights.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    fn normalized_rows(&self) -> Result<Matrix> {
        let mut w = self.weights.clone();
        for k in 0..w.rows() {
            let n = norm2(w.row(k));
            if n < DEGENERATE_NORM {
                return Err(Error::DegenerateClassifier(format!(
                    "prototype row {k} has norm {n:e}"
                )));
            }
            for v in w.row_mut(k) {
                *v /= n;
            }
        }
        Ok(w)
    }
}

/// Cosines between unit embedding rows and normalized prototypes: entry
/// `(i, k)` is `<w_k / ||w_k||, e_i>`.
pub fn classifier_cosines(clf: &Classifier, embeddings: &Matrix) -> Result<Matrix> {
    if embeddings.cols() != clf.embed_dim() {
        return Err(Error::shape(format!(
            "embeddings width {} vs classifier width {}",
            embeddings.cols(),
            clf.embed_dim()
        )));
    }
    let w = clf.normalized_rows()?;
    embeddings.matmul_nt(&w)
}

/// Full backward pass from a gradient on the cosine matrix: encoder gradients
/// always, classifier gradients only when the classifier is trainable.
pub fn model_backward(
    model: &EncoderModel,
    clf: &Classifier,
    grad_cos: &Matrix,
    cache: &ForwardCache,
) -> Result<(EncoderGrads, Option<Matrix>)> {
    let n = cache.batch_size();
    if grad_cos.rows() != n || grad_cos.cols() != clf.num_classes() {
        return Err(Error::shape(format!(
            "grad_cos is {}x{}, expected {}x{}",
            grad_cos.rows(),
            grad_cos.cols(),
            n,
            clf.num_classes()
        )));
    }
    let w_hat = clf.normalized_rows()?;
    // dL/dE = G * W_hat.
    let grad_embed = grad_cos.matmul(&w_hat)?;
    let enc_grads = encoder_backward(model, cache, &grad_embed)?;

    let clf_grads = if clf.frozen {
        None
    } else {
        Some(classifier_backward(clf, grad_cos, &cache.embeddings)?)
    };
    Ok((enc_grads, clf_grads))
}

/// Gradient of a cosine-level loss with respect to the raw (unnormalized)
/// classifier weights, given fixed unit embeddings.
pub fn classifier_backward(
    clf: &Classifier,
    grad_cos: &Matrix,
    embeddings: &Matrix,
) -> Result<Matrix> {
    if grad_cos.rows() != embeddings.rows() || grad_cos.cols() != clf.num_classes() {
        return Err(Error::shape(format!(
            "grad_cos is {}x{}, expected {}x{}",
            grad_cos.rows(),
            grad_cos.cols(),
            embeddings.rows(),
            clf.num_classes()
        )));
    }
    let w_hat = clf.normalized_rows()?;
    // dL/dW_hat = G^T E, then through each row normalization.
    let g_hat = grad_cos.matmul_tn(embeddings)?;
    let mut g_raw = Matrix::zeros(clf.num_classes(), clf.embed_dim());
    for k in 0..clf.num_classes() {
        let g = g_hat.row(k);
        let wh = w_hat.row(k);
        let gw = dot(g, wh);
        let inv = 1.0 / norm2(clf.weights.row(k));
        for (d, (&gk, &wk)) in g_raw.row_mut(k).iter_mut().zip(g.iter().zip(wh)) {
            *d = (gk - gw * wk) * inv;
        }
    }
    Ok(g_raw)
}

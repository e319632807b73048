//! Training procedures: supervised teacher training, inherited-classifier
//! distillation with the classifier frozen, the embedding-L2 distillation
//! baseline, a from-scratch control, and multi-teacher ensemble fusion.
//!
//! Every procedure is a deterministic function of its seed: model
//! initialization, epoch shuffles and any sampling draw from fixed child
//! streams of the seed.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{batches, Batch, Dataset, SplitTag};
use crate::error::{Error, Result};
use crate::losses::{batch_loss, CosineLoss};
use crate::model::{
    classifier_backward, classifier_cosines, encoder_backward, model_backward, Classifier,
    Embedder, EncoderConfig, EncoderModel,
};
use crate::numcore::{child_seed, norm2, sym_eig, Matrix, Rng};
use crate::optim::{nag_step, OptimConfig};

// Child-stream indices off the training seed.
const STREAM_ENCODER_INIT: u64 = 0;
const STREAM_CLASSIFIER_INIT: u64 = 1;
const STREAM_EPOCH_BASE: u64 = 16;

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl TrainParams {
    pub fn new(epochs: usize, batch_size: usize, lr0: f64) -> Self {
        TrainParams {
            epochs,
            batch_size,
            lr0,
            momentum: 0.9,
            weight_decay: 4e-5,
        }
    }
}

/// Outcome summary of a training run. Wall-clock time is carried on the
/// struct but never serialized; runners report it in a separate timing
/// section so serialized reports stay bit-comparable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub final_checkpoint: Option<String>,
    pub seed: u64,
    pub config: serde_json::Value,
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

/// Runs the NAG loop over a flat parameter vector. `batch_grad` receives the
/// lookahead parameters and one batch, and returns the batch mean loss and
/// the flat data gradient. Returns the per-epoch mean losses.
fn run_epochs<F>(
    params: &mut Vec<f64>,
    ds: &Dataset,
    tp: &TrainParams,
    seed: u64,
    mut batch_grad: F,
) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], &Batch) -> Result<(f64, Vec<f64>)>,
{
    if tp.epochs == 0 {
        return Ok(Vec::new());
    }
    let train_len = ds.indices_with_tag(SplitTag::Train).len();
    if train_len == 0 {
        return Err(Error::arg("train split is empty"));
    }
    let steps_per_epoch = train_len.div_ceil(tp.batch_size.max(1));
    let cfg = OptimConfig::new(
        tp.lr0,
        tp.momentum,
        tp.weight_decay,
        tp.epochs * steps_per_epoch,
    )?;
    let mut velocity = vec![0.0; params.len()];
    let mut epoch_losses = Vec::with_capacity(tp.epochs);
    let mut step = 0usize;
    for epoch in 0..tp.epochs {
        let epoch_batches = batches(
            ds,
            tp.batch_size,
            child_seed(seed, STREAM_EPOCH_BASE + epoch as u64),
        )?;
        let mut loss_sum = 0.0;
        let mut sample_count = 0usize;
        for batch in &epoch_batches {
            let lr = cfg.cosine_lr(step)?;
            let mut batch_value = f64::NAN;
            nag_step(
                params,
                &mut velocity,
                lr,
                tp.momentum,
                tp.weight_decay,
                step,
                |lookahead| {
                    let (value, grad) = batch_grad(lookahead, batch)?;
                    batch_value = value;
                    Ok(grad)
                },
            )?;
            if !batch_value.is_finite() {
                return Err(Error::Divergence { step });
            }
            loss_sum += batch_value * batch.len() as f64;
            sample_count += batch.len();
            step += 1;
        }
        epoch_losses.push(loss_sum / sample_count as f64);
    }
    Ok(epoch_losses)
}

/// The encoder exactly as a training run with this seed would initialize it,
/// before any update. Useful for zero-gradient checks and warm-start tests.
pub fn initial_encoder(cfg: &EncoderConfig, seed: u64) -> Result<EncoderModel> {
    EncoderModel::init(cfg, &mut Rng::new(seed).child(STREAM_ENCODER_INIT))
}

fn report_config(
    encoder: &EncoderConfig,
    loss: Option<&dyn CosineLoss>,
    tp: &TrainParams,
    objective: &str,
) -> serde_json::Value {
    serde_json::json!({
        "objective": objective,
        "encoder": encoder,
        "loss": loss.map(|l| l.describe()),
        "epochs": tp.epochs,
        "batch_size": tp.batch_size,
        "lr0": tp.lr0,
        "momentum": tp.momentum,
        "weight_decay": tp.weight_decay,
    })
}

/// Jointly trains an encoder and a fresh classifier on the train split by
/// minimizing the margin softmax loss over cosines.
pub fn train_teacher(
    encoder_cfg: &EncoderConfig,
    loss: &dyn CosineLoss,
    ds: &Dataset,
    tp: &TrainParams,
    seed: u64,
) -> Result<(EncoderModel, Classifier, TrainReport)> {
    let start = Instant::now();
    let root = Rng::new(seed);
    let mut model = EncoderModel::init(encoder_cfg, &mut root.child(STREAM_ENCODER_INIT))?;
    let mut clf = Classifier::init(
        ds.num_classes,
        encoder_cfg.embed_dim,
        &mut root.child(STREAM_CLASSIFIER_INIT),
    )?;

    let n_model = model.param_count();
    let mut params = Vec::with_capacity(n_model + clf.weights.data().len());
    model.write_params(&mut params);
    params.extend_from_slice(clf.weights.data());

    let mut scratch_model = model.clone();
    let mut scratch_clf = clf.clone();
    let epoch_losses = run_epochs(&mut params, ds, tp, seed, |lookahead, batch| {
        scratch_model.read_params(&lookahead[..n_model])?;
        scratch_clf
            .weights
            .data_mut()
            .copy_from_slice(&lookahead[n_model..]);
        let (_, cache) = scratch_model.forward(&batch.features)?;
        let cosines = classifier_cosines(&scratch_clf, cache.embeddings())?;
        let (value, grad_cos) = batch_loss(loss, &cosines, &batch.labels)?;
        let (enc_grads, clf_grads) =
            model_backward(&scratch_model, &scratch_clf, &grad_cos, &cache)?;
        let mut flat = Vec::with_capacity(lookahead.len());
        enc_grads.write_flat(&mut flat);
        flat.extend_from_slice(clf_grads.expect("classifier is trainable").data());
        Ok((value, flat))
    })?;

    model.read_params(&params[..n_model])?;
    clf.weights.data_mut().copy_from_slice(&params[n_model..]);
    let report = TrainReport {
        epoch_losses,
        final_checkpoint: None,
        seed,
        config: report_config(encoder_cfg, Some(loss), tp, "margin-softmax"),
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    Ok((model, clf, report))
}

/// The no-distillation control: a student trained independently with its own
/// fresh classifier, same procedure as the teacher.
pub fn train_scratch(
    student_cfg: &EncoderConfig,
    loss: &dyn CosineLoss,
    ds: &Dataset,
    tp: &TrainParams,
    seed: u64,
) -> Result<(EncoderModel, Classifier, TrainReport)> {
    train_teacher(student_cfg, loss, ds, tp, seed)
}

/// Inherited-classifier distillation: the student's classifier is a byte copy
/// of the teacher's, frozen; only the encoder receives optimizer updates.
pub fn distill_proxyless(
    student_cfg: &EncoderConfig,
    teacher_classifier: &Classifier,
    loss: &dyn CosineLoss,
    ds: &Dataset,
    tp: &TrainParams,
    seed: u64,
) -> Result<(EncoderModel, TrainReport)> {
    let start = Instant::now();
    if teacher_classifier.embed_dim() != student_cfg.embed_dim {
        return Err(Error::arg(format!(
            "classifier dimension {} vs student embedding dimension {}",
            teacher_classifier.embed_dim(),
            student_cfg.embed_dim
        )));
    }
    if teacher_classifier.num_classes() != ds.num_classes {
        return Err(Error::arg(format!(
            "classifier has {} classes, dataset has {}",
            teacher_classifier.num_classes(),
            ds.num_classes
        )));
    }
    let clf = teacher_classifier.frozen_copy();
    let bytes_before = clf.weight_bytes();

    let root = Rng::new(seed);
    let mut model = EncoderModel::init(student_cfg, &mut root.child(STREAM_ENCODER_INIT))?;
    let mut params = Vec::with_capacity(model.param_count());
    model.write_params(&mut params);

    let mut scratch_model = model.clone();
    let epoch_losses = run_epochs(&mut params, ds, tp, seed, |lookahead, batch| {
        scratch_model.read_params(lookahead)?;
        let (_, cache) = scratch_model.forward(&batch.features)?;
        let cosines = classifier_cosines(&clf, cache.embeddings())?;
        let (value, grad_cos) = batch_loss(loss, &cosines, &batch.labels)?;
        let (enc_grads, clf_grads) = model_backward(&scratch_model, &clf, &grad_cos, &cache)?;
        assert!(clf_grads.is_none(), "frozen classifier produced gradients");
        let mut flat = Vec::with_capacity(lookahead.len());
        enc_grads.write_flat(&mut flat);
        Ok((value, flat))
    })?;
    model.read_params(&params)?;

    // Freeze audit: the inherited weights must be bit-identical.
    assert_eq!(
        bytes_before,
        clf.weight_bytes(),
        "internal invariant violated: frozen classifier weights mutated"
    );

    let report = TrainReport {
        epoch_losses,
        final_checkpoint: None,
        seed,
        config: report_config(student_cfg, Some(loss), tp, "inherited-classifier-distillation"),
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    Ok((model, report))
}

/// Embedding-L2 distillation baseline: minimizes the mean squared distance
/// between unit student and teacher embeddings of the same input. Teacher
/// embeddings are precomputed once; teacher weights are never touched.
pub fn distill_l2(
    student_cfg: &EncoderConfig,
    teacher: &dyn Embedder,
    ds: &Dataset,
    tp: &TrainParams,
    seed: u64,
) -> Result<(EncoderModel, TrainReport)> {
    let start = Instant::now();
    if teacher.embed_dim() != student_cfg.embed_dim {
        return Err(Error::arg(format!(
            "teacher embedding dimension {} vs student {}",
            teacher.embed_dim(),
            student_cfg.embed_dim
        )));
    }
    let targets = teacher.embed(&ds.features)?;

    let root = Rng::new(seed);
    let mut model = EncoderModel::init(student_cfg, &mut root.child(STREAM_ENCODER_INIT))?;
    let mut params = Vec::with_capacity(model.param_count());
    model.write_params(&mut params);

    let mut scratch_model = model.clone();
    let epoch_losses = run_epochs(&mut params, ds, tp, seed, |lookahead, batch| {
        scratch_model.read_params(lookahead)?;
        let (emb, cache) = scratch_model.forward(&batch.features)?;
        let n = batch.len();
        let inv_n = 1.0 / n as f64;
        let mut value = 0.0;
        let mut grad_embed = Matrix::zeros(n, emb.cols());
        for (row, &src) in batch.indices.iter().enumerate() {
            let e_s = emb.row(row);
            let e_t = targets.row(src);
            let mut sq = 0.0;
            for ((g, &s), &t) in grad_embed.row_mut(row).iter_mut().zip(e_s).zip(e_t) {
                let d = s - t;
                sq += d * d;
                *g = 2.0 * d * inv_n;
            }
            value += sq;
        }
        let enc_grads = encoder_backward(&scratch_model, &cache, &grad_embed)?;
        let mut flat = Vec::with_capacity(lookahead.len());
        enc_grads.write_flat(&mut flat);
        Ok((value * inv_n, flat))
    })?;
    model.read_params(&params)?;

    let report = TrainReport {
        epoch_losses,
        final_checkpoint: None,
        seed,
        config: report_config(student_cfg, None, tp, "embedding-l2-distillation"),
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    Ok((model, report))
}

/// How the concatenated multi-teacher embedding is reduced to the student's
/// dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMethod {
    Pca,
    LinearLayer,
}

/// The fitted reduction map plus the classifier retrained over the fused
/// space. The reduced embedding is re-normalized to unit length.
#[derive(Debug, Clone)]
pub struct FusionMap {
    pub method: FusionMethod,
    /// `d_target x sum(d_i)`; orthonormal rows for PCA.
    pub projection: Matrix,
    /// Centering vector (PCA); zeros for the trained linear layer.
    pub mean: Vec<f64>,
    /// Affine offset (trained linear layer); zeros for PCA.
    pub bias: Vec<f64>,
    pub classifier: Classifier,
    /// Explained-variance ratios of the kept components, descending (PCA
    /// only; empty for the linear layer).
    pub explained_variance: Vec<f64>,
    /// Set when the covariance rank fell short of the target dimension.
    pub rank_warning: bool,
}

impl FusionMap {
    /// Applies the reduction to rows of concatenated teacher embeddings and
    /// re-normalizes each row to unit length.
    pub fn reduce(&self, concat: &Matrix) -> Result<Matrix> {
        if concat.cols() != self.projection.cols() {
            return Err(Error::shape(format!(
                "concatenated width {} vs projection input {}",
                concat.cols(),
                self.projection.cols()
            )));
        }
        let mut centered = concat.clone();
        for i in 0..centered.rows() {
            for (v, m) in centered.row_mut(i).iter_mut().zip(&self.mean) {
                *v -= m;
            }
        }
        let mut reduced = centered.matmul_nt(&self.projection)?;
        for i in 0..reduced.rows() {
            for (v, b) in reduced.row_mut(i).iter_mut().zip(&self.bias) {
                *v += b;
            }
            let n = norm2(reduced.row(i));
            if n < 1e-12 {
                return Err(Error::DegenerateEmbedding(format!(
                    "fused row {i} has norm {n:e}"
                )));
            }
            for v in reduced.row_mut(i) {
                *v /= n;
            }
        }
        Ok(reduced)
    }
}

/// A teacher ensemble with its fitted fusion map, usable wherever a single
/// embedding extractor is.
#[derive(Debug, Clone)]
pub struct FusedPipeline {
    pub teachers: Vec<EncoderModel>,
    pub map: FusionMap,
}

impl Embedder for FusedPipeline {
    fn embed_dim(&self) -> usize {
        self.map.projection.rows()
    }

    fn embed(&self, batch: &Matrix) -> Result<Matrix> {
        let per_teacher: Vec<Matrix> = self
            .teachers
            .iter()
            .map(|t| t.embed(batch))
            .collect::<Result<_>>()?;
        let refs: Vec<&Matrix> = per_teacher.iter().collect();
        let concat = Matrix::hcat(&refs)?;
        self.map.reduce(&concat)
    }
}

/// Fits the reduction map over concatenated teacher embeddings of the train
/// split and retrains a fresh classifier on the fused unit embeddings.
///
/// PCA keeps the top `d_target` eigenvectors of the centered covariance; the
/// linear layer is trained jointly with the classifier under the same margin
/// loss.
pub fn fuse_teachers(
    teachers: &[EncoderModel],
    ds: &Dataset,
    method: FusionMethod,
    d_target: usize,
    loss: &dyn CosineLoss,
    tp: &TrainParams,
    seed: u64,
) -> Result<FusionMap> {
    if teachers.len() < 2 {
        return Err(Error::arg(format!(
            "ensemble fusion needs at least 2 teachers, got {}",
            teachers.len()
        )));
    }
    let train_idx = ds.indices_with_tag(SplitTag::Train);
    if train_idx.is_empty() {
        return Err(Error::arg("train split is empty"));
    }
    let (train_features, train_labels) = ds.gather(&train_idx);
    let per_teacher: Vec<Matrix> = teachers
        .iter()
        .map(|t| t.embed(&train_features))
        .collect::<Result<_>>()?;
    let refs: Vec<&Matrix> = per_teacher.iter().collect();
    let concat = Matrix::hcat(&refs)?;
    let total_dim = concat.cols();
    if d_target > total_dim {
        return Err(Error::arg(format!(
            "target dimension {d_target} exceeds concatenated dimension {total_dim}"
        )));
    }

    match method {
        FusionMethod::Pca => {
            let n = concat.rows();
            let mut mean = vec![0.0; total_dim];
            for i in 0..n {
                for (m, &v) in mean.iter_mut().zip(concat.row(i)) {
                    *m += v;
                }
            }
            for m in &mut mean {
                *m /= n as f64;
            }
            let mut centered = concat.clone();
            for i in 0..n {
                for (v, m) in centered.row_mut(i).iter_mut().zip(&mean) {
                    *v -= m;
                }
            }
            let mut cov = centered.matmul_tn(&centered)?;
            let denom = (n.max(2) - 1) as f64;
            cov.scale(1.0 / denom);
            let (eigenvalues, eigenvectors) = sym_eig(&cov)?;

            let clipped: Vec<f64> = eigenvalues.iter().map(|&l| l.max(0.0)).collect();
            let total_var: f64 = clipped.iter().sum();
            let explained_variance: Vec<f64> = clipped[..d_target]
                .iter()
                .map(|&l| if total_var > 0.0 { l / total_var } else { 0.0 })
                .collect();
            let rank_tol = 1e-12 * clipped.first().copied().unwrap_or(0.0).max(1e-300);
            let rank = clipped.iter().filter(|&&l| l > rank_tol).count();
            let rank_warning = rank < d_target;

            // Rows of the projection are the top eigenvectors.
            let mut projection = Matrix::zeros(d_target, total_dim);
            for k in 0..d_target {
                for j in 0..total_dim {
                    projection.set(k, j, eigenvectors.get(j, k));
                }
            }
            let map_without_clf = FusionMap {
                method,
                projection,
                mean,
                bias: vec![0.0; d_target],
                classifier: Classifier {
                    weights: Matrix::zeros(1, 1),
                    frozen: false,
                },
                explained_variance,
                rank_warning,
            };
            let fused = map_without_clf.reduce(&concat)?;
            let classifier = train_classifier_on_embeddings(
                &fused,
                &train_labels,
                ds.num_classes,
                loss,
                tp,
                child_seed(seed, 0),
            )?;
            Ok(FusionMap {
                classifier,
                ..map_without_clf
            })
        }
        FusionMethod::LinearLayer => {
            // The reduction layer is a single linear encoder over the
            // concatenated embeddings, trained jointly with the classifier.
            let derived = Dataset::new(concat, train_labels, ds.num_classes)?;
            let cfg = EncoderConfig::new(total_dim, Vec::new(), d_target);
            let (reducer, classifier, _report) =
                train_teacher(&cfg, loss, &derived, tp, child_seed(seed, 0))?;
            let layer = &reducer.layers()[0];
            Ok(FusionMap {
                method,
                projection: layer.weight.clone(),
                mean: vec![0.0; total_dim],
                bias: layer.bias.clone(),
                classifier,
                explained_variance: Vec::new(),
                rank_warning: false,
            })
        }
    }
}

/// Trains only a classifier over fixed unit embeddings with the given loss.
fn train_classifier_on_embeddings(
    embeddings: &Matrix,
    labels: &[usize],
    num_classes: usize,
    loss: &dyn CosineLoss,
    tp: &TrainParams,
    seed: u64,
) -> Result<Classifier> {
    let derived = Dataset::new(embeddings.clone(), labels.to_vec(), num_classes)?;
    let root = Rng::new(seed);
    let mut clf = Classifier::init(
        num_classes,
        embeddings.cols(),
        &mut root.child(STREAM_CLASSIFIER_INIT),
    )?;
    let mut params = clf.weights.data().to_vec();
    let mut scratch = clf.clone();
    run_epochs(&mut params, &derived, tp, seed, |lookahead, batch| {
        scratch.weights.data_mut().copy_from_slice(lookahead);
        let cosines = classifier_cosines(&scratch, &batch.features)?;
        let (value, grad_cos) = batch_loss(loss, &cosines, &batch.labels)?;
        let grads = classifier_backward(&scratch, &grad_cos, &batch.features)?;
        Ok((value, grads.data().to_vec()))
    })?;
    clf.weights.data_mut().copy_from_slice(&params);
    Ok(clf)
}

//! Cross-model evaluation: direction-averaged verification accuracy, TAR at
//! a FAR target, rank-1 identification with mixed extractors, and intra /
//! inter-class embedding statistics.
//!
//! Verification is direction-averaged: pair scores are computed with
//! `(model_a, model_b)` and again with the models swapped, the best-accuracy
//! threshold is chosen per direction over the observed scores, and the two
//! accuracies are averaged. In single-model mode both extractors are the same
//! model and the average collapses to either direction.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SplitTag};
use crate::error::{Error, Result};
use crate::model::Embedder;
use crate::numcore::{dot, Matrix, Rng};

/// Histogram bin count over cosine range [-1, 1].
pub const HIST_BINS: usize = 50;

const THRESHOLD_RULE: &str = "max-accuracy-over-observed-scores";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pair {
    pub a: usize,
    pub b: usize,
    pub genuine: bool,
}

/// Verification pair list over dataset row indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSet {
    pub pairs: Vec<Pair>,
}

impl PairSet {
    pub fn genuine_count(&self) -> usize {
        self.pairs.iter().filter(|p| p.genuine).count()
    }

    pub fn impostor_count(&self) -> usize {
        self.pairs.len() - self.genuine_count()
    }
}

/// Samples verification pairs without replacement over the evaluation rows
/// (the probe split when present, otherwise all rows): `genuine_per_class`
/// same-label pairs per class and `impostor_count` cross-label pairs total.
pub fn make_pairs(
    ds: &Dataset,
    genuine_per_class: usize,
    impostor_count: usize,
    seed: u64,
) -> Result<PairSet> {
    let idx = ds.eval_indices();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes];
    for &i in &idx {
        by_class[ds.labels[i]].push(i);
    }
    let mut rng = Rng::new(seed);
    let mut pairs = Vec::new();
    for (class, members) in by_class.iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let mut candidates = Vec::new();
        for i in 0..members.len() {
            for j in (i + 1)..members.len() {
                candidates.push((members[i], members[j]));
            }
        }
        if candidates.len() < genuine_per_class {
            return Err(Error::arg(format!(
                "class {class} admits {} genuine pair(s), {genuine_per_class} requested",
                candidates.len()
            )));
        }
        rng.shuffle(&mut candidates);
        for &(a, b) in candidates.iter().take(genuine_per_class) {
            pairs.push(Pair { a, b, genuine: true });
        }
    }
    let mut impostors = Vec::new();
    for i in 0..idx.len() {
        for j in (i + 1)..idx.len() {
            let (a, b) = (idx[i], idx[j]);
            if ds.labels[a] != ds.labels[b] {
                impostors.push((a, b));
            }
        }
    }
    if impostors.len() < impostor_count {
        return Err(Error::arg(format!(
            "only {} impostor pair(s) available, {impostor_count} requested",
            impostors.len()
        )));
    }
    rng.shuffle(&mut impostors);
    for &(a, b) in impostors.iter().take(impostor_count) {
        pairs.push(Pair { a, b, genuine: false });
    }
    Ok(PairSet { pairs })
}

/// Best achievable accuracy over thresholds drawn from the observed scores
/// plus +infinity, with `score >= threshold` predicting genuine.
fn best_threshold_accuracy(scored: &[(f64, bool)]) -> f64 {
    let total = scored.len();
    let n_imp = scored.iter().filter(|(_, g)| !g).count();
    let mut sorted = scored.to_vec();
    sorted.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    // tau = +infinity: everything predicted impostor.
    let mut best = n_imp;
    let mut gen_ge = 0usize;
    let mut imp_ge = 0usize;
    let mut i = 0;
    while i < sorted.len() {
        let v = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == v {
            if sorted[i].1 {
                gen_ge += 1;
            } else {
                imp_ge += 1;
            }
            i += 1;
        }
        best = best.max(gen_ge + (n_imp - imp_ge));
    }
    best as f64 / total as f64
}

/// Scores every pair in both directions: direction 1 embeds `index a` with
/// `emb_a` and `index b` with `emb_b`; direction 2 swaps the extractors.
fn score_pairs(
    emb_a: &Matrix,
    emb_b: &Matrix,
    pairs: &PairSet,
) -> (Vec<(f64, bool)>, Vec<(f64, bool)>) {
    let mut dir1 = Vec::with_capacity(pairs.pairs.len());
    let mut dir2 = Vec::with_capacity(pairs.pairs.len());
    for p in &pairs.pairs {
        dir1.push((dot(emb_a.row(p.a), emb_b.row(p.b)), p.genuine));
        dir2.push((dot(emb_b.row(p.a), emb_a.row(p.b)), p.genuine));
    }
    (dir1, dir2)
}

fn check_pairs(pairs: &PairSet, n_rows: usize) -> Result<()> {
    if pairs.genuine_count() == 0 || pairs.impostor_count() == 0 {
        return Err(Error::arg(
            "pair set needs at least one genuine and one impostor pair",
        ));
    }
    if let Some(p) = pairs
        .pairs
        .iter()
        .find(|p| p.a >= n_rows || p.b >= n_rows)
    {
        return Err(Error::arg(format!(
            "pair ({}, {}) out of range for {} rows",
            p.a, p.b, n_rows
        )));
    }
    Ok(())
}

fn verification_from_embeddings(
    emb_a: &Matrix,
    emb_b: &Matrix,
    pairs: &PairSet,
) -> f64 {
    let (dir1, dir2) = score_pairs(emb_a, emb_b, pairs);
    let acc1 = best_threshold_accuracy(&dir1);
    let acc2 = best_threshold_accuracy(&dir2);
    100.0 * 0.5 * (acc1 + acc2)
}

/// Direction-averaged verification accuracy (percent). Single-model mode is
/// `model_a == model_b`.
pub fn verification_accuracy(
    model_a: &dyn Embedder,
    model_b: &dyn Embedder,
    pairs: &PairSet,
    ds: &Dataset,
) -> Result<f64> {
    check_pairs(pairs, ds.len())?;
    let emb_a = model_a.embed(&ds.features)?;
    let emb_b = model_b.embed(&ds.features)?;
    Ok(verification_from_embeddings(&emb_a, &emb_b, pairs))
}

/// True-accept rate at the smallest observed-or-infinite threshold whose
/// false-accept rate does not exceed `far_target`. Returns a fraction.
pub fn tar_at_far(genuine: &[f64], impostor: &[f64], far_target: f64) -> Result<f64> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(Error::arg("tar_at_far: empty score list"));
    }
    if !(0.0..=1.0).contains(&far_target) {
        return Err(Error::arg(format!(
            "far_target {far_target} outside [0, 1]"
        )));
    }
    let mut candidates: Vec<f64> = genuine.iter().chain(impostor).copied().collect();
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    candidates.dedup();
    let n_imp = impostor.len() as f64;
    let n_gen = genuine.len() as f64;
    let tar_for = |tau: f64| {
        let accepted = genuine.iter().filter(|&&g| g >= tau).count() as f64;
        accepted / n_gen
    };
    for &tau in &candidates {
        let fa = impostor.iter().filter(|&&s| s >= tau).count() as f64 / n_imp;
        if fa <= far_target {
            return Ok(tar_for(tau));
        }
    }
    // tau = +infinity: nothing accepted.
    Ok(0.0)
}

/// Rank-1 identification (percent): gallery rows embedded by `gallery_model`,
/// probe rows by `probe_model`; a probe is correct when its nearest gallery
/// entry by cosine shares its label, ties broken by lowest gallery index.
/// Optional distractor feature rows are appended to the gallery with no label
/// and can only steal matches.
pub fn rank1_identification(
    gallery_model: &dyn Embedder,
    probe_model: &dyn Embedder,
    ds: &Dataset,
    distractors: Option<&Matrix>,
) -> Result<f64> {
    let gallery_idx = ds.indices_with_tag(SplitTag::Gallery);
    if gallery_idx.is_empty() {
        return Err(Error::MissingGallery(
            "dataset has no rows tagged gallery".into(),
        ));
    }
    let probe_idx = ds.indices_with_tag(SplitTag::Probe);
    if probe_idx.is_empty() {
        return Err(Error::arg("dataset has no rows tagged probe"));
    }
    let (gallery_features, gallery_labels) = ds.gather(&gallery_idx);
    let mut gallery_emb = gallery_model.embed(&gallery_features)?;
    let mut entry_labels: Vec<Option<usize>> =
        gallery_labels.into_iter().map(Some).collect();
    if let Some(extra) = distractors {
        let extra_emb = gallery_model.embed(extra)?;
        gallery_emb = Matrix::vcat(&gallery_emb, &extra_emb)?;
        entry_labels.extend(std::iter::repeat(None).take(extra.rows()));
    }
    let (probe_features, probe_labels) = ds.gather(&probe_idx);
    let probe_emb = probe_model.embed(&probe_features)?;

    let mut correct = 0usize;
    for i in 0..probe_emb.rows() {
        let mut best = f64::NEG_INFINITY;
        let mut best_label: Option<usize> = None;
        for (g, label) in entry_labels.iter().enumerate() {
            let score = dot(probe_emb.row(i), gallery_emb.row(g));
            if score > best {
                best = score;
                best_label = *label;
            }
        }
        if best_label == Some(probe_labels[i]) {
            correct += 1;
        }
    }
    Ok(100.0 * correct as f64 / probe_emb.rows() as f64)
}

/// Intra / inter-class cross-model cosine statistics with fixed histograms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingStats {
    pub intra_mean: f64,
    pub inter_mean: f64,
    pub intra_hist: Vec<u64>,
    pub inter_hist: Vec<u64>,
    pub n_intra: u64,
    pub n_inter: u64,
}

fn hist_bin(c: f64) -> usize {
    let raw = ((c + 1.0) / 2.0 * HIST_BINS as f64).floor() as isize;
    raw.clamp(0, HIST_BINS as isize - 1) as usize
}

/// Cross-model pair statistics over the evaluation rows: the intra statistic
/// averages `cos(e_a(x_i), e_b(x_j))` over ordered same-class pairs with
/// `i != j`, the inter statistic over ordered different-class pairs.
/// Accumulation order is the ascending double loop over row positions.
pub fn embedding_stats(
    model_a: &dyn Embedder,
    model_b: &dyn Embedder,
    ds: &Dataset,
) -> Result<EmbeddingStats> {
    let idx = ds.eval_indices();
    let mut class_sizes = vec![0usize; ds.num_classes];
    for &i in &idx {
        class_sizes[ds.labels[i]] += 1;
    }
    let classes_with_two = class_sizes.iter().filter(|&&c| c >= 2).count();
    let present = class_sizes.iter().filter(|&&c| c >= 1).count();
    if classes_with_two < 2 || present < 2 {
        return Err(Error::arg(format!(
            "embedding_stats needs >= 2 classes with >= 2 samples, found {classes_with_two}"
        )));
    }
    let (features, labels) = ds.gather(&idx);
    let emb_a = model_a.embed(&features)?;
    let emb_b = model_b.embed(&features)?;

    let mut intra_sum = 0.0;
    let mut inter_sum = 0.0;
    let mut intra_hist = vec![0u64; HIST_BINS];
    let mut inter_hist = vec![0u64; HIST_BINS];
    let mut n_intra = 0u64;
    let mut n_inter = 0u64;
    for i in 0..idx.len() {
        for j in 0..idx.len() {
            if i == j {
                continue;
            }
            let c = dot(emb_a.row(i), emb_b.row(j));
            if labels[i] == labels[j] {
                intra_sum += c;
                intra_hist[hist_bin(c)] += 1;
                n_intra += 1;
            } else {
                inter_sum += c;
                inter_hist[hist_bin(c)] += 1;
                n_inter += 1;
            }
        }
    }
    Ok(EmbeddingStats {
        intra_mean: intra_sum / n_intra as f64,
        inter_mean: inter_sum / n_inter as f64,
        intra_hist,
        inter_hist,
        n_intra,
        n_inter,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Single,
    Multiple,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FarPoint {
    pub far: f64,
    pub tar_pct: f64,
}

/// One full evaluation of an extractor pair on a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub verification_accuracy_pct: f64,
    pub tar: Vec<FarPoint>,
    pub rank1_pct: f64,
    pub intra_mean_cosine: f64,
    pub inter_mean_cosine: f64,
    /// Diagnostic: set when intra mean cosine < inter mean cosine.
    pub geometry_inverted: bool,
    pub threshold_rule: String,
    pub intra_pairs: u64,
    pub inter_pairs: u64,
    pub intra_hist: Vec<u64>,
    pub inter_hist: Vec<u64>,
}

/// Runs the whole metric suite for one extractor pair. In multiple-model mode
/// `model_a` is the gallery/database side and `model_b` the probe side; in
/// single-model mode pass the same model twice.
pub fn evaluate(
    model_a: &dyn Embedder,
    model_b: &dyn Embedder,
    pairs: &PairSet,
    ds: &Dataset,
    fars: &[f64],
    distractors: Option<&Matrix>,
    mode: EvalMode,
) -> Result<EvalReport> {
    check_pairs(pairs, ds.len())?;
    let emb_a = model_a.embed(&ds.features)?;
    let emb_b = model_b.embed(&ds.features)?;
    let verification = verification_from_embeddings(&emb_a, &emb_b, pairs);

    let (dir1, dir2) = score_pairs(&emb_a, &emb_b, pairs);
    let split = |scored: &[(f64, bool)]| {
        let genuine: Vec<f64> = scored.iter().filter(|(_, g)| *g).map(|(s, _)| *s).collect();
        let impostor: Vec<f64> = scored.iter().filter(|(_, g)| !g).map(|(s, _)| *s).collect();
        (genuine, impostor)
    };
    let (gen1, imp1) = split(&dir1);
    let (gen2, imp2) = split(&dir2);
    let mut tar = Vec::with_capacity(fars.len());
    for &far in fars {
        let t1 = tar_at_far(&gen1, &imp1, far)?;
        let t2 = tar_at_far(&gen2, &imp2, far)?;
        tar.push(FarPoint {
            far,
            tar_pct: 100.0 * 0.5 * (t1 + t2),
        });
    }

    let rank1_pct = rank1_identification(model_a, model_b, ds, distractors)?;
    let stats = embedding_stats(model_a, model_b, ds)?;
    Ok(EvalReport {
        mode,
        verification_accuracy_pct: verification,
        tar,
        rank1_pct,
        intra_mean_cosine: stats.intra_mean,
        inter_mean_cosine: stats.inter_mean,
        geometry_inverted: stats.intra_mean < stats.inter_mean,
        threshold_rule: THRESHOLD_RULE.to_string(),
        intra_pairs: stats.n_intra,
        inter_pairs: stats.n_inter,
        intra_hist: stats.intra_hist,
        inter_hist: stats.inter_hist,
    })
}

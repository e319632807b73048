//! Datasets: synthetic identity clusters on the unit hypersphere, CSV
//! ingestion, deterministic gallery/probe/train splits, and seeded batching.
//!
//! Synthetic classes are von Mises-Fisher clusters: a mean direction drawn
//! uniformly on the sphere per class, samples drawn around it with
//! concentration `kappa` via tangent-normal decomposition. The radial cosine
//! component uses Wood's rejection sampler, so generation is exact and fully
//! determined by the seed.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{dot, norm2, Matrix, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Gallery,
    Probe,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub tags: Vec<SplitTag>,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::shape(format!(
                "{} feature rows vs {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::arg(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        let tags = vec![SplitTag::Train; labels.len()];
        Ok(Dataset {
            features,
            labels,
            num_classes,
            tags,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn indices_with_tag(&self, tag: SplitTag) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.tags[i] == tag).collect()
    }

    /// Rows used for evaluation statistics: the probe split when present,
    /// otherwise every row.
    pub fn eval_indices(&self) -> Vec<usize> {
        let probe = self.indices_with_tag(SplitTag::Probe);
        if probe.is_empty() {
            (0..self.len()).collect()
        } else {
            probe
        }
    }

    /// Copies the given rows into a batch.
    pub fn gather(&self, indices: &[usize]) -> (Matrix, Vec<usize>) {
        let features = self.features.gather_rows(indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        (features, labels)
    }

    /// Per-class row indices restricted to a tag.
    pub fn class_indices(&self, tag: SplitTag) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.num_classes];
        for i in 0..self.len() {
            if self.tags[i] == tag {
                by_class[self.labels[i]].push(i);
            }
        }
        by_class
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub classes: usize,
    pub per_class: usize,
    pub input_dim: usize,
    pub kappa: f64,
    pub seed: u64,
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0) || !self.kappa.is_finite() {
            return Err(Error::arg(format!("kappa must be > 0, got {}", self.kappa)));
        }
        if self.per_class < 2 {
            return Err(Error::arg("per_class must be >= 2"));
        }
        if self.classes < 2 {
            return Err(Error::arg("need at least 2 classes"));
        }
        if self.input_dim < 2 {
            return Err(Error::arg("input_dim must be >= 2"));
        }
        Ok(())
    }
}

/// Uniform direction on the unit sphere in `dim` dimensions.
pub fn unit_sphere_vector(rng: &mut Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gaussian()).collect();
        let n = norm2(&v);
        if n > 1e-12 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

/// Marsaglia-Tsang gamma sampler (any shape > 0, unit scale).
fn gamma_sample(rng: &mut Rng, shape: f64) -> f64 {
    if shape < 1.0 {
        let boost = rng.next_open01().powf(1.0 / shape);
        return gamma_sample(rng, shape + 1.0) * boost;
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (3.0 * d.sqrt());
    loop {
        let x = rng.gaussian();
        let v = (1.0 + c * x).powi(3);
        if v <= 0.0 {
            continue;
        }
        let u = rng.next_open01();
        if u.ln() < 0.5 * x * x + d - d * v + d * v.ln() {
            return d * v;
        }
    }
}

fn beta_sample(rng: &mut Rng, a: f64, b: f64) -> f64 {
    let x = gamma_sample(rng, a);
    let y = gamma_sample(rng, b);
    x / (x + y)
}

/// Cosine-to-mean component of a vMF draw in `dim` dimensions (Wood's
/// rejection sampler).
fn vmf_radial(rng: &mut Rng, dim: usize, kappa: f64) -> f64 {
    let beta = (dim - 1) as f64;
    // b computed in the cancellation-free form.
    let b = beta / (2.0 * kappa + (4.0 * kappa * kappa + beta * beta).sqrt());
    let x0 = (1.0 - b) / (1.0 + b);
    let c = kappa * x0 + beta * (1.0 - x0 * x0).ln();
    loop {
        let z = beta_sample(rng, beta / 2.0, beta / 2.0);
        let u = rng.next_open01();
        let w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
        if kappa * w + beta * (1.0 - x0 * w).ln() - c >= u.ln() {
            return w;
        }
    }
}

/// One von Mises-Fisher draw around `mu` with concentration `kappa`.
pub fn sample_vmf(rng: &mut Rng, mu: &[f64], kappa: f64) -> Vec<f64> {
    let dim = mu.len();
    let w = vmf_radial(rng, dim, kappa);
    // Tangent direction: a gaussian vector projected orthogonal to mu.
    let tangent = loop {
        let g: Vec<f64> = (0..dim).map(|_| rng.gaussian()).collect();
        let gm = dot(&g, mu);
        let t: Vec<f64> = g.iter().zip(mu).map(|(gi, mi)| gi - gm * mi).collect();
        let n = norm2(&t);
        if n > 1e-12 {
            break t.iter().map(|x| x / n).collect::<Vec<f64>>();
        }
    };
    let r = (1.0 - w * w).max(0.0).sqrt();
    let mut out: Vec<f64> = mu
        .iter()
        .zip(&tangent)
        .map(|(mi, ti)| w * mi + r * ti)
        .collect();
    let n = norm2(&out);
    for v in &mut out {
        *v /= n;
    }
    out
}

/// Synthetic identity clusters: `classes` vMF clusters with `per_class`
/// samples each, unit-norm rows, labels `0..classes` in block order.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let root = Rng::new(cfg.seed);
    let mut mean_rng = root.child(0);
    let mut sample_rng = root.child(1);
    let means: Vec<Vec<f64>> = (0..cfg.classes)
        .map(|_| unit_sphere_vector(&mut mean_rng, cfg.input_dim))
        .collect();
    let n = cfg.classes * cfg.per_class;
    let mut features = Matrix::zeros(n, cfg.input_dim);
    let mut labels = Vec::with_capacity(n);
    let mut row = 0;
    for (k, mu) in means.iter().enumerate() {
        for _ in 0..cfg.per_class {
            let x = sample_vmf(&mut sample_rng, mu, cfg.kappa);
            features.row_mut(row).copy_from_slice(&x);
            labels.push(k);
            row += 1;
        }
    }
    Dataset::new(features, labels, cfg.classes)
}

/// Label-less distractor identities for identification: one vMF draw around
/// its own uniform mean per distractor.
pub fn generate_distractors(count: usize, input_dim: usize, kappa: f64, seed: u64) -> Result<Matrix> {
    if !(kappa > 0.0) {
        return Err(Error::arg(format!("kappa must be > 0, got {kappa}")));
    }
    let mut rng = Rng::new(seed);
    let mut out = Matrix::zeros(count, input_dim);
    for i in 0..count {
        let mu = unit_sphere_vector(&mut rng, input_dim);
        let x = sample_vmf(&mut rng, &mu, kappa);
        out.row_mut(i).copy_from_slice(&x);
    }
    Ok(out)
}

/// Loads `label,f0,f1,...` CSV. Labels are remapped to a dense `0..K` range
/// in order of first appearance; the mapping `(original, dense)` is returned
/// alongside the dataset.
pub fn load_csv(path: impl AsRef<Path>) -> Result<(Dataset, Vec<(u64, usize)>)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "empty file".into(),
    })?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.first().map(|c| c.trim()) != Some("label") {
        return Err(Error::Parse {
            line: 1,
            msg: format!("header must start with 'label', got '{header}'"),
        });
    }
    let d_in = cols.len() - 1;
    if d_in == 0 {
        return Err(Error::Parse {
            line: 1,
            msg: "no feature columns".into(),
        });
    }

    let mut mapping: Vec<(u64, usize)> = Vec::new();
    let mut labels = Vec::new();
    let mut data = Vec::new();
    let mut n = 0;
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d_in + 1 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected {} columns, found {}", d_in + 1, fields.len()),
            });
        }
        let raw: u64 = fields[0].trim().parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("label '{}' is not a non-negative integer", fields[0]),
        })?;
        let dense = match mapping.iter().find(|(orig, _)| *orig == raw) {
            Some((_, d)) => *d,
            None => {
                let d = mapping.len();
                mapping.push((raw, d));
                d
            }
        };
        labels.push(dense);
        for f in &fields[1..] {
            let v: f64 = f.trim().parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("'{f}' is not a number"),
            })?;
            data.push(v);
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::Parse {
            line: 1,
            msg: "no data rows".into(),
        });
    }
    let features = Matrix::from_vec(n, d_in, data)?;
    let num_classes = mapping.len();
    Ok((Dataset::new(features, labels, num_classes)?, mapping))
}

/// Deterministic per-class partition into gallery / probe / train. Gallery
/// and probe are disjoint; the remainder is tagged train.
pub fn make_splits(
    ds: &Dataset,
    gallery_per_class: usize,
    probe_per_class: usize,
    seed: u64,
) -> Result<Dataset> {
    let mut out = ds.clone();
    let mut by_class = vec![Vec::new(); ds.num_classes];
    for i in 0..ds.len() {
        by_class[ds.labels[i]].push(i);
    }
    let mut rng = Rng::new(seed);
    for (class, indices) in by_class.iter_mut().enumerate() {
        let need = gallery_per_class + probe_per_class;
        if indices.len() < need {
            return Err(Error::arg(format!(
                "class {class} has {} sample(s), needs {need} for gallery+probe",
                indices.len()
            )));
        }
        rng.shuffle(indices);
        for (pos, &i) in indices.iter().enumerate() {
            out.tags[i] = if pos < gallery_per_class {
                SplitTag::Gallery
            } else if pos < need {
                SplitTag::Probe
            } else {
                SplitTag::Train
            };
        }
    }
    Ok(out)
}

/// One training batch; `indices` are the source rows in the dataset.
#[derive(Debug, Clone)]
pub struct Batch {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Seeded shuffle of the train split cut into batches; the final short batch
/// is kept. The concatenation of all batches is a permutation of the train
/// split.
pub fn batches(ds: &Dataset, batch_size: usize, epoch_seed: u64) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::arg("batch_size must be >= 1"));
    }
    let mut train = ds.indices_with_tag(SplitTag::Train);
    if train.is_empty() {
        return Err(Error::arg("train split is empty"));
    }
    let mut rng = Rng::new(epoch_seed);
    rng.shuffle(&mut train);
    Ok(train
        .chunks(batch_size)
        .map(|chunk| {
            let (features, labels) = ds.gather(chunk);
            Batch {
                features,
                labels,
                indices: chunk.to_vec(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SynthConfig {
        SynthConfig {
            classes: 5,
            per_class: 10,
            input_dim: 8,
            kappa: 20.0,
            seed: 7,
        }
    }

    #[test]
    fn synthetic_counts_and_unit_norm() {
        let ds = generate_synthetic(&small_cfg()).unwrap();
        assert_eq!(ds.len(), 50);
        let mut counts = vec![0usize; 5];
        for &l in &ds.labels {
            counts[l] += 1;
        }
        assert!(counts.iter().all(|&c| c == 10));
        for i in 0..ds.len() {
            assert!((norm2(ds.features.row(i)) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn synthetic_is_seed_deterministic() {
        let a = generate_synthetic(&small_cfg()).unwrap();
        let b = generate_synthetic(&small_cfg()).unwrap();
        assert_eq!(a.features.data(), b.features.data());
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn huge_kappa_concentrates_on_the_mean() {
        let cfg = SynthConfig {
            classes: 2,
            per_class: 25,
            input_dim: 8,
            kappa: 1e8,
            seed: 3,
        };
        let ds = generate_synthetic(&cfg).unwrap();
        // Regenerate the class means through the same child stream.
        let root = Rng::new(cfg.seed);
        let mut mean_rng = root.child(0);
        let means: Vec<Vec<f64>> = (0..2)
            .map(|_| unit_sphere_vector(&mut mean_rng, 8))
            .collect();
        for i in 0..ds.len() {
            let mu = &means[ds.labels[i]];
            let cos = dot(ds.features.row(i), mu).clamp(-1.0, 1.0);
            assert!(cos.acos() < 1e-3, "angle {} too wide", cos.acos());
        }
    }

    #[test]
    fn vmf_sample_mean_direction_is_consistent() {
        // kappa = 50, 10000 draws around a fixed direction: the empirical
        // mean direction lands within 0.02 rad of mu.
        let mut rng = Rng::new(11);
        let mu = unit_sphere_vector(&mut rng, 6);
        let mut acc = vec![0.0; 6];
        for _ in 0..10_000 {
            let x = sample_vmf(&mut rng, &mu, 50.0);
            for (a, v) in acc.iter_mut().zip(&x) {
                *a += v;
            }
        }
        let n = norm2(&acc);
        let cos = (dot(&acc, &mu) / n).clamp(-1.0, 1.0);
        assert!(cos.acos() < 0.02, "angular error {}", cos.acos());
    }

    #[test]
    fn invalid_kappa_errors() {
        let mut cfg = small_cfg();
        cfg.kappa = 0.0;
        assert!(matches!(
            generate_synthetic(&cfg),
            Err(crate::Error::Argument(_))
        ));
    }

    #[test]
    fn csv_roundtrip_and_remap() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "label,f0,f1\n5,0.5,1.0\n9,-1.0,0.25\n5,0.0,2.0\n").unwrap();
        let (ds, mapping) = load_csv(&path).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.input_dim(), 2);
        assert_eq!(ds.labels, vec![0, 1, 0]);
        assert_eq!(mapping, vec![(5, 0), (9, 1)]);
        assert_eq!(ds.features.row(1), &[-1.0, 0.25]);
    }

    #[test]
    fn csv_ragged_row_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "label,f0,f1\n1,0.5\n").unwrap();
        match load_csv(&path) {
            Err(crate::Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn csv_non_numeric_cell_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "label,f0\n1,banana\n").unwrap();
        assert!(matches!(
            load_csv(&path),
            Err(crate::Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn csv_empty_file_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        std::fs::write(&path, "").unwrap();
        assert!(matches!(load_csv(&path), Err(crate::Error::Parse { .. })));
    }

    #[test]
    fn splits_partition_each_class() {
        let ds = generate_synthetic(&small_cfg()).unwrap();
        let tagged = make_splits(&ds, 1, 2, 99).unwrap();
        for class in 0..5 {
            let g = tagged.class_indices(SplitTag::Gallery)[class].len();
            let p = tagged.class_indices(SplitTag::Probe)[class].len();
            let t = tagged.class_indices(SplitTag::Train)[class].len();
            assert_eq!((g, p, t), (1, 2, 7));
        }
        // Same seed, same tags.
        let again = make_splits(&ds, 1, 2, 99).unwrap();
        assert_eq!(tagged.tags, again.tags);
    }

    #[test]
    fn splits_insufficient_samples_name_the_class() {
        let ds = generate_synthetic(&small_cfg()).unwrap();
        match make_splits(&ds, 6, 5, 0) {
            Err(crate::Error::Argument(msg)) => assert!(msg.contains("class 0")),
            other => panic!("expected argument error, got {other:?}"),
        }
    }

    #[test]
    fn batches_cover_the_train_split() {
        let ds = generate_synthetic(&small_cfg()).unwrap();
        let tagged = make_splits(&ds, 1, 2, 1).unwrap();
        let bs = batches(&tagged, 4, 123).unwrap();
        // 35 train rows -> sizes 4,...,4,3.
        let sizes: Vec<usize> = bs.iter().map(|b| b.len()).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 35);
        assert!(sizes[..sizes.len() - 1].iter().all(|&s| s == 4));
        assert_eq!(*sizes.last().unwrap(), 3);

        // Multiset of labels matches the train split.
        let mut emitted: Vec<usize> = bs.iter().flat_map(|b| b.labels.clone()).collect();
        let mut expected: Vec<usize> = tagged
            .indices_with_tag(SplitTag::Train)
            .iter()
            .map(|&i| tagged.labels[i])
            .collect();
        emitted.sort_unstable();
        expected.sort_unstable();
        assert_eq!(emitted, expected);

        // Same epoch seed, same order.
        let again = batches(&tagged, 4, 123).unwrap();
        for (a, b) in bs.iter().zip(&again) {
            assert_eq!(a.labels, b.labels);
            assert_eq!(a.features.data(), b.features.data());
        }
    }

    #[test]
    fn batches_on_empty_train_split_error() {
        let ds = generate_synthetic(&small_cfg()).unwrap();
        let tagged = make_splits(&ds, 5, 5, 0).unwrap(); // everything gallery/probe
        assert!(matches!(
            batches(&tagged, 4, 0),
            Err(crate::Error::Argument(_))
        ));
    }

    #[test]
    fn batch_counting_example() {
        // n = 10, batch 4 -> 4, 4, 2.
        let features = Matrix::zeros(10, 3);
        let mut ds = Dataset::new(
            {
                let mut f = features;
                for i in 0..10 {
                    f.set(i, 0, 1.0);
                }
                f
            },
            vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1],
            2,
        )
        .unwrap();
        ds.tags = vec![SplitTag::Train; 10];
        let bs = batches(&ds, 4, 0).unwrap();
        let sizes: Vec<usize> = bs.iter().map(|b| b.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
    }
}

//! Bit-exact model checkpoints.
//!
//! Layout:
//!
//! ```text
//! offset  size        field
//! 0       4           magic "PXKD"
//! 4       4           format version, u32 little-endian (currently 1)
//! 8       4           metadata length, u32 little-endian
//! 12      meta_len    metadata, JSON (dims, layer spec, loss config, seed)
//! ...     8 * count   weight payload, f64 little-endian, row-major,
//!                     encoder layers in order (weight then bias), then the
//!                     classifier weights
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::model::{Activation, Classifier, EncoderModel, Layer};
use crate::numcore::Matrix;

pub const MAGIC: &[u8; 4] = b"PXKD";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub out_dim: usize,
    pub in_dim: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub input_dim: usize,
    pub embed_dim: usize,
    pub layers: Vec<LayerSpec>,
    pub num_classes: usize,
    pub classifier_frozen: bool,
    pub loss: Option<LossConfig>,
    pub seed: u64,
}

fn corrupt(section: &str, detail: impl Into<String>) -> Error {
    Error::CorruptCheckpoint {
        section: section.into(),
        detail: detail.into(),
    }
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &EncoderModel,
    clf: &Classifier,
    loss: Option<&LossConfig>,
    seed: u64,
) -> Result<()> {
    let meta = CheckpointMeta {
        input_dim: model.input_dim(),
        embed_dim: model.embed_dim(),
        layers: model
            .layers()
            .iter()
            .map(|l| LayerSpec {
                out_dim: l.weight.rows(),
                in_dim: l.weight.cols(),
                activation: l.activation,
            })
            .collect(),
        num_classes: clf.num_classes(),
        classifier_frozen: clf.frozen,
        loss: loss.copied(),
        seed,
    };
    let meta_bytes =
        serde_json::to_vec(&meta).map_err(|e| Error::Config(format!("metadata encode: {e}")))?;

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(meta_bytes.len() as u32).to_le_bytes());
    buf.extend_from_slice(&meta_bytes);
    for layer in model.layers() {
        for v in layer.weight.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for v in &layer.bias {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    for v in clf.weights.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(
    path: impl AsRef<Path>,
) -> Result<(EncoderModel, Classifier, CheckpointMeta)> {
    let buf = fs::read(path)?;
    if buf.len() < 12 {
        return Err(corrupt("header", format!("file is {} bytes", buf.len())));
    }
    if &buf[0..4] != MAGIC {
        return Err(corrupt("magic", format!("{:02x?}", &buf[0..4])));
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: VERSION,
        });
    }
    let meta_len = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
    if buf.len() < 12 + meta_len {
        return Err(corrupt(
            "metadata",
            format!("declared {} bytes, {} available", meta_len, buf.len() - 12),
        ));
    }
    let meta: CheckpointMeta = serde_json::from_slice(&buf[12..12 + meta_len])
        .map_err(|e| corrupt("metadata", e.to_string()))?;

    let weight_count: usize = meta
        .layers
        .iter()
        .map(|l| l.out_dim * l.in_dim + l.out_dim)
        .sum::<usize>()
        + meta.num_classes * meta.embed_dim;
    let payload = &buf[12 + meta_len..];
    if payload.len() != weight_count * 8 {
        return Err(corrupt(
            "payload",
            format!(
                "expected {} bytes of weights, found {}",
                weight_count * 8,
                payload.len()
            ),
        ));
    }

    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut layers = Vec::with_capacity(meta.layers.len());
    for spec in &meta.layers {
        let wlen = spec.out_dim * spec.in_dim;
        let weight =
            Matrix::from_vec(spec.out_dim, spec.in_dim, values.by_ref().take(wlen).collect())?;
        let bias: Vec<f64> = values.by_ref().take(spec.out_dim).collect();
        layers.push(Layer {
            weight,
            bias,
            activation: spec.activation,
        });
    }
    let clf_weights = Matrix::from_vec(
        meta.num_classes,
        meta.embed_dim,
        values.by_ref().collect(),
    )?;
    let model = EncoderModel::from_layers(layers)?;
    if model.input_dim() != meta.input_dim || model.embed_dim() != meta.embed_dim {
        return Err(corrupt("metadata", "layer spec disagrees with dims"));
    }
    let clf = Classifier {
        weights: clf_weights,
        frozen: meta.classifier_frozen,
    };
    Ok((model, clf, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossVariant;
    use crate::model::EncoderConfig;
    use crate::numcore::Rng;

    fn sample() -> (EncoderModel, Classifier) {
        let mut rng = Rng::new(3);
        let model = EncoderModel::init(&EncoderConfig::new(5, vec![7], 4), &mut rng).unwrap();
        let clf = Classifier::init(6, 4, &mut rng).unwrap();
        (model, clf)
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let (model, clf) = sample();
        let loss = LossConfig::new(LossVariant::ArcFace, 0.5, 64.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pxkd");
        save_checkpoint(&path, &model, &clf, Some(&loss), 42).unwrap();
        let (m2, c2, meta) = load_checkpoint(&path).unwrap();
        assert_eq!(model, m2);
        assert_eq!(clf, c2);
        assert_eq!(meta.seed, 42);
        assert_eq!(meta.loss, Some(loss));

        // Save-load-save produces identical bytes.
        let path2 = dir.path().join("m2.pxkd");
        save_checkpoint(&path2, &m2, &c2, Some(&loss), 42).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn truncation_is_a_payload_error() {
        let (model, clf) = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pxkd");
        save_checkpoint(&path, &model, &clf, None, 0).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        match load_checkpoint(&path) {
            Err(crate::Error::CorruptCheckpoint { section, .. }) => {
                assert_eq!(section, "payload")
            }
            other => panic!("expected payload corruption, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_version_are_rejected() {
        let (model, clf) = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.pxkd");
        save_checkpoint(&path, &model, &clf, None, 0).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 9; // version 9
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(crate::Error::UnsupportedVersion { found: 9, .. })
        ));

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        bytes[4] = 1;
        std::fs::write(&path, &bytes).unwrap();
        match load_checkpoint(&path) {
            Err(crate::Error::CorruptCheckpoint { section, .. }) => assert_eq!(section, "magic"),
            other => panic!("expected magic corruption, got {other:?}"),
        }
    }
}

//! The joint model: shared encoder, classifier head, optional caption
//! decoder, and checkpoint round-tripping with a config echo.

use crate::corpus::Vocabulary;
use crate::encoder::{Encoded, Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::heads::{CaptionDecoder, ClassifierHead, DecoderConfig};
use crate::seeds;
use crate::videoio::VideoClip;
use serde::{Deserialize, Serialize};
use std::path::Path;
use tapegrad::{checkpoint, ParamStore, Session};

pub const ENCODER_SCOPE: &str = "encoder";
pub const CLASSIFIER_SCOPE: &str = "classifier";
pub const DECODER_SCOPE: &str = "decoder";

/// Everything needed to rebuild a model; serialized as the checkpoint
/// header so checkpoints are self-contained (the vocabulary rides along).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub classes: usize,
    pub decoder: Option<DecoderSpec>,
    /// category -> group map, kept for coarse-from-fine evaluation
    pub hierarchy: Option<Vec<usize>>,
    pub group_count: Option<usize>,
    pub init_seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DecoderSpec {
    pub embed_dim: usize,
    pub hidden: usize,
    pub max_len: usize,
    pub vocab: Vec<String>,
}

pub struct JointModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub classifier: ClassifierHead,
    pub decoder: Option<CaptionDecoder>,
    pub vocab: Option<Vocabulary>,
}

impl JointModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.encoder.validate()?;
        if config.classes == 0 {
            return Err(Error::Config("classifier needs at least one class".into()));
        }
        let mut store = ParamStore::new();
        Self::build(config, &mut store).map(|(encoder, classifier, decoder, vocab, config)| JointModel {
            config,
            store,
            encoder,
            classifier,
            decoder,
            vocab,
        })
    }

    #[allow(clippy::type_complexity)]
    fn build(
        config: ModelConfig,
        store: &mut ParamStore,
    ) -> Result<(Encoder, ClassifierHead, Option<CaptionDecoder>, Option<Vocabulary>, ModelConfig)> {
        let mut rng = seeds::rng(config.init_seed, &[0x90de1]);
        let encoder = Encoder::new(store, ENCODER_SCOPE, &mut rng, config.encoder.clone());
        let dim = config.encoder.embedding_dim();
        let classifier = ClassifierHead::new(store, CLASSIFIER_SCOPE, &mut rng, dim, config.classes);
        let (decoder, vocab) = match &config.decoder {
            Some(spec) => {
                let vocab = Vocabulary::from_token_list(spec.vocab.clone())?;
                let dc = DecoderConfig {
                    vocab_size: vocab.len(),
                    embed_dim: spec.embed_dim,
                    hidden: spec.hidden,
                    max_len: spec.max_len,
                };
                (Some(CaptionDecoder::new(store, DECODER_SCOPE, &mut rng, dim, dc)), Some(vocab))
            }
            None => (None, None),
        };
        Ok((encoder, classifier, decoder, vocab, config))
    }

    /// Encodes a clip batch in the given session.
    pub fn encode(&self, s: &mut Session, clips: &[VideoClip]) -> Result<Encoded> {
        self.encoder.encode_clips(s, clips)
    }

    /// Eval-mode encodings as plain vectors (the penultimate features).
    pub fn extract_features(&mut self, clips: &[VideoClip]) -> Result<Vec<Vec<f64>>> {
        let mut s = Session::inference(&mut self.store);
        let out = self.encoder.encode_clips(&mut s, clips)?;
        let h = s.tape.value(out.h);
        Ok(h.rows().into_iter().map(|r| r.to_vec()).collect())
    }

    /// Eval-mode class probabilities per clip.
    pub fn predict_probs(&mut self, clips: &[VideoClip]) -> Result<Vec<Vec<f64>>> {
        let mut s = Session::inference(&mut self.store);
        let out = self.encoder.encode_clips(&mut s, clips)?;
        let probs = self.classifier.classify(&mut s, out.h);
        let pv = s.tape.value(probs);
        Ok(pv.rows().into_iter().map(|r| r.to_vec()).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = serde_json::to_string(&self.config).expect("config serializes");
        checkpoint::save(path, &header, &self.store).map_err(|e| Error::io(path, e))
    }

    /// Loads a checkpoint, validating that the stored parameters match the
    /// architecture the header describes.
    pub fn load(path: &Path) -> Result<Self> {
        let (header, store) = checkpoint::load(path).map_err(|e| Error::io(path, e))?;
        let config: ModelConfig = serde_json::from_str(&header).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: format!("checkpoint header: {e}"),
        })?;
        // rebuild into a scratch store to compare the parameter inventory
        let mut scratch = ParamStore::new();
        let (encoder, classifier, decoder, vocab, config) = Self::build(config, &mut scratch)?;
        if scratch.len() != store.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} parameter blocks, config implies {}",
                store.len(),
                scratch.len()
            )));
        }
        for id in scratch.ids() {
            let name = scratch.name_of(id);
            let other = store.id_of(name).ok_or_else(|| {
                Error::Config(format!("checkpoint is missing parameter '{name}'"))
            })?;
            if store.value(other).shape() != scratch.value(id).shape() {
                return Err(Error::Config(format!(
                    "checkpoint parameter '{name}' has shape {:?}, config implies {:?}",
                    store.value(other).shape(),
                    scratch.value(id).shape()
                )));
            }
        }
        Ok(JointModel { config, store, encoder, classifier, decoder, vocab })
    }

    /// Content hash of all parameters (used by freeze guarantees).
    pub fn params_hash(&self) -> String {
        self.store.content_hash()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_vocabulary;

    fn tiny_model_config(with_decoder: bool) -> ModelConfig {
        let vocab = build_vocabulary(
            &[vec!["moving".into(), "square".into(), "left".into(), "right".into()]],
            1,
        );
        ModelConfig {
            encoder: EncoderConfig { channels_3d: 4, channels_2d: 4, blocks: 2, lstm_hidden: 8 },
            classes: 4,
            decoder: with_decoder.then(|| DecoderSpec {
                embed_dim: 6,
                hidden: 7,
                max_len: 14,
                vocab: vocab.tokens().to_vec(),
            }),
            hierarchy: Some(vec![0, 0, 1, 1]),
            group_count: Some(2),
            init_seed: 5,
        }
    }

    #[test]
    fn checkpoint_round_trip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = JointModel::new(tiny_model_config(true)).unwrap();
        model.save(&path).unwrap();
        let loaded = JointModel::load(&path).unwrap();
        assert_eq!(loaded.config, model.config);
        assert_eq!(loaded.params_hash(), model.params_hash());
        assert!(loaded.decoder.is_some());
        assert_eq!(loaded.vocab.as_ref().unwrap().len(), model.vocab.as_ref().unwrap().len());
    }

    #[test]
    fn same_seed_same_init() {
        let a = JointModel::new(tiny_model_config(false)).unwrap();
        let b = JointModel::new(tiny_model_config(false)).unwrap();
        assert_eq!(a.params_hash(), b.params_hash());
    }

    #[test]
    fn load_rejects_mismatched_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = JointModel::new(tiny_model_config(false)).unwrap();
        // tamper with the header: claim a different class count
        let mut cfg = model.config.clone();
        cfg.classes = 9;
        let header = serde_json::to_string(&cfg).unwrap();
        tapegrad::checkpoint::save(&path, &header, &model.store).unwrap();
        assert!(JointModel::load(&path).is_err());
    }
}

//! `ARTW` model container.
//!
//! Little-endian layout:
//!
//! ```text
//! magic "ARTW" | u32 version | u8 dtype (4 = f32, 8 = f64) | u32 n_sections
//! section: str name | u32 len + JSON config | u32 n_tensors | tensor*
//! tensor:  str name | u8 ndim | u32 dim * ndim | values
//! ```
//!
//! where `str` is a `u16` byte length followed by UTF-8.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::{Classifier, ClassifierConfig, Model};
use crate::encoder::{ArtConfig, ArtEncoder};
use crate::error::{Error, FormatError, Result};
use crate::numerics::{DType, ParamSet, Real, Tensor};
use crate::schema::{ChannelVocabulary, VocabMode, VocabularyFile};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"ARTW";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A named parameter block with its JSON configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Section<T> {
    pub name: String,
    pub config: String,
    pub params: ParamSet<T>,
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    let len = u16::try_from(s.len()).expect("names fit in u16");
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

pub fn encode_checkpoint<T: Real>(sections: &[Section<T>]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.push(T::DTYPE.code());
    out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
    for s in sections {
        put_str(&mut out, &s.name);
        out.extend_from_slice(&(s.config.len() as u32).to_le_bytes());
        out.extend_from_slice(s.config.as_bytes());
        out.extend_from_slice(&(s.params.len() as u32).to_le_bytes());
        for (name, t) in s.params.names().iter().zip(s.params.tensors()) {
            put_str(&mut out, name);
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], FormatError> {
        if self.buf.len() - self.pos < n {
            return Err(FormatError::Truncated(what.to_string()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8, FormatError> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn string(&mut self, len: usize, what: &str) -> Result<String, FormatError> {
        String::from_utf8(self.take(len, what)?.to_vec())
            .map_err(|_| FormatError::Malformed(format!("{what} is not UTF-8")))
    }

    fn short_string(&mut self, what: &str) -> Result<String, FormatError> {
        let len = u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()) as usize;
        self.string(len, what)
    }
}

/// Decodes a container; values stored in the other precision are converted.
pub fn decode_checkpoint<T: Real>(buf: &[u8]) -> Result<Vec<Section<T>>> {
    let mut r = Reader { buf, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
    if magic != CHECKPOINT_MAGIC {
        return Err(FormatError::BadMagic {
            expected: CHECKPOINT_MAGIC,
            found: magic,
        }
        .into());
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(FormatError::Version {
            expected: CHECKPOINT_VERSION,
            found: version,
        }
        .into());
    }
    let code = r.u8("dtype")?;
    let dtype = DType::from_code(code).ok_or_else(|| FormatError::Malformed(format!("dtype code {code}")))?;
    let n_sections = r.u32("section count")?;
    let mut sections = Vec::new();
    for _ in 0..n_sections {
        let name = r.short_string("section name")?;
        let len = r.u32("config length")? as usize;
        let config = r.string(len, "section config")?;
        let n_tensors = r.u32("tensor count")?;
        let mut params = ParamSet::new();
        for _ in 0..n_tensors {
            let tname = r.short_string("tensor name")?;
            let ndim = r.u8("tensor rank")? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u32("tensor dims")? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n * dtype.size(), "tensor values")?;
            let data: Vec<T> = match dtype {
                DType::F32 => raw.chunks_exact(4).map(|c| T::of(f32::read_le(c) as f64)).collect(),
                DType::F64 => raw.chunks_exact(8).map(|c| T::of(f64::read_le(c))).collect(),
            };
            if params.names().contains(&tname) {
                return Err(FormatError::Malformed(format!("duplicate tensor {tname}")).into());
            }
            params.add(tname, Tensor::from_vec(&shape, data));
        }
        sections.push(Section { name, config, params });
    }
    if r.pos != buf.len() {
        return Err(FormatError::Malformed(format!("{} trailing bytes", buf.len() - r.pos)).into());
    }
    Ok(sections)
}

pub fn write_checkpoint<T: Real>(path: &Path, sections: &[Section<T>]) -> Result<()> {
    std::fs::write(path, encode_checkpoint(sections)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint<T: Real>(path: &Path) -> Result<Vec<Section<T>>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

pub fn find_section<'a, T>(sections: &'a [Section<T>], name: &str) -> Result<&'a Section<T>> {
    sections
        .iter()
        .find(|s| s.name == name)
        .ok_or_else(|| FormatError::Malformed(format!("missing section {name:?}")).into())
}

pub const ENCODER_SECTION: &str = "encoder";

#[derive(Serialize, Deserialize)]
struct EncoderConfigBlock {
    art: ArtConfig,
    vocab_mode: VocabMode,
    vocabulary: VocabularyFile,
}

/// An encoder together with the vocabulary its channel ids refer to.
#[derive(Clone, Debug)]
pub struct EncoderBundle<T> {
    pub encoder: ArtEncoder<T>,
    pub vocabulary: ChannelVocabulary,
    pub vocab_mode: VocabMode,
}

impl<T: Real> EncoderBundle<T> {
    pub fn to_section(&self) -> Result<Section<T>> {
        let block = EncoderConfigBlock {
            art: self.encoder.config().clone(),
            vocab_mode: self.vocab_mode,
            vocabulary: self.vocabulary.to_file(),
        };
        Ok(Section {
            name: ENCODER_SECTION.into(),
            config: serde_json::to_string(&block)?,
            params: self.encoder.params().clone(),
        })
    }

    pub fn from_section(section: &Section<T>) -> Result<Self> {
        let block: EncoderConfigBlock = serde_json::from_str(&section.config)?;
        let vocabulary = ChannelVocabulary::from_file(&block.vocabulary)?;
        let mut encoder = ArtEncoder::new(block.art, &mut crate::rng::stream(0, "restore"))?;
        encoder
            .params_mut()
            .load_from(section.params.names(), section.params.tensors().to_vec())
            .map_err(FormatError::Malformed)?;
        Ok(Self {
            encoder,
            vocabulary,
            vocab_mode: block.vocab_mode,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_checkpoint(path, &[self.to_section()?])
    }

    pub fn load(path: &Path) -> Result<Self> {
        let sections = read_checkpoint(path)?;
        Self::from_section(find_section(&sections, ENCODER_SECTION)?)
    }
}

pub const CLASSIFIER_SECTION: &str = "classifier";

/// Saves encoder, vocabulary and classifier as one container.
pub fn model_sections<T: Real>(model: &Model<T>) -> Result<Vec<Section<T>>> {
    let bundle = EncoderBundle {
        encoder: model.encoder.clone(),
        vocabulary: model.vocabulary.clone(),
        vocab_mode: model.vocab_mode,
    };
    Ok(vec![
        bundle.to_section()?,
        Section {
            name: CLASSIFIER_SECTION.into(),
            config: serde_json::to_string(model.classifier.config())?,
            params: model.classifier.params().clone(),
        },
    ])
}

pub fn model_from_sections<T: Real>(sections: &[Section<T>]) -> Result<Model<T>> {
    let bundle = EncoderBundle::from_section(find_section(sections, ENCODER_SECTION)?)?;
    let section = find_section(sections, CLASSIFIER_SECTION)?;
    let config: ClassifierConfig = serde_json::from_str(&section.config)?;
    let mut classifier = Classifier::new(config, &mut crate::rng::stream(0, "restore"))?;
    classifier
        .params_mut()
        .load_from(section.params.names(), section.params.tensors().to_vec())
        .map_err(FormatError::Malformed)?;
    Ok(Model {
        encoder: bundle.encoder,
        vocabulary: bundle.vocabulary,
        vocab_mode: bundle.vocab_mode,
        classifier,
    })
}

pub fn save_model<T: Real>(path: &Path, model: &Model<T>) -> Result<()> {
    write_checkpoint(path, &model_sections(model)?)
}

pub fn load_model<T: Real>(path: &Path) -> Result<Model<T>> {
    model_from_sections(&read_checkpoint(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::SignalRef;
    use crate::numerics::Graph;
    use crate::schema::ChannelName;

    fn bundle() -> EncoderBundle<f32> {
        let names = |xs: &[&str]| xs.iter().map(|x| ChannelName::new(x).unwrap()).collect::<Vec<_>>();
        let vocabulary = ChannelVocabulary::build_union(&[
            ("a".into(), names(&["FP1", "O1", "C3"])),
            ("b".into(), names(&["C3", "C4"])),
        ])
        .unwrap();
        let encoder = ArtEncoder::new(
            ArtConfig::new(vocabulary.len(), &[128, 200]),
            &mut crate::rng::stream(1, "t"),
        )
        .unwrap();
        EncoderBundle {
            encoder,
            vocabulary,
            vocab_mode: VocabMode::Union,
        }
    }

    fn forward(enc: &ArtEncoder<f32>) -> Vec<u32> {
        let x: Vec<f32> = (0..400).map(|t| (t as f32 * 0.1).sin()).collect();
        let mut g = Graph::new();
        let p = enc.bind(&mut g, false);
        let r = enc
            .represent(
                &mut g,
                &p,
                &[SignalRef {
                    samples: &x,
                    channel_id: 3,
                    rate_id: 1,
                }],
            )
            .unwrap();
        g.value(r).data().iter().map(|v| v.to_bits()).collect()
    }

    #[test]
    fn encoder_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.artw");
        let b = bundle();
        b.save(&path).unwrap();
        let back = EncoderBundle::<f32>::load(&path).unwrap();
        assert_eq!(back.encoder.params(), b.encoder.params());
        assert_eq!(back.vocabulary.entries(), b.vocabulary.entries());
        assert_eq!(forward(&back.encoder), forward(&b.encoder));
        let again = dir.path().join("again.artw");
        back.save(&again).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    }

    #[test]
    fn corrupted_headers_are_distinct_errors() {
        let bytes = encode_checkpoint(&[bundle().to_section().unwrap()]);
        let mut bad = bytes.clone();
        bad[1] = b'?';
        assert!(matches!(
            decode_checkpoint::<f32>(&bad),
            Err(Error::Format(FormatError::BadMagic { .. }))
        ));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(
            decode_checkpoint::<f32>(&bad),
            Err(Error::Format(FormatError::Version { .. }))
        ));
        assert!(matches!(
            decode_checkpoint::<f32>(&bytes[..bytes.len() - 1]),
            Err(Error::Format(FormatError::Truncated(_)))
        ));
    }

    #[test]
    fn precision_widening_preserves_values() {
        let s = bundle().to_section().unwrap();
        let wide: Vec<Section<f64>> = decode_checkpoint(&encode_checkpoint(std::slice::from_ref(&s))).unwrap();
        assert_eq!(wide[0].params.cast::<f32>(), s.params);
    }
}

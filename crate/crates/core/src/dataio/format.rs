//! `EEG1` epoch container.
//!
//! Little-endian layout:
//!
//! ```text
//! magic "EEG1" | u32 version | u32 fs | u16 n_channels | u32 n_samples | u16 label
//! | str subject_id | str dataset_id | str channel_name * n_channels
//! | f32 samples, channel-major
//! ```
//!
//! where `str` is a `u16` byte length followed by UTF-8.

use std::path::Path;

use super::EpochRecord;
use crate::error::{Error, FormatError, Result};
use crate::schema::ChannelName;

pub const EPOCH_MAGIC: [u8; 4] = *b"EEG1";
pub const EPOCH_VERSION: u32 = 1;

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    let len: u16 = s
        .len()
        .try_into()
        .map_err(|_| Error::InvalidArgument(format!("string too long for container: {s:?}")))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

pub fn encode_epoch(rec: &EpochRecord) -> Result<Vec<u8>> {
    let n_ch: u16 = rec
        .n_channels()
        .try_into()
        .map_err(|_| Error::InvalidArgument("too many channels".into()))?;
    let n_samples: u32 = rec
        .n_samples()
        .try_into()
        .map_err(|_| Error::InvalidArgument("too many samples".into()))?;
    let mut out = Vec::with_capacity(64 + rec.samples().len() * 4);
    out.extend_from_slice(&EPOCH_MAGIC);
    out.extend_from_slice(&EPOCH_VERSION.to_le_bytes());
    out.extend_from_slice(&rec.sampling_rate_hz.to_le_bytes());
    out.extend_from_slice(&n_ch.to_le_bytes());
    out.extend_from_slice(&n_samples.to_le_bytes());
    out.extend_from_slice(&rec.label.to_le_bytes());
    put_str(&mut out, &rec.subject_id)?;
    put_str(&mut out, &rec.dataset_id)?;
    for c in &rec.channel_names {
        put_str(&mut out, c.as_str())?;
    }
    for v in rec.samples() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
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

    fn u16(&mut self, what: &str) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String, FormatError> {
        let len = self.u16(what)? as usize;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| FormatError::Malformed(format!("{what} is not UTF-8")))
    }
}

pub fn decode_epoch(buf: &[u8]) -> Result<EpochRecord> {
    let mut r = Reader { buf, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
    if magic != EPOCH_MAGIC {
        return Err(FormatError::BadMagic {
            expected: EPOCH_MAGIC,
            found: magic,
        }
        .into());
    }
    let version = r.u32("version")?;
    if version != EPOCH_VERSION {
        return Err(FormatError::Version {
            expected: EPOCH_VERSION,
            found: version,
        }
        .into());
    }
    let fs = r.u32("sampling rate")?;
    let n_ch = r.u16("channel count")? as usize;
    let n_samples = r.u32("sample count")? as usize;
    let label = r.u16("label")?;
    let subject = r.string("subject id")?;
    let dataset = r.string("dataset id")?;
    let mut names = Vec::with_capacity(n_ch);
    for _ in 0..n_ch {
        let raw = r.string("channel name")?;
        names.push(ChannelName::new(&raw).map_err(|_| FormatError::Malformed(format!("bad channel name {raw:?}")))?);
    }
    let payload = r.take(n_ch * n_samples * 4, "samples")?;
    if r.pos != buf.len() {
        return Err(FormatError::Malformed(format!("{} trailing bytes", buf.len() - r.pos)).into());
    }
    let mut samples = Vec::with_capacity(n_ch * n_samples);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(FormatError::NonFiniteSample {
                channel: i / n_samples,
                index: i % n_samples,
            }
            .into());
        }
        samples.push(v);
    }
    EpochRecord::new(dataset, subject, label, fs, names, samples)
}

pub fn write_epoch(path: &Path, rec: &EpochRecord) -> Result<()> {
    let bytes = encode_epoch(rec)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_epoch(path: &Path) -> Result<EpochRecord> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_epoch(&bytes)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn record(n_ch: usize, rate: u32) -> EpochRecord {
        let n = super::super::window_samples(2.0, rate);
        let names = (0..n_ch).map(|i| ChannelName::new(&format!("E{i}")).unwrap()).collect();
        let samples = (0..n_ch * n).map(|i| (i as f32 * 0.013).sin()).collect();
        EpochRecord::new("SEED", "sub01", 2, rate, names, samples).unwrap()
    }

    #[test]
    fn header_declares_seed_geometry() {
        let bytes = encode_epoch(&record(62, 200)).unwrap();
        assert_eq!(&bytes[..4], b"EEG1");
        assert_eq!(u16::from_le_bytes([bytes[12], bytes[13]]), 62);
        assert_eq!(u32::from_le_bytes(bytes[14..18].try_into().unwrap()), 400);
    }

    #[test]
    fn corrupted_magic() {
        let mut bytes = encode_epoch(&record(2, 128)).unwrap();
        bytes[0] = b'X';
        assert!(matches!(
            decode_epoch(&bytes),
            Err(Error::Format(FormatError::BadMagic { .. }))
        ));
    }

    #[test]
    fn wrong_version() {
        let mut bytes = encode_epoch(&record(2, 128)).unwrap();
        bytes[4] = 9;
        assert!(matches!(
            decode_epoch(&bytes),
            Err(Error::Format(FormatError::Version { found: 9, .. }))
        ));
    }

    #[test]
    fn truncated_payload() {
        let bytes = encode_epoch(&record(2, 128)).unwrap();
        assert!(matches!(
            decode_epoch(&bytes[..bytes.len() - 3]),
            Err(Error::Format(FormatError::Truncated(_)))
        ));
    }

    #[test]
    fn non_finite_sample() {
        let mut bytes = encode_epoch(&record(2, 128)).unwrap();
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            decode_epoch(&bytes),
            Err(Error::Format(FormatError::NonFiniteSample { channel: 1, index: 255 }))
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.eeg");
        let rec = record(5, 128);
        write_epoch(&path, &rec).unwrap();
        assert_eq!(read_epoch(&path).unwrap(), rec);
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            n_ch in 1usize..6,
            n in 1usize..50,
            seed in any::<u32>(),
            label in any::<u16>(),
        ) {
            let names = (0..n_ch).map(|i| ChannelName::new(&format!("c{i}")).unwrap()).collect();
            let samples: Vec<f32> = (0..n_ch * n)
                .map(|i| f32::from_bits((seed.wrapping_mul(2654435761).wrapping_add(i as u32) % 0x7f00_0000) ^ (0x8000_0000 * (i as u32 & 1))))
                .collect();
            let rec = EpochRecord::new("d", "s", label, 128, names, samples).unwrap();
            let back = decode_epoch(&encode_epoch(&rec).unwrap()).unwrap();
            let a: Vec<u32> = rec.samples().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = back.samples().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
            prop_assert_eq!(back, rec);
        }
    }
}

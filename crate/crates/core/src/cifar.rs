//! CIFAR-100 binary reader.
//!
//! Each record is 3074 bytes: coarse label, fine label, then 3072 pixel bytes
//! stored channel-planar (1024 R, 1024 G, 1024 B), rows top to bottom.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const RECORD_BYTES: usize = 3074;
pub const PIXEL_BYTES: usize = 3072;
pub const COARSE_CLASSES: u8 = 20;
pub const FINE_CLASSES: u8 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.bin",
            Split::Test => "test.bin",
        }
    }

    /// Record count of the official distribution.
    pub fn expected_records(self) -> usize {
        match self {
            Split::Train => 50_000,
            Split::Test => 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub coarse_label: u8,
    pub fine_label: u8,
    /// `[3, 32, 32]`, raw 0..255 values.
    pub pixels: Tensor,
}

fn check_length(len: usize) -> Result<()> {
    if !len.is_multiple_of(RECORD_BYTES) {
        let start = len - len % RECORD_BYTES;
        return Err(Error::Format(format!(
            "truncated record at byte {start}: {} trailing bytes, records are {RECORD_BYTES} bytes",
            len - start
        )));
    }
    Ok(())
}

/// Decodes record `i`, whose bytes are `rec`.
fn decode_record(rec: &[u8], i: usize) -> Result<ImageRecord> {
    let at = i * RECORD_BYTES;
    let (coarse, fine) = (rec[0], rec[1]);
    if coarse >= COARSE_CLASSES {
        return Err(Error::Format(format!("coarse label {coarse} out of range at byte {at}")));
    }
    if fine >= FINE_CLASSES {
        return Err(Error::Format(format!("fine label {fine} out of range at byte {}", at + 1)));
    }
    let pixels = Tensor::new(vec![3, 32, 32], rec[2..].iter().map(|&b| b as f32).collect())?;
    Ok(ImageRecord {
        coarse_label: coarse,
        fine_label: fine,
        pixels,
    })
}

/// Parses a buffer of concatenated records.
pub fn parse_records(bytes: &[u8]) -> Result<Vec<ImageRecord>> {
    check_length(bytes.len())?;
    bytes
        .chunks_exact(RECORD_BYTES)
        .enumerate()
        .map(|(i, rec)| decode_record(rec, i))
        .collect()
}

/// A record file held as raw bytes and decoded one record at a time, so a
/// sample of a large split never materializes every image.
#[derive(Debug, Clone)]
pub struct RecordBuffer {
    bytes: Vec<u8>,
}

impl RecordBuffer {
    pub fn new(bytes: Vec<u8>) -> Result<Self> {
        check_length(bytes.len())?;
        Ok(RecordBuffer { bytes })
    }

    pub fn open(path: impl AsRef<Path>, split: Split) -> Result<Self> {
        let file = resolve(path.as_ref(), split);
        let bytes = fs::read(&file).map_err(|e| Error::io(&file, e))?;
        RecordBuffer::new(bytes)
    }

    pub fn len(&self) -> usize {
        self.bytes.len() / RECORD_BYTES
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn record(&self, i: usize) -> Result<ImageRecord> {
        if i >= self.len() {
            return Err(Error::Bounds(format!("record {i} of {}", self.len())));
        }
        decode_record(&self.bytes[i * RECORD_BYTES..(i + 1) * RECORD_BYTES], i)
    }
}

/// Resolves `path` to a record file: a directory selects `train.bin` or
/// `test.bin` inside it, a file is read as-is.
pub fn resolve(path: &Path, split: Split) -> PathBuf {
    if path.is_dir() {
        path.join(split.file_name())
    } else {
        path.to_path_buf()
    }
}

pub fn read_cifar100(path: impl AsRef<Path>, split: Split) -> Result<Vec<ImageRecord>> {
    let file = resolve(path.as_ref(), split);
    let bytes = fs::read(&file).map_err(|e| Error::io(&file, e))?;
    let records = parse_records(&bytes)?;
    if records.len() != split.expected_records() {
        log::debug!(
            "{}: {} records (official {split:?} split has {})",
            file.display(),
            records.len(),
            split.expected_records()
        );
    }
    Ok(records)
}

/// Serializes records back to the binary layout.
pub fn encode_records(records: &[ImageRecord]) -> Vec<u8> {
    let mut out = Vec::with_capacity(records.len() * RECORD_BYTES);
    for r in records {
        out.push(r.coarse_label);
        out.push(r.fine_label);
        out.extend(r.pixels.data().iter().map(|&v| v.clamp(0.0, 255.0) as u8));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(coarse: u8, fine: u8, fill: impl Fn(usize) -> u8) -> Vec<u8> {
        let mut r = vec![coarse, fine];
        r.extend((0..PIXEL_BYTES).map(fill));
        r
    }

    #[test]
    fn two_record_fixture() {
        let mut bytes = record(3, 41, |i| (i % 256) as u8);
        bytes.extend(record(19, 99, |i| (255 - i % 256) as u8));
        let recs = parse_records(&bytes).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!((recs[0].coarse_label, recs[0].fine_label), (3, 41));
        assert_eq!((recs[1].coarse_label, recs[1].fine_label), (19, 99));
        // planar: channel 1 starts at pixel byte 1024
        assert_eq!(recs[0].pixels.data()[1024], (1024 % 256) as f32);
        assert_eq!(recs[0].pixels.data()[33], 33.0);
        assert_eq!(encode_records(&recs), bytes);
    }

    #[test]
    fn buffer_decodes_single_records() {
        let mut bytes = record(3, 41, |i| (i % 256) as u8);
        bytes.extend(record(19, 99, |i| (255 - i % 256) as u8));
        let all = parse_records(&bytes).unwrap();
        let buf = RecordBuffer::new(bytes).unwrap();
        assert_eq!(buf.len(), 2);
        assert_eq!(buf.record(1).unwrap(), all[1]);
        assert!(matches!(buf.record(2), Err(Error::Bounds(_))));
        assert!(RecordBuffer::new(vec![0; RECORD_BYTES + 1]).is_err());
    }

    #[test]
    fn truncated_reports_position() {
        let mut bytes = record(0, 0, |_| 0);
        bytes.extend_from_slice(&[1, 2, 3]);
        let msg = parse_records(&bytes).unwrap_err().to_string();
        assert!(msg.contains("3074"), "{msg}");
    }

    #[test]
    fn label_out_of_range() {
        let mut bytes = record(0, 0, |_| 0);
        bytes.extend(record(0, 100, |_| 0));
        let msg = parse_records(&bytes).unwrap_err().to_string();
        assert!(msg.contains("3075"), "{msg}");
        assert!(parse_records(&record(20, 0, |_| 0)).is_err());
    }
}

//! "PEXC" checkpoint files.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic "PEXC" | version u16 | entry count u16
//! per entry:   name length u16 | UTF-8 name | size count u32 | sizes u32 × count
//!              then per layer i: weights f64 × (sizes[i+1]·sizes[i]) row-major, bias f64 × sizes[i+1]
//! CRC32 (u32) of every preceding byte
//! ```
//!
//! Plain vectors (log standard deviations, scalars) are stored as a
//! zero-input layer `[0, len]` whose bias holds the values. Entries with no
//! sizes carry only their name and are used for metadata.

use std::path::Path;

use super::MlpParams;
use crate::binio::{ByteReader, ByteWriter};
use crate::error::{Error, FormatError, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"PEXC";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl CheckpointEntry {
    pub fn network(name: impl Into<String>, params: &MlpParams) -> Self {
        let layers = params.layer_count();
        Self {
            name: name.into(),
            layer_sizes: params.layer_sizes().to_vec(),
            weights: (0..layers).map(|i| params.weights(i).to_vec()).collect(),
            biases: (0..layers).map(|i| params.biases(i).to_vec()).collect(),
        }
    }

    pub fn vector(name: impl Into<String>, values: &[f64]) -> Self {
        Self {
            name: name.into(),
            layer_sizes: vec![0, values.len()],
            weights: vec![Vec::new()],
            biases: vec![values.to_vec()],
        }
    }

    pub fn marker(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            layer_sizes: Vec::new(),
            weights: Vec::new(),
            biases: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub entries: Vec<CheckpointEntry>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, entry: CheckpointEntry) {
        self.entries.push(entry);
    }

    pub fn get(&self, name: &str) -> Option<&CheckpointEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn network(&self, name: &str) -> Result<MlpParams> {
        let e = self.require(name)?;
        MlpParams::from_parts(e.layer_sizes.clone(), e.weights.clone(), e.biases.clone())
    }

    pub fn vector(&self, name: &str) -> Result<Vec<f64>> {
        let e = self.require(name)?;
        match e.layer_sizes.as_slice() {
            [0, _] => Ok(e.biases[0].clone()),
            other => Err(FormatError::Malformed(format!("entry {name} is not a vector (sizes {other:?})")).into()),
        }
    }

    /// Names of metadata markers starting with `prefix`, with the prefix stripped.
    pub fn markers_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a str> {
        self.entries
            .iter()
            .filter(|e| e.layer_sizes.is_empty())
            .filter_map(move |e| e.name.strip_prefix(prefix))
    }

    fn require(&self, name: &str) -> Result<&CheckpointEntry> {
        self.get(name)
            .ok_or_else(|| FormatError::Malformed(format!("checkpoint has no entry named {name:?}")).into())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::new();
        w.bytes(&CHECKPOINT_MAGIC);
        w.u16(CHECKPOINT_VERSION);
        let count = u16::try_from(self.entries.len())
            .map_err(|_| FormatError::Malformed(format!("too many entries: {}", self.entries.len())))?;
        w.u16(count);
        for e in &self.entries {
            w.str16(&e.name)?;
            w.u32(e.layer_sizes.len() as u32);
            for &s in &e.layer_sizes {
                let s = u32::try_from(s).map_err(|_| FormatError::Malformed(format!("layer size {s} overflows u32")))?;
                w.u32(s);
            }
            let layers = e.layer_sizes.len().saturating_sub(1);
            if e.weights.len() != layers || e.biases.len() != layers {
                return Err(FormatError::Malformed(format!("entry {} has inconsistent layer data", e.name)).into());
            }
            for i in 0..layers {
                let (fan_in, fan_out) = (e.layer_sizes[i], e.layer_sizes[i + 1]);
                if e.weights[i].len() != fan_in * fan_out || e.biases[i].len() != fan_out {
                    return Err(FormatError::Malformed(format!("entry {} layer {i} has wrong length", e.name)).into());
                }
                w.f64s(&e.weights[i]);
                w.f64s(&e.biases[i]);
            }
        }
        Ok(w.finish_with_crc())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = ByteReader::new(bytes);
        r.header(CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
        let count = r.u16()?;
        let mut entries = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let name = r.str16()?;
            let n_sizes = r.u32()? as usize;
            if n_sizes > bytes.len() {
                return Err(FormatError::Truncated {
                    offset: r.position(),
                    needed: n_sizes * 4,
                });
            }
            let layer_sizes = (0..n_sizes)
                .map(|_| r.u32().map(|v| v as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let layers = n_sizes.saturating_sub(1);
            let mut weights = Vec::with_capacity(layers);
            let mut biases = Vec::with_capacity(layers);
            for i in 0..layers {
                let n_w = layer_sizes[i]
                    .checked_mul(layer_sizes[i + 1])
                    .ok_or_else(|| FormatError::Malformed("layer size overflow".into()))?;
                weights.push(r.f64s(n_w)?);
                biases.push(r.f64s(layer_sizes[i + 1])?);
            }
            entries.push(CheckpointEntry {
                name,
                layer_sizes,
                weights,
                biases,
            });
        }
        r.verify_crc()?;
        Ok(Self { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_bytes(&bytes)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut ck = Checkpoint::new();
        ck.push(CheckpointEntry::network("q1", &MlpParams::init(&[4, 8, 1], &mut rng).unwrap()));
        ck.push(CheckpointEntry::vector("actor.log_std", &[-0.5, 0.25]));
        ck.push(CheckpointEntry::marker("config_hash=00ff"));
        ck
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let bytes = ck.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"PEXC");
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back.vector("actor.log_std").unwrap(), vec![-0.5, 0.25]);
        assert_eq!(back.markers_with_prefix("config_hash=").collect::<Vec<_>>(), vec!["00ff"]);
    }

    #[test]
    fn every_single_byte_corruption_is_detected() {
        let bytes = sample().to_bytes().unwrap();
        for i in 0..bytes.len() {
            let mut bad = bytes.clone();
            bad[i] ^= 0x5a;
            assert!(Checkpoint::from_bytes(&bad).is_err(), "corruption at byte {i} went unnoticed");
        }
    }

    #[test]
    fn distinct_errors() {
        let bytes = sample().to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(FormatError::BadMagic { .. })));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(FormatError::Version { found: 9, .. })));
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 7]),
            Err(FormatError::Truncated { .. })
        ));
        let mut bad = bytes.clone();
        let mid = bytes.len() / 2;
        bad[mid] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(FormatError::Checksum { .. })));
    }
}

//! Binary MetaNet record.
//!
//! ```text
//! magic "MNET" | version u32 | feature_mode u8 | n_models u32 | min_non_o u32
//! | n_labels u32 | n_labels x (len u32, utf-8 bytes)
//! | n_sizes u32 | n_sizes x u32
//! | per layer: weights (outputs x inputs, row-major) f64, biases f64
//! ```
//!
//! All integers and floats are little-endian; floats are stored as raw
//! bits so a round trip is exact.

use std::io::{Read, Write};
use std::path::Path;

use super::net::{Dense, MetaNet};
use super::FeatureMode;
use crate::error::{Error, Result};
use crate::labels::LabelScheme;

const MAGIC: &[u8; 4] = b"MNET";
const VERSION: u32 = 1;

fn format_err(message: impl Into<String>) -> Error {
    Error::Format { line: 0, message: message.into() }
}

fn put_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| format_err("value exceeds u32"))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<usize> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf) as usize)
}

fn get_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut buf = [0u8; 8];
    (0..n)
        .map(|_| {
            r.read_exact(&mut buf)?;
            Ok(f64::from_le_bytes(buf))
        })
        .collect()
}

impl MetaNet {
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&[match self.feature_mode {
            FeatureMode::OneHot => 0,
            FeatureMode::Logits => 1,
        }])?;
        put_u32(&mut w, self.n_models)?;
        put_u32(&mut w, self.min_non_o)?;
        let labels = &LabelScheme::canonical().labels;
        put_u32(&mut w, labels.len())?;
        for label in labels {
            put_u32(&mut w, label.len())?;
            w.write_all(label.as_bytes())?;
        }
        let sizes = self.sizes();
        put_u32(&mut w, sizes.len())?;
        for s in sizes {
            put_u32(&mut w, s)?;
        }
        for layer in &self.layers {
            for v in layer.weights.iter().chain(&layer.biases) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(format_err("not a MetaNet file"));
        }
        let version = get_u32(&mut r)?;
        if version != VERSION as usize {
            return Err(format_err(format!("unsupported MetaNet version {version}")));
        }
        let mut mode = [0u8; 1];
        r.read_exact(&mut mode)?;
        let feature_mode = match mode[0] {
            0 => FeatureMode::OneHot,
            1 => FeatureMode::Logits,
            other => return Err(format_err(format!("unknown feature mode tag {other}"))),
        };
        let n_models = get_u32(&mut r)?;
        let min_non_o = get_u32(&mut r)?;
        let n_labels = get_u32(&mut r)?;
        let mut labels = Vec::with_capacity(n_labels.min(1024));
        for _ in 0..n_labels {
            let len = get_u32(&mut r)?;
            let mut bytes = vec![0u8; len];
            r.read_exact(&mut bytes)?;
            labels.push(String::from_utf8(bytes).map_err(|_| format_err("label is not utf-8"))?);
        }
        if labels != LabelScheme::canonical().labels {
            return Err(Error::HeaderMismatch("MetaNet label list differs from the canonical scheme".into()));
        }
        let n_sizes = get_u32(&mut r)?;
        if n_sizes < 2 {
            return Err(format_err("MetaNet needs at least two layer sizes"));
        }
        let sizes = (0..n_sizes).map(|_| get_u32(&mut r)).collect::<Result<Vec<_>>>()?;
        let mut layers = Vec::with_capacity(n_sizes - 1);
        for pair in sizes.windows(2) {
            let (inputs, outputs) = (pair[0], pair[1]);
            let weights = get_f64s(&mut r, inputs * outputs)?;
            let biases = get_f64s(&mut r, outputs)?;
            layers.push(Dense { inputs, outputs, weights, biases });
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(format_err("trailing bytes after MetaNet record"));
        }
        Ok(MetaNet { layers, feature_mode, n_models, min_non_o })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::NUM_LABELS;
    use proptest::prelude::*;

    #[test]
    fn rejects_garbage() {
        assert!(MetaNet::from_bytes(b"XXXX").is_err());
        let net = MetaNet::for_stacking(2, 3, FeatureMode::OneHot, 1);
        let mut bytes = net.to_bytes();
        bytes.push(0);
        assert!(MetaNet::from_bytes(&bytes).is_err());
        let bytes = net.to_bytes();
        assert!(MetaNet::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(
            n_models in 1usize..4,
            hidden in 1usize..6,
            seed in any::<u64>(),
            logits in any::<bool>(),
            poke in any::<f64>(),
        ) {
            let mode = if logits { FeatureMode::Logits } else { FeatureMode::OneHot };
            let mut net = MetaNet::for_stacking(n_models, hidden, mode, seed);
            net.layers[1].biases[NUM_LABELS - 1] = poke;
            net.min_non_o = 3;
            let bytes = net.to_bytes();
            let back = MetaNet::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
            prop_assert_eq!(back.sizes(), net.sizes());
            prop_assert_eq!(back.feature_mode, mode);
        }
    }
}

//! Encoder-only artifact of a trained stack and its binary file format.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic          b"FSTK"
//! version        u32
//! provenance     u32 byte length, then UTF-8 JSON
//! level count    u32
//! per level:     u32 layer count
//!   per layer:   u32 in_dim, u32 out_dim, u8 activation code,
//!                in_dim*out_dim f64 weights (row-major), out_dim f64 biases
//! ```
//!
//! Trailing bytes after the last level are rejected.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, DenseLayer, Matrix, Mlp};
use crate::data::{DatasetSummary, NormalizationStats};
use crate::error::{Error, Result};
use crate::stack::level::Level;

pub const MAGIC: &[u8; 4] = b"FSTK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub spec_hash: String,
    pub seed: u64,
    pub dataset: Option<DatasetSummary>,
    /// Z-scoring the encoders were trained under, for encoding raw files.
    #[serde(default)]
    pub normalization: Option<NormalizationStats>,
}

/// Ordered encoders of a trained stack. Holds no decoder, classifier or
/// adversary parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedStack {
    encoders: Vec<Mlp>,
    pub provenance: Provenance,
}

impl TrainedStack {
    pub fn new(encoders: Vec<Mlp>, provenance: Provenance) -> Result<Self> {
        for (i, pair) in encoders.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Contract(format!(
                    "encoder {} outputs {} columns but encoder {} expects {}",
                    i,
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        Ok(TrainedStack { encoders, provenance })
    }

    /// The zero-level stack: `encode` returns its input unchanged.
    pub fn identity() -> Self {
        TrainedStack {
            encoders: vec![],
            provenance: Provenance::default(),
        }
    }

    pub fn from_levels(levels: &[Level], provenance: Provenance) -> Result<Self> {
        Self::new(levels.iter().map(|l| l.encoder.clone()).collect(), provenance)
    }

    pub fn encoders(&self) -> &[Mlp] {
        &self.encoders
    }

    pub fn depth(&self) -> usize {
        self.encoders.len()
    }

    /// Input width, `None` for the identity stack.
    pub fn input_dim(&self) -> Option<usize> {
        self.encoders.first().map(Mlp::in_dim)
    }

    /// Output width of the full stack; `None` for the identity stack.
    pub fn output_dim(&self) -> Option<usize> {
        self.encoders.last().map(Mlp::out_dim)
    }

    /// `z_k = E_k(… E_1(x))` for `k = up_to`.
    pub fn encode(&self, x: &Matrix, up_to: usize) -> Result<Matrix> {
        encode(&self.encoders, x, up_to)
    }

    /// Output of the last encoder.
    pub fn encode_all(&self, x: &Matrix) -> Result<Matrix> {
        encode(&self.encoders, x, self.encoders.len())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let prov = serde_json::to_vec(&self.provenance).expect("provenance serializes");
        put_u32(&mut out, prov.len());
        out.extend_from_slice(&prov);
        put_u32(&mut out, self.encoders.len());
        for enc in &self.encoders {
            put_u32(&mut out, enc.layers.len());
            for l in &enc.layers {
                put_u32(&mut out, l.in_dim());
                put_u32(&mut out, l.out_dim());
                out.push(l.activation.code());
                for v in l.weight.data().iter().chain(l.bias.data()) {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Corrupt("missing FSTK magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        let plen = r.u32()? as usize;
        let provenance: Provenance =
            serde_json::from_slice(r.take(plen)?).map_err(|e| Error::Corrupt(format!("provenance: {e}")))?;
        let n_levels = r.u32()?;
        let mut encoders = Vec::new();
        for _ in 0..n_levels {
            let n_layers = r.u32()?;
            let mut layers = Vec::new();
            for _ in 0..n_layers {
                let in_dim = r.u32()? as usize;
                let out_dim = r.u32()? as usize;
                let code = r.take(1)?[0];
                let activation = Activation::from_code(code)
                    .ok_or_else(|| Error::Corrupt(format!("unknown activation code {code}")))?;
                let weight = Matrix::from_vec(in_dim, out_dim, r.f64s(in_dim * out_dim)?)?;
                let bias = Matrix::from_vec(1, out_dim, r.f64s(out_dim)?)?;
                layers.push(DenseLayer {
                    weight,
                    bias,
                    activation,
                });
            }
            encoders.push(Mlp { layers });
        }
        if r.pos != bytes.len() {
            return Err(Error::Corrupt(format!(
                "{} trailing bytes after the last level",
                bytes.len() - r.pos
            )));
        }
        TrainedStack::new(encoders, provenance).map_err(|e| Error::Corrupt(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Applies the first `up_to` encoders to `x`; `up_to = 0` returns `x`.
pub fn encode(encoders: &[Mlp], x: &Matrix, up_to: usize) -> Result<Matrix> {
    if up_to > encoders.len() {
        return Err(Error::Contract(format!(
            "cannot encode up to level {up_to}: stack has {} levels",
            encoders.len()
        )));
    }
    let mut z = x.clone();
    for enc in &encoders[..up_to] {
        if z.cols() != enc.in_dim() {
            return Err(Error::Dimension {
                op: "encode",
                lhs: z.shape(),
                rhs: (enc.in_dim(), enc.out_dim()),
            });
        }
        z = enc.forward_value(&z)?;
    }
    Ok(z)
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    let v = u32::try_from(v).expect("model dimensions fit in u32");
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Corrupt(format!(
                    "truncated: wanted {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Corrupt("size overflow".into()))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stack::level::build;
    use crate::stack::spec::{Criterion, LossWeights, StackSpec};

    fn adult_like() -> TrainedStack {
        let spec = StackSpec::stacked(103, &[20, 8], Criterion::Dp, LossWeights::default());
        let levels = build(&spec, 4).unwrap();
        TrainedStack::from_levels(
            &levels,
            Provenance {
                spec_hash: spec.hash(),
                seed: 4,
                dataset: None,
                normalization: None,
            },
        )
        .unwrap()
    }

    fn input(rows: usize, cols: usize) -> Matrix {
        Matrix::from_vec(
            rows,
            cols,
            (0..rows * cols)
                .map(|i| ((i * 7919) % 113) as f64 / 50.0 - 1.0)
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn encode_shapes_and_composition() {
        let t = adult_like();
        let x = input(64, 103);
        assert_eq!(t.encode(&x, 0).unwrap(), x);
        let full = t.encode(&x, 2).unwrap();
        assert_eq!(full.shape(), (64, 8));
        let step = encode(&t.encoders()[1..], &t.encode(&x, 1).unwrap(), 1).unwrap();
        assert_eq!(full, step);
        assert!(t.encode(&x, 3).is_err());
        assert!(matches!(t.encode_all(&input(2, 5)), Err(Error::Dimension { .. })));
    }

    #[test]
    fn file_round_trip_is_bit_exact() {
        let t = adult_like();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.fstk");
        t.save(&p).unwrap();
        let back = TrainedStack::load(&p).unwrap();
        assert_eq!(back, t);
        let x = input(10, 103);
        let (a, b) = (t.encode_all(&x).unwrap(), back.encode_all(&x).unwrap());
        assert!(a
            .data()
            .iter()
            .zip(b.data())
            .all(|(u, v)| u.to_bits() == v.to_bits()));
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let bytes = adult_like().to_bytes();
        for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(
                matches!(TrainedStack::from_bytes(&bytes[..cut]), Err(Error::Corrupt(_))),
                "cut at {cut}"
            );
        }
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(matches!(
            TrainedStack::from_bytes(&longer),
            Err(Error::Corrupt(_))
        ));
    }

    #[test]
    fn future_version_named_in_error() {
        let mut bytes = adult_like().to_bytes();
        bytes[4..8].copy_from_slice(&7u32.to_le_bytes());
        let err = TrainedStack::from_bytes(&bytes).unwrap_err();
        assert!(matches!(
            err,
            Error::Version {
                found: 7,
                supported: 1
            }
        ));
        let msg = err.to_string();
        assert!(msg.contains('7') && msg.contains('1'), "{msg}");
    }
}

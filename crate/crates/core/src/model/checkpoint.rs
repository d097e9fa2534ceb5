//! Binary model checkpoints.
//!
//! Little-endian layout:
//!
//! ```text
//! magic      8 bytes  "CDTCKPT\0"
//! version    u32      1
//! kind       u8       0 = translation model, 1 = deep model
//! variant    u8       0 = translated distance, 1 = inner product
//! sign       f64
//! q, l       u64, u64
//! n_users, n_items, n_sources  u64 x 3, then m_p per source (u64)
//! w0         f64
//! w          f64 x l
//! V          f64 x l*q   (row-major, one row per feature)
//! V'         f64 x l*q
//! -- kind 1 only --
//! add_interaction u8
//! n_layers   u64     (hidden layers + scalar head)
//! per layer: n_out u64, n_in u64, weights f64 x n_out*n_in (row-major), bias f64 x n_out
//! ```
//!
//! Floats are stored bit-for-bit, so a read returns exactly what was written.

use std::fs;
use std::path::Path;

use super::{Interaction, ModelParams, Variant};
use crate::deep::{Layer, MlpParams};
use crate::error::{Error, Result};
use crate::features::FeatureIndex;

const MAGIC: &[u8; 8] = b"CDTCKPT\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct DeepSection {
    pub mlp: MlpParams,
    pub add_interaction: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub index: FeatureIndex,
    pub interaction: Interaction,
    pub params: ModelParams,
    pub deep: Option<DeepSection>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, x: u8) {
        self.0.push(x);
    }
    fn u32(&mut self, x: u32) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn u64(&mut self, x: usize) {
        self.0.extend_from_slice(&(x as u64).to_le_bytes());
    }
    fn f64(&mut self, x: f64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn f64s(&mut self, xs: &[f64]) {
        xs.iter().for_each(|&x| self.f64(x));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {} (wanted {n} more)", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::Checkpoint(format!("size {v} does not fit in memory")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let remaining = (self.buf.len() - self.pos) / 8;
        if n > remaining {
            return Err(Error::Checkpoint(format!("expected {n} floats, {remaining} remain")));
        }
        (0..n).map(|_| self.f64()).collect()
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        w.u8(self.deep.is_some() as u8);
        w.u8(match self.interaction.variant {
            Variant::TranslatedDistance => 0,
            Variant::InnerProduct => 1,
        });
        w.f64(self.interaction.sign);
        w.u64(self.params.q);
        w.u64(self.params.dim());
        w.u64(self.index.n_users);
        w.u64(self.index.n_items);
        w.u64(self.index.source_items.len());
        self.index.source_items.iter().for_each(|&m| w.u64(m));
        w.f64(self.params.w0);
        w.f64s(&self.params.w);
        w.f64s(&self.params.v);
        w.f64s(&self.params.vt);
        if let Some(deep) = &self.deep {
            w.u8(deep.add_interaction as u8);
            w.u64(deep.mlp.layers.len());
            for layer in &deep.mlp.layers {
                w.u64(layer.n_out);
                w.u64(layer.n_in);
                w.f64s(&layer.weights);
                w.f64s(&layer.bias);
            }
        }
        w.0
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let kind = r.u8()?;
        let variant = match r.u8()? {
            0 => Variant::TranslatedDistance,
            1 => Variant::InnerProduct,
            v => return Err(Error::Checkpoint(format!("unknown variant tag {v}"))),
        };
        let sign = r.f64()?;
        let q = r.u64()?;
        let l = r.u64()?;
        let n_users = r.u64()?;
        let n_items = r.u64()?;
        let n_sources = r.u64()?;
        let source_items = (0..n_sources).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let index = FeatureIndex::new(n_users, n_items, source_items);
        if index.total_dim() != l {
            return Err(Error::Checkpoint(format!(
                "layout gives l={}, header says {l}",
                index.total_dim()
            )));
        }
        let lq = l
            .checked_mul(q)
            .ok_or_else(|| Error::Checkpoint("l*q overflows".into()))?;
        let params = ModelParams {
            q,
            w0: r.f64()?,
            w: r.f64s(l)?,
            v: r.f64s(lq)?,
            vt: r.f64s(lq)?,
        };
        params.check_shapes().map_err(|e| Error::Checkpoint(e.to_string()))?;
        let deep = match kind {
            0 => None,
            1 => {
                let add_interaction = r.u8()? != 0;
                let n_layers = r.u64()?;
                let mut layers = Vec::new();
                for _ in 0..n_layers {
                    let n_out = r.u64()?;
                    let n_in = r.u64()?;
                    let size = n_out
                        .checked_mul(n_in)
                        .ok_or_else(|| Error::Checkpoint("layer size overflows".into()))?;
                    let weights = r.f64s(size)?;
                    let bias = r.f64s(n_out)?;
                    layers.push(Layer {
                        n_in,
                        n_out,
                        weights,
                        bias,
                    });
                }
                let mlp = MlpParams::from_layers(layers).map_err(|e| Error::Checkpoint(e.to_string()))?;
                Some(DeepSection { mlp, add_interaction })
            }
            k => return Err(Error::Checkpoint(format!("unknown kind tag {k}"))),
        };
        if r.pos != buf.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(Checkpoint {
            index,
            interaction: Interaction { variant, sign },
            params,
            deep,
        })
    }
}

pub fn write_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(seed: u64, deep: bool) -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let index = FeatureIndex::new(4, 3, vec![2, 5]);
        let mut params = ModelParams::init(index.total_dim(), 3, false, &mut rng);
        params.w0 = -0.0;
        params.w[2] = f64::MIN_POSITIVE / 3.0;
        let deep = deep.then(|| DeepSection {
            mlp: MlpParams::init(3 * 3, 4, 2, &mut rng),
            add_interaction: seed.is_multiple_of(2),
        });
        Checkpoint {
            index,
            interaction: Interaction::distance(-1.0),
            params,
            deep,
        }
    }

    proptest! {
        #[test]
        fn bytes_round_trip_exactly(seed in any::<u64>(), deep in any::<bool>()) {
            let ckpt = sample(seed, deep);
            let bytes = ckpt.to_bytes();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
            prop_assert_eq!(back.params.w0.to_bits(), ckpt.params.w0.to_bits());
        }
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let bytes = sample(1, true).to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = sample(3, false);
        write_checkpoint(dir.path().join("m.ckpt"), &ckpt).unwrap();
        assert_eq!(read_checkpoint(dir.path().join("m.ckpt")).unwrap(), ckpt);
    }
}

//! Weight-file serialization.
//!
//! Self-describing container, little-endian throughout:
//!
//! ```text
//! magic "SNWT" | version u16 | reserved u16 | arch fields 12xu32 | spec_hash u32
//! | train_steps u64 | tensors (f32, declaration order) | crc32 u32
//! ```
//!
//! Tensor order: stem kernel, stem bias, then per block and layer
//! (gamma, beta, running_mean, running_var, stats_flag u8, kernel, bias),
//! then head weight and bias. Kernels are out-channel-major. The trailing
//! CRC covers every preceding byte, so a truncated or corrupted file fails
//! to load and never yields a partial model.

use super::{build_model, ArchSpec, InitRule, ModelParams};
use crate::error::{Error, Result};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"SNWT";
const VERSION: u16 = 1;

fn put_f32s(buf: &mut Vec<u8>, values: &[f32]) {
    for &v in values {
        buf.write_f32::<LittleEndian>(v).expect("vec write");
    }
}

/// Serializes the model to its on-disk byte form.
pub fn weights_to_bytes(params: &ModelParams<f32>) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.write_u16::<LittleEndian>(VERSION).unwrap();
    buf.write_u16::<LittleEndian>(0).unwrap();
    for field in params.spec().encode_fields() {
        buf.write_u32::<LittleEndian>(field).unwrap();
    }
    buf.write_u32::<LittleEndian>(params.spec().content_hash())
        .unwrap();
    buf.write_u64::<LittleEndian>(params.train_steps).unwrap();

    put_f32s(&mut buf, params.stem.kernel());
    put_f32s(&mut buf, &params.stem.bias);
    for layer in params.blocks.iter().flatten() {
        put_f32s(&mut buf, &layer.bn.gamma);
        put_f32s(&mut buf, &layer.bn.beta);
        put_f32s(&mut buf, &layer.bn.running_mean);
        put_f32s(&mut buf, &layer.bn.running_var);
        buf.push(layer.bn.stats_initialized as u8);
        put_f32s(&mut buf, layer.conv.kernel());
        put_f32s(&mut buf, &layer.conv.bias);
    }
    put_f32s(&mut buf, &params.head.weight);
    put_f32s(&mut buf, &params.head.bias);

    let crc = crc32fast::hash(&buf);
    buf.write_u32::<LittleEndian>(crc).unwrap();
    buf
}

pub fn save_weights<W: Write>(params: &ModelParams<f32>, mut sink: W) -> Result<()> {
    sink.write_all(&weights_to_bytes(params))?;
    Ok(())
}

pub fn save_weights_file(params: &ModelParams<f32>, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    save_weights(params, std::io::BufWriter::new(file))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, detail: impl Into<String>) -> Error {
        Error::Format {
            offset: self.pos as u64,
            detail: detail.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(self.err(format!(
                "truncated while reading {what}: need {n} bytes, {} remain",
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(self.take(2, what)?.read_u16::<LittleEndian>().unwrap())
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(self.take(4, what)?.read_u32::<LittleEndian>().unwrap())
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(self.take(8, what)?.read_u64::<LittleEndian>().unwrap())
    }

    fn f32s(&mut self, out: &mut [f32], what: &str) -> Result<()> {
        let mut bytes = self.take(out.len() * 4, what)?;
        bytes.read_f32_into::<LittleEndian>(out).unwrap();
        Ok(())
    }
}

/// Parses a weight blob produced by [`weights_to_bytes`].
pub fn weights_from_bytes(buf: &[u8]) -> Result<ModelParams<f32>> {
    if buf.len() < 4 + 4 {
        return Err(Error::Format {
            offset: 0,
            detail: format!("file too short for a weight header ({} bytes)", buf.len()),
        });
    }
    let body_len = buf.len() - 4;
    let stored_crc = (&buf[body_len..]).read_u32::<LittleEndian>().unwrap();
    let actual_crc = crc32fast::hash(&buf[..body_len]);
    if stored_crc != actual_crc {
        return Err(Error::Format {
            offset: body_len as u64,
            detail: format!("checksum mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}"),
        });
    }

    let mut c = Cursor { buf: &buf[..body_len], pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::Format {
            offset: 0,
            detail: "bad magic: not a weight file".into(),
        });
    }
    let version = c.u16("version")?;
    if version != VERSION {
        return Err(c.err(format!("unsupported weight format version {version}")));
    }
    c.u16("reserved")?;

    let mut fields = [0u32; 12];
    for f in fields.iter_mut() {
        *f = c.u32("arch spec")?;
    }
    let spec = ArchSpec::from_fields(fields);
    let stored_hash = c.u32("spec hash")?;
    if stored_hash != spec.content_hash() {
        return Err(c.err(format!(
            "arch spec hash mismatch: stored {stored_hash:#010x}, computed {:#010x}",
            spec.content_hash()
        )));
    }
    spec.validate()?;
    let train_steps = c.u64("train_steps")?;

    let mut params = build_model::<f32>(&spec, InitRule::Zeros, 0)?;
    params.train_steps = train_steps;
    c.f32s(params.stem.kernel_mut(), "stem kernel")?;
    c.f32s(&mut params.stem.bias, "stem bias")?;
    for layer in params.blocks.iter_mut().flatten() {
        c.f32s(&mut layer.bn.gamma, "bn gamma")?;
        c.f32s(&mut layer.bn.beta, "bn beta")?;
        c.f32s(&mut layer.bn.running_mean, "bn running mean")?;
        c.f32s(&mut layer.bn.running_var, "bn running var")?;
        layer.bn.stats_initialized = c.take(1, "bn stats flag")?[0] != 0;
        c.f32s(layer.conv.kernel_mut(), "conv kernel")?;
        c.f32s(&mut layer.conv.bias, "conv bias")?;
    }
    c.f32s(&mut params.head.weight, "head weight")?;
    c.f32s(&mut params.head.bias, "head bias")?;
    if c.pos != body_len {
        return Err(c.err(format!("{} trailing bytes after tensors", body_len - c.pos)));
    }
    Ok(params)
}

pub fn load_weights<R: Read>(mut source: R) -> Result<ModelParams<f32>> {
    let mut buf = Vec::new();
    source.read_to_end(&mut buf)?;
    weights_from_bytes(&buf)
}

pub fn load_weights_file(path: &Path) -> Result<ModelParams<f32>> {
    let file = std::fs::File::open(path)?;
    load_weights(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn small_model(seed: u64) -> ModelParams<f32> {
        let spec = ArchSpec {
            input_length: 96,
            block_count: 2,
            layers_per_block: 2,
            growth_rate: 4,
            stem_filters: 6,
            ..ArchSpec::seismic_net()
        };
        let mut m = build_model::<f32>(&spec, InitRule::HeNormal, seed).unwrap();
        // Populate running stats so the flag path is exercised.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        for layer in m.blocks.iter_mut().flatten() {
            for v in layer.bn.running_mean.iter_mut().chain(&mut layer.bn.running_var) {
                *v = rng.gen_range(0.0..1.0);
            }
            layer.bn.stats_initialized = true;
        }
        m.train_steps = 1234;
        m
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let m = small_model(9);
        let bytes = weights_to_bytes(&m);
        let loaded = weights_from_bytes(&bytes).unwrap();
        assert_eq!(loaded, m);
        assert_eq!(weights_to_bytes(&loaded), bytes);
    }

    #[test]
    fn truncated_file_fails_cleanly() {
        let bytes = weights_to_bytes(&small_model(1));
        for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
            let err = weights_from_bytes(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::Format { .. }), "cut {cut}: {err}");
        }
    }

    #[test]
    fn corrupted_tensor_byte_fails_checksum() {
        let mut bytes = weights_to_bytes(&small_model(2));
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        let err = weights_from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("checksum"), "{err}");
    }

    #[test]
    fn spec_hash_mismatch_is_detected() {
        let mut bytes = weights_to_bytes(&small_model(3));
        // Flip a spec field (input_length lives right after magic+version),
        // then fix up the trailing CRC so only the spec hash check can fire.
        bytes[8] ^= 0x01;
        let body_len = bytes.len() - 4;
        let crc = crc32fast::hash(&bytes[..body_len]);
        bytes[body_len..].copy_from_slice(&crc.to_le_bytes());
        let err = weights_from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("hash mismatch"), "{err}");
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.snw");
        let m = small_model(4);
        save_weights_file(&m, &path).unwrap();
        assert_eq!(load_weights_file(&path).unwrap(), m);
    }
}

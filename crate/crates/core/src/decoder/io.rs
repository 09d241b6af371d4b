//! Binary weights file.
//!
//! ```text
//! "DFMW"            4 bytes magic
//! version           u32 (= 1)
//! layer_count L     u32
//! widths            (L + 1) x u32
//! per layer         out*in f32 (row-major), then out f32 bias
//! norm              30 x f64 mean, 30 x f64 std
//! normalize flag    u8
//! ```
//!
//! All integers and floats little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{DecoderError, DecoderWeights, Dense};
use crate::dataset::{NormStats, EXPR_DIM};

pub const WEIGHTS_MAGIC: [u8; 4] = *b"DFMW";
pub const WEIGHTS_VERSION: u32 = 1;

pub fn save_weights(w: &DecoderWeights<f32>, path: impl AsRef<Path>) -> Result<(), DecoderError> {
    let mut out = BufWriter::new(File::create(path)?);
    write_weights(w, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn write_weights(w: &DecoderWeights<f32>, out: &mut impl Write) -> Result<(), DecoderError> {
    w.validate()?;
    out.write_all(&WEIGHTS_MAGIC)?;
    out.write_all(&WEIGHTS_VERSION.to_le_bytes())?;
    out.write_all(&(w.layers.len() as u32).to_le_bytes())?;
    for width in w.layer_widths() {
        out.write_all(&(width as u32).to_le_bytes())?;
    }
    for l in &w.layers {
        for x in l.weight.iter().chain(&l.bias) {
            out.write_all(&x.to_le_bytes())?;
        }
    }
    for x in w.norm.expr_mean.iter().chain(&w.norm.expr_std) {
        out.write_all(&x.to_le_bytes())?;
    }
    out.write_all(&[w.normalize_targets as u8])?;
    Ok(())
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<DecoderWeights<f32>, DecoderError> {
    read_weights(&mut BufReader::new(File::open(path)?))
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: impl Fn() -> String) -> Result<(), DecoderError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => DecoderError::Truncated(what()),
        _ => DecoderError::Io(e),
    })
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32, DecoderError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, || what.to_string())?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32s(r: &mut impl Read, n: usize, what: impl Fn() -> String) -> Result<Vec<f32>, DecoderError> {
    let mut buf = vec![0u8; n * 4];
    read_exact(r, &mut buf, what)?;
    Ok(buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

pub fn read_weights(r: &mut impl Read) -> Result<DecoderWeights<f32>, DecoderError> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic, || "header".into())?;
    if magic != WEIGHTS_MAGIC {
        return Err(DecoderError::BadMagic(magic));
    }
    let version = read_u32(r, "header")?;
    if version != WEIGHTS_VERSION {
        return Err(DecoderError::Version(version));
    }
    let count = read_u32(r, "header")? as usize;
    if count == 0 || count > 64 {
        return Err(DecoderError::Malformed(format!("layer count {count}")));
    }
    let widths = (0..=count)
        .map(|_| read_u32(r, "layer widths").map(|x| x as usize))
        .collect::<Result<Vec<_>, _>>()?;
    if widths[0] != 2 || widths[count] != EXPR_DIM || widths.iter().any(|&x| x == 0 || x > 1 << 16) {
        return Err(DecoderError::InvalidWidths(widths));
    }
    let mut layers = Vec::with_capacity(count);
    for (li, pair) in widths.windows(2).enumerate() {
        let (inputs, outputs) = (pair[0], pair[1]);
        let weight = read_f32s(r, inputs * outputs, || format!("layer {li} weights"))?;
        let bias = read_f32s(r, outputs, || format!("layer {li} bias"))?;
        if weight.iter().chain(&bias).any(|x| !x.is_finite()) {
            return Err(DecoderError::NonFinite { layer: li });
        }
        layers.push(Dense { inputs, outputs, weight, bias });
    }
    let mut nb = vec![0u8; 2 * EXPR_DIM * 8];
    read_exact(r, &mut nb, || "normalization stats".into())?;
    let vals: Vec<f64> = nb
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let mut norm = NormStats::identity();
    norm.expr_mean.copy_from_slice(&vals[..EXPR_DIM]);
    norm.expr_std.copy_from_slice(&vals[EXPR_DIM..]);
    let mut flag = [0u8; 1];
    read_exact(r, &mut flag, || "normalize flag".into())?;
    if flag[0] > 1 {
        return Err(DecoderError::Malformed(format!("normalize flag {}", flag[0])));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(DecoderError::Malformed("trailing bytes".into()));
    }
    Ok(DecoderWeights {
        layers,
        norm,
        normalize_targets: flag[0] == 1,
    })
}

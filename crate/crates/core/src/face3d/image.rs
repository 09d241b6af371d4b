use std::io::Write;
use std::path::Path;

use super::FaceError;

pub const MASK_FACE: u8 = 1;
pub const MASK_MOUTH: u8 = 2;

/// Row-major 8-bit RGB image; row 0 is the top.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
}

impl Frame {
    pub fn filled(width: usize, height: usize, color: [u8; 3]) -> Self {
        Self {
            width,
            height,
            rgb: color.iter().copied().cycle().take(3 * width * height).collect(),
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, c: [u8; 3]) {
        let i = 3 * (y * self.width + x);
        self.rgb[i..i + 3].copy_from_slice(&c);
    }

    /// Binary PPM (`P6`, maxval 255).
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.rgb);
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self, FaceError> {
        let (w, h, body) = parse_pnm(bytes, b"P6")?;
        if body.len() != 3 * w * h {
            return Err(FaceError::Image(format!("expected {} pixel bytes, got {}", 3 * w * h, body.len())));
        }
        Ok(Self {
            width: w,
            height: h,
            rgb: body.to_vec(),
        })
    }

    pub fn save_ppm(&self, path: impl AsRef<Path>) -> Result<(), FaceError> {
        std::fs::File::create(path)?.write_all(&self.to_ppm())?;
        Ok(())
    }
}

/// Per-pixel bit set of [`MASK_FACE`] and [`MASK_MOUTH`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskFrame {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<u8>,
}

impl MaskFrame {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![0; width * height],
        }
    }

    /// Every pixel carries `bits`.
    pub fn full(width: usize, height: usize, bits: u8) -> Self {
        Self {
            width,
            height,
            bits: vec![bits; width * height],
        }
    }

    pub fn count(&self, bit: u8) -> usize {
        self.bits.iter().filter(|&&b| b & bit != 0).count()
    }

    /// Binary PGM (`P5`): background 0, face 128, mouth 255.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.bits.iter().map(|&b| {
            if b & MASK_MOUTH != 0 {
                255
            } else if b & MASK_FACE != 0 {
                128
            } else {
                0
            }
        }));
        out
    }

    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<(), FaceError> {
        std::fs::File::create(path)?.write_all(&self.to_pgm())?;
        Ok(())
    }
}

/// Header of a binary PNM with maxval 255 and no comments.
fn parse_pnm<'a>(bytes: &'a [u8], magic: &[u8]) -> Result<(usize, usize, &'a [u8]), FaceError> {
    let bad = |m: &str| FaceError::Image(m.to_string());
    if !bytes.starts_with(magic) {
        return Err(bad("wrong magic"));
    }
    let mut fields = Vec::new();
    let mut i = magic.len();
    while fields.len() < 3 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        let start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if start == i {
            return Err(bad("malformed header"));
        }
        let s = std::str::from_utf8(&bytes[start..i]).map_err(|_| bad("malformed header"))?;
        fields.push(s.parse::<usize>().map_err(|_| bad("malformed header"))?);
    }
    if fields[2] != 255 || i >= bytes.len() || !bytes[i].is_ascii_whitespace() {
        return Err(bad("unsupported maxval or header"));
    }
    Ok((fields[0], fields[1], &bytes[i + 1..]))
}

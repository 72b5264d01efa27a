//! Binary graymap (P5) and pixmap (P6) codec, 8-bit, maxval 255.

use bfanet_core::{BinaryMask, Tensor};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Gray,
    Rgb,
}

impl Kind {
    pub fn channels(self) -> usize {
        match self {
            Kind::Gray => 1,
            Kind::Rgb => 3,
        }
    }

    fn magic(self) -> &'static [u8; 2] {
        match self {
            Kind::Gray => b"P5",
            Kind::Rgb => b"P6",
        }
    }
}

/// Interleaved 8-bit samples, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub kind: Kind,
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(kind: Kind, width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::data(format!("image dims {width}x{height} must be positive")));
        }
        if data.len() != width * height * kind.channels() {
            return Err(Error::data(format!(
                "{width}x{height} {kind:?} image needs {} samples, got {}",
                width * height * kind.channels(),
                data.len()
            )));
        }
        Ok(Image {
            kind,
            width,
            height,
            data,
        })
    }

    pub fn gray(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        Self::new(Kind::Gray, width, height, data)
    }

    /// Planar `[3, H, W]` tensor of raw 0..=255 values; graymaps are replicated to three channels.
    pub fn to_tensor(&self) -> Tensor {
        let plane = self.width * self.height;
        let ch = self.kind.channels();
        Tensor::from_fn([3, self.height, self.width], |i| {
            let (c, p) = (i / plane, i % plane);
            self.data[p * ch + c.min(ch - 1)] as f64
        })
    }

    /// From a `[3, H, W]` tensor; values are rounded and clamped to 0..=255.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let s = t.shape();
        if s.len() != 3 || s[0] != 3 {
            return Err(Error::data(format!("expected a [3, H, W] tensor, got {s:?}")));
        }
        let (h, w) = (s[1], s[2]);
        let plane = h * w;
        let mut data = Vec::with_capacity(3 * plane);
        for p in 0..plane {
            for c in 0..3 {
                data.push(t.data()[c * plane + p].round().clamp(0.0, 255.0) as u8);
            }
        }
        Self::new(Kind::Rgb, w, h, data)
    }

    pub fn to_mask(&self) -> Result<BinaryMask> {
        if self.kind != Kind::Gray {
            return Err(Error::data("masks must be graymaps (P5)"));
        }
        Ok(BinaryMask::from_gray(self.height, self.width, &self.data)?)
    }

    pub fn from_mask(mask: &BinaryMask) -> Self {
        Image {
            kind: Kind::Gray,
            width: mask.width(),
            height: mask.height(),
            data: mask.to_gray(),
        }
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Decode {
            offset: self.pos,
            msg: msg.into(),
        }
    }

    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            self.pos = start;
            return Err(self.err(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| Error::Decode {
                offset: start,
                msg: format!("{what} out of range"),
            })
    }
}

pub fn decode(bytes: &[u8]) -> Result<Image> {
    let mut c = Cursor { bytes, pos: 0 };
    let kind = match bytes.get(..2) {
        Some(b"P5") => Kind::Gray,
        Some(b"P6") => Kind::Rgb,
        _ => return Err(c.err("bad magic, expected P5 or P6")),
    };
    c.pos = 2;
    match bytes.get(2) {
        Some(b) if b.is_ascii_whitespace() || *b == b'#' => {}
        _ => return Err(c.err("expected whitespace after magic")),
    }
    let width = c.number("width")?;
    let height = c.number("height")?;
    if width == 0 || height == 0 {
        return Err(c.err(format!("degenerate dimensions {width}x{height}")));
    }
    c.skip_space();
    let maxval_at = c.pos;
    let maxval = c.number("maxval")?;
    if maxval != 255 {
        return Err(Error::Decode {
            offset: maxval_at,
            msg: format!("maxval {maxval} unsupported, expected 255"),
        });
    }
    match bytes.get(c.pos) {
        Some(b) if b.is_ascii_whitespace() => c.pos += 1,
        _ => return Err(c.err("expected a single whitespace before the raster")),
    }
    let len = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(kind.channels()))
        .ok_or_else(|| c.err("dimensions overflow"))?;
    let end = c.pos.checked_add(len).ok_or_else(|| c.err("dimensions overflow"))?;
    if end > bytes.len() {
        c.pos = bytes.len();
        return Err(c.err(format!(
            "truncated raster: {} of {len} bytes",
            bytes.len() - (end - len)
        )));
    }
    Image::new(kind, width, height, bytes[c.pos..end].to_vec())
}

/// Canonical header: `P5\n<w> <h>\n255\n`.
pub fn encode(img: &Image) -> Vec<u8> {
    let mut out = Vec::with_capacity(img.data.len() + 20);
    out.extend_from_slice(img.kind.magic());
    out.extend_from_slice(format!("\n{} {}\n255\n", img.width, img.height).as_bytes());
    out.extend_from_slice(&img.data);
    out
}

pub fn read(path: &std::path::Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| e.in_file(path))
}

pub fn write(path: &std::path::Path, img: &Image) -> Result<()> {
    std::fs::write(path, encode(img)).map_err(|e| Error::io(path, e))
}

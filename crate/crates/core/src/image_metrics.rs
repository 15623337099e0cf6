//! Binary PNM images and the total-variation quality baseline.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ImageError {
    #[error("bad PNM format: {0}")]
    BadFormat(String),
    #[error("unsupported maxval {0} (only 255)")]
    UnsupportedMaxval(u32),
    #[error("truncated pixels: header needs {expected} bytes, have {got}")]
    TruncatedPixels { expected: usize, got: usize },
    #[error("invalid image buffer: {0}")]
    Invalid(String),
}

/// Row-major, channel-interleaved 8-bit image with 1 or 3 channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub samples: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize, samples: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::Invalid(format!("{width}x{height} has no pixels")));
        }
        if channels != 1 && channels != 3 {
            return Err(ImageError::Invalid(format!("{channels} channels")));
        }
        if samples.len() != width * height * channels {
            return Err(ImageError::Invalid(format!(
                "{} samples for {width}x{height}x{channels}",
                samples.len()
            )));
        }
        Ok(ImageBuffer {
            width,
            height,
            channels,
            samples,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Self {
        Self::new(width, height, channels, vec![value; width * height * channels])
            .expect("filled image dimensions")
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.samples[(y * self.width + x) * self.channels + c]
    }
}

/// Decode binary PGM (`P5`) or PPM (`P6`) with maxval 255. `#` comments are allowed in the header.
pub fn decode_pnm(bytes: &[u8]) -> Result<ImageBuffer, ImageError> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(ImageError::BadFormat("expected P5 or P6 magic".into())),
    };
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for (i, name) in ["width", "height", "maxval"].iter().enumerate() {
        // Whitespace and comments before each field.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|b| *b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(ImageError::BadFormat(format!("missing {name}")));
        }
        fields[i] = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ImageError::BadFormat(format!("bad {name}")))?;
    }
    // Exactly one whitespace byte separates maxval from the raster.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(ImageError::BadFormat("missing whitespace after maxval".into())),
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(ImageError::UnsupportedMaxval(maxval));
    }
    if width == 0 || height == 0 {
        return Err(ImageError::BadFormat(format!("{width}x{height} image")));
    }
    let expected = width as usize * height as usize * channels;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(ImageError::TruncatedPixels {
            expected,
            got: payload.len(),
        });
    }
    ImageBuffer::new(
        width as usize,
        height as usize,
        channels,
        payload[..expected].to_vec(),
    )
}

pub fn encode_pnm(img: &ImageBuffer) -> Vec<u8> {
    let magic = if img.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.samples);
    out
}

/// Rec. 601 luma, rounded half away from zero. Single-channel input is returned unchanged.
pub fn to_luminance(img: &ImageBuffer) -> ImageBuffer {
    if img.channels == 1 {
        return img.clone();
    }
    let samples = img
        .samples
        .chunks_exact(3)
        .map(|p| {
            // Integer weights in thousandths keep the result exact: 299 + 587 + 114 = 1000.
            let y = 299 * u32::from(p[0]) + 587 * u32::from(p[1]) + 114 * u32::from(p[2]);
            ((y + 500) / 1000) as u8
        })
        .collect();
    ImageBuffer {
        width: img.width,
        height: img.height,
        channels: 1,
        samples,
    }
}

/// Anisotropic total variation of the luminance plane, normalized by 255 and by pixel count.
///
/// Sums `|a - b| / 255` over every horizontally and vertically adjacent pair, then divides by
/// `width * height`. The result lies in `[0, 2)`.
pub fn total_variation(img: &ImageBuffer) -> f64 {
    let lum = to_luminance(img);
    let (w, h) = (lum.width, lum.height);
    let s = &lum.samples;
    let mut sum: u64 = 0;
    for y in 0..h {
        let row = &s[y * w..(y + 1) * w];
        for x in 0..w {
            if x + 1 < w {
                sum += u64::from(row[x].abs_diff(row[x + 1]));
            }
            if y + 1 < h {
                sum += u64::from(row[x].abs_diff(s[(y + 1) * w + x]));
            }
        }
    }
    sum as f64 / 255.0 / (w * h) as f64
}

//! NPY v1.0 reader/writer restricted to little-endian `<f4`, C order, 1-D or 2-D.

use super::{TensorError, TensorF32};

/// The npy magic string.
pub const MAGIC: [u8; 6] = *b"\x93NUMPY";

const PREAMBLE_LEN: usize = 10;
const ALIGN: usize = 64;

/// Reject NaN/Inf values (the default) or let them through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FiniteMode {
    #[default]
    Strict,
    Permissive,
}

/// Parse an NPY v1.0 buffer; non-finite values are rejected.
pub fn parse_npy(bytes: &[u8]) -> Result<TensorF32, TensorError> {
    parse_npy_with(bytes, FiniteMode::Strict)
}

pub fn parse_npy_with(bytes: &[u8], mode: FiniteMode) -> Result<TensorF32, TensorError> {
    if bytes.len() < MAGIC.len() || bytes[..MAGIC.len()] != MAGIC {
        let n = bytes.len().min(MAGIC.len());
        return Err(TensorError::BadMagic {
            found: bytes[..n].to_vec(),
        });
    }
    if bytes.len() < PREAMBLE_LEN {
        return Err(TensorError::TruncatedHeader {
            expected: PREAMBLE_LEN,
            got: bytes.len(),
        });
    }
    let (major, minor) = (bytes[6], bytes[7]);
    if (major, minor) != (1, 0) {
        return Err(TensorError::UnsupportedVersion { major, minor });
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let data_start = PREAMBLE_LEN + header_len;
    if bytes.len() < data_start {
        return Err(TensorError::TruncatedHeader {
            expected: data_start,
            got: bytes.len(),
        });
    }
    let header =
        std::str::from_utf8(&bytes[PREAMBLE_LEN..data_start]).map_err(|_| TensorError::BadHeader {
            field: "header",
            reason: "not ASCII".into(),
        })?;
    let dict = HeaderDict::parse(header)?;

    if dict.descr != "<f4" {
        return Err(TensorError::UnsupportedDtype { descr: dict.descr });
    }
    if dict.fortran_order {
        return Err(TensorError::UnsupportedOrder);
    }
    let (rows, cols) = match dict.shape.as_slice() {
        [n] => (1, *n),
        [r, c] => (*r, *c),
        other => {
            return Err(TensorError::BadHeader {
                field: "shape",
                reason: format!("expected 1 or 2 dimensions, got {}", other.len()),
            })
        }
    };
    let count = rows.checked_mul(cols).ok_or_else(|| TensorError::BadHeader {
        field: "shape",
        reason: "element count overflows".into(),
    })?;
    let payload_len = count * 4;
    let payload = &bytes[data_start..];
    if payload.len() < payload_len {
        return Err(TensorError::TruncatedPayload {
            expected: payload_len,
            got: payload.len(),
        });
    }
    let data: Vec<f32> = payload[..payload_len]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let t = TensorF32 { rows, cols, data };
    if mode == FiniteMode::Strict {
        t.check_finite()?;
    }
    Ok(t)
}

/// Serialize as a 2-D NPY v1.0 file, byte-identical to `numpy.save`.
pub fn write_npy(t: &TensorF32) -> Vec<u8> {
    let dict = format!(
        "{{'descr': '<f4', 'fortran_order': False, 'shape': ({}, {}), }}",
        t.rows, t.cols
    );
    // Pad with spaces so the payload starts on a 64-byte boundary; '\n' is the last header byte.
    let unpadded = PREAMBLE_LEN + dict.len() + 1;
    let pad = (ALIGN - unpadded % ALIGN) % ALIGN;
    let header_len = dict.len() + pad + 1;

    let mut out = Vec::with_capacity(PREAMBLE_LEN + header_len + t.data.len() * 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header_len as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out.extend(std::iter::repeat_n(b' ', pad));
    out.push(b'\n');
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

#[derive(Debug)]
struct HeaderDict {
    descr: String,
    fortran_order: bool,
    shape: Vec<usize>,
}

impl HeaderDict {
    /// Parses the python-literal dict numpy writes. Keys may appear in any order.
    fn parse(src: &str) -> Result<Self, TensorError> {
        let body = src.trim_end_matches(['\n', ' ', '\0']).trim();
        let body = body
            .strip_prefix('{')
            .and_then(|b| b.strip_suffix('}'))
            .ok_or_else(|| TensorError::BadHeader {
                field: "header",
                reason: "not a dict literal".into(),
            })?;

        let mut descr = None;
        let mut fortran_order = None;
        let mut shape = None;
        let mut rest = body.trim();
        while !rest.is_empty() {
            let (key, after) = take_quoted(rest).ok_or_else(|| TensorError::BadHeader {
                field: "header",
                reason: format!("expected quoted key at `{rest}`"),
            })?;
            let after = after
                .trim_start()
                .strip_prefix(':')
                .ok_or_else(|| TensorError::BadHeader {
                    field: "header",
                    reason: format!("missing ':' after key `{key}`"),
                })?
                .trim_start();
            let after = match key {
                "descr" => {
                    let (v, a) = take_quoted(after).ok_or_else(|| TensorError::BadHeader {
                        field: "descr",
                        reason: "expected quoted string".into(),
                    })?;
                    descr = Some(v.to_string());
                    a
                }
                "fortran_order" => {
                    if let Some(a) = after.strip_prefix("False") {
                        fortran_order = Some(false);
                        a
                    } else if let Some(a) = after.strip_prefix("True") {
                        fortran_order = Some(true);
                        a
                    } else {
                        return Err(TensorError::BadHeader {
                            field: "fortran_order",
                            reason: "expected True or False".into(),
                        });
                    }
                }
                "shape" => {
                    let close = after.find(')').ok_or_else(|| TensorError::BadHeader {
                        field: "shape",
                        reason: "unterminated tuple".into(),
                    })?;
                    let inner = after.strip_prefix('(').map(|s| &s[..close - 1]).ok_or_else(|| {
                        TensorError::BadHeader {
                            field: "shape",
                            reason: "expected tuple".into(),
                        }
                    })?;
                    let dims = inner
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(|s| {
                            s.parse::<usize>().map_err(|_| TensorError::BadHeader {
                                field: "shape",
                                reason: format!("bad dimension `{s}`"),
                            })
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    shape = Some(dims);
                    &after[close + 1..]
                }
                other => {
                    return Err(TensorError::BadHeader {
                        field: "header",
                        reason: format!("unexpected key `{other}`"),
                    })
                }
            };
            rest = after.trim_start();
            rest = rest.strip_prefix(',').unwrap_or(rest).trim_start();
        }

        Ok(HeaderDict {
            descr: descr.ok_or(TensorError::BadHeader {
                field: "descr",
                reason: "missing".into(),
            })?,
            fortran_order: fortran_order.ok_or(TensorError::BadHeader {
                field: "fortran_order",
                reason: "missing".into(),
            })?,
            shape: shape.ok_or(TensorError::BadHeader {
                field: "shape",
                reason: "missing".into(),
            })?,
        })
    }
}

fn take_quoted(s: &str) -> Option<(&str, &str)> {
    let q = s.chars().next().filter(|c| *c == '\'' || *c == '"')?;
    let end = s[1..].find(q)? + 1;
    Some((&s[1..end], &s[end + 1..]))
}

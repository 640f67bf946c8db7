//! PGM (P2 ASCII and P5 binary) reading at 8 or 16 bits, and 8-bit P5
//! writing. Values scale to [0, 1] by the header maxval; 16-bit samples
//! are big-endian per the format.

use super::DataError;
use crate::tensor::Image;

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderCursor<'a> {
    fn new(bytes: &'a [u8], pos: usize) -> Self {
        HeaderCursor { bytes, pos }
    }

    /// Skips whitespace and `#` comments, then reads one unsigned decimal.
    fn next_number(&mut self) -> Result<u64, DataError> {
        loop {
            match self.bytes.get(self.pos) {
                None => return Err(DataError::Truncated { detail: "header ended early".into() }),
                Some(b'#') => {
                    while let Some(&b) = self.bytes.get(self.pos) {
                        self.pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b) if b.is_ascii_digit() => break,
                Some(&b) => {
                    return Err(DataError::Malformed {
                        detail: format!("expected a number, found byte 0x{b:02x}"),
                    })
                }
            }
        }
        let mut value: u64 = 0;
        while let Some(&b) = self.bytes.get(self.pos) {
            if !b.is_ascii_digit() {
                break;
            }
            value = value
                .checked_mul(10)
                .and_then(|v| v.checked_add((b - b'0') as u64))
                .ok_or_else(|| DataError::Malformed {
                    detail: "numeric overflow in header".into(),
                })?;
            self.pos += 1;
        }
        Ok(value)
    }

    /// Consumes exactly the single whitespace byte separating the header
    /// from binary sample data.
    fn skip_one_whitespace(&mut self) -> Result<(), DataError> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => {
                self.pos += 1;
                Ok(())
            }
            Some(_) => Err(DataError::Malformed {
                detail: "missing whitespace after maxval".into(),
            }),
            None => Err(DataError::Truncated { detail: "no sample data".into() }),
        }
    }
}

fn header_values(cur: &mut HeaderCursor) -> Result<(usize, usize, u64), DataError> {
    let width = cur.next_number()? as usize;
    let height = cur.next_number()? as usize;
    let maxval = cur.next_number()?;
    if width == 0 || height == 0 {
        return Err(DataError::Malformed {
            detail: format!("degenerate dimensions {width}x{height}"),
        });
    }
    if maxval == 0 || maxval > 65535 {
        return Err(DataError::UnsupportedFormat {
            detail: format!("maxval {maxval} outside 1..=65535"),
        });
    }
    Ok((width, height, maxval))
}

pub fn parse(bytes: &[u8]) -> Result<Image<f32>, DataError> {
    let binary = match bytes.get(..2) {
        Some(b"P2") => false,
        Some(b"P5") => true,
        _ => {
            return Err(DataError::Malformed {
                detail: "not a P2/P5 stream".into(),
            })
        }
    };
    let mut cur = HeaderCursor::new(bytes, 2);
    let (width, height, maxval) = header_values(&mut cur)?;
    let n = width * height;
    let max = maxval as f32;
    let mut data = Vec::with_capacity(n);

    if binary {
        cur.skip_one_whitespace()?;
        let wide = maxval > 255;
        let sample_bytes = if wide { 2 } else { 1 };
        let body = &bytes[cur.pos..];
        if body.len() < n * sample_bytes {
            return Err(DataError::Truncated {
                detail: format!(
                    "need {} sample bytes, found {}",
                    n * sample_bytes,
                    body.len()
                ),
            });
        }
        for i in 0..n {
            let raw = if wide {
                u16::from_be_bytes([body[2 * i], body[2 * i + 1]]) as u64
            } else {
                body[i] as u64
            };
            if raw > maxval {
                return Err(DataError::Malformed {
                    detail: format!("sample {raw} exceeds maxval {maxval}"),
                });
            }
            data.push(raw as f32 / max);
        }
    } else {
        for _ in 0..n {
            let raw = cur.next_number().map_err(|e| match e {
                DataError::Truncated { .. } => DataError::Truncated {
                    detail: "fewer samples than width*height".into(),
                },
                other => other,
            })?;
            if raw > maxval {
                return Err(DataError::Malformed {
                    detail: format!("sample {raw} exceeds maxval {maxval}"),
                });
            }
            data.push(raw as f32 / max);
        }
    }
    Ok(Image::from_vec(height, width, data).expect("sized by header"))
}

/// Encodes as binary 8-bit P5, mapping [0, 1] to 0..=255 by rounding.
pub fn write_p5(img: &Image<f32>) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(
        img.data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

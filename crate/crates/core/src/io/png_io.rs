//! 8-bit PNG reading (grayscale or RGB, the latter converted by luminance
//! weights 0.299/0.587/0.114) and 8-bit grayscale writing.

use std::io::Cursor;
use std::path::Path;

use super::DataError;
use crate::tensor::Image;

pub fn parse(bytes: &[u8]) -> Result<Image<f32>, DataError> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(png_error)?;
    let mut buf = vec![0u8; reader.output_buffer_size().ok_or_else(overflow)?];
    let info = reader.next_frame(&mut buf).map_err(png_error)?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(DataError::UnsupportedFormat {
            detail: format!("png bit depth {:?}, only eight is supported", info.bit_depth),
        });
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let pixels = &buf[..info.buffer_size()];
    let data: Vec<f32> = match info.color_type {
        png::ColorType::Grayscale => pixels.iter().map(|&v| v as f32 / 255.0).collect(),
        png::ColorType::Rgb => pixels
            .chunks_exact(3)
            .map(|rgb| {
                (0.299 * rgb[0] as f32 + 0.587 * rgb[1] as f32 + 0.114 * rgb[2] as f32) / 255.0
            })
            .collect(),
        other => {
            return Err(DataError::UnsupportedFormat {
                detail: format!("png color type {other:?}, only grayscale and rgb are supported"),
            })
        }
    };
    Image::from_vec(h, w, data).map_err(|_| DataError::Truncated {
        detail: "png frame shorter than its header promises".into(),
    })
}

fn png_error(e: png::DecodingError) -> DataError {
    match e {
        png::DecodingError::IoError(_) => DataError::Truncated {
            detail: "png stream ended early".into(),
        },
        other => DataError::Malformed {
            detail: format!("png: {other}"),
        },
    }
}

fn overflow() -> DataError {
    DataError::Malformed {
        detail: "png dimensions overflow the output buffer".into(),
    }
}

/// Writes [0, 1] values as an 8-bit grayscale PNG.
pub fn write_gray8(img: &Image<f32>, path: &Path) -> Result<(), DataError> {
    let file = std::fs::File::create(path)?;
    let writer = std::io::BufWriter::new(file);
    let mut encoder = png::Encoder::new(writer, img.width() as u32, img.height() as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().map_err(encode_error)?;
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    writer.write_image_data(&bytes).map_err(encode_error)
}

fn encode_error(e: png::EncodingError) -> DataError {
    match e {
        png::EncodingError::IoError(io) => DataError::Io(io),
        other => DataError::Malformed {
            detail: format!("png encode: {other}"),
        },
    }
}

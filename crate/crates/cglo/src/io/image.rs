//! PNG decode/encode with a fixed [-1, 1] value mapping.
//!
//! A pixel byte u maps to 2u/255 - 1; encoding inverts it with
//! round-half-away-from-zero, so encode(decode(file)) reproduces the pixel
//! bytes exactly and decode(encode(x)) is within 1/255 of x.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub fn byte_to_value(u: u8) -> f64 {
    2.0 * u as f64 / 255.0 - 1.0
}

pub fn value_to_byte(v: f64) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// Read an 8-bit grayscale or RGB PNG into a channels-first tensor.
pub fn decode_image(path: &Path) -> Result<Tensor> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Png {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Png {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let channels = match (info.color_type, info.bit_depth) {
        (png::ColorType::Grayscale, png::BitDepth::Eight) => 1,
        (png::ColorType::Rgb, png::BitDepth::Eight) => 3,
        (color, depth) => {
            return Err(Error::UnsupportedImage {
                path: path.to_path_buf(),
                detail: format!("{color:?}/{depth:?}"),
            })
        }
    };
    let (width, height) = (info.width as usize, info.height as usize);
    let bytes = &buf[..info.buffer_size()];
    let mut data = vec![0.0f64; channels * height * width];
    for row in 0..height {
        for col in 0..width {
            for ch in 0..channels {
                data[(ch * height + row) * width + col] =
                    byte_to_value(bytes[(row * width + col) * channels + ch]);
            }
        }
    }
    Tensor::from_vec(&[channels, height, width], data)
}

/// Write a channels-first tensor (1 or 3 channels, values in [-1, 1]) as an
/// 8-bit PNG.
pub fn encode_image(tensor: &Tensor, path: &Path) -> Result<()> {
    let shape = tensor.shape();
    if shape.len() != 3 || (shape[0] != 1 && shape[0] != 3) {
        return Err(Error::ShapeMismatch {
            op: "encode_image",
            expected: "[1|3 x H x W]".into(),
            got: tensor.shape_str(),
        });
    }
    let (channels, height, width) = (shape[0], shape[1], shape[2]);
    let mut bytes = vec![0u8; channels * height * width];
    let data = tensor.data();
    for row in 0..height {
        for col in 0..width {
            for ch in 0..channels {
                bytes[(row * width + col) * channels + ch] =
                    value_to_byte(data[(ch * height + row) * width + col]);
            }
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(if channels == 1 {
        png::ColorType::Grayscale
    } else {
        png::ColorType::Rgb
    });
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().map_err(|e| Error::Png {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    writer.write_image_data(&bytes).map_err(|e| Error::Png {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    Ok(())
}

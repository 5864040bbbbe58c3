//! 8-bit image files (PNG, binary PPM/PGM) to and from `[C×H×W]` tensors in [0,1].

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Interleaved 8-bit samples for a 1- or 3-channel tensor.
fn interleave(image: &Tensor) -> Result<(usize, usize, usize, Vec<u8>)> {
    let (c, h, w) = image.dims3("write_image")?;
    if c != 1 && c != 3 {
        return Err(Error::invalid(format!("cannot store a {c}-channel image")));
    }
    let d = image.data();
    let mut out = Vec::with_capacity(c * h * w);
    for i in 0..h * w {
        for ch in 0..c {
            out.push(to_u8(d[ch * h * w + i]));
        }
    }
    Ok((c, h, w, out))
}

fn planar(c: usize, h: usize, w: usize, bytes: &[u8]) -> Tensor {
    let mut data = vec![0.0; c * h * w];
    for i in 0..h * w {
        for ch in 0..c {
            data[ch * h * w + i] = bytes[i * c + ch] as f64 / 255.0;
        }
    }
    Tensor::from_parts(vec![c, h, w], data)
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase()
}

/// Writes a 1-channel (grayscale) or 3-channel (RGB) tensor; values are
/// clamped to [0,1] and rounded to 8 bits. The format follows the extension.
pub fn write_image(path: &Path, image: &Tensor) -> Result<()> {
    let (c, h, w, bytes) = interleave(image)?;
    match extension(path).as_str() {
        "png" => {
            let file = File::create(path).map_err(|e| Error::io(path, e))?;
            let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
            enc.set_color(if c == 1 { png::ColorType::Grayscale } else { png::ColorType::Rgb });
            enc.set_depth(png::BitDepth::Eight);
            let fmt = |e: png::EncodingError| Error::Format(format!("{}: {e}", path.display()));
            let mut writer = enc.write_header().map_err(fmt)?;
            writer.write_image_data(&bytes).map_err(fmt)?;
            writer.finish().map_err(fmt)
        }
        "ppm" | "pgm" => {
            let magic = if c == 1 { "P5" } else { "P6" };
            let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
            out.extend_from_slice(&bytes);
            let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
            f.write_all(&out).map_err(|e| Error::io(path, e))
        }
        other => Err(Error::invalid(format!(
            "{}: unsupported image extension {other:?}",
            path.display()
        ))),
    }
}

fn read_png(path: &Path) -> Result<Tensor> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let fmt = |e: png::DecodingError| Error::Format(format!("{}: {e}", path.display()));
    let mut dec = png::Decoder::new(BufReader::new(file));
    dec.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = dec.read_info().map_err(fmt)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Format(format!("{}: image too large", path.display())))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(fmt)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let (src_c, keep) = match info.color_type {
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::GrayscaleAlpha => (2, 1),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        png::ColorType::Indexed => {
            return Err(Error::Format(format!("{}: unexpanded palette", path.display())))
        }
    };
    let stride = info.line_size;
    let mut bytes = Vec::with_capacity(keep * h * w);
    for y in 0..h {
        let row = &buf[y * stride..];
        for x in 0..w {
            bytes.extend_from_slice(&row[x * src_c..x * src_c + keep]);
        }
    }
    Ok(planar(keep, h, w, &bytes))
}

fn read_pnm(path: &Path) -> Result<Tensor> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = || Error::Format(format!("{}: malformed PNM header", path.display()));
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < raw.len() && raw[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < raw.len() && raw[pos] == b'#' {
            while pos < raw.len() && raw[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < raw.len() && !raw[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad());
        }
        fields.push(std::str::from_utf8(&raw[start..pos]).map_err(|_| bad())?.to_string());
    }
    pos += 1;
    let c = match fields[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        _ => return Err(bad()),
    };
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad());
    let (w, h, max) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if max != 255 || w == 0 || h == 0 || raw.len() < pos + c * w * h {
        return Err(bad());
    }
    Ok(planar(c, h, w, &raw[pos..pos + c * w * h]))
}

/// Reads an image as stored (1 or 3 channels; alpha is dropped).
pub fn read_image_raw(path: &Path) -> Result<Tensor> {
    match extension(path).as_str() {
        "png" => read_png(path),
        "ppm" | "pgm" => read_pnm(path),
        other => Err(Error::invalid(format!(
            "{}: unsupported image extension {other:?}",
            path.display()
        ))),
    }
}

/// Reads an RGB image; grayscale files are replicated across channels.
pub fn read_image(path: &Path) -> Result<Tensor> {
    let img = read_image_raw(path)?;
    if img.shape()[0] == 3 {
        return Ok(img);
    }
    let (_, h, w) = img.dims3("read_image")?;
    Ok(Tensor::from_parts(vec![3, h, w], img.data().repeat(3)))
}

/// Reads a single-channel mask, thresholded at one half to {0,1}.
pub fn read_mask(path: &Path) -> Result<Tensor> {
    let img = read_image_raw(path)?;
    let (c, h, w) = img.dims3("read_mask")?;
    if c != 1 {
        return Err(Error::Format(format!("{}: mask must be single-channel", path.display())));
    }
    Ok(Tensor::from_parts(
        vec![1, h, w],
        img.data().iter().map(|&v| if v >= 0.5 { 1.0 } else { 0.0 }).collect(),
    ))
}

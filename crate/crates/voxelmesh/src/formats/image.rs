//! 8-bit PNG and PFM images.
//!
//! Colors are stored as-is in [0, 1]. Normal maps go through `(n + 1) / 2`
//! in PNG and are re-normalized on load; PFM keeps them exact to f32. Masks
//! are grayscale PNGs, nonzero meaning foreground.

use std::io::{self, BufRead, Read, Seek, Write};
use std::path::Path;

use voxelmesh_core::Image;

use super::{load_with, read_f32s, save_with, write_f32s};
use crate::error::{invalid, Result};

fn png_err(e: impl std::fmt::Display) -> io::Error {
    invalid(e.to_string())
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// One or three channel image to an 8-bit PNG.
pub fn write_png(w: &mut impl Write, img: &Image) -> io::Result<()> {
    let color = match img.channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        c => return Err(invalid(format!("cannot write a {c}-channel image as PNG"))),
    };
    let mut enc = png::Encoder::new(w, img.width as u32, img.height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(png_err)?;
    let bytes: Vec<u8> = img.data.iter().map(|v| to_byte(*v)).collect();
    writer.write_image_data(&bytes).map_err(png_err)?;
    writer.finish().map_err(png_err)
}

/// Reads any PNG as 8-bit gray or RGB; alpha is dropped and palettes are
/// expanded.
pub fn read_png(r: &mut (impl BufRead + Seek)) -> io::Result<Image> {
    let mut dec = png::Decoder::new(r);
    dec.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = dec.read_info().map_err(png_err)?;
    let size = reader.output_buffer_size().ok_or_else(|| invalid("PNG too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let src = info.color_type.samples();
    let keep = match info.color_type {
        png::ColorType::Grayscale | png::ColorType::GrayscaleAlpha => 1,
        _ => 3,
    };
    let mut data = Vec::with_capacity(w * h * keep);
    for y in 0..h {
        let row = &buf[y * info.line_size..];
        for x in 0..w {
            for c in 0..keep {
                data.push(row[x * src + c] as f64 / 255.0);
            }
        }
    }
    Ok(Image { width: w, height: h, channels: keep, data })
}

pub fn mask_image(mask: &[bool], width: usize, height: usize) -> Image {
    Image { width, height, channels: 1, data: mask.iter().map(|m| if *m { 1.0 } else { 0.0 }).collect() }
}

/// Foreground where any channel is at least half on.
pub fn image_to_mask(img: &Image) -> Vec<bool> {
    img.data.chunks_exact(img.channels).map(|p| p.iter().any(|v| *v >= 0.5)).collect()
}

/// Maps unit normals into [0, 1]; background pixels become 0.
pub fn encode_normals(normal: &Image, mask: &[bool]) -> Image {
    let mut out = Image::new(normal.width, normal.height, 3);
    for (i, m) in mask.iter().enumerate() {
        if *m {
            for c in 0..3 {
                out.data[i * 3 + c] = (normal.data[i * 3 + c] + 1.0) * 0.5;
            }
        }
    }
    out
}

pub fn decode_normals(encoded: &Image, mask: &[bool]) -> Image {
    let mut out = Image::new(encoded.width, encoded.height, 3);
    for (i, m) in mask.iter().enumerate() {
        if !*m {
            continue;
        }
        let n = voxelmesh_core::math::Vec3::from_fn(|c, _| encoded.data[i * 3 + c] * 2.0 - 1.0);
        let n = n.try_normalize(1e-12).unwrap_or_else(voxelmesh_core::math::Vec3::z);
        for c in 0..3 {
            out.data[i * 3 + c] = n[c];
        }
    }
    out
}

/// Portable float map; `PF` for three channels, `Pf` for one.
pub fn write_pfm(w: &mut impl Write, img: &Image) -> io::Result<()> {
    let tag = match img.channels {
        1 => "Pf",
        3 => "PF",
        c => return Err(invalid(format!("cannot write a {c}-channel image as PFM"))),
    };
    write!(w, "{tag}\n{} {}\n-1.0\n", img.width, img.height)?;
    let row = img.width * img.channels;
    for y in (0..img.height).rev() {
        write_f32s(w, &img.data[y * row..(y + 1) * row])?;
    }
    Ok(())
}

fn header_token(r: &mut impl Read) -> io::Result<String> {
    let mut tok = String::new();
    let mut b = [0u8; 1];
    loop {
        r.read_exact(&mut b)?;
        if b[0].is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            return Ok(tok);
        }
        tok.push(b[0] as char);
        if tok.len() > 32 {
            return Err(invalid("malformed PFM header"));
        }
    }
}

pub fn read_pfm(r: &mut impl Read) -> io::Result<Image> {
    let channels = match header_token(r)?.as_str() {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(invalid(format!("not a PFM file (tag {other:?})"))),
    };
    let num = |t: String| t.parse::<f64>().map_err(|_| invalid(format!("bad PFM header value {t:?}")));
    let width = num(header_token(r)?)? as usize;
    let height = num(header_token(r)?)? as usize;
    let scale = num(header_token(r)?)?;
    let row = width * channels;
    let raw = read_f32s(r, row.checked_mul(height).ok_or_else(|| invalid("PFM too large"))?)?;
    let big_endian = scale > 0.0;
    let mut data = vec![0.0; raw.len()];
    for y in 0..height {
        let src = &raw[(height - 1 - y) * row..(height - y) * row];
        for (d, s) in data[y * row..(y + 1) * row].iter_mut().zip(src) {
            *d = if big_endian { f32::from_bits((*s as f32).to_bits().swap_bytes()) as f64 } else { *s };
        }
    }
    Ok(Image { width, height, channels, data })
}

fn is_pfm(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("pfm"))
}

/// PNG or PFM by extension.
pub fn save_image(path: &Path, img: &Image) -> Result<()> {
    if is_pfm(path) {
        save_with(path, |w| write_pfm(w, img))
    } else {
        save_with(path, |w| write_png(w, img))
    }
}

pub fn load_image(path: &Path) -> Result<Image> {
    if is_pfm(path) {
        load_with(path, read_pfm)
    } else {
        load_with(path, |r| read_png(r))
    }
}

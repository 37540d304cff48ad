//! Binary PGM (P5) and PPM (P6) with 8-bit samples.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::fsutil::write_atomic;
use crate::image::Map;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum PnmError {
    #[error("malformed image at byte {offset}: {reason}")]
    Format { offset: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn format_err(offset: usize, reason: impl Into<String>) -> PnmError {
    PnmError::Format {
        offset,
        reason: reason.into(),
    }
}

struct Header {
    width: usize,
    height: usize,
    maxval: usize,
    payload: usize,
}

fn parse_header(bytes: &[u8], magic: &[u8; 2]) -> Result<Header, PnmError> {
    if bytes.len() < 2 {
        return Err(format_err(bytes.len(), "truncated magic number"));
    }
    if &bytes[..2] != magic {
        return Err(format_err(
            0,
            format!(
                "expected magic {}, found {:?}",
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(&bytes[..2])
            ),
        ));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        // whitespace and comments before each field
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(format_err(pos, "truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(format_err(pos, "expected a decimal number in header"));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text
            .parse()
            .map_err(|_| format_err(start, format!("header value {text} out of range")))?;
        if *field == 0 {
            let name = ["width", "height", "maxval"][i];
            return Err(format_err(start, format!("{name} must be positive")));
        }
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        Some(_) => return Err(format_err(pos, "expected whitespace after maxval")),
        None => return Err(format_err(pos, "truncated header")),
    }
    let [width, height, maxval] = fields;
    if maxval > 255 {
        return Err(format_err(pos - 1, format!("maxval {maxval} needs 16-bit samples, unsupported")));
    }
    Ok(Header {
        width,
        height,
        maxval,
        payload: pos,
    })
}

fn payload<'a>(bytes: &'a [u8], h: &Header, channels: usize) -> Result<&'a [u8], PnmError> {
    let need = h
        .width
        .checked_mul(h.height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| format_err(h.payload, "image dimensions overflow"))?;
    let have = bytes.len() - h.payload;
    if have < need {
        return Err(format_err(
            bytes.len(),
            format!("truncated payload: expected {need} bytes, found {have}"),
        ));
    }
    if have > need {
        return Err(format_err(h.payload + need, format!("{} trailing bytes", have - need)));
    }
    let data = &bytes[h.payload..];
    if let Some(i) = data.iter().position(|&v| v as usize > h.maxval) {
        return Err(format_err(
            h.payload + i,
            format!("sample {} exceeds maxval {}", data[i], h.maxval),
        ));
    }
    Ok(data)
}

/// Grayscale samples scaled to [0, 1].
pub fn decode_pgm(bytes: &[u8]) -> Result<Map, PnmError> {
    let h = parse_header(bytes, b"P5")?;
    let data = payload(bytes, &h, 1)?;
    let scale = h.maxval as f64;
    Ok(Map::new(h.height, h.width, data.iter().map(|&v| v as f64 / scale).collect())
        .expect("header extents are positive"))
}

/// RGB samples scaled to [0, 1], as a channel-first 3×H×W tensor.
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor, PnmError> {
    let h = parse_header(bytes, b"P6")?;
    let data = payload(bytes, &h, 3)?;
    let scale = h.maxval as f64;
    let plane = h.width * h.height;
    let mut out = vec![0.0; 3 * plane];
    for (i, px) in data.chunks_exact(3).enumerate() {
        for c in 0..3 {
            out[c * plane + i] = px[c] as f64 / scale;
        }
    }
    Ok(Tensor::new(&[3, h.height, h.width], out).expect("header extents are positive"))
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_pgm(map: &Map) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", map.width(), map.height()).into_bytes();
    out.extend(map.data().iter().map(|&v| quantize(v)));
    out
}

pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>, PnmError> {
    let shape = image.shape();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(format_err(0, format!("expected a 3xHxW image, got {shape:?}")));
    }
    let (h, w) = (shape[1], shape[2]);
    let plane = h * w;
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let d = image.data();
    for i in 0..plane {
        for c in 0..3 {
            out.push(quantize(d[c * plane + i]));
        }
    }
    Ok(out)
}

pub fn read_gray(path: &Path) -> Result<Map, PnmError> {
    decode_pgm(&fs::read(path)?)
}

/// Reads a PGM and binarizes at 128/255.
pub fn read_mask(path: &Path) -> Result<Map, PnmError> {
    Ok(binarize_mask(&read_gray(path)?))
}

pub fn binarize_mask(map: &Map) -> Map {
    map.map(|v| if v >= 128.0 / 255.0 { 1.0 } else { 0.0 })
}

pub fn write_gray(path: &Path, map: &Map) -> Result<(), PnmError> {
    Ok(write_atomic(path, &encode_pgm(map))?)
}

pub fn write_mask(path: &Path, mask: &Map) -> Result<(), PnmError> {
    write_gray(path, &binarize_mask(mask))
}

pub fn read_image(path: &Path) -> Result<Tensor, PnmError> {
    decode_ppm(&fs::read(path)?)
}

pub fn write_image(path: &Path, image: &Tensor) -> Result<(), PnmError> {
    Ok(write_atomic(path, &encode_ppm(image)?)?)
}

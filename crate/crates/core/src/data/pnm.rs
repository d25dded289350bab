//! Binary PGM masks and PPM images.

use std::fs;
use std::path::Path;

use hrmedseg_tensor::Tensor;

use crate::error::{Error, Result};

/// Gray level of class `k`: 0/255 for binary masks, `⌊255k/C₂⌋` otherwise.
pub fn class_to_gray(k: u32, num_classes: usize) -> u8 {
    if num_classes <= 1 {
        if k == 0 {
            0
        } else {
            255
        }
    } else {
        (255 * k as usize / num_classes) as u8
    }
}

pub fn gray_to_class(v: u8, num_classes: usize) -> Option<u32> {
    if num_classes <= 1 {
        return match v {
            0 => Some(0),
            255 => Some(1),
            _ => None,
        };
    }
    (0..num_classes as u32).find(|&k| class_to_gray(k, num_classes) == v)
}

pub fn encode_mask_pgm(labels: &[u32], width: usize, height: usize, num_classes: usize) -> Result<Vec<u8>> {
    if labels.len() != width * height {
        return Err(Error::Shape {
            what: "mask labels".into(),
            expected: vec![height, width],
            found: vec![labels.len()],
        });
    }
    let limit = num_classes.max(2) as u32;
    if let Some(&bad) = labels.iter().find(|&&k| k >= limit) {
        return Err(Error::Config(format!("label {bad} out of range for {num_classes} classes")));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(labels.iter().map(|&k| class_to_gray(k, num_classes)));
    Ok(out)
}

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    payload: usize,
}

/// Parses `P5`/`P6` headers with maxval 255 (comments allowed).
fn parse_header(buf: &[u8]) -> Result<Header> {
    if buf.len() < 2 || buf[0] != b'P' {
        return Err(Error::Format("not a binary PNM file".into()));
    }
    let magic = [buf[0], buf[1]];
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for f in &mut fields {
        loop {
            match buf.get(pos) {
                Some(b'#') => {
                    while buf.get(pos).is_some_and(|&c| c != b'\n') {
                        pos += 1;
                    }
                }
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while buf.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *f = std::str::from_utf8(&buf[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("bad PNM header".into()))?;
    }
    if !buf.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Format("bad PNM header terminator".into()));
    }
    let [width, height, maxval] = fields;
    if maxval != 255 || width == 0 || height == 0 {
        return Err(Error::Format(format!("unsupported PNM {width}x{height} maxval {maxval}")));
    }
    Ok(Header {
        magic,
        width,
        height,
        payload: pos + 1,
    })
}

fn payload<'a>(buf: &'a [u8], h: &Header, channels: usize) -> Result<&'a [u8]> {
    let n = h.width * h.height * channels;
    buf.get(h.payload..h.payload + n)
        .filter(|_| buf.len() == h.payload + n)
        .ok_or_else(|| Error::Format(format!("PNM payload of {} bytes, expected {n}", buf.len() - h.payload)))
}

/// Returns `(labels, width, height)`.
pub fn decode_mask_pgm(buf: &[u8], num_classes: usize) -> Result<(Vec<u32>, usize, usize)> {
    let h = parse_header(buf)?;
    if &h.magic != b"P5" {
        return Err(Error::Format("mask must be a P5 file".into()));
    }
    let labels = payload(buf, &h, 1)?
        .iter()
        .map(|&v| gray_to_class(v, num_classes).ok_or_else(|| Error::Format(format!("gray level {v} is not a class"))))
        .collect::<Result<_>>()?;
    Ok((labels, h.width, h.height))
}

pub fn write_mask_pgm(path: impl AsRef<Path>, labels: &[u32], width: usize, height: usize, num_classes: usize) -> Result<()> {
    fs::write(path, encode_mask_pgm(labels, width, height, num_classes)?)?;
    Ok(())
}

pub fn read_mask_pgm(path: impl AsRef<Path>, num_classes: usize) -> Result<(Vec<u32>, usize, usize)> {
    decode_mask_pgm(&fs::read(path)?, num_classes)
}

/// Writes a `[3,H,W]` image in `[0,1]` as 8-bit PPM.
pub fn write_image_ppm(path: impl AsRef<Path>, image: &Tensor) -> Result<()> {
    let [3, h, w] = *image.shape() else {
        return Err(Error::Config(format!("expected a [3,H,W] image, got {:?}", image.shape())));
    };
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let d = image.data();
    for i in 0..h * w {
        for c in 0..3 {
            out.push((d[c * h * w + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a P6 (color) or P5 (gray, replicated) file as a `[3,H,W]` image.
pub fn read_image_pnm(path: impl AsRef<Path>) -> Result<Tensor> {
    let buf = fs::read(path)?;
    let h = parse_header(&buf)?;
    let channels = match &h.magic {
        b"P6" => 3,
        b"P5" => 1,
        _ => return Err(Error::Format("image must be P5 or P6".into())),
    };
    let px = payload(&buf, &h, channels)?;
    let n = h.width * h.height;
    let mut data = vec![0.0; 3 * n];
    for i in 0..n {
        for c in 0..3 {
            let v = px[i * channels + c.min(channels - 1)];
            data[c * n + i] = f64::from(v) / 255.0;
        }
    }
    Ok(Tensor::new(&[3, h.height, h.width], data)?)
}

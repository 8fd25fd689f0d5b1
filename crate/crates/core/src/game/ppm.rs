//! Binary portable pixmap (P6, 8-bit) reading and writing.

use std::path::Path;

use super::{GameError, Result};

/// Decoded image: `width * height * 3` samples scaled to `[0, 1]`, row-major RGB.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f32>,
}

fn bad(path: &str, reason: impl Into<String>) -> GameError {
    GameError::Image {
        path: path.to_string(),
        reason: reason.into(),
    }
}

pub fn decode(bytes: &[u8], name: &str) -> Result<RgbImage> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        // whitespace and comments
        while pos < bytes.len() {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else if bytes[pos].is_ascii_whitespace() {
                pos += 1;
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err(bad(name, "truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P6" {
        return Err(bad(name, format!("not a binary PPM (magic {:?})", fields[0])));
    }
    let num = |s: &str, what: &str| -> Result<usize> {
        s.parse::<usize>()
            .map_err(|_| bad(name, format!("bad {what} {s:?}")))
    };
    let width = num(&fields[1], "width")?;
    let height = num(&fields[2], "height")?;
    let maxval = num(&fields[3], "maxval")?;
    if width == 0 || height == 0 {
        return Err(bad(name, "empty image"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(bad(name, format!("only 8-bit PPM is supported (maxval {maxval})")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let need = width * height * 3;
    if bytes.len() < pos + need {
        return Err(bad(name, format!("raster holds {} of {need} bytes", bytes.len().saturating_sub(pos))));
    }
    let scale = maxval as f32;
    let pixels = bytes[pos..pos + need].iter().map(|&b| b as f32 / scale).collect();
    Ok(RgbImage { width, height, pixels })
}

pub fn read(path: &Path) -> Result<RgbImage> {
    let name = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|e| bad(&name, e.to_string()))?;
    decode(&bytes, &name)
}

pub fn encode(width: usize, height: usize, pixels: &[f32]) -> Vec<u8> {
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend(pixels.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn write(path: &Path, width: usize, height: usize, pixels: &[f32]) -> Result<()> {
    std::fs::write(path, encode(width, height, pixels))?;
    Ok(())
}

/// Box-average downsampling to `side x side`. Each output pixel averages
/// the source block `[floor(i*H/side), floor((i+1)*H/side))` in each axis.
pub fn box_downsample(img: &RgbImage, side: usize) -> Result<Vec<f32>> {
    if img.width < side || img.height < side {
        return Err(GameError::Invalid(format!(
            "image {}x{} is smaller than {side}x{side}",
            img.width, img.height
        )));
    }
    let mut out = vec![0.0f32; side * side * 3];
    for oy in 0..side {
        let (y0, y1) = (oy * img.height / side, (oy + 1) * img.height / side);
        for ox in 0..side {
            let (x0, x1) = (ox * img.width / side, (ox + 1) * img.width / side);
            let mut acc = [0.0f64; 3];
            for y in y0..y1 {
                for x in x0..x1 {
                    let i = (y * img.width + x) * 3;
                    for (c, a) in acc.iter_mut().enumerate() {
                        *a += img.pixels[i + c] as f64;
                    }
                }
            }
            let count = ((y1 - y0) * (x1 - x0)) as f64;
            for c in 0..3 {
                out[(oy * side + ox) * 3 + c] = (acc[c] / count) as f32;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_comments_and_round_trip() {
        let pixels: Vec<f32> = (0..12).map(|i| i as f32 * 20.0 / 255.0).collect();
        let bytes = encode(2, 2, &pixels);
        let img = decode(&bytes, "mem").unwrap();
        assert_eq!((img.width, img.height), (2, 2));
        for (a, b) in img.pixels.iter().zip(&pixels) {
            assert!((a - b).abs() < 1e-6);
        }
        let mut commented = b"P6 # made by hand\n2 2\n# max\n255\n".to_vec();
        commented.extend(&bytes[bytes.len() - 12..]);
        assert_eq!(decode(&commented, "mem").unwrap(), img);
    }

    #[test]
    fn rejects_other_formats_and_truncation() {
        assert!(decode(b"P3\n1 1\n255\n0 0 0", "x").is_err());
        assert!(decode(b"P6\n2 2\n255\n\x00\x00", "x").is_err());
        assert!(decode(b"P6\n1 1\n65535\n\x00\x00\x00\x00\x00\x00", "x").is_err());
        let err = decode(b"P6\n", "broken.ppm").unwrap_err().to_string();
        assert!(err.contains("broken.ppm"));
    }

    #[test]
    fn box_average_preserves_constants_and_averages_blocks() {
        let img = RgbImage {
            width: 4,
            height: 4,
            pixels: vec![0.25; 48],
        };
        assert!(box_downsample(&img, 2).unwrap().iter().all(|&v| v == 0.25));
        // checkerboard of 0/1 in the red channel averages to 0.5
        let mut pixels = vec![0.0; 48];
        for y in 0..4 {
            for x in 0..4 {
                pixels[(y * 4 + x) * 3] = ((x + y) % 2) as f32;
            }
        }
        let out = box_downsample(&RgbImage { width: 4, height: 4, pixels }, 2).unwrap();
        assert!(out.chunks(3).all(|p| p[0] == 0.5 && p[1] == 0.0));
    }
}

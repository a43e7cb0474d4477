use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Maps `[0, 1]` to `0..=255`, rounding ties down so `0.5 ↦ 127`.
pub fn quantize(v: f64) -> u8 {
    let x = v.clamp(0.0, 1.0) * 255.0;
    (x - 0.5).ceil().clamp(0.0, 255.0) as u8
}

fn to_unit<T: Element>(values: &[T], normalize: bool) -> Vec<f64> {
    let v: Vec<f64> = values.iter().map(|&x| Element::to_f64(x)).collect();
    if !normalize {
        return v;
    }
    let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let span = hi - lo;
    v.iter().map(|&x| if span > 0.0 { (x - lo) / span } else { 0.0 }).collect()
}

fn write_pnm(path: &Path, magic: &str, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    let mut out = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Binary greyscale (P5) from a `[Y, X]` plane. With `normalize` the plane is
/// min-max scaled first; otherwise values are clamped to `[0, 1]`.
pub fn write_pgm<T: Element>(plane: &Tensor<T>, path: impl AsRef<Path>, normalize: bool) -> Result<()> {
    if plane.rank() != 2 {
        return Err(Error::shape(format!("PGM needs a [Y, X] plane, got {:?}", plane.shape())));
    }
    let pixels: Vec<u8> = to_unit(plane.data(), normalize).into_iter().map(quantize).collect();
    write_pnm(path.as_ref(), "P5", plane.shape()[1], plane.shape()[0], &pixels)
}

/// Reads a binary greyscale (P5) file with maxval 255 into a `[Y, X]` plane
/// scaled to `[0, 1]`. `#` comments in the header are skipped.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<Tensor<f64>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(path, "truncated PGM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(Error::format(path, format!("expected P5, found {}", fields[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::format(path, format!("bad header field {s}")));
    let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval != 255 {
        return Err(Error::format(path, format!("only maxval 255 is supported, found {maxval}")));
    }
    let body = &bytes[(pos + 1).min(bytes.len())..];
    if body.len() != width * height {
        return Err(Error::format(path, format!("expected {} pixels, found {}", width * height, body.len())));
    }
    Tensor::new(&[height, width], body.iter().map(|&b| b as f64 / 255.0).collect())
}

/// Binary colour (P6) from a `[3, Y, X]` tensor.
pub fn write_ppm<T: Element>(rgb: &Tensor<T>, path: impl AsRef<Path>, normalize: bool) -> Result<()> {
    let s = rgb.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::shape(format!("PPM needs a [3, Y, X] tensor, got {s:?}")));
    }
    let unit = to_unit(rgb.data(), normalize);
    let plane = s[1] * s[2];
    let pixels: Vec<u8> = (0..plane).flat_map(|p| (0..3).map(move |c| (c, p))).map(|(c, p)| quantize(unit[c * plane + p])).collect();
    write_pnm(path.as_ref(), "P6", s[2], s[1], &pixels)
}

/// Nearest-neighbour resampling of a `[y, x]` plane to `[rows, cols]`.
pub fn resize_nearest<T: Element>(plane: &Tensor<T>, rows: usize, cols: usize) -> Result<Tensor<T>> {
    if plane.rank() != 2 {
        return Err(Error::shape(format!("expected a plane, got {:?}", plane.shape())));
    }
    let (y, x) = (plane.shape()[0], plane.shape()[1]);
    Ok(Tensor::from_fn(&[rows, cols], |i| plane.get(&[i[0] * y / rows, i[1] * x / cols])))
}

/// The input plane followed by every map in `maps: [P, y, x]`, each
/// resampled to the input size and min-max normalized on its own, separated
/// by one-pixel white gutters.
pub fn write_attention_montage<T: Element>(maps: &Tensor<T>, input: &Tensor<T>, path: impl AsRef<Path>) -> Result<()> {
    if maps.rank() != 3 || input.rank() != 2 {
        return Err(Error::shape(format!("montage needs maps [P,y,x] and an input [Y,X], got {:?} and {:?}", maps.shape(), input.shape())));
    }
    let (rows, cols) = (input.shape()[0], input.shape()[1]);
    let count = maps.shape()[0];
    let mut panels = vec![to_unit(input.data(), true)];
    for p in 0..count {
        let plane = maps.reshape(&[count, maps.shape()[1], maps.shape()[2]])?;
        let per = plane.shape()[1] * plane.shape()[2];
        let one = Tensor::new(&plane.shape()[1..], plane.data()[p * per..(p + 1) * per].to_vec())?;
        panels.push(to_unit(resize_nearest(&one, rows, cols)?.data(), true));
    }
    let width = panels.len() * (cols + 1) - 1;
    let mut canvas = vec![1.0; rows * width];
    for (k, panel) in panels.iter().enumerate() {
        for i in 0..rows {
            let dst = i * width + k * (cols + 1);
            canvas[dst..dst + cols].copy_from_slice(&panel[i * cols..(i + 1) * cols]);
        }
    }
    write_pgm(&Tensor::new(&[rows, width], canvas)?, path, false)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_rule() {
        assert_eq!(quantize(0.5), 127);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(-3.0), 0);
        assert_eq!(quantize(2.0), 255);
        assert_eq!(quantize(0.6), 153);
    }

    #[test]
    fn header_and_body() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.pgm");
        write_pgm(&Tensor::<f64>::ones(&[1, 1]), &p, false).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"P5\n1 1\n255\n\xff");
        let c = dir.path().join("c.ppm");
        let rgb = Tensor::<f64>::from_f64_slice(&[3, 1, 2], &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        write_ppm(&rgb, &c, false).unwrap();
        assert_eq!(std::fs::read(&c).unwrap(), b"P6\n2 1\n255\n\xff\x00\x00\x00\xff\x00");
        assert!(write_pgm(&Tensor::<f64>::ones(&[1, 1, 1]), &p, false).is_err());
    }

    #[test]
    fn nearest_resize() {
        let t = Tensor::<f64>::from_f64_slice(&[2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let r = resize_nearest(&t, 4, 4).unwrap();
        assert_eq!(r.get(&[1, 1]), 1.0);
        assert_eq!(r.get(&[3, 2]), 4.0);
    }

    #[test]
    fn read_back() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.pgm");
        std::fs::write(&p, b"P5\n# note\n2 1\n255\n\x00\x80").unwrap();
        let t = read_pgm(&p).unwrap();
        assert_eq!(t.shape(), &[1, 2]);
        assert_eq!(t.data(), &[0.0, 128.0 / 255.0]);
        std::fs::write(&p, b"P5\n2 1\n255\n\x00").unwrap();
        assert!(read_pgm(&p).is_err());
        std::fs::write(&p, b"P2\n1 1\n255\n0").unwrap();
        assert!(read_pgm(&p).is_err());
    }
}

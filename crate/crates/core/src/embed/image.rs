use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

/// Single-channel image, row-major, values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    h: usize,
    w: usize,
    pixels: Vec<f64>,
}

impl ImageSample {
    pub fn new(h: usize, w: usize, pixels: Vec<f64>) -> Result<ImageSample> {
        if h == 0 || w == 0 || pixels.len() != h * w {
            return Err(Error::Dimension(format!(
                "{} pixels do not form a {h}x{w} image",
                pixels.len()
            )));
        }
        if pixels.iter().any(|p| !p.is_finite()) {
            return Err(Error::Validation("image contains non-finite pixels".into()));
        }
        Ok(ImageSample { h, w, pixels })
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.w + col]
    }
}

/// Non-overlapping `p×p` patches in row-major patch order, each flattened row-major.
pub fn patchify(img: &ImageSample, p: usize) -> Result<Array2<f64>> {
    if p == 0 || img.h % p != 0 || img.w % p != 0 {
        return Err(Error::Dimension(format!(
            "{}x{} image is not divisible into {p}x{p} patches",
            img.h, img.w
        )));
    }
    let (ph, pw) = (img.h / p, img.w / p);
    let mut out = Array2::zeros((ph * pw, p * p));
    for pr in 0..ph {
        for pc in 0..pw {
            let mut row = out.row_mut(pr * pw + pc);
            for i in 0..p {
                for j in 0..p {
                    row[i * p + j] = img.get(pr * p + i, pc * p + j);
                }
            }
        }
    }
    Ok(out)
}

/// Plain-text PGM (P2), scaled by maxval.
fn parse_pgm(src: &str, path: &Path) -> Result<ImageSample> {
    let fields: Vec<&str> = src
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(str::split_whitespace)
        .collect();
    let bad = |msg: &str| Error::parse(path.display().to_string(), 0, msg);
    if fields.first() != Some(&"P2") {
        return Err(bad("expected P2 header"));
    }
    let num = |i: usize, what: &str| -> Result<usize> {
        fields
            .get(i)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(&format!("missing or invalid {what}")))
    };
    let (w, h, maxval) = (num(1, "width")?, num(2, "height")?, num(3, "maxval")?);
    if maxval == 0 {
        return Err(bad("maxval must be positive"));
    }
    let body = &fields[4..];
    if body.len() != w * h {
        return Err(bad(&format!("expected {} pixel values, found {}", w * h, body.len())));
    }
    let pixels = body
        .iter()
        .map(|s| {
            s.parse::<usize>()
                .ok()
                .filter(|&v| v <= maxval)
                .map(|v| v as f64 / maxval as f64)
                .ok_or_else(|| bad(&format!("invalid pixel value {s:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    ImageSample::new(h, w, pixels)
}

pub fn write_pgm(img: &ImageSample, path: &Path) -> Result<()> {
    let mut out = format!("P2\n{} {}\n255\n", img.w, img.h);
    for row in img.pixels.chunks(img.w) {
        let line: Vec<String> = row
            .iter()
            .map(|v| ((v.clamp(0.0, 1.0) * 255.0).round() as u32).to_string())
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Raw grid: `u32` height, `u32` width, then `f32` pixels, all little-endian.
fn parse_raw(bytes: &[u8], path: &Path) -> Result<ImageSample> {
    if bytes.len() < 8 {
        return Err(Error::parse(path.display().to_string(), 0, "raw grid header truncated"));
    }
    let h = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    if body.len() != h * w * 4 {
        return Err(Error::parse(
            path.display().to_string(),
            0,
            format!("raw grid {h}x{w} needs {} bytes, found {}", h * w * 4, body.len()),
        ));
    }
    let pixels = body
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    ImageSample::new(h, w, pixels)
}

pub fn write_raw_grid(img: &ImageSample, path: &Path) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::with_capacity(8 + img.pixels.len() * 4);
    buf.extend_from_slice(&(img.h as u32).to_le_bytes());
    buf.extend_from_slice(&(img.w as u32).to_le_bytes());
    for &p in &img.pixels {
        buf.extend_from_slice(&(p as f32).to_le_bytes());
    }
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Reads `.pgm` as PGM text and anything else as a raw grid.
pub fn read_image(path: &Path) -> Result<ImageSample> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let is_pgm = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    if is_pgm {
        let src = String::from_utf8(bytes).map_err(|_| Error::parse(path.display().to_string(), 0, "PGM file is not UTF-8"))?;
        parse_pgm(&src, path)
    } else {
        parse_raw(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> ImageSample {
        ImageSample::new(h, w, (0..h * w).map(|i| i as f64).collect()).unwrap()
    }

    #[test]
    fn patch_order() {
        let img = ramp(4, 4);
        let p = patchify(&img, 2).unwrap();
        assert_eq!(p.dim(), (4, 4));
        assert_eq!(p.row(0).to_vec(), vec![0.0, 1.0, 4.0, 5.0]);
        assert_eq!(p.row(1).to_vec(), vec![2.0, 3.0, 6.0, 7.0]);
        assert_eq!(p.row(3).to_vec(), vec![10.0, 11.0, 14.0, 15.0]);
        assert!(patchify(&ramp(4, 6), 4).is_err());
    }

    #[test]
    fn construction_checks() {
        assert!(ImageSample::new(2, 2, vec![0.0; 3]).is_err());
        assert!(ImageSample::new(1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn pgm_and_raw_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageSample::new(2, 3, vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0]).unwrap();

        let pgm = dir.path().join("a.pgm");
        write_pgm(&img, &pgm).unwrap();
        let back = read_image(&pgm).unwrap();
        assert_eq!((back.height(), back.width()), (2, 3));
        for (a, b) in back.pixels().iter().zip(img.pixels()) {
            assert!((a - b).abs() <= 0.5 / 255.0);
        }

        let raw = dir.path().join("a.grid");
        write_raw_grid(&img, &raw).unwrap();
        let back = read_image(&raw).unwrap();
        for (a, b) in back.pixels().iter().zip(img.pixels()) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn malformed_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.pgm");
        fs::write(&p, "P2\n2 2\n255\n1 2 3\n").unwrap();
        assert!(matches!(read_image(&p), Err(Error::Parse { .. })));
        fs::write(&p, "P5\n2 2\n255\n").unwrap();
        assert!(read_image(&p).is_err());
        let r = dir.path().join("bad.grid");
        fs::write(&r, [1u8, 0, 0]).unwrap();
        assert!(read_image(&r).is_err());
    }
}

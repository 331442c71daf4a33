//! CHW float images and the binary PPM/PGM codecs used on disk.
//!
//! Dataset images are stored as binary PPM (`P6`, maxval 255); heatmaps are
//! written as binary PGM (`P5`). Both are lossless for 8-bit data, so
//! write-then-read round-trips are exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Dense image, channels-first, values in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// Constant (non-tracking) tensor view of the pixels.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self
            .data
            .iter()
            .map(|&v| T::from_f64(f64::from(v)))
            .collect();
        Tensor::leaf(data, &[self.channels, self.height, self.width], false)
            .expect("image buffer length always matches its shape")
    }
}

fn quantize(v: f32) -> u8 {
    (f64::from(v).clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Write a 3-channel image as binary PPM.
pub fn write_ppm(image: &Image, path: &Path) -> Result<()> {
    if image.channels != 3 {
        return Err(Error::Config(format!(
            "PPM requires 3 channels, got {}",
            image.channels
        )));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut body = Vec::with_capacity(image.height * image.width * 3);
    for y in 0..image.height {
        for x in 0..image.width {
            for c in 0..3 {
                body.push(quantize(image.get(c, y, x)));
            }
        }
    }
    write!(out, "P6\n{} {}\n255\n", image.width, image.height)
        .and_then(|()| out.write_all(&body))
        .and_then(|()| out.flush())
        .map_err(|e| Error::io(path, e))
}

/// Write a single-channel map as binary PGM. `gray` is row-major [H*W],
/// already quantized by the caller's chosen scaling.
pub fn write_pgm(gray: &[u8], height: usize, width: usize, path: &Path) -> Result<()> {
    if gray.len() != height * width {
        return Err(Error::Config(format!(
            "PGM buffer length {} does not match {height}x{width}",
            gray.len()
        )));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write!(out, "P5\n{width} {height}\n255\n")
        .and_then(|()| out.write_all(gray))
        .and_then(|()| out.flush())
        .map_err(|e| Error::io(path, e))
}

struct HeaderReader<R: Read> {
    inner: R,
}

impl<R: Read> HeaderReader<R> {
    fn next_byte(&mut self) -> std::io::Result<Option<u8>> {
        let mut buf = [0u8; 1];
        match self.inner.read_exact(&mut buf) {
            Ok(()) => Ok(Some(buf[0])),
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Next whitespace-delimited token, skipping `#` comments.
    fn token(&mut self) -> std::io::Result<Option<String>> {
        let mut tok = Vec::new();
        loop {
            let Some(b) = self.next_byte()? else {
                break;
            };
            if b == b'#' && tok.is_empty() {
                while let Some(c) = self.next_byte()? {
                    if c == b'\n' {
                        break;
                    }
                }
                continue;
            }
            if b.is_ascii_whitespace() {
                if tok.is_empty() {
                    continue;
                }
                break;
            }
            tok.push(b);
        }
        Ok((!tok.is_empty()).then(|| String::from_utf8_lossy(&tok).into_owned()))
    }
}

/// Read a binary PPM written by [`write_ppm`] (or any P6 file with maxval
/// 255) back into a [0,1]-valued image.
pub fn read_ppm(path: &Path) -> Result<Image> {
    let bad =
        |reason: &str| Error::Config(format!("{}: not a supported PPM: {reason}", path.display()));
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = HeaderReader {
        inner: BufReader::new(file),
    };
    let io_err = |e| Error::io(path, e);
    let mut field = |what: &str| -> Result<String> {
        reader
            .token()
            .map_err(io_err)?
            .ok_or_else(|| bad(&format!("missing {what}")))
    };
    if field("magic")? != "P6" {
        return Err(bad("magic is not P6"));
    }
    let width: usize = field("width")?.parse().map_err(|_| bad("bad width"))?;
    let height: usize = field("height")?.parse().map_err(|_| bad("bad height"))?;
    if field("maxval")? != "255" {
        return Err(bad("maxval is not 255"));
    }
    if width == 0 || height == 0 {
        return Err(bad("zero extent"));
    }

    let mut body = vec![0u8; width * height * 3];
    reader
        .inner
        .read_exact(&mut body)
        .map_err(|_| bad("truncated pixel data"))?;
    let mut image = Image::new(3, height, width);
    for y in 0..height {
        for x in 0..width {
            for c in 0..3 {
                let v = body[(y * width + x) * 3 + c];
                image.set(c, y, x, f32::from(v) / 255.0);
            }
        }
    }
    Ok(image)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_image() -> Image {
        let mut img = Image::new(3, 4, 5);
        for c in 0..3 {
            for y in 0..4 {
                for x in 0..5 {
                    img.set(c, y, x, ((c * 20 + y * 5 + x) as f32) / 255.0 * 3.0 % 1.0);
                }
            }
        }
        img
    }

    #[test]
    fn ppm_roundtrip_is_exact_for_quantized_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.ppm");
        // Snap to the 8-bit grid first so the round trip is bit-exact.
        let mut img = ramp_image();
        for v in &mut img.data {
            *v = f32::from(quantize(*v)) / 255.0;
        }
        write_ppm(&img, &path).unwrap();
        let back = read_ppm(&path).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn ppm_writes_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.ppm");
        let b = dir.path().join("b.ppm");
        write_ppm(&ramp_image(), &a).unwrap();
        write_ppm(&ramp_image(), &b).unwrap();
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }

    #[test]
    fn header_comments_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ppm");
        std::fs::write(
            &path,
            b"P6\n# a comment\n2 1\n255\n\x00\x00\x00\xff\xff\xff",
        )
        .unwrap();
        let img = read_ppm(&path).unwrap();
        assert_eq!((img.width, img.height), (2, 1));
        assert_eq!(img.get(0, 0, 1), 1.0);
    }

    #[test]
    fn malformed_ppm_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ppm");
        std::fs::write(&path, b"P5\n2 1\n255\n\x00\x00").unwrap();
        assert!(read_ppm(&path).is_err());
        std::fs::write(&path, b"P6\n2 1\n255\n\x00").unwrap();
        assert!(read_ppm(&path).is_err());
    }

    #[test]
    fn pgm_has_the_documented_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        write_pgm(&[0, 128, 255, 64], 2, 2, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n2 2\n255\n"));
        assert_eq!(&bytes[bytes.len() - 4..], &[0, 128, 255, 64]);
    }

    #[test]
    fn image_tensor_view_matches_layout() {
        let img = ramp_image();
        let t: Tensor<f64> = img.to_tensor();
        assert_eq!(t.shape(), &[3, 4, 5]);
        assert!((t.data()[7] - f64::from(img.get(0, 1, 2))).abs() < 1e-12);
        assert!(!t.requires_grad());
    }
}

//! File formats: PGM/PNG images, the raw sinogram container, and
//! ground-truth JSON.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::phantom::GroundTruth;
use crate::{Error, Geometry, Image, Result, Sinogram};

const SINO_MAGIC: &[u8; 4] = b"SINO";

/// Load an 8/16-bit grayscale PGM (P2 or P5) or grayscale PNG, scaled to
/// `[0, 1]` by the format's max value.
pub fn load_image(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = if bytes.starts_with(b"P2") || bytes.starts_with(b"P5") {
        parse_pgm(&bytes)?
    } else if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        load_png(&bytes)?
    } else {
        return Err(Error::Format(format!(
            "{}: unrecognized image format (expected PGM P2/P5 or PNG)",
            path.display()
        )));
    };
    img.check_pipeline_dims()?;
    Ok(img)
}

fn load_png(bytes: &[u8]) -> Result<Image> {
    let decoded = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::Format(format!("png decode failed: {e}")))?;
    match decoded {
        image::DynamicImage::ImageLuma8(gray) => {
            let (w, h) = (gray.width() as usize, gray.height() as usize);
            let pixels = gray.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
            Image::new(h, w, pixels)
        }
        image::DynamicImage::ImageLuma16(gray) => {
            let (w, h) = (gray.width() as usize, gray.height() as usize);
            let pixels = gray.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect();
            Image::new(h, w, pixels)
        }
        other => Err(Error::Format(format!(
            "png must be grayscale, got color type {:?}",
            other.color()
        ))),
    }
}

/// Tokenizer for PGM headers: whitespace-separated fields, `#` comments.
struct PgmTokens<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> PgmTokens<'a> {
    fn next_token(&mut self) -> Result<&'a [u8]> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        if self.pos >= self.bytes.len() {
            return Err(Error::Format("pgm: truncated header".into()));
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn next_usize(&mut self, what: &str) -> Result<usize> {
        let tok = self.next_token()?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("pgm: invalid {what}")))
    }
}

fn parse_pgm(bytes: &[u8]) -> Result<Image> {
    let binary = bytes.starts_with(b"P5");
    let mut toks = PgmTokens { bytes, pos: 2 };
    let width = toks.next_usize("width")?;
    let height = toks.next_usize("height")?;
    let maxval = toks.next_usize("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Format("pgm: zero dimension".into()));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("pgm: unsupported maxval {maxval}")));
    }
    let n = width * height;
    let max = maxval as f64;
    let pixels: Vec<f64> = if binary {
        // Exactly one whitespace byte separates the header from raster data.
        let data = &bytes[toks.pos + 1..];
        if maxval < 256 {
            if data.len() < n {
                return Err(Error::Format("pgm: raster shorter than header promises".into()));
            }
            data[..n].iter().map(|&b| b as f64 / max).collect()
        } else {
            if data.len() < 2 * n {
                return Err(Error::Format("pgm: raster shorter than header promises".into()));
            }
            data[..2 * n]
                .chunks_exact(2)
                .map(|px| u16::from_be_bytes([px[0], px[1]]) as f64 / max)
                .collect()
        }
    } else {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let v = toks.next_usize("sample")?;
            if v > maxval {
                return Err(Error::Format(format!("pgm: sample {v} exceeds maxval {maxval}")));
            }
            out.push(v as f64 / max);
        }
        out
    };
    Image::new(height, width, pixels)
}

/// Write an image as binary 8-bit PGM (values clamped to `[0, 1]`).
pub fn save_image(img: &Image, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let emit = |res: std::io::Result<()>| res.map_err(|e| Error::io(path, e));
    emit(write!(w, "P5\n{} {}\n255\n", img.width(), img.height()))?;
    let raster: Vec<u8> = img
        .pixels()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    emit(w.write_all(&raster))?;
    emit(w.flush())
}

/// Save a sinogram: 16-byte header (`SINO`, Nr, Nω, reserved, all u32 LE)
/// followed by f32 little-endian values, row-major.
pub fn save_sinogram(sino: &Sinogram, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let emit = |res: std::io::Result<()>| res.map_err(|e| Error::io(path, e));
    emit(w.write_all(SINO_MAGIC))?;
    emit(w.write_all(&(sino.n_r() as u32).to_le_bytes()))?;
    emit(w.write_all(&(sino.n_angles() as u32).to_le_bytes()))?;
    emit(w.write_all(&0u32.to_le_bytes()))?;
    for &v in sino.values() {
        emit(w.write_all(&(v as f32).to_le_bytes()))?;
    }
    emit(w.flush())
}

/// Load a sinogram saved by [`save_sinogram`]; the stored grid shape must
/// match `geo`.
pub fn load_sinogram(path: &Path, geo: &Geometry) -> Result<Sinogram> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 {
        return Err(Error::Format(format!(
            "{}: sinogram file shorter than its 16-byte header",
            path.display()
        )));
    }
    if &bytes[0..4] != SINO_MAGIC {
        return Err(Error::Format(format!("{}: bad sinogram magic", path.display())));
    }
    let nr = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let nw = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if nr != geo.n_r() || nw != geo.n_angles() {
        return Err(Error::Dimension(format!(
            "sinogram file is {}x{}, geometry expects {}x{}",
            nr,
            nw,
            geo.n_r(),
            geo.n_angles()
        )));
    }
    let need = 16 + 4 * nr * nw;
    if bytes.len() < need {
        return Err(Error::Format(format!(
            "{}: sinogram file truncated ({} of {} bytes)",
            path.display(),
            bytes.len(),
            need
        )));
    }
    let values = bytes[16..need]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    Sinogram::new(geo.clone(), values)
}

/// Load ground-truth boxes from JSON: `{"boxes":[{"x_min":..,"x_max":..,"kind":".."}]}`.
pub fn load_ground_truth(path: &Path) -> Result<GroundTruth> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let gt: GroundTruth = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    gt.validate()?;
    Ok(gt)
}

pub fn save_ground_truth(gt: &GroundTruth, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(gt).expect("ground truth serializes");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::path::PathBuf;

    fn tmp(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join("luslines-io-tests");
        fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn pgm_all_zero() {
        let path = tmp("zero.pgm");
        let mut data = b"P5\n32 32\n255\n".to_vec();
        data.extend(std::iter::repeat(0u8).take(32 * 32));
        fs::write(&path, data).unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!((img.height(), img.width()), (32, 32));
        assert!(img.pixels().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pgm_8bit_max_scales_to_one() {
        let path = tmp("max8.pgm");
        let mut data = b"P5\n16 16\n255\n".to_vec();
        let mut raster = vec![0u8; 256];
        raster[37] = 255;
        data.extend(raster);
        fs::write(&path, data).unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!(img.pixels()[37], 1.0);
    }

    #[test]
    fn pgm_16bit_divides_by_65535() {
        let path = tmp("deep.pgm");
        let mut data = b"P5\n16 16\n65535\n".to_vec();
        let mut raster = vec![0u8; 512];
        raster[0] = 0x80; // first sample = 32768 big-endian
        raster[1] = 0x00;
        data.extend(raster);
        fs::write(&path, data).unwrap();
        let img = load_image(&path).unwrap();
        let want = 32768.0 / 65535.0;
        assert!((img.pixels()[0] - want).abs() < 1e-12);
    }

    #[test]
    fn pgm_ascii_p2() {
        let path = tmp("ascii.pgm");
        let mut text = String::from("P2\n# comment\n16 16\n255\n");
        for i in 0..256 {
            text.push_str(&format!("{} ", i % 256));
        }
        fs::write(&path, text).unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!(img.pixels()[255], 1.0);
        assert_eq!(img.pixels()[0], 0.0);
    }

    #[test]
    fn image_round_trip_8bit() {
        let path = tmp("round.pgm");
        let img = Image::from_fn(20, 24, |r, c| ((r * 24 + c) % 256) as f64 / 255.0);
        save_image(&img, &path).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn rejects_color_and_garbage() {
        let path = tmp("garbage.bin");
        fs::write(&path, b"not an image at all").unwrap();
        assert!(matches!(load_image(&path), Err(Error::Format(_))));

        let path = tmp("color.png");
        let rgb = image::RgbImage::from_fn(16, 16, |x, y| {
            image::Rgb([x as u8, y as u8, 7])
        });
        rgb.save(&path).unwrap();
        let err = load_image(&path).unwrap_err();
        assert!(err.to_string().contains("grayscale"), "got: {err}");
    }

    #[test]
    fn grayscale_png_loads() {
        let path = tmp("gray.png");
        let gray = image::GrayImage::from_fn(18, 20, |x, y| image::Luma([(x * y) as u8]));
        gray.save(&path).unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!((img.height(), img.width()), (20, 18));
        assert!((img.get(4, 3) - 12.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn sinogram_round_trip_bitwise_at_f32() {
        let geo = Geometry::standard(16, 16);
        let mut rng = StdRng::seed_from_u64(5);
        let n = geo.n_r() * geo.n_angles();
        // Values representable exactly as f32.
        let values: Vec<f64> =
            (0..n).map(|_| rng.random_range(-1000i32..1000) as f64 / 64.0).collect();
        let sino = Sinogram::new(geo.clone(), values).unwrap();
        let path = tmp("round.sino");
        save_sinogram(&sino, &path).unwrap();
        let back = load_sinogram(&path, &geo).unwrap();
        assert_eq!(back.values(), sino.values());
    }

    #[test]
    fn sinogram_rejects_bad_magic_and_truncation() {
        let geo = Geometry::standard(16, 16);
        let sino = Sinogram::zeros(geo.clone());
        let path = tmp("corrupt.sino");
        save_sinogram(&sino, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'X';
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_sinogram(&path, &geo), Err(Error::Format(_))));

        let path = tmp("empty.sino");
        fs::write(&path, b"").unwrap();
        assert!(matches!(load_sinogram(&path, &geo), Err(Error::Format(_))));

        let path = tmp("short.sino");
        save_sinogram(&sino, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_sinogram(&path, &geo), Err(Error::Format(_))));
    }
}

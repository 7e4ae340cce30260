use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use super::{io_err, DatasetError, Result};
use crate::tensor::Tensor;

/// 8-bit RGB image, row-major, interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        Self {
            width,
            height,
            data: rgb.iter().copied().cycle().take(width * height * 3).collect(),
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

/// Reads a PNG, converting gray/alpha/palette/16-bit variants to 8-bit RGB.
pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let bad = |reason: String| DatasetError::Image {
        path: path.to_path_buf(),
        reason,
    };
    let file = File::open(path).map_err(io_err(path))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder.read_info().map_err(|e| bad(e.to_string()))?;
    let size = reader.output_buffer_size().ok_or_else(|| bad("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| bad(e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    buf.truncate(info.buffer_size());
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(bad("unexpanded palette".into())),
    };
    let mut data = Vec::with_capacity(w * h * 3);
    for px in buf.chunks_exact(channels) {
        match channels {
            1 | 2 => data.extend([px[0]; 3]),
            _ => data.extend(&px[..3]),
        }
    }
    Ok(RgbImage { width: w, height: h, data })
}

/// Writes an 8-bit RGB PNG with fixed encoder settings, so identical
/// images give identical bytes.
pub fn save_rgb(img: &RgbImage, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    enc.set_compression(png::Compression::Fast);
    let to_err = |e: png::EncodingError| DatasetError::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let mut writer = enc.write_header().map_err(to_err)?;
    writer.write_image_data(&img.data).map_err(to_err)?;
    writer.finish().map_err(to_err)
}

/// Per-channel mean over all pixels of `images`, on the [0,1] scale.
pub fn compute_mean_rgb<'a>(images: impl IntoIterator<Item = &'a RgbImage>) -> Result<Vec<f32>> {
    let mut sums = [0u64; 3];
    let mut pixels = 0u64;
    for img in images {
        for px in img.data.chunks_exact(3) {
            for c in 0..3 {
                sums[c] += px[c] as u64;
            }
        }
        pixels += (img.width * img.height) as u64;
    }
    if pixels == 0 {
        return Err(DatasetError::EmptyTrain);
    }
    Ok(sums
        .iter()
        .map(|&s| (s as f64 / (pixels as f64 * 255.0)) as f32)
        .collect())
}

/// Scales to [0,1] and subtracts the per-channel mean; returns `[3, H, W]`.
pub fn preprocess(img: &RgbImage, mean_rgb: &[f32]) -> Result<Tensor> {
    if mean_rgb.len() != 3 {
        return Err(DatasetError::Config(format!("mean has {} channels, expected 3", mean_rgb.len())));
    }
    let plane = img.width * img.height;
    let mut data = vec![0f32; 3 * plane];
    for (i, px) in img.data.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px[c] as f32 / 255.0 - mean_rgb[c];
        }
    }
    Tensor::new(vec![3, img.height, img.width], data).map_err(|e| DatasetError::Config(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_gray_preprocesses_to_zero() {
        let imgs = vec![RgbImage::filled(4, 4, [128, 128, 128]); 3];
        let mean = compute_mean_rgb(&imgs).unwrap();
        let t = preprocess(&imgs[0], &mean).unwrap();
        assert!(t.data().iter().all(|&v| v.abs() < 1e-7));
    }

    #[test]
    fn black_and_white_mean_half() {
        let imgs = [RgbImage::filled(2, 2, [0; 3]), RgbImage::filled(2, 2, [255; 3])];
        assert_eq!(compute_mean_rgb(&imgs).unwrap(), vec![0.5; 3]);
    }

    #[test]
    fn three_image_mean_by_hand() {
        let imgs = [
            RgbImage::filled(1, 1, [10, 20, 30]),
            RgbImage::filled(1, 1, [40, 50, 60]),
            RgbImage::filled(1, 1, [100, 0, 255]),
        ];
        let mean = compute_mean_rgb(&imgs).unwrap();
        let expect = [150.0 / 3.0 / 255.0, 70.0 / 3.0 / 255.0, 345.0 / 3.0 / 255.0];
        for (m, e) in mean.iter().zip(expect) {
            assert!((*m as f64 - e).abs() < 1e-7);
        }
        assert!(matches!(compute_mean_rgb(&[]), Err(DatasetError::EmptyTrain)));
    }

    #[test]
    fn png_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = RgbImage::new(5, 3);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i * 17 % 256) as u8;
        }
        let path = dir.path().join("x.png");
        save_rgb(&img, &path).unwrap();
        assert_eq!(load_rgb(&path).unwrap(), img);
        let t = preprocess(&img, &[0.0; 3]).unwrap();
        assert_eq!(t.shape(), &[3, 3, 5]);
        assert_eq!(t.data()[1], img.pixel(1, 0)[0] as f32 / 255.0);
    }

    #[test]
    fn unreadable_image_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.png");
        std::fs::write(&path, b"not a png").unwrap();
        let err = load_rgb(&path).unwrap_err();
        assert!(err.to_string().contains("junk.png"));
    }
}

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// An RGB image with its class label. Pixels are row-major `H×W×3`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageRecord {
    pub pixels: Vec<u8>,
    pub height: usize,
    pub width: usize,
    pub label: usize,
    pub source_id: String,
}

impl ImageRecord {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>, label: usize, source_id: impl Into<String>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Data(format!("image must be at least 1×1, got {height}×{width}")));
        }
        if pixels.len() != height * width * 3 {
            return Err(Error::Data(format!(
                "{height}×{width} RGB image needs {} bytes, got {}",
                height * width * 3,
                pixels.len()
            )));
        }
        Ok(ImageRecord {
            pixels,
            height,
            width,
            label,
            source_id: source_id.into(),
        })
    }

    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    fn with_pixels(&self, height: usize, width: usize, pixels: Vec<u8>) -> Self {
        ImageRecord {
            pixels,
            height,
            width,
            label: self.label,
            source_id: self.source_id.clone(),
        }
    }
}

pub const IMGR_MAGIC: &[u8; 4] = b"IMGR";

/// `IMGR` raw format: magic, u32 LE width, u32 LE height, u32 LE channels
/// (always 3), then row-major RGB bytes.
pub fn encode_imgr(img: &ImageRecord) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + img.pixels.len());
    out.extend_from_slice(IMGR_MAGIC);
    out.extend_from_slice(&(img.width as u32).to_le_bytes());
    out.extend_from_slice(&(img.height as u32).to_le_bytes());
    out.extend_from_slice(&3u32.to_le_bytes());
    out.extend_from_slice(&img.pixels);
    out
}

/// Returns `(height, width, pixels)`.
pub fn decode_imgr(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    if bytes.len() < 16 || &bytes[..4] != IMGR_MAGIC {
        return Err(Error::Data("not an IMGR image".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (width, height, channels) = (word(4), word(8), word(12));
    if channels != 3 {
        return Err(Error::Data(format!("IMGR with {channels} channels, expected 3")));
    }
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| Error::Data("IMGR dimensions overflow".into()))?;
    let body = &bytes[16..];
    if body.len() != expected {
        return Err(Error::Data(format!(
            "IMGR {width}×{height} needs {expected} pixel bytes, found {}",
            body.len()
        )));
    }
    Ok((height, width, body.to_vec()))
}

pub fn write_imgr(img: &ImageRecord, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_imgr(img)).map_err(|e| Error::io(path, e))
}

/// Decodes IMGR, PNG or JPEG by content. Errors name the file.
pub fn read_image(path: &Path, label: usize, source_id: String) -> Result<ImageRecord> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let named = |e: Error| Error::Data(format!("{}: {e}", path.display()));
    let (height, width, pixels) = if bytes.starts_with(IMGR_MAGIC) {
        decode_imgr(&bytes).map_err(named)?
    } else {
        let img = image::load_from_memory(&bytes)
            .map_err(|e| Error::Data(format!("{}: cannot decode image: {e}", path.display())))?
            .to_rgb8();
        (img.height() as usize, img.width() as usize, img.into_raw())
    };
    ImageRecord::new(height, width, pixels, label, source_id).map_err(named)
}

/// Bilinear sample at continuous source coordinates; neighbours outside the
/// image contribute black when `fill` is set, otherwise edges are clamped.
fn sample(img: &ImageRecord, sy: f32, sx: f32, fill: bool, out: &mut [u8]) {
    let (h, w) = (img.height as isize, img.width as isize);
    let y0 = sy.floor();
    let x0 = sx.floor();
    let (fy, fx) = (sy - y0, sx - x0);
    let (y0, x0) = (y0 as isize, x0 as isize);
    let fetch = |y: isize, x: isize, c: usize| -> f32 {
        if fill && (y < 0 || y >= h || x < 0 || x >= w) {
            return 0.0;
        }
        let (y, x) = (y.clamp(0, h - 1) as usize, x.clamp(0, w - 1) as usize);
        img.pixels[(y * img.width + x) * 3 + c] as f32
    };
    for (c, o) in out.iter_mut().enumerate() {
        let top = fetch(y0, x0, c) * (1.0 - fx) + fetch(y0, x0 + 1, c) * fx;
        let bottom = fetch(y0 + 1, x0, c) * (1.0 - fx) + fetch(y0 + 1, x0 + 1, c) * fx;
        let v = top * (1.0 - fy) + bottom * fy;
        *o = (v + 0.5).floor().clamp(0.0, 255.0) as u8;
    }
}

/// Bilinear resize with half-pixel centres and clamped edges.
pub fn resize(img: &ImageRecord, height: usize, width: usize) -> ImageRecord {
    assert!(height >= 1 && width >= 1, "resize target must be at least 1×1");
    if height == img.height && width == img.width {
        return img.clone();
    }
    let sy = img.height as f32 / height as f32;
    let sx = img.width as f32 / width as f32;
    let mut pixels = vec![0u8; height * width * 3];
    for y in 0..height {
        let src_y = ((y as f32 + 0.5) * sy - 0.5).clamp(0.0, (img.height - 1) as f32);
        for x in 0..width {
            let src_x = ((x as f32 + 0.5) * sx - 0.5).clamp(0.0, (img.width - 1) as f32);
            let i = (y * width + x) * 3;
            sample(img, src_y, src_x, false, &mut pixels[i..i + 3]);
        }
    }
    img.with_pixels(height, width, pixels)
}

/// Random rotation and flips.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    /// Maximum absolute rotation angle.
    pub rotation_degrees: f32,
    pub hflip_prob: f32,
    pub vflip_prob: f32,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            rotation_degrees: 20.0,
            hflip_prob: 0.5,
            vflip_prob: 0.5,
        }
    }
}

impl AugmentSpec {
    pub fn none() -> Self {
        AugmentSpec {
            rotation_degrees: 0.0,
            hflip_prob: 0.0,
            vflip_prob: 0.0,
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::none()
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |p: f32| (0.0..=1.0).contains(&p);
        if !(self.rotation_degrees >= 0.0 && self.rotation_degrees.is_finite()) {
            return Err(Error::Config(format!("rotation_degrees {} must be ≥ 0", self.rotation_degrees)));
        }
        if !prob(self.hflip_prob) || !prob(self.vflip_prob) {
            return Err(Error::Config("flip probabilities must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

pub fn hflip(img: &ImageRecord) -> ImageRecord {
    let mut out = img.clone();
    for y in 0..img.height {
        for x in 0..img.width {
            let (d, s) = ((y * img.width + x) * 3, (y * img.width + img.width - 1 - x) * 3);
            out.pixels[d..d + 3].copy_from_slice(&img.pixels[s..s + 3]);
        }
    }
    out
}

pub fn vflip(img: &ImageRecord) -> ImageRecord {
    let row = img.width * 3;
    let mut out = img.clone();
    for y in 0..img.height {
        let s = (img.height - 1 - y) * row;
        out.pixels[y * row..(y + 1) * row].copy_from_slice(&img.pixels[s..s + row]);
    }
    out
}

/// Bilinear rotation by `degrees` (counter-clockwise) about the image
/// centre, black outside the source frame.
pub fn rotate(img: &ImageRecord, degrees: f32) -> ImageRecord {
    if degrees == 0.0 {
        return img.clone();
    }
    let (sin, cos) = degrees.to_radians().sin_cos();
    let cy = (img.height as f32 - 1.0) / 2.0;
    let cx = (img.width as f32 - 1.0) / 2.0;
    let mut pixels = vec![0u8; img.pixels.len()];
    for y in 0..img.height {
        for x in 0..img.width {
            let (dy, dx) = (y as f32 - cy, x as f32 - cx);
            // inverse map: rotate the output coordinate back by -θ
            let sx = cos * dx - sin * dy + cx;
            let sy = sin * dx + cos * dy + cy;
            let i = (y * img.width + x) * 3;
            if sy > -1.0 && sy < img.height as f32 && sx > -1.0 && sx < img.width as f32 {
                sample(img, sy, sx, true, &mut pixels[i..i + 3]);
            }
        }
    }
    img.with_pixels(img.height, img.width, pixels)
}

/// Draws an angle in `[-r, r]`, then the horizontal and vertical flip
/// decisions, from `rng` in that order. Both flip draws always happen, so the
/// stream position does not depend on the outcome.
pub fn augment<R: Rng + ?Sized>(img: &ImageRecord, spec: &AugmentSpec, rng: &mut R) -> ImageRecord {
    let angle = if spec.rotation_degrees > 0.0 {
        rng.gen_range(-spec.rotation_degrees..=spec.rotation_degrees)
    } else {
        0.0
    };
    let flip_h = rng.gen::<f32>() < spec.hflip_prob;
    let flip_v = rng.gen::<f32>() < spec.vflip_prob;
    let mut out = rotate(img, angle);
    if flip_h {
        out = hflip(&out);
    }
    if flip_v {
        out = vflip(&out);
    }
    out
}

/// `3×H×W` floats in `[0, 1]`.
pub fn normalize(img: &ImageRecord) -> Tensor<f32> {
    let plane = img.height * img.width;
    let mut data = vec![0f32; 3 * plane];
    for (p, px) in img.pixels.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + p] = px[c] as f32 / 255.0;
        }
    }
    Tensor::new(&[3, img.height, img.width], data).expect("image dims are positive")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn image(h: usize, w: usize, mut f: impl FnMut(usize, usize, usize) -> u8) -> ImageRecord {
        let mut px = Vec::with_capacity(h * w * 3);
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    px.push(f(y, x, c));
                }
            }
        }
        ImageRecord::new(h, w, px, 0, "t").unwrap()
    }

    fn noise(h: usize, w: usize, s: u64) -> ImageRecord {
        let mut rng = seed::rng(s, &[]);
        image(h, w, |_, _, _| rng.gen())
    }

    #[test]
    fn record_validation() {
        assert!(ImageRecord::new(0, 2, vec![], 0, "x").is_err());
        assert!(ImageRecord::new(2, 2, vec![0; 11], 0, "x").is_err());
    }

    #[test]
    fn imgr_roundtrip_and_errors() {
        let img = noise(3, 5, 1);
        let bytes = encode_imgr(&img);
        assert_eq!(&bytes[4..8], &5u32.to_le_bytes());
        let (h, w, px) = decode_imgr(&bytes).unwrap();
        assert_eq!((h, w, &px), (3, 5, &img.pixels));
        assert!(decode_imgr(&bytes[..bytes.len() - 1]).is_err());
        let mut four = bytes.clone();
        four[12] = 4;
        assert!(decode_imgr(&four).is_err());
    }

    #[test]
    fn identity_resize() {
        let img = noise(7, 9, 2);
        assert_eq!(resize(&img, 7, 9), img);
    }

    #[test]
    fn checkerboard_upscale_keeps_corners() {
        let img = image(2, 2, |y, x, _| if (y + x) % 2 == 0 { 255 } else { 0 });
        let up = resize(&img, 4, 4);
        assert_eq!(up.pixel(0, 0), img.pixel(0, 0));
        assert_eq!(up.pixel(0, 3), img.pixel(0, 1));
        assert_eq!(up.pixel(3, 0), img.pixel(1, 0));
        assert_eq!(up.pixel(3, 3), img.pixel(1, 1));
        // interior sample at src (0.25, 0.25): 0.75·0.75·255 + 0.25·0.25·255
        assert_eq!(up.pixel(1, 1)[0], 159);
    }

    #[test]
    fn integer_downscale_is_box_average() {
        let img = noise(16, 12, 3);
        let down = resize(&img, 8, 6);
        for y in 0..8 {
            for x in 0..6 {
                for c in 0..3 {
                    let sum: u32 = [(0, 0), (0, 1), (1, 0), (1, 1)]
                        .iter()
                        .map(|&(dy, dx)| img.pixel(2 * y + dy, 2 * x + dx)[c] as u32)
                        .sum();
                    let mean = sum as f32 / 4.0;
                    assert!((down.pixel(y, x)[c] as f32 - mean).abs() <= 1.0);
                }
            }
        }
    }

    #[test]
    fn noop_augment_is_identity() {
        let img = noise(6, 6, 4);
        let mut rng = seed::rng(0, &[]);
        for _ in 0..10 {
            assert_eq!(augment(&img, &AugmentSpec::none(), &mut rng), img);
        }
    }

    #[test]
    fn double_hflip_restores() {
        let img = noise(5, 4, 5);
        let spec = AugmentSpec {
            hflip_prob: 1.0,
            ..AugmentSpec::none()
        };
        let mut rng = seed::rng(0, &[]);
        let once = augment(&img, &spec, &mut rng);
        assert_ne!(once, img);
        assert_eq!(once.pixel(0, 0), img.pixel(0, 3));
        assert_eq!(augment(&once, &spec, &mut rng), img);
        assert_eq!(vflip(&vflip(&img)), img);
    }

    #[test]
    fn quarter_turn_moves_corners() {
        let img = image(3, 3, |y, x, _| (y * 3 + x) as u8 * 10 + 10);
        let r = rotate(&img, 90.0);
        // counter-clockwise: the top-right pixel lands top-left
        assert_eq!(r.pixel(0, 0), img.pixel(0, 2));
        assert_eq!(r.pixel(1, 1), img.pixel(1, 1));
        assert_eq!(rotate(&img, 0.0), img);
    }

    #[test]
    fn rotation_fills_black() {
        let img = image(8, 8, |_, _, _| 200);
        let r = rotate(&img, 45.0);
        assert_eq!(r.pixel(0, 0), [0, 0, 0]);
        assert_eq!(r.pixel(4, 4), [200, 200, 200]);
    }

    #[test]
    fn augment_is_seeded() {
        let img = noise(8, 8, 6);
        let spec = AugmentSpec::default();
        let a = augment(&img, &spec, &mut seed::rng(1, &[]));
        let b = augment(&img, &spec, &mut seed::rng(1, &[]));
        assert_eq!(a, b);
    }

    #[test]
    fn normalize_values_and_layout() {
        assert!(normalize(&image(2, 2, |_, _, _| 0)).data().iter().all(|&v| v == 0.0));
        assert!(normalize(&image(2, 2, |_, _, _| 255)).data().iter().all(|&v| v == 1.0));
        let t = normalize(&image(1, 2, |_, x, c| if c == 1 && x == 1 { 128 } else { 0 }));
        assert_eq!(t.shape(), &[3, 1, 2]);
        assert_eq!(t.data()[3], 128.0 / 255.0);
        assert!((t.data()[3] - 0.50196).abs() < 1e-5);
    }

    #[test]
    fn augment_spec_bounds() {
        assert!(AugmentSpec::default().validate().is_ok());
        let bad = AugmentSpec {
            hflip_prob: 1.5,
            ..AugmentSpec::none()
        };
        assert!(bad.validate().is_err());
    }
}

//! Raster side of mask placement: inverse-mapped bilinear warping of the
//! RGBA mask layer and "over" compositing onto the RGB face.
//!
//! Pixel `(x, y)` is sampled at continuous coordinate `(x, y)`; a warped
//! pixel is defined when its inverse-mapped location lies inside
//! `[0, w-1] x [0, h-1]` of the source, and is fully transparent otherwise.
//! All rounding is half-up to the nearest integer.

use std::path::Path;

use image::{ImageBuffer, Luma, Rgb, Rgba};
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{Homography, Point2D};

/// Slack allowed when deciding whether a sample lies inside the source.
const DOMAIN_EPS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum WarpError {
    #[error("homography is singular")]
    SingularMatrix,
    #[error("output size must be positive, got {0}x{1}")]
    ZeroSize(u32, u32),
    #[error("image sizes differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("expected {expected:?} image, got {actual:?}")]
    WrongChannels {
        expected: Channels,
        actual: Channels,
    },
    #[error("pixel buffer holds {actual} bytes, expected {expected}")]
    BadBuffer { expected: usize, actual: usize },
    #[error("{path}: {message}")]
    Image { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channels {
    Rgb,
    Rgba,
}

impl Channels {
    pub fn count(self) -> usize {
        match self {
            Channels::Rgb => 3,
            Channels::Rgba => 4,
        }
    }
}

/// 8-bit row-major raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    channels: Channels,
    data: Vec<u8>,
}

impl RasterImage {
    /// All-zero image (transparent black for RGBA).
    pub fn new(width: u32, height: u32, channels: Channels) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0; width as usize * height as usize * channels.count()],
        }
    }

    pub fn from_raw(
        width: u32,
        height: u32,
        channels: Channels,
        data: Vec<u8>,
    ) -> Result<Self, WarpError> {
        let expected = width as usize * height as usize * channels.count();
        if data.len() != expected {
            return Err(WarpError::BadBuffer {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> Channels {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * self.channels.count()
    }

    pub fn pixel(&self, x: u32, y: u32) -> &[u8] {
        let o = self.offset(x, y);
        &self.data[o..o + self.channels.count()]
    }

    pub fn put(&mut self, x: u32, y: u32, px: &[u8]) {
        let o = self.offset(x, y);
        let n = self.channels.count();
        self.data[o..o + n].copy_from_slice(&px[..n]);
    }

    pub fn to_rgb(&self) -> RasterImage {
        match self.channels {
            Channels::Rgb => self.clone(),
            Channels::Rgba => RasterImage {
                width: self.width,
                height: self.height,
                channels: Channels::Rgb,
                data: self
                    .data
                    .chunks_exact(4)
                    .flat_map(|p| [p[0], p[1], p[2]])
                    .collect(),
            },
        }
    }

    pub fn to_rgba(&self) -> RasterImage {
        match self.channels {
            Channels::Rgba => self.clone(),
            Channels::Rgb => RasterImage {
                width: self.width,
                height: self.height,
                channels: Channels::Rgba,
                data: self
                    .data
                    .chunks_exact(3)
                    .flat_map(|p| [p[0], p[1], p[2], 255])
                    .collect(),
            },
        }
    }

    /// Loads any PNG, keeping an alpha channel only if the file has one.
    pub fn load_png(path: &Path) -> Result<Self, WarpError> {
        let img = image::open(path).map_err(|e| image_err(path, e))?;
        let (w, h) = (img.width(), img.height());
        if img.color().has_alpha() {
            Self::from_raw(w, h, Channels::Rgba, img.into_rgba8().into_raw())
        } else {
            Self::from_raw(w, h, Channels::Rgb, img.into_rgb8().into_raw())
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<(), WarpError> {
        let res = match self.channels {
            Channels::Rgb => {
                ImageBuffer::<Rgb<u8>, _>::from_raw(self.width, self.height, self.data.as_slice())
                    .expect("buffer length checked at construction")
                    .save_with_format(path, image::ImageFormat::Png)
            }
            Channels::Rgba => {
                ImageBuffer::<Rgba<u8>, _>::from_raw(self.width, self.height, self.data.as_slice())
                    .expect("buffer length checked at construction")
                    .save_with_format(path, image::ImageFormat::Png)
            }
        };
        res.map_err(|e| image_err(path, e))
    }
}

fn image_err(path: &Path, e: image::ImageError) -> WarpError {
    WarpError::Image {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

#[inline]
fn round_half_up(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Bilinear sample of all channels at `(sx, sy)`; `None` outside the source.
fn sample_bilinear(src: &RasterImage, sx: f64, sy: f64, out: &mut [u8]) -> bool {
    let (w, h) = (src.width as f64, src.height as f64);
    if !(sx >= -DOMAIN_EPS
        && sy >= -DOMAIN_EPS
        && sx <= w - 1.0 + DOMAIN_EPS
        && sy <= h - 1.0 + DOMAIN_EPS)
    {
        return false;
    }
    let sx = sx.clamp(0.0, w - 1.0);
    let sy = sy.clamp(0.0, h - 1.0);
    let x0 = (sx.floor() as u32).min(src.width.saturating_sub(2));
    let y0 = (sy.floor() as u32).min(src.height.saturating_sub(2));
    let x1 = (x0 + 1).min(src.width - 1);
    let y1 = (y0 + 1).min(src.height - 1);
    let fx = sx - x0 as f64;
    let fy = sy - y0 as f64;
    let w00 = (1.0 - fx) * (1.0 - fy);
    let w10 = fx * (1.0 - fy);
    let w01 = (1.0 - fx) * fy;
    let w11 = fx * fy;
    let (p00, p10, p01, p11) = (
        src.pixel(x0, y0),
        src.pixel(x1, y0),
        src.pixel(x0, y1),
        src.pixel(x1, y1),
    );
    for c in 0..out.len() {
        let v =
            w00 * p00[c] as f64 + w10 * p10[c] as f64 + w01 * p01[c] as f64 + w11 * p11[c] as f64;
        out[c] = round_half_up(v);
    }
    true
}

/// Warps the RGBA `mask` through `h` (mask coordinates to output
/// coordinates) onto a transparent canvas of the requested size.
///
/// Rows are processed in parallel; each pixel depends only on its own
/// coordinates, so the result does not depend on the thread count.
pub fn warp_mask(
    mask: &RasterImage,
    h: &Homography,
    out_width: u32,
    out_height: u32,
) -> Result<RasterImage, WarpError> {
    if out_width == 0 || out_height == 0 {
        return Err(WarpError::ZeroSize(out_width, out_height));
    }
    if mask.width == 0 || mask.height == 0 {
        return Err(WarpError::ZeroSize(mask.width, mask.height));
    }
    if mask.channels != Channels::Rgba {
        return Err(WarpError::WrongChannels {
            expected: Channels::Rgba,
            actual: mask.channels,
        });
    }
    let inv = h.inverse().map_err(|_| WarpError::SingularMatrix)?;
    let mut out = RasterImage::new(out_width, out_height, Channels::Rgba);
    let row_len = out_width as usize * 4;
    out.data
        .par_chunks_mut(row_len)
        .enumerate()
        .for_each(|(y, row)| {
            for x in 0..out_width as usize {
                let px = &mut row[x * 4..x * 4 + 4];
                match inv.apply(Point2D::new(x as f64, y as f64)) {
                    Ok(s) => {
                        if !sample_bilinear(mask, s.x, s.y, px) {
                            px.fill(0);
                        }
                    }
                    Err(_) => px.fill(0),
                }
            }
        });
    Ok(out)
}

/// Softens the alpha edge with a Gaussian blur of the given sigma (pixels).
pub fn feather_alpha(layer: &mut RasterImage, radius: f32) -> Result<(), WarpError> {
    if layer.channels != Channels::Rgba {
        return Err(WarpError::WrongChannels {
            expected: Channels::Rgba,
            actual: layer.channels,
        });
    }
    if radius <= 0.0 {
        return Ok(());
    }
    let alpha: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(
        layer.width,
        layer.height,
        layer.data.chunks_exact(4).map(|p| p[3]).collect(),
    )
    .expect("alpha plane matches layer size");
    let blurred = image::imageops::blur(&alpha, radius);
    for (px, a) in layer.data.chunks_exact_mut(4).zip(blurred.into_raw()) {
        px[3] = a;
    }
    Ok(())
}

/// Straight-alpha "over": `out = layer * a + face * (1 - a)`, `a = alpha / 255`.
pub fn composite(face: &RasterImage, layer: &RasterImage) -> Result<RasterImage, WarpError> {
    if face.width != layer.width || face.height != layer.height {
        return Err(WarpError::DimensionMismatch(
            face.width,
            face.height,
            layer.width,
            layer.height,
        ));
    }
    if face.channels != Channels::Rgb {
        return Err(WarpError::WrongChannels {
            expected: Channels::Rgb,
            actual: face.channels,
        });
    }
    if layer.channels != Channels::Rgba {
        return Err(WarpError::WrongChannels {
            expected: Channels::Rgba,
            actual: layer.channels,
        });
    }
    let data = face
        .data
        .chunks_exact(3)
        .zip(layer.data.chunks_exact(4))
        .flat_map(|(f, l)| {
            let a = l[3] as u32;
            // exact integer form of round_half_up((l*a + f*(255-a)) / 255)
            let blend = |fc: u8, lc: u8| -> u8 {
                let num = lc as u32 * a + fc as u32 * (255 - a);
                ((2 * num + 255) / 510) as u8
            };
            [blend(f[0], l[0]), blend(f[1], l[1]), blend(f[2], l[2])]
        })
        .collect();
    Ok(RasterImage {
        width: face.width,
        height: face.height,
        channels: Channels::Rgb,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn patterned(w: u32, h: u32) -> RasterImage {
        let mut img = RasterImage::new(w, h, Channels::Rgba);
        for y in 0..h {
            for x in 0..w {
                let v = [
                    (x * 7 + y * 3) as u8,
                    (x * 13) as u8 ^ (y as u8),
                    (y * 11) as u8,
                    (128 + (x + y) % 128) as u8,
                ];
                img.put(x, y, &v);
            }
        }
        img
    }

    /// Brute-force reference resampler: per pixel, map back, take the four
    /// neighbours with explicit edge handling, weight and round.
    fn oracle_warp(src: &RasterImage, h: &Homography, ow: u32, oh: u32) -> RasterImage {
        let m = *h.inverse().unwrap().matrix();
        let mut out = RasterImage::new(ow, oh, Channels::Rgba);
        let (sw, sh) = (src.width() as i64, src.height() as i64);
        for y in 0..oh {
            for x in 0..ow {
                let (xf, yf) = (x as f64, y as f64);
                let w = m[(2, 0)] * xf + m[(2, 1)] * yf + m[(2, 2)];
                let sx = (m[(0, 0)] * xf + m[(0, 1)] * yf + m[(0, 2)]) / w;
                let sy = (m[(1, 0)] * xf + m[(1, 1)] * yf + m[(1, 2)]) / w;
                let eps = 1e-6;
                if sx < -eps
                    || sy < -eps
                    || sx > (sw - 1) as f64 + eps
                    || sy > (sh - 1) as f64 + eps
                {
                    continue;
                }
                let sx = sx.max(0.0).min((sw - 1) as f64);
                let sy = sy.max(0.0).min((sh - 1) as f64);
                let mut x0 = sx.floor() as i64;
                let mut y0 = sy.floor() as i64;
                if x0 == sw - 1 && sw > 1 {
                    x0 -= 1;
                }
                if y0 == sh - 1 && sh > 1 {
                    y0 -= 1;
                }
                let x1 = (x0 + 1).min(sw - 1);
                let y1 = (y0 + 1).min(sh - 1);
                let fx = sx - x0 as f64;
                let fy = sy - y0 as f64;
                let mut px = [0u8; 4];
                for (c, slot) in px.iter_mut().enumerate() {
                    let g = |xx: i64, yy: i64| src.pixel(xx as u32, yy as u32)[c] as f64;
                    let v = (1.0 - fx) * (1.0 - fy) * g(x0, y0)
                        + fx * (1.0 - fy) * g(x1, y0)
                        + (1.0 - fx) * fy * g(x0, y1)
                        + fx * fy * g(x1, y1);
                    *slot = (v + 0.5).floor() as u8;
                }
                out.put(x, y, &px);
            }
        }
        out
    }

    #[test]
    fn identity_warp_is_byte_exact() {
        let src = patterned(37, 23);
        let out = warp_mask(&src, &Homography::identity(), 37, 23).unwrap();
        assert_eq!(out, src);
    }

    #[test]
    fn integer_translation() {
        let src = patterned(30, 30);
        let h =
            Homography::from_rows([[1.0, 0.0, 10.0], [0.0, 1.0, 20.0], [0.0, 0.0, 1.0]]).unwrap();
        let out = warp_mask(&src, &h, 50, 60).unwrap();
        for y in 0..60 {
            for x in 0..50 {
                let (sx, sy) = (x as i64 - 10, y as i64 - 20);
                if (0..30).contains(&sx) && (0..30).contains(&sy) {
                    assert_eq!(out.pixel(x, y), src.pixel(sx as u32, sy as u32));
                } else {
                    assert_eq!(out.pixel(x, y)[3], 0);
                }
            }
        }
    }

    #[test]
    fn checkerboard_upscale_matches_oracle_midpoints() {
        let mut src = RasterImage::new(2, 2, Channels::Rgba);
        src.put(0, 0, &[0, 0, 0, 255]);
        src.put(1, 0, &[200, 100, 50, 255]);
        src.put(0, 1, &[200, 100, 50, 255]);
        src.put(1, 1, &[0, 0, 0, 255]);
        let h = Homography::from_rows([[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        let out = warp_mask(&src, &h, 3, 3).unwrap();
        assert_eq!(out, oracle_warp(&src, &h, 3, 3));
        // edge midpoint: average of its two neighbours
        assert_eq!(out.pixel(1, 0), &[100, 50, 25, 255]);
        // centre: average of all four
        assert_eq!(out.pixel(1, 1), &[100, 50, 25, 255]);
        assert_eq!(out.pixel(2, 2), &[0, 0, 0, 255]);
    }

    #[test]
    fn perspective_warp_matches_oracle() {
        let src = patterned(64, 64);
        let h = Homography::from_rows([[1.1, 0.2, 3.5], [-0.1, 0.9, 7.25], [0.0008, 0.0005, 1.0]])
            .unwrap();
        let out = warp_mask(&src, &h, 64, 64).unwrap();
        assert_eq!(out, oracle_warp(&src, &h, 64, 64));
    }

    #[test]
    fn warp_errors() {
        let src = patterned(4, 4);
        assert!(matches!(
            warp_mask(&src, &Homography::identity(), 0, 4),
            Err(WarpError::ZeroSize(0, 4))
        ));
        assert!(matches!(
            warp_mask(&src.to_rgb(), &Homography::identity(), 4, 4),
            Err(WarpError::WrongChannels { .. })
        ));
    }

    #[test]
    fn composite_examples() {
        let mut face = RasterImage::new(2, 1, Channels::Rgb);
        face.put(0, 0, &[100, 100, 100]);
        face.put(1, 0, &[10, 20, 30]);
        let mut layer = RasterImage::new(2, 1, Channels::Rgba);
        layer.put(0, 0, &[200, 200, 200, 128]);
        layer.put(1, 0, &[250, 240, 230, 255]);
        let out = composite(&face, &layer).unwrap();
        assert_eq!(out.pixel(0, 0), &[150, 150, 150]);
        assert_eq!(out.pixel(1, 0), &[250, 240, 230]);

        let clear = RasterImage::new(2, 1, Channels::Rgba);
        assert_eq!(composite(&face, &clear).unwrap(), face);

        let small = RasterImage::new(1, 1, Channels::Rgba);
        assert!(matches!(
            composite(&face, &small),
            Err(WarpError::DimensionMismatch(2, 1, 1, 1))
        ));
    }

    #[test]
    fn composite_rounds_half_up_exhaustively() {
        for a in 0..=255u32 {
            for (f, l) in [(0u8, 255u8), (100, 200), (255, 0), (17, 18)] {
                let exact = (l as f64 * a as f64 + f as f64 * (255 - a) as f64) / 255.0;
                let face = RasterImage::from_raw(1, 1, Channels::Rgb, vec![f; 3]).unwrap();
                let layer =
                    RasterImage::from_raw(1, 1, Channels::Rgba, vec![l, l, l, a as u8]).unwrap();
                let got = composite(&face, &layer).unwrap().pixel(0, 0)[0];
                assert_eq!(got, (exact + 0.5).floor() as u8, "a={a} f={f} l={l}");
            }
        }
    }

    #[test]
    fn feather_softens_only_edges() {
        let mut layer = RasterImage::new(40, 40, Channels::Rgba);
        for y in 10..30 {
            for x in 10..30 {
                layer.put(x, y, &[1, 2, 3, 255]);
            }
        }
        feather_alpha(&mut layer, 1.5).unwrap();
        assert_eq!(layer.pixel(20, 20)[3], 255);
        let edge = layer.pixel(10, 20)[3];
        assert!(edge > 0 && edge < 255);
        assert_eq!(layer.pixel(0, 0)[3], 0);
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let src = patterned(9, 5);
        let p = dir.path().join("a.png");
        src.save_png(&p).unwrap();
        assert_eq!(RasterImage::load_png(&p).unwrap(), src);
        let rgb = src.to_rgb();
        rgb.save_png(&p).unwrap();
        assert_eq!(RasterImage::load_png(&p).unwrap(), rgb);
    }
}

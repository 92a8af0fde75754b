//! Host-side RGB images in the `[-1, 1]` pixel domain.
//!
//! Pixels are stored row-major, channel-interleaved (`H × W × 3`). Files on
//! disk are 8-bit PNG; the mapping is `v = p / 127.5 - 1`.

use std::path::Path;

use candle_core::{DType, Device, Tensor};

use crate::error::{shape_err, Error, Result};

pub const CHANNELS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return shape_err(format!(
                "image dimensions must be positive, got {height}x{width}"
            ));
        }
        if data.len() != height * width * CHANNELS {
            return shape_err(format!(
                "image buffer has {} values, expected {height}x{width}x3",
                data.len()
            ));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width * CHANNELS],
        }
    }

    /// Solid image from an RGB colour given in `[0, 1]`.
    pub fn solid_rgb(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for _ in 0..height * width {
            data.extend(rgb.iter().map(|c| c * 2.0 - 1.0));
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * CHANNELS + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * CHANNELS + c] = v;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn ensure_size(&self, size: usize) -> Result<()> {
        if self.height != size || self.width != size {
            return shape_err(format!(
                "expected a {size}x{size}x3 image, got {}x{}x3",
                self.height, self.width
            ));
        }
        Ok(())
    }

    pub fn in_range(&self) -> bool {
        self.data.iter().all(|v| (-1.0..=1.0).contains(v))
    }

    /// Mean of the three channels remapped to `[0, 1]`, one value per pixel.
    pub fn gray_unit(&self) -> Vec<f64> {
        self.data
            .chunks_exact(CHANNELS)
            .map(|px| (px.iter().map(|&v| v as f64).sum::<f64>() / 3.0 + 1.0) / 2.0)
            .collect()
    }

    /// Mean RGB in `[0, 1]` over pixels whose centre lies within `radius` of `(cy, cx)`.
    pub fn mean_rgb_in_disc(&self, cy: f32, cx: f32, radius: f32) -> Option<[f32; 3]> {
        let mut acc = [0f64; 3];
        let mut n = 0usize;
        for y in 0..self.height {
            for x in 0..self.width {
                let dy = y as f32 - cy;
                let dx = x as f32 - cx;
                if dy * dy + dx * dx <= radius * radius {
                    for (c, a) in acc.iter_mut().enumerate() {
                        *a += (self.get(y, x, c) as f64 + 1.0) / 2.0;
                    }
                    n += 1;
                }
            }
        }
        (n > 0).then(|| acc.map(|a| (a / n as f64) as f32))
    }

    /// `1 × 3 × H × W` tensor.
    pub fn to_tensor(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        let t = Tensor::from_slice(&self.data, (self.height, self.width, CHANNELS), device)?
            .permute((2, 0, 1))?
            .unsqueeze(0)?
            .to_dtype(dtype)?
            .contiguous()?;
        Ok(t)
    }

    /// Stack images into an `N × 3 × H × W` tensor.
    pub fn batch_to_tensor(images: &[&Image], dtype: DType, device: &Device) -> Result<Tensor> {
        let Some(first) = images.first() else {
            return shape_err("cannot build a tensor from an empty image batch");
        };
        let mut data = Vec::with_capacity(images.len() * first.data.len());
        for im in images {
            if !im.same_shape(first) {
                return shape_err("images in a batch must share one shape");
            }
            data.extend_from_slice(&im.data);
        }
        let t = Tensor::from_vec(
            data,
            (images.len(), first.height, first.width, CHANNELS),
            device,
        )?
        .permute((0, 3, 1, 2))?
        .to_dtype(dtype)?
        .contiguous()?;
        Ok(t)
    }

    /// Inverse of [`Image::to_tensor`] for one element of a batch.
    pub fn from_tensor(t: &Tensor, index: usize) -> Result<Self> {
        let dims = t.dims();
        if dims.len() != 4 || dims[1] != CHANNELS {
            return shape_err(format!("expected an N x 3 x H x W tensor, got {dims:?}"));
        }
        let (h, w) = (dims[2], dims[3]);
        let data = t
            .get(index)?
            .permute((1, 2, 0))?
            .to_dtype(DType::F32)?
            .flatten_all()?
            .to_vec1::<f32>()?;
        Self::new(h, w, data)
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..CHANNELS {
                    out.set(y, x, c, self.get(y, self.width - 1 - x, c));
                }
            }
        }
        out
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let rgb = image::open(path)?.to_rgb8();
        let (w, h) = rgb.dimensions();
        let data = rgb
            .into_raw()
            .into_iter()
            .map(|p| p as f32 / 127.5 - 1.0)
            .collect();
        Self::new(h as usize, w as usize, data)
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let raw: Vec<u8> = self
            .data
            .iter()
            .map(|&v| ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8)
            .collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions")
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8().save(path)?;
        Ok(())
    }

    /// Lay images out left to right, top-aligned, on a `-1` background.
    pub fn hstack(images: &[&Image]) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::InvalidArgument("nothing to stack".into()));
        }
        let height = images.iter().map(|i| i.height).max().unwrap_or(0);
        let width: usize = images.iter().map(|i| i.width).sum();
        let mut out = Image::filled(height, width, -1.0);
        let mut x0 = 0;
        for im in images {
            for y in 0..im.height {
                for x in 0..im.width {
                    for c in 0..CHANNELS {
                        out.set(y, x0 + x, c, im.get(y, x, c));
                    }
                }
            }
            x0 += im.width;
        }
        Ok(out)
    }

    /// Stack rows produced by [`Image::hstack`] top to bottom.
    pub fn vstack(images: &[&Image]) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::InvalidArgument("nothing to stack".into()));
        }
        let width = images.iter().map(|i| i.width).max().unwrap_or(0);
        let height: usize = images.iter().map(|i| i.height).sum();
        let mut out = Image::filled(height, width, -1.0);
        let mut y0 = 0;
        for im in images {
            for y in 0..im.height {
                for x in 0..im.width {
                    for c in 0..CHANNELS {
                        out.set(y0 + y, x, c, im.get(y, x, c));
                    }
                }
            }
            y0 += im.height;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_round_trip_preserves_layout() {
        let data: Vec<f32> = (0..2 * 3 * 3).map(|i| i as f32 / 20.0 - 0.4).collect();
        let im = Image::new(2, 3, data).unwrap();
        let t = im.to_tensor(DType::F32, &Device::Cpu).unwrap();
        assert_eq!(t.dims(), &[1, 3, 2, 3]);
        // channel 1 of pixel (1, 2)
        let v = t
            .get(0)
            .unwrap()
            .get(1)
            .unwrap()
            .get(1)
            .unwrap()
            .get(2)
            .unwrap();
        assert_eq!(v.to_scalar::<f32>().unwrap(), im.get(1, 2, 1));
        assert_eq!(Image::from_tensor(&t, 0).unwrap(), im);
    }

    #[test]
    fn png_quantisation_is_within_half_step() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<f32> = (0..4 * 4 * 3)
            .map(|i| (i as f32 / 47.0) * 2.0 - 1.0)
            .collect();
        let im = Image::new(4, 4, data).unwrap();
        let p = dir.path().join("x.png");
        im.save_png(&p).unwrap();
        let back = Image::load_png(&p).unwrap();
        for (a, b) in im.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 1.0 / 127.5 + 1e-6);
        }
    }

    #[test]
    fn rejects_bad_buffer() {
        assert!(matches!(
            Image::new(2, 2, vec![0.0; 5]),
            Err(Error::Shape(_))
        ));
    }
}

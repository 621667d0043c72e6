//! Sample buffers, bilinear interpolation, validity masks, and PNG I/O.
//!
//! Images are held as double-precision samples in `[0, 1]`, row-major with
//! interleaved channels; 8-bit quantization happens only at file boundaries
//! so that metric arithmetic stays exact. A [`ValidityMask`] travels with
//! every warped image and marks the pixels whose backward-mapped source
//! coordinate was usable.

use std::path::Path;

use thiserror::Error;

/// Errors from buffer construction, sampling, and image file I/O.
#[derive(Debug, Error)]
pub enum RasterError {
    #[error("sample coordinate ({x}, {y}) outside [0, {max_x}] x [0, {max_y}]")]
    OutOfBounds { x: f64, y: f64, max_x: f64, max_y: f64 },
    #[error("channel count must be 1 or 3, got {0}")]
    BadChannelCount(usize),
    #[error("data length {got} does not match {width}x{height}x{channels}")]
    BadDataLength { got: usize, width: u32, height: u32, channels: usize },
    #[error("non-finite sample value")]
    NonFinite,
    #[error("dimensions {0}x{1} do not match {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("failed to read or write image: {0}")]
    Image(#[from] image::ImageError),
}

/// Row-major scalar image with 1 or 3 interleaved channels, samples in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: u32,
    height: u32,
    channels: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    /// All-zero buffer.
    pub fn new(width: u32, height: u32, channels: usize) -> Result<Self, RasterError> {
        if channels != 1 && channels != 3 {
            return Err(RasterError::BadChannelCount(channels));
        }
        let len = width as usize * height as usize * channels;
        Ok(Self { width, height, channels, data: vec![0.0; len] })
    }

    /// Buffer filled by `f(x, y, channel)`.
    pub fn from_fn(
        width: u32,
        height: u32,
        channels: usize,
        f: impl Fn(u32, u32, usize) -> f64,
    ) -> Result<Self, RasterError> {
        let mut img = Self::new(width, height, channels)?;
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    let v = f(x, y, c);
                    if !v.is_finite() {
                        return Err(RasterError::NonFinite);
                    }
                    let i = img.index(x, y);
                    img.data[i + c] = v;
                }
            }
        }
        Ok(img)
    }

    /// Wraps existing row-major samples.
    pub fn from_data(
        width: u32,
        height: u32,
        channels: usize,
        data: Vec<f64>,
    ) -> Result<Self, RasterError> {
        if channels != 1 && channels != 3 {
            return Err(RasterError::BadChannelCount(channels));
        }
        if data.len() != width as usize * height as usize * channels {
            return Err(RasterError::BadDataLength {
                got: data.len(),
                width,
                height,
                channels,
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(RasterError::NonFinite);
        }
        Ok(Self { width, height, channels, data })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Samples per row, `width * channels`.
    pub fn row_len(&self) -> usize {
        self.width as usize * self.channels
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn index(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * self.channels
    }

    /// Channel slice of the pixel at `(x, y)`.
    pub fn pixel(&self, x: u32, y: u32) -> &[f64] {
        let i = self.index(x, y);
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, x: u32, y: u32) -> &mut [f64] {
        let i = self.index(x, y);
        let c = self.channels;
        &mut self.data[i..i + c]
    }

    /// Four-neighbor bilinear interpolation at a sub-pixel coordinate.
    ///
    /// In-bounds domain is `[0, width−1] × [0, height−1]`; on the boundary
    /// the vanishing-weight neighbor is clamped so lattice points return the
    /// stored value exactly. Entries of the returned array beyond
    /// `channels()` are zero.
    pub fn bilinear_sample(&self, x: f64, y: f64) -> Result<[f64; 3], RasterError> {
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        if !(x >= 0.0 && x <= max_x && y >= 0.0 && y <= max_y) {
            return Err(RasterError::OutOfBounds { x, y, max_x, max_y });
        }
        let x0 = (x.floor() as u32).min(self.width.saturating_sub(2));
        let y0 = (y.floor() as u32).min(self.height.saturating_sub(2));
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let (p00, p10) = (self.pixel(x0, y0), self.pixel(x1, y0));
        let (p01, p11) = (self.pixel(x0, y1), self.pixel(x1, y1));
        let mut out = [0.0; 3];
        for c in 0..self.channels {
            let top = p00[c] + fx * (p10[c] - p00[c]);
            let bottom = p01[c] + fx * (p11[c] - p01[c]);
            out[c] = top + fy * (bottom - top);
        }
        Ok(out)
    }

    /// Single-channel Rec. 601 luma view; a 1-channel buffer is returned
    /// unchanged.
    pub fn to_luma(&self) -> ImageBuffer {
        if self.channels == 1 {
            return self.clone();
        }
        let mut out = ImageBuffer::new(self.width, self.height, 1).unwrap();
        for (dst, src) in out.data.iter_mut().zip(self.data.chunks_exact(3)) {
            *dst = 0.299 * src[0] + 0.587 * src[1] + 0.114 * src[2];
        }
        out
    }

    /// Loads an 8-bit PNG; grayscale files become 1-channel buffers, color
    /// files 3-channel. Values are scaled by 1/255.
    pub fn load_png(path: impl AsRef<Path>) -> Result<Self, RasterError> {
        let img = image::open(path)?;
        match img {
            image::DynamicImage::ImageLuma8(g) => {
                let (w, h) = (g.width(), g.height());
                let data = g.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
                Self::from_data(w, h, 1, data)
            }
            other => {
                let rgb = other.into_rgb8();
                let (w, h) = (rgb.width(), rgb.height());
                let data = rgb.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
                Self::from_data(w, h, 3, data)
            }
        }
    }

    /// Writes an 8-bit PNG, quantizing with round-to-nearest of `255·v`.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), RasterError> {
        let quantize = |v: f64| (v * 255.0).round().clamp(0.0, 255.0) as u8;
        let bytes: Vec<u8> = self.data.iter().map(|&v| quantize(v)).collect();
        match self.channels {
            1 => image::GrayImage::from_raw(self.width, self.height, bytes)
                .expect("length checked by construction")
                .save_with_format(path, image::ImageFormat::Png)?,
            _ => image::RgbImage::from_raw(self.width, self.height, bytes)
                .expect("length checked by construction")
                .save_with_format(path, image::ImageFormat::Png)?,
        }
        Ok(())
    }
}

/// Per-pixel usability flags for a warped image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidityMask {
    width: u32,
    height: u32,
    data: Vec<bool>,
}

impl ValidityMask {
    pub fn new(width: u32, height: u32, value: bool) -> Self {
        Self { width, height, data: vec![value; width as usize * height as usize] }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [bool] {
        &mut self.data
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        self.data[y as usize * self.width as usize + x as usize] = value;
    }

    /// Count of valid pixels.
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Pixelwise conjunction, for composing masks from chained warps.
    pub fn intersect(&self, other: &ValidityMask) -> Result<ValidityMask, RasterError> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(RasterError::DimensionMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a && b).collect();
        Ok(ValidityMask { width: self.width, height: self.height, data })
    }

    /// Writes the mask as an 8-bit PNG with values {0, 255}.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), RasterError> {
        let bytes: Vec<u8> = self.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
        image::GrayImage::from_raw(self.width, self.height, bytes)
            .expect("length checked by construction")
            .save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    /// Reads a mask written by [`ValidityMask::save_png`]; nonzero is valid.
    pub fn load_png(path: impl AsRef<Path>) -> Result<Self, RasterError> {
        let g = image::open(path)?.into_luma8();
        let (width, height) = (g.width(), g.height());
        let data = g.into_raw().into_iter().map(|v| v != 0).collect();
        Ok(Self { width, height, data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn block_2x2() -> ImageBuffer {
        // Values scaled into [0,1]; the raw pattern is {0, 4, 8, 12}/16.
        ImageBuffer::from_data(2, 2, 1, vec![0.0, 4.0 / 16.0, 8.0 / 16.0, 12.0 / 16.0]).unwrap()
    }

    #[test]
    fn bilinear_is_exact_at_integer_coordinates() {
        let img = ImageBuffer::from_fn(5, 4, 3, |x, y, c| {
            (x as f64 * 0.13 + y as f64 * 0.07 + c as f64 * 0.02).fract()
        })
        .unwrap();
        for y in 0..4 {
            for x in 0..5 {
                let s = img.bilinear_sample(x as f64, y as f64).unwrap();
                assert_eq!(&s[..3], img.pixel(x, y));
            }
        }
    }

    #[test]
    fn bilinear_center_of_block_averages() {
        let s = block_2x2().bilinear_sample(0.5, 0.5).unwrap();
        assert_relative_eq!(s[0] * 16.0, 6.0, max_relative = 1e-15);
    }

    #[test]
    fn bilinear_quarter_point_weights() {
        let s = block_2x2().bilinear_sample(0.25, 0.0).unwrap();
        assert_relative_eq!(s[0] * 16.0, 1.0, max_relative = 1e-15);
    }

    #[test]
    fn bilinear_is_linear_along_each_axis() {
        let img = block_2x2();
        let at = |x: f64| img.bilinear_sample(x, 0.0).unwrap()[0];
        for t in [0.1, 0.3, 0.6, 0.9] {
            assert_relative_eq!(at(t), (1.0 - t) * at(0.0) + t * at(1.0), max_relative = 1e-14);
        }
    }

    #[test]
    fn bilinear_rejects_out_of_bounds() {
        let img = block_2x2();
        assert!(img.bilinear_sample(-0.001, 0.0).is_err());
        assert!(img.bilinear_sample(0.0, 1.001).is_err());
        assert!(img.bilinear_sample(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn bilinear_accepts_the_far_corner_exactly() {
        let img = block_2x2();
        let s = img.bilinear_sample(1.0, 1.0).unwrap();
        assert_eq!(s[0], 12.0 / 16.0);
    }

    #[test]
    fn buffer_rejects_bad_shapes() {
        assert!(matches!(ImageBuffer::new(4, 4, 2), Err(RasterError::BadChannelCount(2))));
        assert!(matches!(
            ImageBuffer::from_data(2, 2, 1, vec![0.0; 5]),
            Err(RasterError::BadDataLength { .. })
        ));
        assert!(matches!(
            ImageBuffer::from_data(1, 1, 1, vec![f64::INFINITY]),
            Err(RasterError::NonFinite)
        ));
    }

    #[test]
    fn luma_uses_rec601_weights() {
        let img = ImageBuffer::from_data(1, 1, 3, vec![1.0, 0.5, 0.25]).unwrap();
        let l = img.to_luma();
        assert_relative_eq!(l.pixel(0, 0)[0], 0.299 + 0.587 * 0.5 + 0.114 * 0.25, max_relative = 1e-15);
    }

    #[test]
    fn png_round_trip_preserves_quantized_levels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let img = ImageBuffer::from_fn(7, 5, 3, |x, y, c| {
            ((x + 3 * y) as usize * 11 + c * 40) as f64 % 256.0 / 255.0
        })
        .unwrap();
        img.save_png(&path).unwrap();
        let back = ImageBuffer::load_png(&path).unwrap();
        assert_eq!(back.width(), 7);
        assert_eq!(back.channels(), 3);
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-12, "quantized level must survive the round trip");
        }
    }

    #[test]
    fn grayscale_png_loads_as_single_channel() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gray.png");
        let img = ImageBuffer::from_fn(3, 3, 1, |x, y, _| ((x + y) % 2) as f64).unwrap();
        img.save_png(&path).unwrap();
        let back = ImageBuffer::load_png(&path).unwrap();
        assert_eq!(back.channels(), 1);
        assert_eq!(back.data(), img.data());
    }

    #[test]
    fn mask_round_trip_and_intersection() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mask.png");
        let mut a = ValidityMask::new(4, 3, true);
        a.set(2, 1, false);
        a.save_png(&path).unwrap();
        let back = ValidityMask::load_png(&path).unwrap();
        assert_eq!(back, a);

        let mut b = ValidityMask::new(4, 3, true);
        b.set(0, 0, false);
        let both = a.intersect(&b).unwrap();
        assert_eq!(both.count(), 4 * 3 - 2);
        assert!(!both.get(2, 1));
        assert!(!both.get(0, 0));
    }
}

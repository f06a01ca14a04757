use super::GeometryError;
use super::{DEPTH_MAX_MM, DEPTH_MIN_MM};

/// Dense row-major scalar field. The workhorse behind images, depth, disparity and reward maps.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn new(width: usize, height: usize, fill: f64) -> Self {
        Self {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self, GeometryError> {
        if data.len() != width * height {
            return Err(GeometryError::DimensionMismatch {
                expected: (width, height),
                found: (data.len(), 1),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn ensure_same_dims(&self, other: &Grid) -> Result<(), GeometryError> {
        if self.dims() != other.dims() {
            return Err(GeometryError::DimensionMismatch {
                expected: self.dims(),
                found: other.dims(),
            });
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// 2×2 box average; odd trailing rows/columns are dropped.
    pub fn downsample2(&self) -> Grid {
        let w = self.width / 2;
        let h = self.height / 2;
        Grid::from_fn(w, h, |x, y| {
            0.25 * (self.get(2 * x, 2 * y)
                + self.get(2 * x + 1, 2 * y)
                + self.get(2 * x, 2 * y + 1)
                + self.get(2 * x + 1, 2 * y + 1))
        })
    }

    /// Adjoint of [`Grid::downsample2`]: spreads a coarse gradient back onto the fine grid.
    pub fn downsample2_adjoint(coarse: &Grid, fine_width: usize, fine_height: usize) -> Grid {
        let mut out = Grid::new(fine_width, fine_height, 0.0);
        for y in 0..coarse.height {
            for x in 0..coarse.width {
                let g = 0.25 * coarse.get(x, y);
                out.data[(2 * y) * fine_width + 2 * x] += g;
                out.data[(2 * y) * fine_width + 2 * x + 1] += g;
                out.data[(2 * y + 1) * fine_width + 2 * x] += g;
                out.data[(2 * y + 1) * fine_width + 2 * x + 1] += g;
            }
        }
        out
    }

    /// Bilinear sample at continuous coordinates, `None` outside `[0, w-1] × [0, h-1]`.
    #[inline]
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<f64> {
        self.sample_bilinear_with_gradient(x, y).map(|(v, _, _)| v)
    }

    /// Bilinear sample with its derivatives along x and y.
    #[inline]
    pub fn sample_bilinear_with_gradient(&self, x: f64, y: f64) -> Option<(f64, f64, f64)> {
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        if !(x >= 0.0 && y >= 0.0 && x <= max_x && y <= max_y) {
            return None;
        }
        // non-negative here, so truncation is floor
        let x0 = (x as usize).min(self.width.saturating_sub(2));
        let y0 = (y as usize).min(self.height.saturating_sub(2));
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let v00 = self.get(x0, y0);
        let v10 = self.get(x1, y0);
        let v01 = self.get(x0, y1);
        let v11 = self.get(x1, y1);
        let top = v00 + (v10 - v00) * fx;
        let bottom = v01 + (v11 - v01) * fx;
        let value = top + (bottom - top) * fy;
        let dx = (v10 - v00) * (1.0 - fy) + (v11 - v01) * fy;
        let dy = bottom - top;
        Some((value, dx, dy))
    }

    /// Mean squared forward-difference gradient, used as a texture-energy measure.
    pub fn gradient_energy(&self) -> f64 {
        if self.width < 2 || self.height < 2 {
            return 0.0;
        }
        let mut acc = 0.0;
        let mut n = 0usize;
        for y in 0..self.height - 1 {
            for x in 0..self.width - 1 {
                let c = self.get(x, y);
                let gx = self.get(x + 1, y) - c;
                let gy = self.get(x, y + 1) - c;
                acc += gx * gx + gy * gy;
                n += 1;
            }
        }
        acc / n as f64
    }
}

/// Intensity image with 1 or 3 interleaved channels, samples in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<f64>,
    ) -> Result<Self, GeometryError> {
        if channels != 1 && channels != 3 {
            return Err(GeometryError::InvalidImage(format!(
                "unsupported channel count {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(GeometryError::InvalidImage(format!(
                "expected {} samples, found {}",
                width * height * channels,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
            return Err(GeometryError::InvalidImage(format!(
                "sample {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Single-channel image from an intensity grid; values are clamped into `[0, 1]`.
    pub fn from_grid_clamped(grid: &Grid) -> Self {
        Self {
            width: grid.width(),
            height: grid.height(),
            channels: 1,
            data: grid
                .data()
                .iter()
                .map(|v| if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 })
                .collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Intensity grid (channel mean for colour images).
    pub fn luma(&self) -> Grid {
        if self.channels == 1 {
            return Grid {
                width: self.width,
                height: self.height,
                data: self.data.clone(),
            };
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|c| (c[0] + c[1] + c[2]) / 3.0)
            .collect();
        Grid {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// Replicates a single channel into RGB.
    pub fn to_rgb(&self) -> ImageBuffer {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        ImageBuffer {
            width: self.width,
            height: self.height,
            channels: 3,
            data,
        }
    }

    /// Box-filter shrink by an integer factor.
    pub fn shrink(&self, factor: usize) -> ImageBuffer {
        let factor = factor.max(1);
        let w = self.width / factor;
        let h = self.height / factor;
        let c = self.channels;
        let norm = 1.0 / (factor * factor) as f64;
        let mut data = Vec::with_capacity(w * h * c);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let mut acc = 0.0;
                    for dy in 0..factor {
                        for dx in 0..factor {
                            let idx = ((y * factor + dy) * self.width + x * factor + dx) * c + ch;
                            acc += self.data[idx];
                        }
                    }
                    data.push(acc * norm);
                }
            }
        }
        ImageBuffer {
            width: w,
            height: h,
            channels: c,
            data,
        }
    }
}

/// Metric depth along the camera z axis, mm.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap(Grid);

impl DepthMap {
    /// Depth map constrained to the default `[1, 100]` mm range.
    pub fn new(grid: Grid) -> Result<Self, GeometryError> {
        Self::with_range(grid, DEPTH_MIN_MM, DEPTH_MAX_MM)
    }

    pub fn with_range(grid: Grid, min: f64, max: f64) -> Result<Self, GeometryError> {
        if let Some(&bad) = grid
            .data()
            .iter()
            .find(|v| !(v.is_finite() && **v >= min && **v <= max))
        {
            return Err(GeometryError::DepthOutOfRange(bad));
        }
        Ok(Self(grid))
    }

    pub fn grid(&self) -> &Grid {
        &self.0
    }

    pub fn into_grid(self) -> Grid {
        self.0
    }
}

/// Dimensionless inverse-depth parameterization in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityMap(Grid);

impl DisparityMap {
    pub fn new(grid: Grid) -> Result<Self, GeometryError> {
        if let Some(&bad) = grid
            .data()
            .iter()
            .find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v)))
        {
            return Err(GeometryError::DisparityOutOfRange(bad));
        }
        Ok(Self(grid))
    }

    pub fn grid(&self) -> &Grid {
        &self.0
    }

    pub fn into_grid(self) -> Grid {
        self.0
    }
}

/// Binary pixel mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<bool>) -> Result<Self, GeometryError> {
        if data.len() != width * height {
            return Err(GeometryError::DimensionMismatch {
                expected: (width, height),
                found: (data.len(), 1),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Thresholds a single-channel image at 0.5.
    pub fn from_image(image: &ImageBuffer) -> Self {
        let g = image.luma();
        Self {
            width: g.width(),
            height: g.height(),
            data: g.data().iter().map(|&v| v > 0.5).collect(),
        }
    }

    /// `{0, 1}` image (written as `{0, 255}` PGM).
    pub fn to_image(&self) -> ImageBuffer {
        ImageBuffer {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    /// Coordinates `(x, y)` of set pixels in row-major order.
    pub fn iter_set(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i % self.width, i / self.width))
    }
}

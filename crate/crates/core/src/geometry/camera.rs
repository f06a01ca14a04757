use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::GeometryError;

/// Lower bound of the metric depth range, mm.
pub const DEPTH_MIN_MM: f64 = 1.0;
/// Upper bound of the metric depth range, mm.
pub const DEPTH_MAX_MM: f64 = 100.0;

/// Pinhole intrinsics. Pixel centres sit at integer coordinates; +x right, +y down, +z forward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for CameraIntrinsics {
    /// 320×240 sensor with 260 px focal length, principal point at the image centre.
    fn default() -> Self {
        Self {
            fx: 260.0,
            fy: 260.0,
            cx: 159.5,
            cy: 119.5,
            width: 320,
            height: 240,
        }
    }
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let ok = self.fx.is_finite()
            && self.fy.is_finite()
            && self.fx > 0.0
            && self.fy > 0.0
            && self.width > 0
            && self.height > 0
            && self.cx >= 0.0
            && self.cy >= 0.0
            && self.cx < self.width as f64
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(GeometryError::InvalidIntrinsics(format!("{self:?}")))
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Perspective projection of a camera-frame point.
    pub fn project(&self, point: &Vector3<f64>) -> Result<Vector2<f64>, GeometryError> {
        if !(point.z > 0.0) {
            return Err(GeometryError::NonPositiveDepth(point.z));
        }
        Ok(Vector2::new(
            self.fx * point.x / point.z + self.cx,
            self.fy * point.y / point.z + self.cy,
        ))
    }

    /// Lifts a pixel to the camera-frame point at the given z-depth.
    pub fn backproject(&self, pixel: &Vector2<f64>, depth: f64) -> Result<Vector3<f64>, GeometryError> {
        if !(DEPTH_MIN_MM..=DEPTH_MAX_MM).contains(&depth) {
            return Err(GeometryError::DepthOutOfRange(depth));
        }
        Ok(self.ray(pixel) * depth)
    }

    /// Normalized ray `K⁻¹ (u, v, 1)` (unit z component).
    pub fn ray(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        Vector3::new(
            (pixel.x - self.cx) / self.fx,
            (pixel.y - self.cy) / self.fy,
            1.0,
        )
    }

    pub fn contains(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= 0.0
            && pixel.y >= 0.0
            && pixel.x <= (self.width - 1) as f64
            && pixel.y <= (self.height - 1) as f64
    }

    pub fn diagonal(&self) -> f64 {
        ((self.width * self.width + self.height * self.height) as f64).sqrt()
    }

    /// Intrinsics of the image obtained by 2×2 box downsampling, applied `levels` times.
    pub fn halved(&self, levels: u32) -> CameraIntrinsics {
        let mut k = *self;
        for _ in 0..levels {
            k = CameraIntrinsics {
                fx: k.fx * 0.5,
                fy: k.fy * 0.5,
                cx: (k.cx + 0.5) * 0.5 - 0.5,
                cy: (k.cy + 0.5) * 0.5 - 0.5,
                width: k.width / 2,
                height: k.height / 2,
            };
        }
        k
    }

    /// Intrinsics rescaled to an arbitrary output size (used for coarse grids and thumbnails).
    pub fn resized(&self, width: usize, height: usize) -> CameraIntrinsics {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        CameraIntrinsics {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: (self.cx + 0.5) * sx - 0.5,
            cy: (self.cy + 0.5) * sy - 0.5,
            width,
            height,
        }
    }
}

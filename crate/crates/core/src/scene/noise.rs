use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Seeded multi-octave value noise, evaluated in 3D so curved surfaces have no seams.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Texture {
    pub seed: u64,
    /// Lattice spacing of the coarsest octave, mm.
    pub cell_mm: f64,
    pub octaves: u32,
    /// Output intensity range.
    pub low: f64,
    pub high: f64,
}

impl Texture {
    pub fn background(seed: u64) -> Self {
        Self {
            seed,
            cell_mm: 3.0,
            octaves: 3,
            low: 0.15,
            high: 0.85,
        }
    }

    pub fn tool(seed: u64) -> Self {
        Self {
            seed: seed ^ 0x9e37_79b9_7f4a_7c15,
            cell_mm: 1.5,
            octaves: 2,
            low: 0.35,
            high: 0.95,
        }
    }

    pub fn sample(&self, p: &Vector3<f64>) -> f64 {
        let mut amp = 1.0;
        let mut freq = 1.0 / self.cell_mm;
        let mut acc = 0.0;
        let mut norm = 0.0;
        for octave in 0..self.octaves.max(1) {
            let seed = self.seed.wrapping_add(octave as u64 * 0x632b_e59b_d9b4_e019);
            acc += amp * value_noise(p.x * freq, p.y * freq, p.z * freq, seed);
            norm += amp;
            amp *= 0.5;
            freq *= 2.0;
        }
        self.low + (self.high - self.low) * (acc / norm)
    }
}

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
fn lattice(ix: i64, iy: i64, iz: i64, seed: u64) -> f64 {
    let h = mix64(
        seed ^ mix64(
            (ix as u64).wrapping_mul(0x8cb9_2ba7_2f3d_8dd7)
                ^ (iy as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
                ^ (iz as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f),
        ),
    );
    (h >> 11) as f64 / (1u64 << 53) as f64
}

#[inline]
fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

/// Value noise in `[0, 1]` with C2-continuous interpolation between lattice values.
pub fn value_noise(x: f64, y: f64, z: f64, seed: u64) -> f64 {
    let (fx, fy, fz) = (x.floor(), y.floor(), z.floor());
    let (ix, iy, iz) = (fx as i64, fy as i64, fz as i64);
    let (tx, ty, tz) = (fade(x - fx), fade(y - fy), fade(z - fz));
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    let mut c = [0.0; 8];
    for (i, slot) in c.iter_mut().enumerate() {
        let dx = (i & 1) as i64;
        let dy = ((i >> 1) & 1) as i64;
        let dz = ((i >> 2) & 1) as i64;
        *slot = lattice(ix + dx, iy + dy, iz + dz, seed);
    }
    let x00 = lerp(c[0], c[1], tx);
    let x10 = lerp(c[2], c[3], tx);
    let x01 = lerp(c[4], c[5], tx);
    let x11 = lerp(c[6], c[7], tx);
    lerp(lerp(x00, x10, ty), lerp(x01, x11, ty), tz)
}

use nalgebra::Matrix2;

/// Closed-form SVD of a 2×2 matrix, `A = U · diag(s) · Vᵀ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Svd2 {
    pub u: Matrix2<f64>,
    /// Singular values, non-negative and descending.
    pub singular: [f64; 2],
    pub v: Matrix2<f64>,
}

impl Svd2 {
    pub fn d(&self) -> Matrix2<f64> {
        Matrix2::new(self.singular[0], 0.0, 0.0, self.singular[1])
    }

    pub fn reconstruct(&self) -> Matrix2<f64> {
        self.u * self.d() * self.v.transpose()
    }

    /// Orthogonal polar factor `U Vᵀ`.
    pub fn rotation_factor(&self) -> Matrix2<f64> {
        self.u * self.v.transpose()
    }

    /// Symmetric positive semi-definite polar factor `V D Vᵀ`.
    pub fn stretch_factor(&self) -> Matrix2<f64> {
        self.v * self.d() * self.v.transpose()
    }
}

pub fn rotation2(angle: f64) -> Matrix2<f64> {
    let (s, c) = angle.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// Decomposes `A` as a rotation, an axis-aligned scale and a second rotation.
///
/// Writing `A = [[a, b], [c, d]]`, the matrix splits into a similarity part
/// `[[E, -H], [H, E]]` and an anti-similarity part `[[F, G], [G, -F]]`; their
/// magnitudes give the singular values and their phases the two rotations.
/// When `A` reflects, the second column of `U` is flipped so `D` stays non-negative.
pub fn svd2x2(a: &Matrix2<f64>) -> Svd2 {
    let e = 0.5 * (a[(0, 0)] + a[(1, 1)]);
    let f = 0.5 * (a[(0, 0)] - a[(1, 1)]);
    let g = 0.5 * (a[(1, 0)] + a[(0, 1)]);
    let h = 0.5 * (a[(1, 0)] - a[(0, 1)]);
    let q = e.hypot(h);
    let r = f.hypot(g);
    let s1 = q + r;
    let s2 = q - r;
    let a1 = g.atan2(f);
    let a2 = h.atan2(e);
    let theta = 0.5 * (a2 - a1);
    let phi = 0.5 * (a2 + a1);

    let mut u = rotation2(phi);
    let v = rotation2(-theta);
    let singular = if s2 < 0.0 {
        u.column_mut(1).neg_mut();
        [s1, -s2]
    } else {
        [s1, s2]
    };
    Svd2 { u, singular, v }
}

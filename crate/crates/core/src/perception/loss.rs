use super::warp::warp_grid;
use super::{LossConfig, PerceptionError};
use crate::geometry::{
    CameraIntrinsics, DepthMap, DisparityMap, GeometryError, Grid, ImageBuffer, Mask, Pose,
};

pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Two views of the same scene with their camera-to-world poses.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePair {
    pub image_m: ImageBuffer,
    pub image_n: ImageBuffer,
    pub pose_m: Pose,
    pub pose_n: Pose,
}

impl FramePair {
    /// Camera displacement between the two views, mm.
    pub fn baseline(&self) -> f64 {
        (self.pose_m.translation - self.pose_n.translation).norm()
    }
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    if i < 0 {
        (-i) as usize
    } else if i as usize >= n {
        2 * n - 2 - i as usize
    } else {
        i as usize
    }
}

/// 3×3 mean filter with reflect padding.
#[cfg(test)]
fn pool3(g: &Grid) -> Grid {
    let (w, h) = g.dims();
    Grid::from_vec(w, h, pool3_slice(g.data(), w, h)).expect("sized")
}

fn pool3_slice(src: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut tmp = vec![0.0; w * h];
    for (row, out) in src.chunks_exact(w).zip(tmp.chunks_exact_mut(w)) {
        out[0] = 2.0 * row[1] + row[0];
        for x in 1..w - 1 {
            out[x] = row[x - 1] + row[x] + row[x + 1];
        }
        out[w - 1] = 2.0 * row[w - 2] + row[w - 1];
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let a = reflect(y as isize - 1, h) * w;
        let b = reflect(y as isize + 1, h) * w;
        let c = y * w;
        let (ra, rc, rb) = (&tmp[a..a + w], &tmp[c..c + w], &tmp[b..b + w]);
        for (x, o) in out[c..c + w].iter_mut().enumerate() {
            *o = (ra[x] + rc[x] + rb[x]) * (1.0 / 9.0);
        }
    }
    out
}

/// Adjoint of [`pool3`].
fn pool3_adjoint(g: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let a = reflect(y as isize - 1, h) * w;
        let b = reflect(y as isize + 1, h) * w;
        let c = y * w;
        for x in 0..w {
            let v = g[c + x] * (1.0 / 9.0);
            tmp[a + x] += v;
            tmp[c + x] += v;
            tmp[b + x] += v;
        }
    }
    let mut out = vec![0.0; w * h];
    for (row, o) in tmp.chunks_exact(w).zip(out.chunks_exact_mut(w)) {
        o[0] = row[0] + row[1];
        for x in 1..w - 1 {
            o[x] = row[x - 1] + row[x] + row[x + 1];
        }
        o[w - 1] = row[w - 2] + row[w - 1];
        // reflected borders: output 0 reads input 1 twice, output w-1 reads w-2 twice
        o[1] += row[0];
        o[w - 2] += row[w - 1];
    }
    out
}

/// Local statistics behind one SSIM evaluation.
struct SsimStats {
    mu_a: Vec<f64>,
    mu_b: Vec<f64>,
    p_aa: Vec<f64>,
    p_bb: Vec<f64>,
    p_ab: Vec<f64>,
}

impl SsimStats {
    fn new(a: &Grid, b: &Grid) -> Self {
        let (w, h) = a.dims();
        let aa: Vec<f64> = a.data().iter().map(|v| v * v).collect();
        let bb: Vec<f64> = b.data().iter().map(|v| v * v).collect();
        let ab: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
        Self {
            mu_a: pool3_slice(a.data(), w, h),
            mu_b: pool3_slice(b.data(), w, h),
            p_aa: pool3_slice(&aa, w, h),
            p_bb: pool3_slice(&bb, w, h),
            p_ab: pool3_slice(&ab, w, h),
        }
    }

    /// SSIM at flat index `i` and its partials w.r.t. (μ_b, pool(b²), pool(ab)).
    #[inline]
    fn at(&self, i: usize) -> (f64, [f64; 3]) {
        let ma = self.mu_a[i];
        let mb = self.mu_b[i];
        let va = self.p_aa[i] - ma * ma;
        let vb = self.p_bb[i] - mb * mb;
        let cov = self.p_ab[i] - ma * mb;
        let n1 = 2.0 * ma * mb + SSIM_C1;
        let n2 = 2.0 * cov + SSIM_C2;
        let d1 = ma * ma + mb * mb + SSIM_C1;
        let d2 = va + vb + SSIM_C2;
        let num = n1 * n2;
        let den = d1 * d2;
        let s = num / den;
        let dnum_dmb = 2.0 * ma * (n2 - n1);
        let dden_dmb = 2.0 * mb * (d2 - d1);
        let ds_dmb = (dnum_dmb * den - num * dden_dmb) / (den * den);
        let ds_dpbb = -num * d1 / (den * den);
        let ds_dpab = 2.0 * n1 / den;
        (s, [ds_dmb, ds_dpbb, ds_dpab])
    }
}

fn ssim_grid(a: &Grid, b: &Grid) -> Grid {
    let stats = SsimStats::new(a, b);
    let data = (0..a.len()).map(|i| stats.at(i).0).collect();
    Grid::from_vec(a.width(), a.height(), data).expect("sized")
}

fn check_image_dims(a: &Grid, b: &Grid) -> Result<(), PerceptionError> {
    a.ensure_same_dims(b)?;
    if a.width() < 2 || a.height() < 2 {
        return Err(GeometryError::InvalidImage("images need at least 2×2 pixels".into()).into());
    }
    Ok(())
}

/// Per-pixel SSIM with 3×3 average pooling (reflect padding) on intensity.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<Grid, PerceptionError> {
    let (ga, gb) = (a.luma(), b.luma());
    check_image_dims(&ga, &gb)?;
    Ok(ssim_grid(&ga, &gb))
}

/// Mean photometric error over valid pixels and optionally its gradient w.r.t. `b`.
fn photometric_core(
    a: &Grid,
    b: &Grid,
    valid: &[bool],
    alpha: f64,
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>), PerceptionError> {
    let n_valid = valid.iter().filter(|&&v| v).count();
    if n_valid == 0 {
        return Err(PerceptionError::NoValidPixels);
    }
    let inv_n = 1.0 / n_valid as f64;
    let stats = SsimStats::new(a, b);
    let len = a.len();
    let mut total = 0.0;
    let mut g_mb = vec![0.0; if want_grad { len } else { 0 }];
    let mut g_pbb = g_mb.clone();
    let mut g_pab = g_mb.clone();
    let mut g_direct = g_mb.clone();
    for i in 0..len {
        if !valid[i] {
            continue;
        }
        let (s, ds) = stats.at(i);
        let diff = b.data()[i] - a.data()[i];
        total += 0.5 * alpha * (1.0 - s) + (1.0 - alpha) * diff.abs();
        if want_grad {
            let wgt = -0.5 * alpha * inv_n;
            g_mb[i] = wgt * ds[0];
            g_pbb[i] = wgt * ds[1];
            g_pab[i] = wgt * ds[2];
            g_direct[i] = (1.0 - alpha) * inv_n * diff.signum() * (diff != 0.0) as u8 as f64;
        }
    }
    let loss = total * inv_n;
    if !want_grad {
        return Ok((loss, None));
    }
    let (w, h) = a.dims();
    let t_mb = pool3_adjoint(&g_mb, w, h);
    let t_pbb = pool3_adjoint(&g_pbb, w, h);
    let t_pab = pool3_adjoint(&g_pab, w, h);
    let grad = (0..len)
        .map(|i| t_mb[i] + 2.0 * b.data()[i] * t_pbb[i] + a.data()[i] * t_pab[i] + g_direct[i])
        .collect();
    Ok((loss, Some(grad)))
}

/// Mean over valid pixels of `α/2·(1 − SSIM) + (1 − α)·|I − I'|`.
pub fn photometric_loss(
    image: &ImageBuffer,
    warped: &ImageBuffer,
    valid: &Mask,
    cfg: &LossConfig,
) -> Result<f64, PerceptionError> {
    let (a, b) = (image.luma(), warped.luma());
    check_image_dims(&a, &b)?;
    if valid.dims() != a.dims() {
        return Err(GeometryError::DimensionMismatch {
            expected: a.dims(),
            found: valid.dims(),
        }
        .into());
    }
    Ok(photometric_core(&a, &b, valid.data(), cfg.alpha, false)?.0)
}

/// Photometric error of `target` against `src` warped into it, with the gradient
/// w.r.t. the target depth when requested.
fn directional(
    target: &Grid,
    src: &Grid,
    depth: &Grid,
    target_to_src: &Pose,
    k: &CameraIntrinsics,
    alpha: f64,
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>), PerceptionError> {
    let samples = warp_grid(src, depth, target_to_src, k);
    let values: Vec<f64> = samples.iter().map(|s| s.value).collect();
    let valid: Vec<bool> = samples.iter().map(|s| s.valid).collect();
    let b = Grid::from_vec(target.width(), target.height(), values).expect("sized");
    let (loss, g) = photometric_core(target, &b, &valid, alpha, want_grad)?;
    Ok((
        loss,
        g.map(|g| {
            g.iter()
                .zip(&samples)
                .map(|(gb, s)| if s.valid { gb * s.d_depth } else { 0.0 })
                .collect()
        }),
    ))
}

/// Symmetric reconstruction loss: each view against the other warped into it.
#[allow(clippy::too_many_arguments)]
pub fn reconstruction_loss(
    image_m: &ImageBuffer,
    image_n: &ImageBuffer,
    depth_m: &DepthMap,
    depth_n: &DepthMap,
    pose_m: &Pose,
    pose_n: &Pose,
    k: &CameraIntrinsics,
    cfg: &LossConfig,
) -> Result<f64, PerceptionError> {
    let (im, inn) = (image_m.luma(), image_n.luma());
    check_image_dims(&im, &inn)?;
    im.ensure_same_dims(depth_m.grid())?;
    im.ensure_same_dims(depth_n.grid())?;
    let m_to_n = pose_n.inverse().compose(pose_m);
    let n_to_m = pose_m.inverse().compose(pose_n);
    let (lm, _) = directional(&im, &inn, depth_m.grid(), &m_to_n, k, cfg.alpha, false)?;
    let (ln, _) = directional(&inn, &im, depth_n.grid(), &n_to_m, k, cfg.alpha, false)?;
    Ok(lm + ln)
}

/// Horizontal and vertical edge-aware weights `exp(-|∂I|)` for forward differences.
fn edge_weights(image: &Grid) -> (Grid, Grid) {
    let (w, h) = image.dims();
    let wx = Grid::from_fn(w, h, |x, y| {
        if x + 1 < w {
            (-(image.get(x + 1, y) - image.get(x, y)).abs()).exp()
        } else {
            0.0
        }
    });
    let wy = Grid::from_fn(w, h, |x, y| {
        if y + 1 < h {
            (-(image.get(x, y + 1) - image.get(x, y)).abs()).exp()
        } else {
            0.0
        }
    });
    (wx, wy)
}

fn smoothness_core(d: &Grid, wx: &Grid, wy: &Grid, want_grad: bool) -> (f64, Option<Vec<f64>>) {
    let (w, h) = d.dims();
    let inv = 1.0 / (w * h) as f64;
    let mut total = 0.0;
    let mut grad = if want_grad { vec![0.0; w * h] } else { Vec::new() };
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let c = d.data()[i];
            if x + 1 < w {
                let diff = d.data()[i + 1] - c;
                let wt = wx.data()[i];
                total += diff.abs() * wt;
                if want_grad && diff != 0.0 {
                    let g = diff.signum() * wt * inv;
                    grad[i + 1] += g;
                    grad[i] -= g;
                }
            }
            if y + 1 < h {
                let diff = d.data()[i + w] - c;
                let wt = wy.data()[i];
                total += diff.abs() * wt;
                if want_grad && diff != 0.0 {
                    let g = diff.signum() * wt * inv;
                    grad[i + w] += g;
                    grad[i] -= g;
                }
            }
        }
    }
    (total * inv, want_grad.then_some(grad))
}

/// Edge-aware smoothness `mean(|∂x D|·e^{-|∂x I|} + |∂y D|·e^{-|∂y I|})` with forward
/// differences; differences past the last row/column count as zero.
pub fn smoothness_loss(d: &Grid, image: &ImageBuffer) -> Result<f64, PerceptionError> {
    let g = image.luma();
    g.ensure_same_dims(d)?;
    let (wx, wy) = edge_weights(&g);
    Ok(smoothness_core(d, &wx, &wy, false).0)
}

/// One pyramid level of a [`LossProblem`].
struct Level {
    /// Number of 2× halvings from full resolution.
    halvings: u32,
    k: CameraIntrinsics,
    img_m: Grid,
    img_n: Grid,
    weights_m: (Grid, Grid),
    weights_n: (Grid, Grid),
}

/// The multi-scale objective for a fixed frame pair, reusable across evaluations.
pub(crate) struct LossProblem {
    cfg: LossConfig,
    width: usize,
    height: usize,
    levels: Vec<Level>,
    max_halvings: u32,
    m_to_n: Pose,
    n_to_m: Pose,
}

impl LossProblem {
    pub fn new(pair: &FramePair, k: &CameraIntrinsics, cfg: &LossConfig) -> Result<Self, PerceptionError> {
        cfg.validate()?;
        let im = pair.image_m.luma();
        let inn = pair.image_n.luma();
        check_image_dims(&im, &inn)?;
        if im.dims() != (k.width, k.height) {
            return Err(GeometryError::DimensionMismatch {
                expected: (k.width, k.height),
                found: im.dims(),
            }
            .into());
        }
        let halvings = cfg.pyramid_levels()?;
        let max_halvings = *halvings.iter().max().expect("nonempty scales");
        let mut pyr_m = vec![im];
        let mut pyr_n = vec![inn];
        for _ in 0..max_halvings {
            let (m, n) = (pyr_m.last().unwrap().downsample2(), pyr_n.last().unwrap().downsample2());
            if m.width() < 2 || m.height() < 2 {
                return Err(PerceptionError::InvalidConfig(
                    "image too small for the requested scales".into(),
                ));
            }
            pyr_m.push(m);
            pyr_n.push(n);
        }
        let levels = halvings
            .iter()
            .map(|&l| {
                let img_m = pyr_m[l as usize].clone();
                let img_n = pyr_n[l as usize].clone();
                Level {
                    halvings: l,
                    k: k.halved(l),
                    weights_m: edge_weights(&img_m),
                    weights_n: edge_weights(&img_n),
                    img_m,
                    img_n,
                }
            })
            .collect();
        Ok(Self {
            cfg: cfg.clone(),
            width: k.width,
            height: k.height,
            levels,
            max_halvings,
            m_to_n: pair.pose_n.inverse().compose(&pair.pose_m),
            n_to_m: pair.pose_m.inverse().compose(&pair.pose_n),
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Total loss at full-resolution disparities, with gradients when requested.
    pub fn evaluate(
        &self,
        disp_m: &Grid,
        disp_n: &Grid,
        want_grad: bool,
    ) -> Result<(f64, Option<(Grid, Grid)>), PerceptionError> {
        let cfg = &self.cfg;
        let mut pyr_m = vec![disp_m.clone()];
        let mut pyr_n = vec![disp_n.clone()];
        for _ in 0..self.max_halvings {
            let m = pyr_m.last().unwrap().downsample2();
            let n = pyr_n.last().unwrap().downsample2();
            pyr_m.push(m);
            pyr_n.push(n);
        }
        let mut grad_m: Vec<Vec<f64>> = pyr_m.iter().map(|g| vec![0.0; if want_grad { g.len() } else { 0 }]).collect();
        let mut grad_n: Vec<Vec<f64>> = pyr_n.iter().map(|g| vec![0.0; if want_grad { g.len() } else { 0 }]).collect();

        let mut total = 0.0;
        for level in &self.levels {
            let l = level.halvings as usize;
            let (dm, dn) = (&pyr_m[l], &pyr_n[l]);
            let depth_m = dm.map(|v| cfg.depth_from_disparity(v));
            let depth_n = dn.map(|v| cfg.depth_from_disparity(v));
            let (lm, gm) = directional(
                &level.img_m,
                &level.img_n,
                &depth_m,
                &self.m_to_n,
                &level.k,
                cfg.alpha,
                want_grad,
            )?;
            let (ln, gn) = directional(
                &level.img_n,
                &level.img_m,
                &depth_n,
                &self.n_to_m,
                &level.k,
                cfg.alpha,
                want_grad,
            )?;
            let (sm, gsm) = smoothness_core(dm, &level.weights_m.0, &level.weights_m.1, want_grad);
            let (sn, gsn) = smoothness_core(dn, &level.weights_n.0, &level.weights_n.1, want_grad);
            total += cfg.mu * (lm + ln) + cfg.lambda * (sm + sn);

            if want_grad {
                let (gm, gn, gsm, gsn) = (gm.unwrap(), gn.unwrap(), gsm.unwrap(), gsn.unwrap());
                for (i, slot) in grad_m[l].iter_mut().enumerate() {
                    let dd = cfg.depth_derivative(depth_m.data()[i]);
                    *slot += cfg.mu * gm[i] * dd + cfg.lambda * gsm[i];
                }
                for (i, slot) in grad_n[l].iter_mut().enumerate() {
                    let dd = cfg.depth_derivative(depth_n.data()[i]);
                    *slot += cfg.mu * gn[i] * dd + cfg.lambda * gsn[i];
                }
            }
        }
        if !want_grad {
            return Ok((total, None));
        }
        let back = |grads: Vec<Vec<f64>>, pyr: &[Grid]| -> Grid {
            let mut acc: Option<Grid> = None;
            for l in (0..grads.len()).rev() {
                let (w, h) = pyr[l].dims();
                let mut here = Grid::from_vec(w, h, grads[l].clone()).expect("sized");
                if let Some(coarse) = acc.take() {
                    let up = Grid::downsample2_adjoint(&coarse, w, h);
                    for (a, b) in here.data_mut().iter_mut().zip(up.data()) {
                        *a += b;
                    }
                }
                acc = Some(here);
            }
            acc.expect("at least one level")
        };
        let gm = back(grad_m, &pyr_m);
        let gn = back(grad_n, &pyr_n);
        Ok((total, Some((gm, gn))))
    }
}

/// Multi-scale objective `Σ_l μ·L_re + λ·(L_s,m + L_s,n)` at the given disparities.
pub fn total_loss(
    pair: &FramePair,
    disp_m: &DisparityMap,
    disp_n: &DisparityMap,
    k: &CameraIntrinsics,
    cfg: &LossConfig,
) -> Result<f64, PerceptionError> {
    let problem = LossProblem::new(pair, k, cfg)?;
    check_disp(&problem, disp_m, disp_n)?;
    Ok(problem.evaluate(disp_m.grid(), disp_n.grid(), false)?.0)
}

/// [`total_loss`] with its gradient w.r.t. both full-resolution disparity maps.
pub fn total_loss_with_gradient(
    pair: &FramePair,
    disp_m: &DisparityMap,
    disp_n: &DisparityMap,
    k: &CameraIntrinsics,
    cfg: &LossConfig,
) -> Result<(f64, Grid, Grid), PerceptionError> {
    let problem = LossProblem::new(pair, k, cfg)?;
    check_disp(&problem, disp_m, disp_n)?;
    let (loss, g) = problem.evaluate(disp_m.grid(), disp_n.grid(), true)?;
    let (gm, gn) = g.expect("requested");
    Ok((loss, gm, gn))
}

fn check_disp(p: &LossProblem, a: &DisparityMap, b: &DisparityMap) -> Result<(), PerceptionError> {
    for d in [a, b] {
        if d.grid().dims() != p.dims() {
            return Err(GeometryError::DimensionMismatch {
                expected: p.dims(),
                found: d.grid().dims(),
            }
            .into());
        }
    }
    Ok(())
}

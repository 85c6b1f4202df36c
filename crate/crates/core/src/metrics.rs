//! Fidelity metrics that need no pretrained network: PSNR and SSIM (optionally
//! restricted to a region), relative L2 error and empirical convergence order.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// PSNR reported for zero mean squared error.
pub const PSNR_CAP_DB: f64 = 99.0;
/// Side of the non-overlapping SSIM blocks.
pub const SSIM_WINDOW: usize = 8;
const DYNAMIC_RANGE: f64 = 1.0;
const SSIM_C1: f64 = (0.01 * DYNAMIC_RANGE) * (0.01 * DYNAMIC_RANGE);
const SSIM_C2: f64 = (0.03 * DYNAMIC_RANGE) * (0.03 * DYNAMIC_RANGE);

/// Single-channel frame with values clamped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelFrame {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl PixelFrame {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(format!(
                "frame {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        let data = data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self::new(height, width, vec![value; height * width]).expect("sized")
    }

    /// From a `[H, W]` tensor.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match t.shape() {
            &[h, w] => Self::new(h, w, t.data().iter().map(|&v| f64::from(v)).collect()),
            s => Err(Error::shape(format!("expected an [H, W] frame, got {s:?}"))),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }
}

/// Pixels that take part in a metric (`true` = included).
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl RegionMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(format!(
                "mask {height}x{width} needs {} entries, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn all(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![true; height * width],
        }
    }

    /// Everything outside the rectangle `(row, col, h, w)`.
    pub fn outside_rect(height: usize, width: usize, rect: (usize, usize, usize, usize)) -> Self {
        let (r0, c0, rh, rw) = rect;
        let data = (0..height * width)
            .map(|i| {
                let (r, c) = (i / width, i % width);
                !(r >= r0 && r < r0 + rh && c >= c0 && c < c0 + rw)
            })
            .collect();
        Self {
            height,
            width,
            data,
        }
    }

    /// From a `[H, W]` tensor; non-zero entries are included.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match t.shape() {
            &[h, w] => Self::new(h, w, t.data().iter().map(|&v| v != 0.0).collect()),
            s => Err(Error::shape(format!("expected an [H, W] mask, got {s:?}"))),
        }
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

fn check_frames(a: &PixelFrame, b: &PixelFrame) -> Result<()> {
    if (a.height, a.width) != (b.height, b.width) {
        return Err(Error::shape(format!(
            "frames are {}x{} and {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    Ok(())
}

/// `10 log10(1 / MSE)` over the masked pixels, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &PixelFrame, b: &PixelFrame, mask: Option<&RegionMask>) -> Result<f64> {
    check_frames(a, b)?;
    let (mut sse, mut n) = (0.0f64, 0usize);
    match mask {
        Some(m) => {
            if (m.height, m.width) != (a.height, a.width) {
                return Err(Error::shape(format!(
                    "mask is {}x{} but frames are {}x{}",
                    m.height, m.width, a.height, a.width
                )));
            }
            for ((x, y), &keep) in a.data.iter().zip(&b.data).zip(&m.data) {
                if keep {
                    sse += (x - y) * (x - y);
                    n += 1;
                }
            }
        }
        None => {
            for (x, y) in a.data.iter().zip(&b.data) {
                sse += (x - y) * (x - y);
            }
            n = a.data.len();
        }
    }
    if n == 0 {
        return Err(Error::Domain("PSNR mask selects no pixels".into()));
    }
    let mse = sse / n as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (DYNAMIC_RANGE * DYNAMIC_RANGE / mse).log10()).min(PSNR_CAP_DB))
}

/// Mean SSIM over non-overlapping [`SSIM_WINDOW`]-sized blocks. Rows and
/// columns past the last full block are ignored. Unlike the common reference
/// implementation there is no Gaussian weighting or sliding window.
pub fn ssim(a: &PixelFrame, b: &PixelFrame) -> Result<f64> {
    check_frames(a, b)?;
    if a.height < SSIM_WINDOW || a.width < SSIM_WINDOW {
        return Err(Error::shape(format!(
            "frame {}x{} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window",
            a.height, a.width
        )));
    }
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    let mut blocks = 0usize;
    for br in 0..a.height / SSIM_WINDOW {
        for bc in 0..a.width / SSIM_WINDOW {
            let pixels = || {
                (0..SSIM_WINDOW).flat_map(move |r| {
                    (0..SSIM_WINDOW).map(move |c| (br * SSIM_WINDOW + r, bc * SSIM_WINDOW + c))
                })
            };
            let (mut sa, mut sb) = (0.0, 0.0);
            for (r, c) in pixels() {
                sa += a.get(r, c);
                sb += b.get(r, c);
            }
            let (ma, mb) = (sa / n, sb / n);
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for (r, c) in pixels() {
                let (da, db) = (a.get(r, c) - ma, b.get(r, c) - mb);
                va += da * da;
                vb += db * db;
                cov += da * db;
            }
            let (va, vb, cov) = (va / n, vb / n, cov / n);
            let num = (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2);
            let den = (ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2);
            total += num / den;
            blocks += 1;
        }
    }
    Ok(total / blocks as f64)
}

/// `‖a − b‖₂ / max(‖a‖₂, 1e-12)`.
pub fn rel_l2(a: &Tensor, b: &Tensor) -> Result<f64> {
    let diff = a.sub(b)?;
    Ok(diff.l2_norm() / a.l2_norm().max(1e-12))
}

/// Least-squares slope of `log(error)` against `log(1/n)`.
pub fn convergence_order(ns: &[usize], errors: &[f64]) -> Result<f64> {
    if ns.len() != errors.len() || ns.len() < 2 {
        return Err(Error::shape(format!(
            "convergence_order needs two or more paired points, got {} step counts and {} errors",
            ns.len(),
            errors.len()
        )));
    }
    if let Some(e) = errors.iter().find(|&&e| e <= 0.0 || !e.is_finite()) {
        return Err(Error::Domain(format!("errors must be positive and finite, got {e}")));
    }
    if ns.contains(&0) {
        return Err(Error::Domain("step counts must be positive".into()));
    }
    let xs: Vec<f64> = ns.iter().map(|&n| -(n as f64).ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Domain("step counts must not all be equal".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

/// Splits a `[F, H, W, C]` latent into `F·C` frames, mapping values to
/// `[0, 1]` with the min-max range of `reference`.
pub fn latent_frames(video: &Tensor, reference: &Tensor) -> Result<Vec<PixelFrame>> {
    let &[f, h, w, c] = video.shape() else {
        return Err(Error::shape(format!("expected a [F, H, W, C] latent, got {:?}", video.shape())));
    };
    let lo = reference.data().iter().copied().fold(f32::INFINITY, f32::min);
    let hi = reference.data().iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let (lo, span) = (f64::from(lo), f64::from(hi - lo));
    let map = |v: f32| {
        if span > 0.0 {
            (f64::from(v) - lo) / span
        } else {
            0.0
        }
    };
    let d = video.data();
    let mut frames = Vec::with_capacity(f * c);
    for fi in 0..f {
        for ch in 0..c {
            let grid = (0..h * w)
                .map(|p| map(d[(fi * h * w + p) * c + ch]))
                .collect();
            frames.push(PixelFrame::new(h, w, grid)?);
        }
    }
    Ok(frames)
}

/// Frame-averaged PSNR of `other` against `reference`.
pub fn video_psnr(reference: &Tensor, other: &Tensor, mask: Option<&RegionMask>) -> Result<f64> {
    if reference.shape() != other.shape() {
        return Err(Error::shape(format!(
            "videos {:?} and {:?} differ in shape",
            reference.shape(),
            other.shape()
        )));
    }
    let a = latent_frames(reference, reference)?;
    let b = latent_frames(other, reference)?;
    let mut sum = 0.0;
    for (x, y) in a.iter().zip(&b) {
        sum += psnr(x, y, mask)?;
    }
    Ok(sum / a.len() as f64)
}

/// Frame-averaged SSIM of `other` against `reference`.
pub fn video_ssim(reference: &Tensor, other: &Tensor) -> Result<f64> {
    if reference.shape() != other.shape() {
        return Err(Error::shape(format!(
            "videos {:?} and {:?} differ in shape",
            reference.shape(),
            other.shape()
        )));
    }
    let a = latent_frames(reference, reference)?;
    let b = latent_frames(other, reference)?;
    let mut sum = 0.0;
    for (x, y) in a.iter().zip(&b) {
        sum += ssim(x, y)?;
    }
    Ok(sum / a.len() as f64)
}

//! Orthonormal 2D DCT-II / inverse per channel, Manhattan low-pass masking,
//! and spectral filtering.
//!
//! The transform is implemented as separable 1-D passes (rows then columns),
//! O(HW(H+W)) per channel. The literal quadruple-sum definition lives in
//! [`crate::oracle`] and is used only for verification.

use crate::error::{Error, Result};
use crate::tensor::{FeatureTensor, Spectrum};

/// Precomputed cosine table and orthonormal scale factors for length-N 1-D
/// DCT-II: cos(pi*(2n+1)*k / 2N) at `cos[k*n_len + n]`, alpha(0) = sqrt(1/N),
/// alpha(k>0) = sqrt(2/N).
struct CosTable {
    n: usize,
    cos: Vec<f64>,
    alpha: Vec<f64>,
}

impl CosTable {
    fn new(n: usize) -> Self {
        let mut cos = vec![0.0; n * n];
        for k in 0..n {
            for x in 0..n {
                cos[k * n + x] =
                    (std::f64::consts::PI * (2.0 * x as f64 + 1.0) * k as f64 / (2.0 * n as f64))
                        .cos();
            }
        }
        let mut alpha = vec![(2.0 / n as f64).sqrt(); n];
        alpha[0] = (1.0 / n as f64).sqrt();
        Self { n, cos, alpha }
    }
}

/// Orthonormal 2D DCT-II applied independently per channel.
///
/// Parseval holds: the squared Frobenius norm is preserved.
pub fn dct2(x: &FeatureTensor) -> Result<Spectrum> {
    let (c, h, w) = (x.channels(), x.height(), x.width());
    let th = CosTable::new(h);
    let tw = CosTable::new(w);
    let src = x.data();
    let mut out = vec![0.0; c * h * w];
    let mut row_pass = vec![0.0; h * w];
    for ch in 0..c {
        let base = ch * h * w;
        // rows: R[x][v] = sum_y X[x][y] cos_w[v][y]
        for xi in 0..h {
            for v in 0..w {
                let mut acc = 0.0;
                for y in 0..w {
                    acc += src[base + xi * w + y] * tw.cos[v * tw.n + y];
                }
                row_pass[xi * w + v] = acc;
            }
        }
        // columns: F[u][v] = a(u) a(v) sum_x R[x][v] cos_h[u][x]
        for u in 0..h {
            for v in 0..w {
                let mut acc = 0.0;
                for xi in 0..h {
                    acc += row_pass[xi * w + v] * th.cos[u * th.n + xi];
                }
                out[base + u * w + v] = th.alpha[u] * tw.alpha[v] * acc;
            }
        }
    }
    Spectrum::new(c, h, w, out)
}

/// Exact inverse of [`dct2`] up to floating point.
pub fn idct2(f: &Spectrum) -> Result<FeatureTensor> {
    let (c, h, w) = (f.channels(), f.height(), f.width());
    let th = CosTable::new(h);
    let tw = CosTable::new(w);
    let src = f.data();
    let mut out = vec![0.0; c * h * w];
    let mut col_pass = vec![0.0; h * w];
    for ch in 0..c {
        let base = ch * h * w;
        // columns: T[x][v] = sum_u a(u) F[u][v] cos_h[u][x]
        for xi in 0..h {
            for v in 0..w {
                let mut acc = 0.0;
                for u in 0..h {
                    acc += th.alpha[u] * src[base + u * w + v] * th.cos[u * th.n + xi];
                }
                col_pass[xi * w + v] = acc;
            }
        }
        // rows: X[x][y] = sum_v a(v) T[x][v] cos_w[v][y]
        for xi in 0..h {
            for y in 0..w {
                let mut acc = 0.0;
                for v in 0..w {
                    acc += tw.alpha[v] * col_pass[xi * w + v] * tw.cos[v * tw.n + y];
                }
                out[base + xi * w + y] = acc;
            }
        }
    }
    FeatureTensor::new(c, h, w, out)
}

/// Binary low-pass mask over an H x W frequency grid. A coefficient (u, v)
/// is kept iff its normalized Manhattan score ((u/H) + (v/W)) / 2 <= tau.
#[derive(Debug, Clone, PartialEq)]
pub struct LowPassMask {
    h: usize,
    w: usize,
    bits: Vec<bool>,
    tau: f64,
}

impl LowPassMask {
    pub fn height(&self) -> usize {
        self.h
    }
    pub fn width(&self) -> usize {
        self.w
    }
    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn keep(&self, u: usize, v: usize) -> bool {
        self.bits[u * self.w + v]
    }

    pub fn kept_count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Mask with every coefficient kept (identity filter); test and
    /// bypass-configuration helper.
    pub fn all_pass(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            bits: vec![true; h * w],
            tau: 1.0,
        }
    }
}

#[cfg(not(feature = "fault-mask"))]
#[inline]
fn mask_cmp(score: f64, tau: f64) -> bool {
    score <= tau
}

// Mutation canary build: strict comparison, must trip the selftest.
#[cfg(feature = "fault-mask")]
#[inline]
fn mask_cmp(score: f64, tau: f64) -> bool {
    score < tau
}

/// Build the low-pass mask for an H x W grid with cutoff tau in (0, 1).
pub fn build_mask(h: usize, w: usize, tau: f64) -> Result<LowPassMask> {
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument(
            "mask dimensions must be positive".into(),
        ));
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "cutoff tau must lie in (0, 1), got {tau}"
        )));
    }
    // Compare in the rescaled form u*W + v*H <= 2*tau*H*W: the left side
    // is an exact integer in f64, so boundary cells are classified exactly
    // instead of depending on division round-off.
    let threshold = 2.0 * tau * (h * w) as f64;
    let mut bits = vec![false; h * w];
    for u in 0..h {
        for v in 0..w {
            let score = (u * w + v * h) as f64;
            bits[u * w + v] = mask_cmp(score, threshold);
        }
    }
    Ok(LowPassMask { h, w, bits, tau })
}

/// Element-wise mask application; dropped coefficients become exactly zero.
pub fn apply_mask(f: &Spectrum, m: &LowPassMask) -> Result<Spectrum> {
    if f.height() != m.height() || f.width() != m.width() {
        return Err(Error::ShapeMismatch(format!(
            "spectrum {}x{} vs mask {}x{}",
            f.height(),
            f.width(),
            m.height(),
            m.width()
        )));
    }
    let (c, h, w) = (f.channels(), f.height(), f.width());
    let mut out = f.data().to_vec();
    for ch in 0..c {
        for u in 0..h {
            for v in 0..w {
                if !m.keep(u, v) {
                    out[(ch * h + u) * w + v] = 0.0;
                }
            }
        }
    }
    Spectrum::new(c, h, w, out)
}

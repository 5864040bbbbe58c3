//! Haar wavelet, DCT and FFT transforms, and the high-frequency evidence
//! maps fed to the model's frequency branch.
//!
//! All transforms act per channel on `C×H×W` tensors and are not
//! differentiated.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Single-level Haar decomposition; each band is `C×H/2×W/2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Subbands {
    pub ll: Tensor,
    pub lh: Tensor,
    pub hl: Tensor,
    pub hh: Tensor,
}

/// High-frequency extraction method for the frequency branch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FrequencyMethod {
    /// HH band of a single-level Haar transform (half resolution).
    Dwt,
    /// Spatial residual after zeroing the top-left `block×block` DCT coefficients.
    Dct { block: usize },
    /// Spatial residual after removing FFT bins inside `radius`·Nyquist.
    Fft { radius: f64 },
}

impl FrequencyMethod {
    /// DCT with the default block of `size/8`.
    pub fn default_dct(size: usize) -> Self {
        FrequencyMethod::Dct {
            block: (size / 8).max(1),
        }
    }

    pub fn default_fft() -> Self {
        FrequencyMethod::Fft { radius: 0.25 }
    }

    /// Output spatial size for an input of `size`.
    pub fn output_size(&self, size: usize) -> usize {
        match self {
            FrequencyMethod::Dwt => size / 2,
            _ => size,
        }
    }

    pub fn validate(&self, h: usize, w: usize) -> Result<()> {
        match *self {
            FrequencyMethod::Dwt => {
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(Error::invalid(format!("DWT needs even dimensions, got {h}x{w}")));
                }
            }
            FrequencyMethod::Dct { block } => {
                if block == 0 || block >= h.min(w) {
                    return Err(Error::invalid(format!(
                        "DCT block {block} must satisfy 0 < b < {}",
                        h.min(w)
                    )));
                }
            }
            FrequencyMethod::Fft { radius } => check_radius(radius)?,
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        match self {
            FrequencyMethod::Dwt => "dwt".into(),
            FrequencyMethod::Dct { block } => format!("dct(b={block})"),
            FrequencyMethod::Fft { radius } => format!("fft(r={radius})"),
        }
    }
}

fn check_radius(r: f64) -> Result<()> {
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::invalid(format!("FFT radius {r} must lie in (0, 1)")));
    }
    Ok(())
}

pub fn dwt_haar(image: &Tensor) -> Result<Subbands> {
    let (c, h, w) = image.dims3("dwt_haar")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::invalid(format!("dwt_haar needs even dimensions, got {h}x{w}")));
    }
    let (h2, w2) = (h / 2, w / 2);
    let n = c * h2 * w2;
    let (mut ll, mut lh, mut hl, mut hh) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let x = image.data();
    for ch in 0..c {
        for i in 0..h2 {
            for j in 0..w2 {
                let at = |y: usize, xx: usize| x[(ch * h + y) * w + xx];
                let (a, b) = (at(2 * i, 2 * j), at(2 * i, 2 * j + 1));
                let (cc, d) = (at(2 * i + 1, 2 * j), at(2 * i + 1, 2 * j + 1));
                let o = (ch * h2 + i) * w2 + j;
                ll[o] = (a + b + cc + d) / 2.0;
                lh[o] = (a + b - cc - d) / 2.0;
                hl[o] = (a - b + cc - d) / 2.0;
                hh[o] = (a - b - cc + d) / 2.0;
            }
        }
    }
    let shape = vec![c, h2, w2];
    Ok(Subbands {
        ll: Tensor::new(shape.clone(), ll)?,
        lh: Tensor::new(shape.clone(), lh)?,
        hl: Tensor::new(shape.clone(), hl)?,
        hh: Tensor::new(shape, hh)?,
    })
}

pub fn idwt_haar(bands: &Subbands) -> Result<Tensor> {
    let shape = bands.ll.shape();
    for b in [&bands.lh, &bands.hl, &bands.hh] {
        if b.shape() != shape {
            return Err(Error::shape("idwt_haar", shape, b.shape()));
        }
    }
    let (c, h2, w2) = bands.ll.dims3("idwt_haar")?;
    let (h, w) = (2 * h2, 2 * w2);
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for i in 0..h2 {
            for j in 0..w2 {
                let o = (ch * h2 + i) * w2 + j;
                let (s, v, hz, d) = (bands.ll.data()[o], bands.lh.data()[o], bands.hl.data()[o], bands.hh.data()[o]);
                let base = |y: usize, x: usize| (ch * h + y) * w + x;
                out[base(2 * i, 2 * j)] = (s + v + hz + d) / 2.0;
                out[base(2 * i, 2 * j + 1)] = (s + v - hz - d) / 2.0;
                out[base(2 * i + 1, 2 * j)] = (s - v + hz - d) / 2.0;
                out[base(2 * i + 1, 2 * j + 1)] = (s - v - hz + d) / 2.0;
            }
        }
    }
    Tensor::new(vec![c, h, w], out)
}

/// Orthonormal DCT-II basis: `basis[k][n]`.
fn dct_basis(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for k in 0..n {
        let scale = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        for i in 0..n {
            m[k * n + i] = scale * (PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos();
        }
    }
    m
}

/// Applies `basis` (or its transpose) along rows then columns of each plane.
fn separable(image: &Tensor, inverse: bool) -> Result<Tensor> {
    let (c, h, w) = image.dims3("dct2")?;
    let (bh, bw) = (dct_basis(h), dct_basis(w));
    let coef = |b: &[f64], n: usize, k: usize, i: usize| {
        if inverse {
            b[i * n + k]
        } else {
            b[k * n + i]
        }
    };
    let mut out = image.data().to_vec();
    let mut tmp = vec![0.0; h.max(w)];
    for ch in 0..c {
        let plane = &mut out[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            let row = &mut plane[y * w..(y + 1) * w];
            for k in 0..w {
                tmp[k] = (0..w).map(|i| coef(&bw, w, k, i) * row[i]).sum();
            }
            row.copy_from_slice(&tmp[..w]);
        }
        for x in 0..w {
            for k in 0..h {
                tmp[k] = (0..h).map(|i| coef(&bh, h, k, i) * plane[i * w + x]).sum();
            }
            for k in 0..h {
                plane[k * w + x] = tmp[k];
            }
        }
    }
    Tensor::new(vec![c, h, w], out)
}

/// Orthonormal 2-D type-II DCT of each channel.
pub fn dct2(image: &Tensor) -> Result<Tensor> {
    separable(image, false)
}

/// Inverse of [`dct2`] (orthonormal type-III).
pub fn idct2(coefficients: &Tensor) -> Result<Tensor> {
    separable(coefficients, true)
}

/// Removes FFT bins whose centered radius is below `r`·Nyquist and returns
/// the real part of the inverse transform.
pub fn fft2_magnitude_highpass(image: &Tensor, r: f64) -> Result<Tensor> {
    check_radius(r)?;
    let (c, h, w) = image.dims3("fft2_magnitude_highpass")?;
    let mut planner = FftPlanner::<f64>::new();
    let (fw, fh) = (planner.plan_fft_forward(w), planner.plan_fft_forward(h));
    let (iw, ih) = (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h));
    // Signed frequency normalized so that Nyquist is 1.
    let norm_freq = |k: usize, n: usize| {
        let s = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
        s / (n as f64 / 2.0)
    };
    let mut out = Vec::with_capacity(c * h * w);
    let mut col = vec![Complex::new(0.0, 0.0); h];
    for ch in 0..c {
        let mut buf: Vec<Complex<f64>> = image.data()[ch * h * w..(ch + 1) * h * w]
            .iter()
            .map(|&v| Complex::new(v, 0.0))
            .collect();
        for row in buf.chunks_mut(w) {
            fw.process(row);
        }
        for x in 0..w {
            (0..h).for_each(|y| col[y] = buf[y * w + x]);
            fh.process(&mut col);
            (0..h).for_each(|y| buf[y * w + x] = col[y]);
        }
        for y in 0..h {
            for x in 0..w {
                let (fy, fx) = (norm_freq(y, h), norm_freq(x, w));
                if (fy * fy + fx * fx).sqrt() < r {
                    buf[y * w + x] = Complex::new(0.0, 0.0);
                }
            }
        }
        for x in 0..w {
            (0..h).for_each(|y| col[y] = buf[y * w + x]);
            ih.process(&mut col);
            (0..h).for_each(|y| buf[y * w + x] = col[y]);
        }
        for row in buf.chunks_mut(w) {
            iw.process(row);
        }
        let scale = 1.0 / (h * w) as f64;
        out.extend(buf.iter().map(|z| z.re * scale));
    }
    Tensor::new(vec![c, h, w], out)
}

/// Spatial-domain high-frequency evidence map for `method`.
pub fn extract_frequency_map(image: &Tensor, method: FrequencyMethod) -> Result<Tensor> {
    let (_, h, w) = image.dims3("extract_frequency_map")?;
    method.validate(h, w)?;
    match method {
        FrequencyMethod::Dwt => Ok(dwt_haar(image)?.hh),
        FrequencyMethod::Dct { block } => {
            let mut coef = dct2(image)?;
            let (c, h, w) = coef.dims3("dct2")?;
            let data = coef.data_mut();
            for ch in 0..c {
                for y in 0..block {
                    for x in 0..block {
                        data[(ch * h + y) * w + x] = 0.0;
                    }
                }
            }
            idct2(&coef)
        }
        FrequencyMethod::Fft { radius } => fft2_magnitude_highpass(image, radius),
    }
}

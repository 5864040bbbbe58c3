use std::collections::BTreeMap;

use super::manifest::SampleRecord;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

const WINDOW: usize = 8;
const C1: f64 = 1e-4;
const C2: f64 = 9e-4;

/// Structural similarity over 8×8 windows at stride 1, averaged over windows
/// and channels. Window statistics use population (1/n) moments.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("ssim", a.shape(), b.shape()));
    }
    let (c, h, w) = a.dims3("ssim")?;
    if h < WINDOW || w < WINDOW {
        return Err(Error::invalid(format!(
            "ssim needs at least {WINDOW}×{WINDOW} pixels, got {h}×{w}"
        )));
    }
    let n = (WINDOW * WINDOW) as f64;
    let (pa, pb) = (a.data(), b.data());
    let mut total = 0.0;
    let mut windows = 0usize;
    for ch in 0..c {
        let off = ch * h * w;
        for y0 in 0..=h - WINDOW {
            for x0 in 0..=w - WINDOW {
                let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for y in y0..y0 + WINDOW {
                    for x in x0..x0 + WINDOW {
                        let (u, v) = (pa[off + y * w + x], pb[off + y * w + x]);
                        sa += u;
                        sb += v;
                        saa += u * u;
                        sbb += v * v;
                        sab += u * v;
                    }
                }
                let (ma, mb) = (sa / n, sb / n);
                let va = saa / n - ma * ma;
                let vb = sbb / n - mb * mb;
                let cov = sab / n - ma * mb;
                let num = (2.0 * ma * mb + C1) * (2.0 * cov + C2);
                let den = (ma * ma + mb * mb + C1) * (va + vb + C2);
                total += num / den;
                windows += 1;
            }
        }
    }
    Ok(total / windows as f64)
}

/// An edited image and the image it was derived from.
#[derive(Clone, Debug)]
pub struct ImagePair {
    pub edited: Tensor,
    pub source: Tensor,
}

/// Keeps the records whose edited image scores at least `threshold` SSIM
/// against its source image.
pub fn quality_filter(
    records: &[SampleRecord],
    images: &BTreeMap<String, ImagePair>,
    threshold: f64,
) -> Result<Vec<SampleRecord>> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::invalid(format!("ssim threshold {threshold} outside [0,1]")));
    }
    let mut kept = Vec::new();
    for r in records {
        let pair = images
            .get(&r.id)
            .ok_or_else(|| Error::Validation(format!("no image pair for record {}", r.id)))?;
        if ssim(&pair.edited, &pair.source)? >= threshold {
            kept.push(r.clone());
        }
    }
    Ok(kept)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        let zero = Tensor::zeros(&[3, 8, 8]);
        let one = Tensor::full(&[3, 8, 8], 1.0);
        assert_eq!(ssim(&one, &one).unwrap(), 1.0);
        assert!((ssim(&zero, &one).unwrap() - 1e-4 / (1.0 + 1e-4)).abs() < 1e-15);
    }

    #[test]
    fn rejects_mismatch_and_tiny_images() {
        assert!(ssim(&Tensor::zeros(&[1, 8, 8]), &Tensor::zeros(&[1, 8, 9])).is_err());
        assert!(ssim(&Tensor::zeros(&[1, 7, 8]), &Tensor::zeros(&[1, 7, 8])).is_err());
    }
}

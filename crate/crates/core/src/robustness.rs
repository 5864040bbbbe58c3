//! Post-processing perturbations (lossy JPEG stage, additive Gaussian noise)
//! and the evaluation sweep over them.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frequency::{dct2, idct2};
use crate::metrics::{evaluate, LabeledImage, MetricsReport, SequencePredictor};
use crate::numerics::Tensor;

/// Annex K luminance table, row-major.
pub const LUMA: [f64; 64] = [
    16., 11., 10., 16., 24., 40., 51., 61., //
    12., 12., 14., 19., 26., 58., 60., 55., //
    14., 13., 16., 24., 40., 57., 69., 56., //
    14., 17., 22., 29., 51., 87., 80., 62., //
    18., 22., 37., 56., 68., 109., 103., 77., //
    24., 35., 55., 64., 81., 104., 113., 92., //
    49., 64., 78., 87., 103., 121., 120., 101., //
    72., 92., 95., 98., 112., 100., 103., 99.,
];

/// Annex K chrominance table, row-major.
pub const CHROMA: [f64; 64] = [
    17., 18., 24., 47., 99., 99., 99., 99., //
    18., 21., 26., 66., 99., 99., 99., 99., //
    24., 26., 56., 99., 99., 99., 99., 99., //
    47., 66., 99., 99., 99., 99., 99., 99., //
    99., 99., 99., 99., 99., 99., 99., 99., //
    99., 99., 99., 99., 99., 99., 99., 99., //
    99., 99., 99., 99., 99., 99., 99., 99., //
    99., 99., 99., 99., 99., 99., 99., 99.,
];

/// Quality-scaled quantization table.
pub fn quant_table(base: &[f64; 64], quality: f64) -> [f64; 64] {
    let scale = if quality < 50.0 { 5000.0 / quality } else { 200.0 - 2.0 * quality };
    base.map(|b| ((b * scale + 50.0) / 100.0).floor().clamp(1.0, 255.0))
}

fn check_percent(what: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v < 100.0) {
        return Err(Error::invalid(format!("{what} {v} outside (0,100)")));
    }
    Ok(())
}

/// Quantizes every 8×8 block of a `[1×H×W]` plane (level-shifted) in the DCT domain.
fn quantize_plane(plane: &mut [f64], h: usize, w: usize, table: &[f64; 64]) -> Result<()> {
    let mut block = vec![0.0; 64];
    for by in (0..h).step_by(8) {
        for bx in (0..w).step_by(8) {
            for y in 0..8 {
                for x in 0..8 {
                    block[y * 8 + x] = plane[(by + y) * w + bx + x] - 128.0;
                }
            }
            let coef = dct2(&Tensor::new(vec![1, 8, 8], block.clone())?)?;
            let q = coef
                .data()
                .iter()
                .zip(table)
                .map(|(c, t)| (c / t).round() * t)
                .collect();
            let rec = idct2(&Tensor::new(vec![1, 8, 8], q)?)?;
            for y in 0..8 {
                for x in 0..8 {
                    plane[(by + y) * w + bx + x] = rec.data()[y * 8 + x] + 128.0;
                }
            }
        }
    }
    Ok(())
}

/// The lossy stage of a baseline JPEG codec at quality `100 − ratio`:
/// YCbCr conversion, 8×8 block DCT, table quantization, and back. No chroma
/// subsampling and no entropy coding.
pub fn jpeg_like_compress(image: &Tensor, ratio_percent: f64) -> Result<Tensor> {
    check_percent("compression ratio", ratio_percent)?;
    let (c, h, w) = image.dims3("jpeg_like_compress")?;
    if c != 3 {
        return Err(Error::invalid(format!("expected an RGB image, got {c} channels")));
    }
    if h % 8 != 0 || w % 8 != 0 {
        return Err(Error::invalid(format!("image {h}×{w} is not a multiple of 8")));
    }
    let quality = 100.0 - ratio_percent;
    let n = h * w;
    let px = image.data();
    let (mut y, mut cb, mut cr) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for i in 0..n {
        let (r, g, b) = (255.0 * px[i], 255.0 * px[n + i], 255.0 * px[2 * n + i]);
        y[i] = 0.299 * r + 0.587 * g + 0.114 * b;
        cb[i] = -0.168_736 * r - 0.331_264 * g + 0.5 * b + 128.0;
        cr[i] = 0.5 * r - 0.418_688 * g - 0.081_312 * b + 128.0;
    }
    quantize_plane(&mut y, h, w, &quant_table(&LUMA, quality))?;
    let chroma = quant_table(&CHROMA, quality);
    quantize_plane(&mut cb, h, w, &chroma)?;
    quantize_plane(&mut cr, h, w, &chroma)?;
    let mut out = vec![0.0; 3 * n];
    for i in 0..n {
        let (yy, u, v) = (y[i], cb[i] - 128.0, cr[i] - 128.0);
        out[i] = (yy + 1.402 * v) / 255.0;
        out[n + i] = (yy - 0.344_136 * u - 0.714_136 * v) / 255.0;
        out[2 * n + i] = (yy + 1.772 * u) / 255.0;
    }
    Tensor::new(vec![3, h, w], out.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
}

/// Adds i.i.d. N(0, (intensity/100)²) noise and clamps to [0,1].
pub fn gaussian_noise(image: &Tensor, intensity_percent: f64, seed: u64) -> Result<Tensor> {
    check_percent("noise intensity", intensity_percent)?;
    let sigma = intensity_percent / 100.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = image
        .data()
        .iter()
        .map(|&v| {
            let z: f64 = StandardNormal.sample(&mut rng);
            (v + sigma * z).clamp(0.0, 1.0)
        })
        .collect();
    Tensor::new(image.shape().to_vec(), data)
}

/// Peak signal-to-noise ratio in dB for signals in [0,1]; infinite when equal.
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("psnr", a.shape(), b.shape()));
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64;
    Ok(-10.0 * mse.log10())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Perturbation {
    Identity,
    JpegLike { ratio: f64 },
    GaussianNoise { intensity: f64, seed: u64 },
}

impl Perturbation {
    /// JPEG 25/50/75 then noise 10/15/20.
    pub fn standard_set(seed: u64) -> Vec<Perturbation> {
        let mut out: Vec<_> = [25.0, 50.0, 75.0]
            .into_iter()
            .map(|ratio| Perturbation::JpegLike { ratio })
            .collect();
        out.extend(
            [10.0, 15.0, 20.0]
                .into_iter()
                .map(|intensity| Perturbation::GaussianNoise { intensity, seed }),
        );
        out
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Perturbation::Identity => Ok(()),
            Perturbation::JpegLike { ratio } => check_percent("compression ratio", ratio),
            Perturbation::GaussianNoise { intensity, .. } => {
                check_percent("noise intensity", intensity)
            }
        }
    }

    /// Applies the perturbation to the `index`-th image of a split. Noise
    /// seeds are offset per image so samples receive independent draws.
    pub fn apply(&self, image: &Tensor, index: usize) -> Result<Tensor> {
        match *self {
            Perturbation::Identity => Ok(image.clone()),
            Perturbation::JpegLike { ratio } => jpeg_like_compress(image, ratio),
            Perturbation::GaussianNoise { intensity, seed } => gaussian_noise(
                image,
                intensity,
                seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            ),
        }
    }

    /// Short descriptor such as `jpeg-25` or `noise-10`, usable in file names.
    pub fn descriptor(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Perturbation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Perturbation::Identity => write!(f, "clean"),
            Perturbation::JpegLike { ratio } => write!(f, "jpeg-{ratio}"),
            Perturbation::GaussianNoise { intensity, .. } => write!(f, "noise-{intensity}"),
        }
    }
}

/// Evaluates `predictor` on every perturbed copy of `samples`, one report per
/// perturbation in input order.
pub fn robustness_sweep<P: SequencePredictor + ?Sized>(
    predictor: &P,
    samples: &[LabeledImage],
    perturbations: &[Perturbation],
) -> Result<Vec<MetricsReport>> {
    if samples.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty split"));
    }
    perturbations
        .iter()
        .map(|p| {
            p.validate()?;
            let perturbed = samples
                .par_iter()
                .enumerate()
                .map(|(i, s)| {
                    Ok(LabeledImage {
                        id: s.id.clone(),
                        image: p.apply(&s.image, i)?,
                        gt: s.gt.clone(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            evaluate(predictor, &perturbed, &p.descriptor())
        })
        .collect()
}

//! Procedural faces with sequential localized edits.
//!
//! Each edit shifts the colour of its attribute's region and overlays a
//! pixel-level checkerboard, then the whole canvas is partially re-smoothed.
//! The smoothing attenuates earlier checkerboards geometrically, so the
//! residual texture amplitude of a region tells how many edits followed it.

use std::fs;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::image_io::write_image;
use super::manifest::{write_manifest, EditMethod, EditStep, SampleRecord, SourceTag};
use super::ssim::ssim;
use crate::error::{Error, Result};
use crate::labels::{AttributeLabel, EditSequence, MAX_EDITS};
use crate::numerics::Tensor;

pub const MANIFEST_NAME: &str = "manifest.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub count: usize,
    /// Relative frequency of sequence lengths 0..=4.
    pub length_weights: [f64; MAX_EDITS + 1],
    pub seed: u64,
    /// Square canvas side; a multiple of 16.
    pub size: usize,
    /// Scales both the colour shift and the texture of every edit.
    pub strength: f64,
    /// Blend weight of the blurred canvas in the post-edit smoothing.
    pub smoothing: f64,
    /// When set, sequences are drawn only from this list.
    pub whitelist: Option<Vec<EditSequence>>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            count: 1000,
            length_weights: [1.0; MAX_EDITS + 1],
            seed: 0,
            size: 64,
            strength: 2.5,
            smoothing: 0.5,
            whitelist: None,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::invalid("count must be positive"));
        }
        if self.length_weights.iter().any(|w| !w.is_finite() || *w < 0.0)
            || self.length_weights.iter().all(|&w| w == 0.0)
        {
            return Err(Error::invalid("length weights must be non-negative and not all zero"));
        }
        if self.size < 16 || self.size % 16 != 0 {
            return Err(Error::invalid(format!("size {} is not a positive multiple of 16", self.size)));
        }
        if !(0.0..1.0).contains(&self.smoothing) || self.strength <= 0.0 {
            return Err(Error::invalid("smoothing must be in [0,1) and strength positive"));
        }
        if let Some(list) = &self.whitelist {
            for (len, &w) in self.length_weights.iter().enumerate() {
                if w > 0.0 && !list.iter().any(|s| s.len() == len) {
                    return Err(Error::invalid(format!(
                        "whitelist has no sequence of length {len}"
                    )));
                }
            }
            if let Some(s) = list.iter().find(|s| s.has_repeats()) {
                return Err(Error::invalid(format!("whitelisted sequence {s} repeats an attribute")));
            }
        }
        Ok(())
    }
}

/// Canonical region of an attribute on the 64×64 layout: rows then columns,
/// half-open.
pub fn canonical_region(attr: AttributeLabel) -> (usize, usize, usize, usize) {
    match attr {
        AttributeLabel::Hat => (2, 8, 16, 48),
        AttributeLabel::Hair => (11, 17, 12, 52),
        AttributeLabel::Eyebrows => (20, 24, 18, 46),
        AttributeLabel::Eyes => (27, 32, 18, 46),
        AttributeLabel::Glasses => (35, 40, 16, 48),
        AttributeLabel::Lips => (46, 52, 24, 40),
    }
}

#[derive(Clone, Debug)]
pub struct RenderedSample {
    pub base: Tensor,
    pub image: Tensor,
    /// One `[1×H×W]` {0,1} mask per step.
    pub masks: Vec<Tensor>,
    pub sequence: EditSequence,
}

struct Canvas {
    size: usize,
    data: Vec<f64>,
}

impl Canvas {
    fn at(&mut self, c: usize, y: usize, x: usize) -> &mut f64 {
        &mut self.data[(c * self.size + y) * self.size + x]
    }

    /// Separable [1,2,1]/4 blur with replicated borders.
    fn blurred(&self) -> Vec<f64> {
        let n = self.size;
        let mut tmp = vec![0.0; self.data.len()];
        let mut out = vec![0.0; self.data.len()];
        for c in 0..3 {
            let plane = &self.data[c * n * n..(c + 1) * n * n];
            for y in 0..n {
                for x in 0..n {
                    let l = plane[y * n + x.saturating_sub(1)];
                    let r = plane[y * n + (x + 1).min(n - 1)];
                    tmp[c * n * n + y * n + x] = 0.25 * l + 0.5 * plane[y * n + x] + 0.25 * r;
                }
            }
            let plane = &tmp[c * n * n..(c + 1) * n * n];
            for y in 0..n {
                for x in 0..n {
                    let u = plane[y.saturating_sub(1) * n + x];
                    let d = plane[(y + 1).min(n - 1) * n + x];
                    out[c * n * n + y * n + x] = 0.25 * u + 0.5 * plane[y * n + x] + 0.25 * d;
                }
            }
        }
        out
    }

    fn smooth(&mut self, s: f64) {
        let b = self.blurred();
        for (v, bv) in self.data.iter_mut().zip(b) {
            *v = (1.0 - s) * *v + s * bv;
        }
    }

    fn into_tensor(self) -> Tensor {
        let n = self.size;
        Tensor::from_parts(vec![3, n, n], self.data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
    }
}

fn color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.random_range(0.3..0.65), rng.random_range(0.3..0.65), rng.random_range(0.3..0.65)]
}

fn sample_sequence(config: &SynthConfig, rng: &mut ChaCha8Rng) -> EditSequence {
    let lengths = WeightedIndex::new(config.length_weights).expect("validated weights");
    let k = lengths.sample(rng);
    if let Some(list) = &config.whitelist {
        let pool: Vec<&EditSequence> = list.iter().filter(|s| s.len() == k).collect();
        return (*pool.choose(rng).expect("validated whitelist")).clone();
    }
    let mut attrs = AttributeLabel::ALL;
    attrs.shuffle(rng);
    EditSequence::new(attrs[..k].to_vec()).expect("at most four distinct attributes")
}

/// Renders sample `index` of the dataset described by `config`, in memory.
pub fn render_sample(config: &SynthConfig, index: usize) -> RenderedSample {
    let mut rng = ChaCha8Rng::seed_from_u64(
        config.seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15),
    );
    let sequence = sample_sequence(config, &mut rng);
    let n = config.size;
    let sc = n as f64 / 64.0;
    let dy = rng.random_range(-2i32..=2) as f64;
    let dx = rng.random_range(-2i32..=2) as f64;
    let bg = color(&mut rng);
    let skin = color(&mut rng);
    let hair = color(&mut rng).map(|v| v - 0.1);
    let dark = color(&mut rng).map(|v| v - 0.15);
    let lips = [rng.random_range(0.5..0.7), rng.random_range(0.25..0.4), rng.random_range(0.25..0.45)];

    // Features are described on the 64 grid and evaluated at pixel centres.
    let ellipse = |y: f64, x: f64, cy: f64, cx: f64, ry: f64, rx: f64| {
        ((y - cy - dy) / ry).powi(2) + ((x - cx - dx) / rx).powi(2) <= 1.0
    };
    let mut canvas = Canvas { size: n, data: vec![0.0; 3 * n * n] };
    for py in 0..n {
        for px in 0..n {
            let (y, x) = ((py as f64 + 0.5) / sc, (px as f64 + 0.5) / sc);
            let mut col = bg;
            if ellipse(y, x, 34.0, 32.0, 26.0, 20.0) {
                col = skin;
            }
            if ellipse(y, x, 14.0, 32.0, 8.0, 21.0) {
                col = hair;
            }
            if ellipse(y, x, 22.0, 25.0, 1.5, 5.0) || ellipse(y, x, 22.0, 39.0, 1.5, 5.0) {
                col = dark;
            }
            if ellipse(y, x, 29.5, 25.0, 2.0, 3.5) || ellipse(y, x, 29.5, 39.0, 2.0, 3.5) {
                col = dark;
            }
            if ellipse(y, x, 49.0, 32.0, 2.5, 6.5) {
                col = lips;
            }
            for c in 0..3 {
                *canvas.at(c, py, px) = col[c];
            }
        }
    }
    // soft enough that the per-edit smoothing barely moves unedited pixels
    for _ in 0..6 {
        canvas.smooth(1.0);
    }
    let base = Canvas { size: n, data: canvas.data.clone() }.into_tensor();

    let shift = 0.15 * config.strength;
    let texture = 0.2 * config.strength;
    let pad = n / 16;
    let mut masks = Vec::with_capacity(sequence.len());
    for &attr in sequence.as_slice() {
        let (y0, y1, x0, x1) = canonical_region(attr);
        let place = |v: usize, d: f64| (((v as f64 + d) * sc).round().max(0.0) as usize).min(n);
        let (y0, y1, x0, x1) = (place(y0, dy), place(y1, dy), place(x0, dx), place(x1, dx));
        let dir: [f64; 3] = std::array::from_fn(|_| if rng.random_bool(0.5) { shift } else { -shift });
        for y in y0..y1 {
            for x in x0..x1 {
                let checker = if (x + y) % 2 == 0 { texture } else { -texture };
                for (c, d) in dir.iter().enumerate() {
                    *canvas.at(c, y, x) += d + checker;
                }
            }
        }
        canvas.smooth(config.smoothing);
        let mut mask = vec![0.0; n * n];
        for y in y0.saturating_sub(pad)..(y1 + pad).min(n) {
            for x in x0.saturating_sub(pad)..(x1 + pad).min(n) {
                mask[y * n + x] = 1.0;
            }
        }
        masks.push(Tensor::from_parts(vec![1, n, n], mask));
    }
    RenderedSample { base, image: canvas.into_tensor(), masks, sequence }
}

/// Rounds to the 8-bit grid used on disk.
pub fn quantize8(t: &Tensor) -> Tensor {
    t.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
}

/// Renders `config.count` samples into `out_dir` (`images/`, `sources/`,
/// `masks/` and `manifest.jsonl`) and returns the manifest records.
pub fn synth_generate(config: &SynthConfig, out_dir: &Path) -> Result<Vec<SampleRecord>> {
    config.validate()?;
    for sub in ["images", "sources", "masks"] {
        let dir = out_dir.join(sub);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let records = (0..config.count)
        .into_par_iter()
        .map(|i| {
            let s = render_sample(config, i);
            let id = format!("{i:06}");
            let image = format!("images/{id}.png");
            let base = format!("sources/{id}.png");
            write_image(&out_dir.join(&image), &s.image)?;
            write_image(&out_dir.join(&base), &s.base)?;
            let mut steps = Vec::with_capacity(s.masks.len());
            for (k, (attr, mask)) in s.sequence.as_slice().iter().zip(&s.masks).enumerate() {
                let path = format!("masks/{id}_{k}.png");
                write_image(&out_dir.join(&path), mask)?;
                steps.push(EditStep {
                    attribute: *attr,
                    method: EditMethod::Synthetic,
                    prompt: format!("retexture the {attr}"),
                    mask: Some(path),
                });
            }
            Ok(SampleRecord {
                id,
                image,
                base: Some(base),
                source: SourceTag::Synthetic,
                ssim: ssim(&quantize8(&s.image), &quantize8(&s.base))?.clamp(0.0, 1.0),
                dino: None,
                clip: None,
                num_steps: steps.len(),
                steps,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_manifest(&out_dir.join(MANIFEST_NAME), &records)?;
    Ok(records)
}

//! Annotation manifests, the synthetic generator, balanced splits and SSIM.

mod image_io;
mod manifest;
mod partition;
mod ssim;
mod synth;

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;

pub use image_io::{read_image, read_image_raw, read_mask, write_image};
pub use manifest::{
    load_manifest, manifest_root, manifest_to_string, parse_manifest, write_manifest, EditMethod,
    EditStep, SampleRecord, SourceTag,
};
pub use partition::{balanced_partition, Split, SplitAssignment};
pub use ssim::{quality_filter, ssim, ImagePair};
pub use synth::{
    canonical_region, quantize8, render_sample, synth_generate, RenderedSample, SynthConfig,
    MANIFEST_NAME,
};

use crate::error::{Error, Result};
use crate::metrics::LabeledImage;

/// Loads the images of `ids` (in that order) from the manifest at
/// `manifest_path`.
pub fn load_samples(
    manifest_path: &Path,
    records: &[SampleRecord],
    ids: &[String],
) -> Result<Vec<LabeledImage>> {
    let root = manifest_root(manifest_path);
    let by_id: HashMap<&str, &SampleRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    ids.par_iter()
        .map(|id| {
            let rec = by_id
                .get(id.as_str())
                .ok_or_else(|| Error::Validation(format!("split id {id} not in manifest")))?;
            Ok(LabeledImage {
                id: id.clone(),
                image: read_image(&root.join(&rec.image))?,
                gt: rec.sequence()?,
            })
        })
        .collect()
}

/// Reads the edited and source images of every record that names a source.
pub fn load_image_pairs(
    manifest_path: &Path,
    records: &[SampleRecord],
) -> Result<std::collections::BTreeMap<String, ImagePair>> {
    let root = manifest_root(manifest_path);
    records
        .par_iter()
        .filter_map(|r| r.base.as_ref().map(|b| (r, b)))
        .map(|(r, base)| {
            Ok((
                r.id.clone(),
                ImagePair {
                    edited: read_image(&root.join(&r.image))?,
                    source: read_image(&root.join(base))?,
                },
            ))
        })
        .collect()
}

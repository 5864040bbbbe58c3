//! Line-delimited JSON annotation manifest.
//!
//! One record per line, fields in this order:
//!
//! ```text
//! {"id":"000042","image":"images/000042.png","base":"sources/000042.png",
//!  "source":"synthetic","ssim":0.91,"num_steps":2,
//!  "steps":[{"attribute":"hair","method":"synthetic","prompt":"...","mask":"masks/000042_0.png"},...]}
//! ```
//!
//! `base` (the unedited image), `dino`, `clip` and per-step `mask` are
//! optional and omitted when absent; `dino` and `clip` follow `ssim`. Paths
//! are relative to the manifest's directory. Unknown fields are rejected.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{AttributeLabel, EditSequence, MAX_EDITS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EditMethod {
    #[serde(rename = "ledits")]
    LEdits,
    #[serde(rename = "sdxl")]
    Sdxl,
    #[serde(rename = "sd3_ultraedit")]
    Sd3UltraEdit,
    #[serde(rename = "synthetic")]
    Synthetic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceTag {
    Ffhq,
    CelebaMaskHq,
    Synthetic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditStep {
    pub attribute: AttributeLabel,
    pub method: EditMethod,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub id: String,
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<String>,
    pub source: SourceTag,
    pub ssim: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dino: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip: Option<f64>,
    pub num_steps: usize,
    pub steps: Vec<EditStep>,
}

impl SampleRecord {
    /// Edited attributes in application order.
    pub fn sequence(&self) -> Result<EditSequence> {
        EditSequence::new(self.steps.iter().map(|s| s.attribute).collect())
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Checks the per-record invariants.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Validation(format!("record {}: {msg}", self.id)));
        if self.id.is_empty() {
            return Err(Error::Validation("record with empty id".into()));
        }
        if self.steps.len() > MAX_EDITS {
            return fail(format!(
                "{} steps exceed the maximum of {MAX_EDITS}",
                self.steps.len()
            ));
        }
        if self.num_steps != self.steps.len() {
            return fail(format!(
                "num_steps is {} but {} steps are listed",
                self.num_steps,
                self.steps.len()
            ));
        }
        let mut seen = HashSet::new();
        for step in &self.steps {
            if !seen.insert(step.attribute) {
                return fail(format!("attribute {} edited twice", step.attribute));
            }
            if step.prompt.trim().is_empty() {
                return fail("empty prompt".into());
            }
        }
        if !(0.0..=1.0).contains(&self.ssim) {
            return fail(format!("ssim {} outside [0,1]", self.ssim));
        }
        Ok(())
    }
}

/// Parses manifest text; line numbers in errors are 1-based. Blank lines are
/// skipped.
pub fn parse_manifest(text: &str) -> Result<Vec<SampleRecord>> {
    let mut records = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleRecord = serde_json::from_str(line).map_err(|e| Error::Manifest {
            line: i + 1,
            msg: e.to_string(),
        })?;
        rec.validate()?;
        if !ids.insert(rec.id.clone()) {
            return Err(Error::Validation(format!(
                "duplicate id {} (line {})",
                rec.id,
                i + 1
            )));
        }
        records.push(rec);
    }
    Ok(records)
}

pub fn load_manifest(path: &Path) -> Result<Vec<SampleRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text)
}

pub fn manifest_to_string(records: &[SampleRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_manifest(path: &Path, records: &[SampleRecord]) -> Result<()> {
    fs::write(path, manifest_to_string(records)).map_err(|e| Error::io(path, e))
}

/// Directory that relative paths in the manifest at `path` resolve against.
pub fn manifest_root(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

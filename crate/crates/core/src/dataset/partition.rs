use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::SampleRecord;
use crate::error::{Error, Result};
use crate::labels::MAX_EDITS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Ids per split, each list in selection order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitAssignment {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitAssignment {
    pub fn ids(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flattened id → split map; fails if an id appears twice.
    pub fn to_map(&self) -> Result<BTreeMap<String, Split>> {
        let mut map = BTreeMap::new();
        for split in [Split::Train, Split::Val, Split::Test] {
            for id in self.ids(split) {
                if map.insert(id.clone(), split).is_some() {
                    return Err(Error::Validation(format!("id {id} assigned to two splits")));
                }
            }
        }
        Ok(map)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("splits serialize") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: SplitAssignment =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("splits: {e}")))?;
        s.to_map()?;
        Ok(s)
    }
}

/// Draws exactly `per_length` records of every length 0..=4 and splits each
/// draw by `ratios` (train:val:test). Val and test sizes are floored; the
/// remainder goes to train.
pub fn balanced_partition(
    records: &[SampleRecord],
    per_length: usize,
    ratios: (u32, u32, u32),
    seed: u64,
) -> Result<SplitAssignment> {
    let total = (ratios.0 + ratios.1 + ratios.2) as usize;
    if per_length == 0 || total == 0 {
        return Err(Error::invalid("per_length and ratio sum must be positive"));
    }
    let mut seen = HashSet::new();
    let mut by_len: Vec<Vec<&str>> = vec![Vec::new(); MAX_EDITS + 1];
    for r in records {
        if !seen.insert(r.id.as_str()) {
            return Err(Error::Validation(format!("duplicate id {}", r.id)));
        }
        if r.len() > MAX_EDITS {
            return Err(Error::Validation(format!("record {} has {} steps", r.id, r.len())));
        }
        by_len[r.len()].push(&r.id);
    }
    let n_val = per_length * ratios.1 as usize / total;
    let n_test = per_length * ratios.2 as usize / total;
    let n_train = per_length - n_val - n_test;
    let mut out = SplitAssignment::default();
    for (len, ids) in by_len.iter_mut().enumerate() {
        if ids.len() < per_length {
            return Err(Error::Insufficient(format!(
                "length {len}: need {per_length}, have {}",
                ids.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (len as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        ids.shuffle(&mut rng);
        let pick = &ids[..per_length];
        out.train.extend(pick[..n_train].iter().map(|s| s.to_string()));
        out.val.extend(pick[n_train..n_train + n_val].iter().map(|s| s.to_string()));
        out.test.extend(pick[n_train + n_val..].iter().map(|s| s.to_string()));
    }
    Ok(out)
}

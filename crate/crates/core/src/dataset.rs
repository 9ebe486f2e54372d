//! Dataset manifests, per-speaker train/val/test splitting and the masking
//! schedule.

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const DEFAULT_RATIOS: [f64; 3] = [0.85, 0.075, 0.075];
pub const MAX_MASK_RATIO: f64 = 0.95;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid split ratios {0:?}: must be non-negative and sum to 1")]
    Ratios([f64; 3]),
    #[error("sequence '{sequence}': {what} file {path} does not exist")]
    MissingFile { sequence: String, what: &'static str, path: PathBuf },
    #[error("duplicate sequence id '{0}'")]
    Duplicate(String),
    #[error("manifest: {0}")]
    Json(#[from] serde_json::Error),
    #[error("manifest: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceEntry {
    pub speaker_id: String,
    pub sequence_id: String,
    pub duration_s: f64,
    pub motion: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<PathBuf>,
    /// Optical marker observations for body fitting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub markers: Option<PathBuf>,
    /// Per-frame ARKit blendshape weights.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub face_weights: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub sequences: Vec<SequenceEntry>,
}

impl DatasetManifest {
    pub fn read(path: &Path) -> Result<Self, DatasetError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    /// Checks ids are unique and every referenced file exists, resolving
    /// relative paths against `base`.
    pub fn validate(&self, base: &Path) -> Result<(), DatasetError> {
        let mut seen = std::collections::HashSet::new();
        for s in &self.sequences {
            if !seen.insert(s.sequence_id.as_str()) {
                return Err(DatasetError::Duplicate(s.sequence_id.clone()));
            }
            let files = [
                ("motion", Some(&s.motion)),
                ("audio", s.audio.as_ref()),
                ("transcript", s.transcript.as_ref()),
                ("markers", s.markers.as_ref()),
                ("face weights", s.face_weights.as_ref()),
            ];
            for (what, p) in files {
                if let Some(p) = p {
                    let full = base.join(p);
                    if !full.exists() {
                        return Err(DatasetError::MissingFile { sequence: s.sequence_id.clone(), what, path: full });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn count(&self, split: Split) -> usize {
        self.sequences.iter().filter(|s| s.split == Some(split)).count()
    }
}

/// Split sizes for `n` sequences: train gets `floor(r0·n)`, val gets
/// `floor((r0+r1)·n) − train`, test the remainder.
pub fn split_counts(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let cum = |r: f64| ((r * n as f64 + 1e-9).floor() as usize).min(n);
    let train = cum(ratios[0]);
    let val = cum(ratios[0] + ratios[1]) - train;
    [train, val, n - train - val]
}

fn speaker_rng(seed: u64, speaker: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(speaker.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Assigns a split to every sequence, keeping the ratios per speaker.
/// Returns the new manifest and one warning per speaker with fewer than
/// three sequences (those go entirely to train).
pub fn split_dataset(manifest: &DatasetManifest, ratios: [f64; 3], seed: u64) -> Result<(DatasetManifest, Vec<String>), DatasetError> {
    if ratios.iter().any(|r| !(*r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DatasetError::Ratios(ratios));
    }
    let mut by_speaker: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in manifest.sequences.iter().enumerate() {
        by_speaker.entry(s.speaker_id.as_str()).or_default().push(i);
    }
    let mut out = manifest.clone();
    let mut warnings = Vec::new();
    for (speaker, mut idx) in by_speaker {
        if idx.len() < 3 {
            let msg = format!("speaker '{speaker}' has {} sequence(s); all assigned to train", idx.len());
            log::warn!("{msg}");
            warnings.push(msg);
            for i in idx {
                out.sequences[i].split = Some(Split::Train);
            }
            continue;
        }
        idx.sort_by(|&a, &b| manifest.sequences[a].sequence_id.cmp(&manifest.sequences[b].sequence_id));
        idx.shuffle(&mut speaker_rng(seed, speaker));
        let [train, val, _] = split_counts(idx.len(), ratios);
        for (k, i) in idx.into_iter().enumerate() {
            out.sequences[i].split = Some(if k < train {
                Split::Train
            } else if k < train + val {
                Split::Val
            } else {
                Split::Test
            });
        }
    }
    Ok((out, warnings))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskPlan {
    pub epoch: u64,
    pub total_epochs: u64,
    pub ratio: f64,
    pub masked_frames: Vec<usize>,
    pub masked_joints: Vec<usize>,
    pub seed: u64,
}

/// `min(0.95, 0.95·epoch/total)`; epochs past the end stay at the cap, and
/// a zero-length schedule is treated as finished.
pub fn mask_ratio(epoch: u64, total_epochs: u64) -> f64 {
    if total_epochs == 0 {
        return MAX_MASK_RATIO;
    }
    (MAX_MASK_RATIO * (epoch as f64 / total_epochs as f64)).min(MAX_MASK_RATIO)
}

/// Frame and joint index sets of `round(ratio·T)` and `round(ratio·J)`
/// elements, drawn without replacement and returned sorted.
pub fn mask_plan(epoch: u64, total_epochs: u64, frames: usize, joints: usize, seed: u64) -> MaskPlan {
    let ratio = mask_ratio(epoch, total_epochs);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut draw = |n: usize| {
        let k = ((ratio * n as f64).round() as usize).min(n);
        let mut v = index::sample(&mut rng, n, k).into_vec();
        v.sort_unstable();
        v
    };
    let masked_frames = draw(frames);
    let masked_joints = draw(joints);
    MaskPlan { epoch, total_epochs, ratio, masked_frames, masked_joints, seed }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(speakers: &[(&str, usize)]) -> DatasetManifest {
        let sequences = speakers
            .iter()
            .flat_map(|(s, n)| {
                (0..*n).map(move |i| SequenceEntry {
                    speaker_id: s.to_string(),
                    sequence_id: format!("{s}_{i:03}"),
                    duration_s: 10.0,
                    motion: format!("{s}_{i:03}.bvh").into(),
                    ..Default::default()
                })
            })
            .collect();
        DatasetManifest { sequences }
    }

    #[test]
    fn forty_sequences() {
        assert_eq!(split_counts(40, DEFAULT_RATIOS), [34, 3, 3]);
        let (m, w) = split_dataset(&manifest(&[("a", 40)]), DEFAULT_RATIOS, 1).unwrap();
        assert!(w.is_empty());
        assert_eq!([m.count(Split::Train), m.count(Split::Val), m.count(Split::Test)], [34, 3, 3]);
    }

    #[test]
    fn small_speaker_goes_to_train() {
        let (m, w) = split_dataset(&manifest(&[("solo", 1), ("b", 20)]), DEFAULT_RATIOS, 2).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(m.sequences[0].split, Some(Split::Train));
    }

    #[test]
    fn ratio_endpoints() {
        assert_eq!(mask_ratio(0, 400), 0.0);
        assert_eq!(mask_ratio(400, 400), 0.95);
        assert_eq!(mask_ratio(200, 400), 0.475);
        assert_eq!(mask_ratio(500, 400), 0.95);
        let p = mask_plan(0, 10, 100, 55, 3);
        assert!(p.masked_frames.is_empty() && p.masked_joints.is_empty());
    }
}

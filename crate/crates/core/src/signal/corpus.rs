use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{load_csv, save_csv, CsvOptions, Trajectory, DEFAULT_DT};
use crate::error::{invalid, FldError, Result};

/// One entry of a corpus manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// CSV path, relative to the manifest's directory unless absolute.
    pub path: PathBuf,
    #[serde(default)]
    pub label: Option<String>,
}

/// JSON document listing the trajectory files of a corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub d: usize,
    #[serde(default)]
    pub header: bool,
    pub trajectories: Vec<ManifestEntry>,
}

fn default_dt() -> f64 {
    DEFAULT_DT
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub trajectories: Vec<Trajectory>,
}

impl Corpus {
    pub fn new(trajectories: Vec<Trajectory>) -> Result<Self> {
        if let Some(first) = trajectories.first() {
            if trajectories.iter().any(|t| t.dim() != first.dim()) {
                return invalid("corpus trajectories have different state dimensions");
            }
        }
        Ok(Self { trajectories })
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.trajectories.first().map(|t| t.dim())
    }

    pub fn dt(&self) -> Option<f64> {
        self.trajectories.first().map(|t| t.dt)
    }

    pub fn total_frames(&self) -> usize {
        self.trajectories.iter().map(|t| t.len()).sum()
    }

    /// Reads a manifest and every CSV it lists.
    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let manifest_path = manifest_path.as_ref();
        let text = std::fs::read_to_string(manifest_path)?;
        let m: CorpusManifest = serde_json::from_str(&text)?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let mut trajs = Vec::with_capacity(m.trajectories.len());
        for e in &m.trajectories {
            let p = if e.path.is_absolute() {
                e.path.clone()
            } else {
                base.join(&e.path)
            };
            let opts = CsvOptions {
                header: m.header,
                dt: m.dt,
                label: e.label.clone(),
                min_frames: None,
            };
            trajs.push(load_csv(&p, m.d, &opts)?);
        }
        Self::new(trajs)
    }

    /// Writes one CSV per trajectory plus `manifest.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let d = self
            .dim()
            .ok_or_else(|| FldError::Empty("cannot save an empty corpus".into()))?;
        let mut entries = Vec::new();
        for (i, t) in self.trajectories.iter().enumerate() {
            let name = PathBuf::from(format!("traj_{i:03}.csv"));
            save_csv(t, dir.join(&name))?;
            entries.push(ManifestEntry {
                path: name,
                label: t.label.clone(),
            });
        }
        let m = CorpusManifest {
            dt: self.dt().unwrap_or(DEFAULT_DT),
            d,
            header: false,
            trajectories: entries,
        };
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&m)?)?;
        Ok(path)
    }

    /// Seeded split at trajectory granularity. The validation side gets
    /// `round(n·val_fraction)` trajectories, at least one when `n ≥ 2`.
    pub fn split(&self, val_fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
        if !(0.0..1.0).contains(&val_fraction) {
            return invalid(format!(
                "validation fraction must lie in [0, 1), got {val_fraction}"
            ));
        }
        let n = self.len();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut nval = (n as f64 * val_fraction).round() as usize;
        if val_fraction > 0.0 && n >= 2 {
            nval = nval.clamp(1, n - 1);
        }
        let (val, train) = idx.split_at(nval);
        let mut train = train.to_vec();
        let mut val = val.to_vec();
        train.sort_unstable();
        val.sort_unstable();
        let pick = |ix: &[usize]| Corpus {
            trajectories: ix.iter().map(|&i| self.trajectories[i].clone()).collect(),
        };
        Ok((pick(&train), pick(&val)))
    }
}

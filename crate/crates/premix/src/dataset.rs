//! Dataset manifest handling and the seeded synthetic generator that stands
//! in for pre-extracted slide features at desk scale.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bag::{load_bag, save_bag, FeatureBag};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Pretrain,
    Pool,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Pretrain => "pretrain",
            Split::Pool => "pool",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(Split::Pretrain),
            "pool" => Ok(Split::Pool),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Bag file path, relative to the manifest's directory.
    pub path: String,
    pub label: Option<u8>,
    pub split: Split,
}

/// The manifest is a plain JSON array of entries; slide ids are unique and
/// every path must resolve when the dataset is opened.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.entries)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let entries: Vec<ManifestEntry> = serde_json::from_slice(&bytes)?;
        let manifest = DatasetManifest { entries };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::invalid(format!("duplicate slide id {}", e.id)));
            }
            if let Some(l) = e.label {
                if l > 1 {
                    return Err(Error::invalid(format!("label {l} for {}", e.id)));
                }
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }
}

/// An opened dataset: manifest plus the directory its paths resolve against.
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub root: PathBuf,
}

impl Dataset {
    pub fn open(manifest_path: &Path) -> Result<Self> {
        let manifest = DatasetManifest::load(manifest_path)?;
        let root = manifest_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        let ds = Dataset { manifest, root };
        for e in &ds.manifest.entries {
            let p = ds.root.join(&e.path);
            if !p.exists() {
                return Err(Error::invalid(format!(
                    "bag file {} for slide {} not found",
                    p.display(),
                    e.id
                )));
            }
        }
        Ok(ds)
    }

    pub fn load_entry(&self, entry: &ManifestEntry) -> Result<FeatureBag> {
        let mut bag = load_bag(&self.root.join(&entry.path))?;
        bag.slide_id = entry.id.clone();
        bag.label = entry.label;
        Ok(bag)
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<FeatureBag>> {
        self.manifest.split(split).map(|e| self.load_entry(e)).collect()
    }

    pub fn entry(&self, id: &str) -> Option<&ManifestEntry> {
        self.manifest.entries.iter().find(|e| e.id == id)
    }

    /// Ground-truth label for a slide, failing when the manifest holds none.
    pub fn label_of(&self, id: &str) -> Result<u8> {
        self.entry(id)
            .and_then(|e| e.label)
            .ok_or_else(|| Error::MissingLabel(id.to_string()))
    }
}

/// Parameters of the synthetic generator. Normal bags draw every region
/// from a zero-mean Gaussian; tumor bags replace `ceil(signal_fraction*R)`
/// randomly chosen regions with a mean-shifted Gaussian.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_pretrain: usize,
    pub n_pool: usize,
    pub n_test: usize,
    pub dim: usize,
    pub r_min: usize,
    pub r_max: usize,
    pub signal_fraction: f64,
    pub shift: f64,
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_pretrain: 300,
            n_pool: 100,
            n_test: 128,
            dim: 192,
            r_min: 8,
            r_max: 32,
            signal_fraction: 0.3,
            shift: 1.0,
            noise_scale: 1.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.r_min < 1 || self.r_max < self.r_min {
            return Err(Error::invalid("bag size range must satisfy 1 <= r_min <= r_max"));
        }
        if !(self.signal_fraction > 0.0 && self.signal_fraction <= 1.0) {
            return Err(Error::invalid("signal_fraction must lie in (0, 1]"));
        }
        if self.shift <= 0.0 {
            return Err(Error::invalid("shift must be positive"));
        }
        if self.noise_scale <= 0.0 {
            return Err(Error::invalid("noise_scale must be positive"));
        }
        if self.dim == 0 {
            return Err(Error::invalid("dim must be positive"));
        }
        Ok(())
    }

    /// Per-class quota for a split of `n` bags: normal gets the ceiling half.
    pub fn quotas(n: usize) -> (usize, usize) {
        let normal = n.div_ceil(2);
        (normal, n - normal)
    }
}

/// Generate bag files plus a manifest under `out_dir`. The result is a pure
/// function of the spec: same spec, same bytes. Pretrain entries carry no
/// label in the manifest; pool and test entries do.
pub fn synth_dataset(spec: &SynthSpec, out_dir: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    let bags_dir = out_dir.join("bags");
    fs::create_dir_all(&bags_dir).map_err(|e| Error::io(&bags_dir, e))?;

    let mut entries = Vec::new();
    for (split, n) in [
        (Split::Pretrain, spec.n_pretrain),
        (Split::Pool, spec.n_pool),
        (Split::Test, spec.n_test),
    ] {
        let (normal, _) = SynthSpec::quotas(n);
        for i in 0..n {
            let label = u8::from(i >= normal);
            let id = format!("{}_{:04}", split.as_str(), i);
            let bag = synth_bag(spec, split, i, label, &id);
            let rel = format!("bags/{id}.pmx");
            save_bag(&bag, &out_dir.join(&rel))?;
            entries.push(ManifestEntry {
                id,
                path: rel,
                label: if split == Split::Pretrain { None } else { Some(label) },
                split,
            });
        }
    }
    let manifest = DatasetManifest { entries };
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}

fn synth_bag(spec: &SynthSpec, split: Split, index: usize, label: u8, id: &str) -> FeatureBag {
    let purpose = format!("synth.{}", split.as_str());
    let mut rng = rng::stream(spec.seed, &purpose, index as u64);
    let regions = rng.random_range(spec.r_min..=spec.r_max);
    let mut features = vec![0.0f32; regions * spec.dim];
    for v in features.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v = (z * spec.noise_scale) as f32;
    }
    if label == 1 {
        let n_signal = ((spec.signal_fraction * regions as f64).ceil() as usize).clamp(1, regions);
        let mut positions: Vec<usize> = (0..regions).collect();
        // partial Fisher-Yates: the first n_signal entries are the shifted rows
        for k in 0..n_signal {
            let j = rng.random_range(k..regions);
            positions.swap(k, j);
        }
        for &r in &positions[..n_signal] {
            for v in &mut features[r * spec.dim..(r + 1) * spec.dim] {
                *v += spec.shift as f32;
            }
        }
    }
    FeatureBag::new(id, regions, spec.dim, features)
        .expect("generated bag is valid")
        .with_label(label)
        .expect("label in range")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec(seed: u64) -> SynthSpec {
        SynthSpec {
            n_pretrain: 6,
            n_pool: 5,
            n_test: 4,
            dim: 3,
            r_min: 2,
            r_max: 6,
            signal_fraction: 1.0,
            shift: 4.0,
            noise_scale: 1.0,
            seed,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        synth_dataset(&tiny_spec(9), d1.path()).unwrap();
        synth_dataset(&tiny_spec(9), d2.path()).unwrap();
        for entry in ["manifest.json", "bags/pool_0003.pmx", "bags/test_0000.pmx"] {
            assert_eq!(
                fs::read(d1.path().join(entry)).unwrap(),
                fs::read(d2.path().join(entry)).unwrap(),
                "{entry} differs between runs"
            );
        }
    }

    #[test]
    fn label_counts_match_quotas_and_pretrain_is_unlabeled() {
        let dir = tempfile::tempdir().unwrap();
        let m = synth_dataset(&tiny_spec(3), dir.path()).unwrap();
        assert!(m.split(Split::Pretrain).all(|e| e.label.is_none()));
        let pool_tumor = m.split(Split::Pool).filter(|e| e.label == Some(1)).count();
        let pool_normal = m.split(Split::Pool).filter(|e| e.label == Some(0)).count();
        assert_eq!((pool_normal, pool_tumor), SynthSpec::quotas(5));
        let test_tumor = m.split(Split::Test).filter(|e| e.label == Some(1)).count();
        assert_eq!(test_tumor, SynthSpec::quotas(4).1);
    }

    #[test]
    fn mean_threshold_oracle_separates_classes() {
        // With the full signal fraction and a large shift, thresholding the
        // per-bag mean at shift/2 must classify essentially perfectly.
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            n_pretrain: 0,
            n_pool: 40,
            n_test: 40,
            ..tiny_spec(11)
        };
        synth_dataset(&spec, dir.path()).unwrap();
        let ds = Dataset::open(&dir.path().join("manifest.json")).unwrap();
        let mut correct = 0usize;
        let mut total = 0usize;
        for split in [Split::Pool, Split::Test] {
            for bag in ds.load_split(split).unwrap() {
                let mean: f64 = bag.features.iter().map(|&v| f64::from(v)).sum::<f64>()
                    / bag.features.len() as f64;
                let pred = u8::from(mean > spec.shift / 2.0);
                total += 1;
                if pred == bag.label.unwrap() {
                    correct += 1;
                }
            }
        }
        assert!(correct as f64 / total as f64 >= 0.99, "{correct}/{total}");
    }

    #[test]
    fn splits_are_disjoint_and_paths_resolve() {
        let dir = tempfile::tempdir().unwrap();
        synth_dataset(&tiny_spec(5), dir.path()).unwrap();
        let ds = Dataset::open(&dir.path().join("manifest.json")).unwrap();
        let ids: HashSet<&str> = ds.manifest.entries.iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids.len(), ds.manifest.entries.len());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = tiny_spec(0);
        s.signal_fraction = 0.0;
        assert!(s.validate().is_err());
        let mut s = tiny_spec(0);
        s.r_min = 0;
        assert!(s.validate().is_err());
        let mut s = tiny_spec(0);
        s.shift = -1.0;
        assert!(s.validate().is_err());
    }
}

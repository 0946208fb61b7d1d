//! Feature bags: one slide's ragged region-feature matrix, the bit-exact
//! on-disk format, and zero-padded batching with validity masks.
//!
//! Bag file layout (little-endian): magic `PMX1`, u32 version, u32 region
//! count R, u32 feature width d, then R*d f32 values row-major. Labels are
//! never stored in bag files; they live in the dataset manifest.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BAG_MAGIC: [u8; 4] = *b"PMX1";
pub const BAG_VERSION: u32 = 1;

/// One slide: `regions x dim` feature matrix plus identity and an optional
/// class label (0 = normal, 1 = tumor).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBag {
    pub slide_id: String,
    /// Row-major `regions * dim` values.
    pub features: Vec<f32>,
    pub regions: usize,
    pub dim: usize,
    pub label: Option<u8>,
}

impl FeatureBag {
    pub fn new(slide_id: impl Into<String>, regions: usize, dim: usize, features: Vec<f32>) -> Result<Self> {
        let bag = FeatureBag {
            slide_id: slide_id.into(),
            features,
            regions,
            dim,
            label: None,
        };
        bag.validate()?;
        Ok(bag)
    }

    pub fn with_label(mut self, label: u8) -> Result<Self> {
        if label > 1 {
            return Err(Error::invalid(format!("label must be 0 or 1, got {label}")));
        }
        self.label = Some(label);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.regions == 0 {
            return Err(Error::invalid("a bag needs at least one region"));
        }
        if self.dim == 0 {
            return Err(Error::invalid("feature dimension must be positive"));
        }
        if self.features.len() != self.regions * self.dim {
            return Err(Error::shape(format!(
                "bag {} has {} values for shape {}x{}",
                self.slide_id,
                self.features.len(),
                self.regions,
                self.dim
            )));
        }
        if let Some(l) = self.label {
            if l > 1 {
                return Err(Error::invalid(format!("label must be 0 or 1, got {l}")));
            }
        }
        if !self.features.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("bag {}", self.slide_id)));
        }
        Ok(())
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.features[r * self.dim..(r + 1) * self.dim]
    }
}

/// Fixed-shape batch: `data[n, r_max, dim]` with a validity mask.
/// Valid positions form a contiguous prefix per sample; padded positions
/// hold exact zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct PaddedBatch {
    pub data: Tensor,
    /// `valid[i][t]` is true when position `t` of sample `i` is a real region.
    pub valid: Vec<Vec<bool>>,
}

impl PaddedBatch {
    pub fn batch_size(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn r_max(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn dim(&self) -> usize {
        self.data.shape()[2]
    }

    /// Count of valid regions for sample `i`.
    pub fn len_of(&self, i: usize) -> usize {
        self.valid[i].iter().filter(|&&v| v).count()
    }

    /// Validity mask as a 0/1 float tensor `[n, r_max]`.
    pub fn mask_tensor(&self) -> Tensor {
        let (n, r) = (self.batch_size(), self.r_max());
        let mut m = vec![0.0; n * r];
        for i in 0..n {
            for t in 0..r {
                if self.valid[i][t] {
                    m[i * r + t] = 1.0;
                }
            }
        }
        Tensor::new(vec![n, r], m)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, r, d) = (self.batch_size(), self.r_max(), self.dim());
        if self.valid.len() != n {
            return Err(Error::shape("mask batch size mismatch"));
        }
        for i in 0..n {
            if self.valid[i].len() != r {
                return Err(Error::shape("mask width mismatch"));
            }
            let len = self.len_of(i);
            if len == 0 {
                return Err(Error::invalid(format!("sample {i} has no valid region")));
            }
            // trailing padding: valid positions must be the prefix
            if self.valid[i][..len].iter().any(|&v| !v) {
                return Err(Error::invalid(format!("sample {i} mask is not a prefix")));
            }
            for t in len..r {
                let row = &self.data.data()[(i * r + t) * d..(i * r + t + 1) * d];
                if row.iter().any(|&v| v != 0.0) {
                    return Err(Error::invalid(format!(
                        "sample {i} has nonzero data at padded position {t}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Write a bag in the `PMX1` format. Two saves of the same bag produce
/// byte-identical files.
pub fn save_bag(bag: &FeatureBag, path: &Path) -> Result<()> {
    bag.validate()?;
    let mut buf = Vec::with_capacity(16 + bag.features.len() * 4);
    buf.extend_from_slice(&BAG_MAGIC);
    buf.extend_from_slice(&BAG_VERSION.to_le_bytes());
    buf.extend_from_slice(&(bag.regions as u32).to_le_bytes());
    buf.extend_from_slice(&(bag.dim as u32).to_le_bytes());
    for v in &bag.features {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read a bag back. The slide id is taken from the file stem; the label is
/// left unset (labels come from the manifest).
pub fn load_bag(path: &Path) -> Result<FeatureBag> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 {
        return Err(Error::Truncated {
            path: path.into(),
            expected: 16,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != BAG_MAGIC {
        return Err(Error::BadMagic {
            path: path.into(),
            expected: BAG_MAGIC,
            found: magic,
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != BAG_VERSION {
        return Err(Error::BadVersion {
            path: path.into(),
            expected: BAG_VERSION,
            found: version,
        });
    }
    let regions = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let expected = 16 + regions * dim * 4;
    if bytes.len() != expected {
        return Err(Error::Truncated {
            path: path.into(),
            expected,
            found: bytes.len(),
        });
    }
    let features = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let slide_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    FeatureBag::new(slide_id, regions, dim, features)
}

/// Zero-pad a non-empty list of bags to a common region count. Real rows
/// occupy positions `[0, R_i)`; everything after is exact zero.
pub fn pad_batch(bags: &[&FeatureBag]) -> Result<PaddedBatch> {
    if bags.is_empty() {
        return Err(Error::invalid("cannot pad an empty batch"));
    }
    let dim = bags[0].dim;
    for b in bags {
        b.validate()?;
        if b.dim != dim {
            return Err(Error::shape(format!(
                "mixed feature widths in batch: {} vs {}",
                dim, b.dim
            )));
        }
    }
    let r_max = bags.iter().map(|b| b.regions).max().unwrap();
    let n = bags.len();
    let mut data = vec![0.0f64; n * r_max * dim];
    let mut valid = vec![vec![false; r_max]; n];
    for (i, b) in bags.iter().enumerate() {
        for t in 0..b.regions {
            valid[i][t] = true;
            let dst = &mut data[(i * r_max + t) * dim..(i * r_max + t + 1) * dim];
            for (d, v) in dst.iter_mut().zip(b.row(t)) {
                *d = f64::from(*v);
            }
        }
    }
    Ok(PaddedBatch {
        data: Tensor::new(vec![n, r_max, dim], data),
        valid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bag(id: &str, rows: &[&[f32]]) -> FeatureBag {
        let dim = rows[0].len();
        let features = rows.iter().flat_map(|r| r.iter().copied()).collect();
        FeatureBag::new(id, rows.len(), dim, features).unwrap()
    }

    #[test]
    fn save_load_round_trip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let b = bag("s1", &[&[1.0, -2.5], &[0.25, 3.5], &[1e-7, 9.0]]);
        let path = dir.path().join("s1.pmx");
        save_bag(&b, &path).unwrap();
        let loaded = load_bag(&path).unwrap();
        assert_eq!(loaded.features, b.features);
        assert_eq!(loaded.regions, 3);
        assert_eq!(loaded.dim, 2);
        assert_eq!(loaded.slide_id, "s1");
        // file size: 16-byte header + 24 bytes payload
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 16 + 24);
    }

    #[test]
    fn two_saves_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let b = bag("s1", &[&[0.5, 0.25], &[1.5, -1.0]]);
        let p1 = dir.path().join("a.pmx");
        let p2 = dir.path().join("b.pmx");
        save_bag(&b, &p1).unwrap();
        save_bag(&b, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn nan_feature_is_rejected() {
        let mut b = bag("s1", &[&[1.0, 2.0]]);
        b.features[1] = f32::NAN;
        let dir = tempfile::tempdir().unwrap();
        let err = save_bag(&b, &dir.path().join("x.pmx")).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.pmx");
        let mut bytes = b"XXXX".to_vec();
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load_bag(&path), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pmx");
        let mut bytes = BAG_MAGIC.to_vec();
        bytes.extend_from_slice(&BAG_VERSION.to_le_bytes());
        bytes.extend_from_slice(&5u32.to_le_bytes()); // claims 5 rows
        bytes.extend_from_slice(&2u32.to_le_bytes());
        for _ in 0..8 {
            bytes.extend_from_slice(&1.0f32.to_le_bytes()); // only 4 rows
        }
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load_bag(&path), Err(Error::Truncated { .. })));
    }

    #[test]
    fn pad_batch_shapes_and_masks() {
        let b1 = bag("a", &[&[1.0], &[2.0], &[3.0]]);
        let b2 = bag("b", &[&[4.0], &[5.0], &[6.0], &[7.0], &[8.0]]);
        let batch = pad_batch(&[&b1, &b2]).unwrap();
        assert_eq!(batch.r_max(), 5);
        assert_eq!(batch.len_of(0), 3);
        assert_eq!(batch.len_of(1), 5);
        batch.validate().unwrap();
        assert_eq!(batch.data.data()[3], 0.0); // padded position of sample 0
    }

    #[test]
    fn pad_batch_single_bag_no_padding() {
        let b = bag("a", &[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0], &[7.0, 8.0]]);
        let batch = pad_batch(&[&b]).unwrap();
        assert_eq!(batch.r_max(), 4);
        assert!(batch.valid[0].iter().all(|&v| v));
    }

    #[test]
    fn pad_batch_rejects_mixed_dims_and_empty() {
        let b1 = bag("a", &[&[1.0]]);
        let b2 = bag("b", &[&[1.0, 2.0]]);
        assert!(pad_batch(&[&b1, &b2]).is_err());
        assert!(pad_batch(&[]).is_err());
    }

    proptest! {
        #[test]
        fn prop_roundtrip_and_padding(seed in 0u64..500) {
            use rand::Rng;
            use rand_chacha::rand_core::SeedableRng;
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
            let n = rng.random_range(1..6usize);
            let dim = rng.random_range(1..5usize);
            let bags: Vec<FeatureBag> = (0..n).map(|i| {
                let r = rng.random_range(1..9usize);
                let features = (0..r * dim).map(|_| rng.random_range(-10.0f32..10.0)).collect();
                FeatureBag::new(format!("s{i}"), r, dim, features).unwrap()
            }).collect();
            let refs: Vec<&FeatureBag> = bags.iter().collect();
            let batch = pad_batch(&refs).unwrap();
            batch.validate().unwrap();
            // total valid positions equals total regions
            let total: usize = (0..n).map(|i| batch.len_of(i)).sum();
            prop_assert_eq!(total, bags.iter().map(|b| b.regions).sum::<usize>());
            // unpadding recovers the original values exactly
            let (rm, d) = (batch.r_max(), dim);
            for (i, b) in bags.iter().enumerate() {
                for t in 0..b.regions {
                    for k in 0..d {
                        prop_assert_eq!(
                            batch.data.data()[(i * rm + t) * d + k],
                            f64::from(b.features[t * d + k])
                        );
                    }
                }
            }
            // save/load round trip
            let dir = tempfile::tempdir().unwrap();
            for b in &bags {
                let p = dir.path().join(format!("{}.pmx", b.slide_id));
                save_bag(b, &p).unwrap();
                let l = load_bag(&p).unwrap();
                prop_assert_eq!(&l.features, &b.features);
            }
        }
    }
}

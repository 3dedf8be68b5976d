//! Synthetic identity datasets, dataset CSV I/O, and a Market-style
//! filename parser for optional real-feature ingestion.
//!
//! The generator draws one center per identity, gives every camera a fixed
//! random affine map (a perturbation of the identity matrix plus a
//! translation, both scaled by `nuisance_scale`), and emits samples as
//! `camera_map(center) + noise`. Identities split half/half into train and
//! test; test samples are assigned so that every identity appears in the
//! gallery under each of its cameras, which guarantees every probe a
//! cross-camera match.
//!
//! Attribute bits are identity-level: bit k is the sign of the identity
//! center against a fixed random direction, so attributes are balanced,
//! constant within an identity, and recoverable from the features by a
//! trained head even for unseen identities.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::Mat;
use crate::rng::Rng;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("dataset invariant violated: {0}")]
    InvariantViolation(String),
    #[error("dataset io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad market filename {0:?}")]
    BadFilename(String),
    #[error("invalid synth config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Probe,
    Gallery,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Probe => "probe",
            Split::Gallery => "gallery",
        }
    }

    fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "probe" => Some(Split::Probe),
            "gallery" => Some(Split::Gallery),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub identity: i64,
    pub camera: u32,
    pub attributes: Vec<bool>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub input_dim: usize,
    pub attribute_count: usize,
}

impl Dataset {
    pub fn indices_of(&self, split: Split) -> Vec<usize> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    /// Train identities in ascending order with their sample indices
    /// (the sampler input).
    pub fn train_per_identity(&self) -> Vec<(i64, Vec<usize>)> {
        let mut map: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
        for (i, s) in self.samples.iter().enumerate() {
            if s.split == Split::Train {
                map.entry(s.identity).or_default().push(i);
            }
        }
        map.into_iter().collect()
    }

    /// Dense class index per train identity, in ascending identity order.
    pub fn train_class_map(&self) -> BTreeMap<i64, usize> {
        self.train_per_identity()
            .into_iter()
            .enumerate()
            .map(|(idx, (id, _))| (id, idx))
            .collect()
    }

    /// Enforces the structural invariants: disjoint train/test identities,
    /// every test identity under at least two cameras, every probe with a
    /// cross-camera gallery match, and identity-constant attributes.
    pub fn validate(&self) -> Result<(), DataError> {
        let mut train_ids = BTreeSet::new();
        let mut test_ids = BTreeSet::new();
        let mut id_attrs: BTreeMap<i64, &Vec<bool>> = BTreeMap::new();
        let mut test_cams: BTreeMap<i64, BTreeSet<u32>> = BTreeMap::new();

        for s in &self.samples {
            if s.features.len() != self.input_dim {
                return Err(DataError::InvariantViolation(format!(
                    "feature width {} != input_dim {}",
                    s.features.len(),
                    self.input_dim
                )));
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(DataError::InvariantViolation(format!(
                    "non-finite feature for identity {}",
                    s.identity
                )));
            }
            if s.attributes.len() != self.attribute_count {
                return Err(DataError::InvariantViolation(format!(
                    "attribute width {} != attribute_count {}",
                    s.attributes.len(),
                    self.attribute_count
                )));
            }
            match s.split {
                Split::Train => {
                    train_ids.insert(s.identity);
                }
                Split::Probe | Split::Gallery => {
                    test_ids.insert(s.identity);
                    test_cams.entry(s.identity).or_default().insert(s.camera);
                }
            }
            if let Some(prev) = id_attrs.insert(s.identity, &s.attributes) {
                if prev != &s.attributes {
                    return Err(DataError::InvariantViolation(format!(
                        "identity {} has inconsistent attribute bits",
                        s.identity
                    )));
                }
            }
        }

        if let Some(overlap) = train_ids.intersection(&test_ids).next() {
            return Err(DataError::InvariantViolation(format!(
                "identity {overlap} appears in both train and test splits"
            )));
        }
        for (id, cams) in &test_cams {
            if cams.len() < 2 {
                return Err(DataError::InvariantViolation(format!(
                    "test identity {id} appears under {} camera(s), need >= 2",
                    cams.len()
                )));
            }
        }
        for s in self.samples.iter().filter(|s| s.split == Split::Probe) {
            let has_match = self.samples.iter().any(|g| {
                g.split == Split::Gallery && g.identity == s.identity && g.camera != s.camera
            });
            if !has_match {
                return Err(DataError::InvariantViolation(format!(
                    "probe of identity {} camera {} has no cross-camera gallery match",
                    s.identity, s.camera
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_identities: usize,
    pub samples_per_identity_min: usize,
    pub samples_per_identity_max: usize,
    pub input_dim: usize,
    pub n_cameras: usize,
    pub attribute_count: usize,
    /// Scale of the isotropic identity centers.
    pub identity_spread: f64,
    /// Magnitude of the per-camera affine perturbation.
    pub nuisance_scale: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.n_identities < 2 {
            return Err(DataError::InvalidConfig("need at least 2 identities".into()));
        }
        if self.n_cameras < 2 {
            return Err(DataError::InvalidConfig("need at least 2 cameras".into()));
        }
        if self.samples_per_identity_min == 0
            || self.samples_per_identity_min > self.samples_per_identity_max
        {
            return Err(DataError::InvalidConfig(
                "samples_per_identity range must be non-empty and positive".into(),
            ));
        }
        if self.input_dim == 0 {
            return Err(DataError::InvalidConfig("input_dim must be positive".into()));
        }
        if self.identity_spread < 0.0 || self.nuisance_scale < 0.0 || self.noise_sigma < 0.0 {
            return Err(DataError::InvalidConfig("scales must be non-negative".into()));
        }
        Ok(())
    }

    /// The bundled benchmark: 50 train / 50 test identities, 4 cameras,
    /// nuisance strong enough that raw-feature retrieval breaks down while
    /// a trained embedding recovers it.
    pub fn benchmark(seed: u64) -> SynthConfig {
        SynthConfig {
            n_identities: 100,
            samples_per_identity_min: 12,
            samples_per_identity_max: 16,
            input_dim: 16,
            n_cameras: 4,
            attribute_count: 0,
            identity_spread: 1.0,
            nuisance_scale: 1.5,
            noise_sigma: 0.08,
            seed,
        }
    }
}

/// Fraction of `nuisance_scale` that perturbs the linear part of a camera
/// map; the rest drives the translation. Translations dominate so cameras
/// displace the point cloud rather than shredding it.
const CAMERA_MIX: f64 = 0.05;

struct CameraMap {
    linear: Mat,
    offset: Vec<f64>,
}

impl CameraMap {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.linear.matvec(x);
        for (yi, oi) in y.iter_mut().zip(&self.offset) {
            *yi += oi;
        }
        y
    }
}

struct SynthModel {
    centers: Vec<Vec<f64>>,
    cameras: Vec<CameraMap>,
    attr_bits: Vec<Vec<bool>>,
}

impl SynthModel {
    fn build(cfg: &SynthConfig, rng: &mut Rng) -> SynthModel {
        let d = cfg.input_dim;
        let centers: Vec<Vec<f64>> = (0..cfg.n_identities)
            .map(|_| rng.normal_vec(d, cfg.identity_spread))
            .collect();

        let mix_sigma = CAMERA_MIX * cfg.nuisance_scale / (d as f64).sqrt();
        let cameras: Vec<CameraMap> = (0..cfg.n_cameras)
            .map(|_| {
                let mut linear = Mat::eye(d);
                for v in linear.data_mut().iter_mut() {
                    *v += mix_sigma * rng.normal();
                }
                CameraMap {
                    linear,
                    offset: rng.normal_vec(d, cfg.nuisance_scale * cfg.identity_spread),
                }
            })
            .collect();

        // Identity-level bits: fair coin flips per identity, each bit
        // displacing the identity center along its own direction. The
        // displacement gives every bit a real margin in feature space, and
        // the directions are kept orthogonal to the camera offsets --
        // attributes are traits that survive a camera change. Drawn from a
        // forked stream so the base feature draws are identical whether or
        // not attributes are requested.
        let mut attr_rng = rng.fork();
        let camera_offsets: Vec<Vec<f64>> = cameras
            .iter()
            .map(|c: &CameraMap| c.offset.clone())
            .collect();
        let attr_dirs =
            orthonormal_directions(cfg.attribute_count, d, &camera_offsets, &mut attr_rng);
        let attr_bits: Vec<Vec<bool>> = (0..cfg.n_identities)
            .map(|_| {
                (0..cfg.attribute_count)
                    .map(|_| attr_rng.next_f64() < 0.5)
                    .collect()
            })
            .collect();
        let mut centers = centers;
        for (center, bits) in centers.iter_mut().zip(&attr_bits) {
            for (dir, &bit) in attr_dirs.iter().zip(bits) {
                let sign = if bit { 1.0 } else { -1.0 };
                for (c, u) in center.iter_mut().zip(dir) {
                    *c += sign * ATTR_DISPLACEMENT * cfg.identity_spread * u;
                }
            }
        }

        SynthModel {
            centers,
            cameras,
            attr_bits,
        }
    }
}

/// How far (in units of `identity_spread`) an attribute bit displaces the
/// identity center along its direction.
const ATTR_DISPLACEMENT: f64 = 5.0;

/// Random directions orthonormalized greedily (Gram-Schmidt) against the
/// `avoid` set and each other; once the dimension is exhausted the
/// remaining directions are only normalized.
fn orthonormal_directions(
    count: usize,
    dim: usize,
    avoid: &[Vec<f64>],
    rng: &mut Rng,
) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for a in avoid {
        let mut v = a.clone();
        for prev in &basis {
            let proj = crate::numerics::dot(&v, prev);
            for (vi, pi) in v.iter_mut().zip(prev) {
                *vi -= proj * pi;
            }
        }
        if let Ok((unit, _)) = crate::numerics::l2_normalize(&v) {
            basis.push(unit);
        }
    }
    let avoid_len = basis.len();

    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(count);
    for i in 0..count {
        let mut v = rng.normal_vec(dim, 1.0);
        if avoid_len + i < dim {
            for prev in &basis {
                let proj = crate::numerics::dot(&v, prev);
                for (vi, pi) in v.iter_mut().zip(prev) {
                    *vi -= proj * pi;
                }
            }
        }
        match crate::numerics::l2_normalize(&v) {
            Ok((unit, _)) => {
                basis.push(unit.clone());
                dirs.push(unit);
            }
            Err(_) => dirs.push(rng.normal_vec(dim, 1.0)), // degenerate draw, keep raw
        }
    }
    dirs
}

/// Generates a dataset. Identities are numbered from 1; the lower half
/// trains, the upper half tests. Deterministic per seed.
pub fn generate(cfg: &SynthConfig) -> Result<Dataset, DataError> {
    cfg.validate()?;
    let mut rng = Rng::new(cfg.seed);
    let model = SynthModel::build(cfg, &mut rng);
    let n_train = cfg.n_identities.div_ceil(2);

    let mut samples = Vec::new();
    for idx in 0..cfg.n_identities {
        let identity = (idx + 1) as i64;
        let is_train = idx < n_train;
        let mut n_s =
            rng.range_inclusive(cfg.samples_per_identity_min, cfg.samples_per_identity_max);
        if !is_train {
            n_s = n_s.max(2); // test identities must reach two cameras
        }
        let cam_offset = rng.below(cfg.n_cameras);

        let mut seen_cams: BTreeSet<u32> = BTreeSet::new();
        for j in 0..n_s {
            let camera = ((cam_offset + j) % cfg.n_cameras) as u32;
            let mut features = model.cameras[camera as usize].apply(&model.centers[idx]);
            for f in features.iter_mut() {
                *f += cfg.noise_sigma * rng.normal();
            }
            let split = if is_train {
                Split::Train
            } else if seen_cams.insert(camera) {
                Split::Gallery // first sample under each camera anchors the gallery
            } else {
                Split::Probe
            };
            samples.push(Sample {
                features,
                identity,
                camera,
                attributes: model.attr_bits[idx].clone(),
                split,
            });
        }
    }

    let dataset = Dataset {
        samples,
        input_dim: cfg.input_dim,
        attribute_count: cfg.attribute_count,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Writes the dataset CSV: `id,camera,split,attr_0..,x_0..` with features
/// in scientific notation at 17 significant digits so the round trip is
/// exact.
pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<(), DataError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut header = String::from("id,camera,split");
    for k in 0..dataset.attribute_count {
        header.push_str(&format!(",attr_{k}"));
    }
    for i in 0..dataset.input_dim {
        header.push_str(&format!(",x_{i}"));
    }
    writeln!(out, "{header}")?;
    for s in &dataset.samples {
        let mut line = format!("{},{},{}", s.identity, s.camera, s.split.as_str());
        for &a in &s.attributes {
            line.push_str(if a { ",1" } else { ",0" });
        }
        for &x in &s.features {
            line.push_str(&format!(",{x:.16e}"));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset, DataError> {
    let file = std::fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines().enumerate();

    let (_, header) = lines.next().ok_or(DataError::Parse {
        line: 1,
        msg: "empty file".into(),
    })?;
    let header = header?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 4 || cols[0] != "id" || cols[1] != "camera" || cols[2] != "split" {
        return Err(DataError::Parse {
            line: 1,
            msg: format!("bad header {header:?}, expected id,camera,split,attr_*,x_*"),
        });
    }
    let attribute_count = cols[3..].iter().take_while(|c| c.starts_with("attr_")).count();
    let input_dim = cols.len() - 3 - attribute_count;
    if input_dim == 0 {
        return Err(DataError::Parse {
            line: 1,
            msg: "header has no feature columns".into(),
        });
    }
    for (i, c) in cols[3 + attribute_count..].iter().enumerate() {
        if *c != format!("x_{i}") {
            return Err(DataError::Parse {
                line: 1,
                msg: format!("unexpected column {c:?} where x_{i} belongs"),
            });
        }
    }

    let mut samples = Vec::new();
    for (lineno, line) in lines {
        let line = line?;
        let lineno = lineno + 1; // humans count from 1
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(DataError::Parse {
                line: lineno,
                msg: format!("{} fields, header has {}", fields.len(), cols.len()),
            });
        }
        let identity: i64 = fields[0].parse().map_err(|e| DataError::Parse {
            line: lineno,
            msg: format!("bad id {:?}: {e}", fields[0]),
        })?;
        let camera: u32 = fields[1].parse().map_err(|e| DataError::Parse {
            line: lineno,
            msg: format!("bad camera {:?}: {e}", fields[1]),
        })?;
        let split = Split::parse(fields[2]).ok_or_else(|| DataError::Parse {
            line: lineno,
            msg: format!("bad split {:?}", fields[2]),
        })?;
        let mut attributes = Vec::with_capacity(attribute_count);
        for f in &fields[3..3 + attribute_count] {
            attributes.push(match *f {
                "0" => false,
                "1" => true,
                other => {
                    return Err(DataError::Parse {
                        line: lineno,
                        msg: format!("bad attribute bit {other:?}"),
                    })
                }
            });
        }
        let mut features = Vec::with_capacity(input_dim);
        for f in &fields[3 + attribute_count..] {
            features.push(f.parse::<f64>().map_err(|e| DataError::Parse {
                line: lineno,
                msg: format!("bad feature {f:?}: {e}"),
            })?);
        }
        samples.push(Sample {
            features,
            identity,
            camera,
            attributes,
            split,
        });
    }
    if samples.is_empty() {
        return Err(DataError::Parse {
            line: 1,
            msg: "no data rows".into(),
        });
    }

    let dataset = Dataset {
        samples,
        input_dim,
        attribute_count,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Identity and camera parsed from a Market-style filename.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MarketName {
    pub identity: i64,
    pub camera: u32,
    /// Identity -1 marks distractor images.
    pub distractor: bool,
    /// Identity 0 marks junk images.
    pub junk: bool,
}

/// Parses names like `0002_c1s1_000451_03.jpg` into (identity 2, camera 1).
pub fn parse_market_name(filename: &str) -> Result<MarketName, DataError> {
    let bad = || DataError::BadFilename(filename.to_string());

    let rest = filename.strip_prefix('-').map_or(filename, |r| r);
    let digits = rest.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits == 0 {
        return Err(bad());
    }
    let id_end = filename.len() - rest.len() + digits;
    let identity: i64 = filename[..id_end].parse().map_err(|_| bad())?;

    let after = &filename[id_end..];
    let after = after.strip_prefix("_c").ok_or_else(bad)?;
    let cam_digits = after.chars().take_while(|c| c.is_ascii_digit()).count();
    if cam_digits == 0 {
        return Err(bad());
    }
    let camera: u32 = after[..cam_digits].parse().map_err(|_| bad())?;

    Ok(MarketName {
        identity,
        camera,
        distractor: identity == -1,
        junk: identity == 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SynthConfig {
        SynthConfig {
            n_identities: 8,
            samples_per_identity_min: 4,
            samples_per_identity_max: 6,
            input_dim: 5,
            n_cameras: 3,
            attribute_count: 2,
            identity_spread: 1.0,
            nuisance_scale: 0.8,
            noise_sigma: 0.05,
            seed: 42,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small_cfg();
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        let other = SynthConfig { seed: 43, ..cfg };
        assert_ne!(generate(&small_cfg()).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn degenerate_generator_collapses_identities() {
        let cfg = SynthConfig {
            nuisance_scale: 0.0,
            noise_sigma: 0.0,
            ..small_cfg()
        };
        let ds = generate(&cfg).unwrap();
        let mut per_id: BTreeMap<i64, Vec<&Vec<f64>>> = BTreeMap::new();
        for s in &ds.samples {
            per_id.entry(s.identity).or_default().push(&s.features);
        }
        for (_, feats) in per_id {
            for f in &feats {
                assert_eq!(*f, feats[0], "all samples of an identity identical");
            }
        }
    }

    #[test]
    fn attributes_constant_within_identity_and_balancedish() {
        let cfg = SynthConfig {
            n_identities: 60,
            ..small_cfg()
        };
        let ds = generate(&cfg).unwrap();
        ds.validate().unwrap();
        let per_id: BTreeMap<i64, &Vec<bool>> = ds
            .samples
            .iter()
            .map(|s| (s.identity, &s.attributes))
            .collect();
        let ones = per_id.values().filter(|a| a[0]).count();
        assert!(ones > 10 && ones < 50, "attribute 0 set for {ones}/60 identities");
    }

    #[test]
    fn splits_respect_reid_protocol() {
        let ds = generate(&small_cfg()).unwrap();
        let train: BTreeSet<i64> = ds
            .samples
            .iter()
            .filter(|s| s.split == Split::Train)
            .map(|s| s.identity)
            .collect();
        let test: BTreeSet<i64> = ds
            .samples
            .iter()
            .filter(|s| s.split != Split::Train)
            .map(|s| s.identity)
            .collect();
        assert!(train.is_disjoint(&test));
        assert_eq!(train.len(), 4);
        assert_eq!(test.len(), 4);
    }

    #[test]
    fn validate_catches_split_overlap() {
        let mut ds = generate(&small_cfg()).unwrap();
        // move one train sample into the gallery
        let idx = ds.indices_of(Split::Train)[0];
        ds.samples[idx].split = Split::Gallery;
        assert!(matches!(
            ds.validate(),
            Err(DataError::InvariantViolation(_))
        ));
    }

    #[test]
    fn roundtrip_through_csv_is_exact() {
        let ds = generate(&small_cfg()).unwrap();
        let dir = std::env::temp_dir().join("reid-data-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.csv");
        write_dataset(&path, &ds).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn read_rejects_empty_file() {
        let dir = std::env::temp_dir().join("reid-data-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("empty.csv");
        std::fs::write(&path, "").unwrap();
        assert!(matches!(
            read_dataset(&path),
            Err(DataError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn read_reports_line_numbers() {
        let dir = std::env::temp_dir().join("reid-data-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("badline.csv");
        std::fs::write(
            &path,
            "id,camera,split,x_0\n1,0,train,1.0\n2,zero,train,2.0\n",
        )
        .unwrap();
        match read_dataset(&path) {
            Err(DataError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn read_rejects_missing_attr_columns() {
        let dir = std::env::temp_dir().join("reid-data-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let ds = generate(&small_cfg()).unwrap();
        let path = dir.join("attrs.csv");
        write_dataset(&path, &ds).unwrap();
        // strip the attr columns from the header only: width mismatch on row 2
        let text = std::fs::read_to_string(&path).unwrap();
        let mangled = text.replacen("attr_0,attr_1,", "", 1);
        std::fs::write(&path, mangled).unwrap();
        assert!(matches!(read_dataset(&path), Err(DataError::Parse { .. })));
    }

    #[test]
    fn read_enforces_split_disjointness() {
        let dir = std::env::temp_dir().join("reid-data-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("overlap.csv");
        std::fs::write(
            &path,
            "id,camera,split,x_0\n\
             1,0,train,0.5\n\
             1,1,probe,0.6\n\
             1,2,gallery,0.7\n",
        )
        .unwrap();
        assert!(matches!(
            read_dataset(&path),
            Err(DataError::InvariantViolation(_))
        ));
    }

    #[test]
    fn market_names_parse() {
        let n = parse_market_name("0002_c1s1_000451_03.jpg").unwrap();
        assert_eq!((n.identity, n.camera), (2, 1));
        assert!(!n.distractor && !n.junk);

        let d = parse_market_name("-1_c3s2_000001_01.jpg").unwrap();
        assert_eq!((d.identity, d.camera), (-1, 3));
        assert!(d.distractor);

        let j = parse_market_name("0000_c6s4_000001_00.jpg").unwrap();
        assert!(j.junk);

        assert!(parse_market_name("garbage.png").is_err());
        assert!(parse_market_name("12_x1.jpg").is_err());
    }

    /// Sample mean of a heavily-sampled identity converges to the mean of
    /// its camera-mapped centers.
    #[test]
    fn sample_mean_converges_to_camera_mean() {
        let cfg = SynthConfig {
            n_identities: 2,
            samples_per_identity_min: 10_000,
            samples_per_identity_max: 10_000,
            input_dim: 4,
            n_cameras: 4,
            attribute_count: 0,
            identity_spread: 1.0,
            nuisance_scale: 0.5,
            noise_sigma: 0.3,
            seed: 7,
        };
        let mut rng = Rng::new(cfg.seed);
        let model = SynthModel::build(&cfg, &mut rng);
        let ds = generate(&cfg).unwrap();

        // identity 1 (index 0): expected mean over its cameras (round-robin
        // makes camera counts equal at 10k = 4 * 2500)
        let expected: Vec<f64> = (0..cfg.input_dim)
            .map(|r| {
                model
                    .cameras
                    .iter()
                    .map(|cam| cam.apply(&model.centers[0])[r])
                    .sum::<f64>()
                    / cfg.n_cameras as f64
            })
            .collect();
        let ones: Vec<&Sample> = ds.samples.iter().filter(|s| s.identity == 1).collect();
        assert_eq!(ones.len(), 10_000);
        let tol = 3.0 * cfg.noise_sigma / (ones.len() as f64).sqrt() * 3.0;
        for r in 0..cfg.input_dim {
            let mean = ones.iter().map(|s| s.features[r]).sum::<f64>() / ones.len() as f64;
            assert!(
                (mean - expected[r]).abs() < tol,
                "dim {r}: mean {mean} vs expected {} (tol {tol})",
                expected[r]
            );
        }
    }
}

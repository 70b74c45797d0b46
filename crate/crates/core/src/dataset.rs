//! Paired ⟨RF reading, {photos}⟩ training corpus.
//!
//! On disk a dataset is a directory:
//!
//! ```text
//! manifest.json      DatasetManifest
//! readings.bin       n × rows × cols × (re, im), f64 little-endian,
//!                    record-major then row-major
//! photos/{i}_L.png   8-bit RGB view from camera "L"
//! photos/{i}_R.png   8-bit RGB view from camera "R"
//! ```

use crate::em::{array_reading, EmError, PropagationConfig, RfReading};
use crate::geometry::EulerAngles;
use crate::metrics::{ImageU8, MetricsError};
use crate::scene::{rasterize_view, rotate_object, Camera, RoomScene, SceneError};
use crate::Complex64;
use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::f64::consts::PI;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use thiserror::Error;

pub const FORMAT: &str = "wavecopy-dataset";
pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const READINGS_FILE: &str = "readings.bin";
pub const PHOTO_DIR: &str = "photos";
pub const LEFT: &str = "L";
pub const RIGHT: &str = "R";
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.9;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset needs at least one record")]
    Empty,
    #[error("scene lacks {0}")]
    IncompleteScene(&'static str),
    #[error("corrupt manifest: {0}")]
    CorruptManifest(String),
    #[error("{file} holds {actual} bytes, manifest implies {expected}")]
    SizeMismatch { file: String, expected: u64, actual: u64 },
    #[error("train fraction must lie strictly between 0 and 1, got {0}")]
    InvalidFraction(f64),
    #[error("record {0} has a non-finite reading")]
    NonFinite(usize),
    #[error(transparent)]
    Em(#[from] EmError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Image(#[from] MetricsError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub index: usize,
    pub rotation: EulerAngles,
    pub reading: RfReading,
    pub photo_l: ImageU8,
    pub photo_r: ImageU8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub index: usize,
    pub rotation: EulerAngles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train_fraction: f64,
    pub seed: u64,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitAssignment {
    pub fn is_test(&self, index: usize) -> bool {
        self.test.binary_search(&index).is_ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub count: usize,
    pub seed: u64,
    /// SHA-256 of the scene's canonical JSON, hex.
    pub scene_sha256: String,
    pub frequency_hz: f64,
    pub array_rows: usize,
    pub array_cols: usize,
    pub photo_width: usize,
    pub photo_height: usize,
    pub object: String,
    pub array: String,
    pub records: Vec<RecordMeta>,
    #[serde(default)]
    pub split: Option<SplitAssignment>,
    /// Reserved for a future noise/interference model; always null today.
    #[serde(default)]
    pub noise: Option<serde_json::Value>,
}

impl DatasetManifest {
    fn reading_bytes(&self) -> u64 {
        (self.count * self.array_rows * self.array_cols * 16) as u64
    }

    fn check(&self) -> Result<(), DatasetError> {
        let bad = |m: String| Err(DatasetError::CorruptManifest(m));
        if self.format != FORMAT {
            return bad(format!("format `{}`", self.format));
        }
        if self.version != FORMAT_VERSION {
            return bad(format!("version {}", self.version));
        }
        if self.records.len() != self.count {
            return bad(format!("{} record entries for count {}", self.records.len(), self.count));
        }
        if self.records.iter().enumerate().any(|(i, r)| r.index != i) {
            return bad("record indices are not 0..count".into());
        }
        if let Some(s) = &self.split {
            let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
            all.sort_unstable();
            if all != (0..self.count).collect::<Vec<_>>() {
                return bad("split does not partition the records".into());
            }
        }
        Ok(())
    }

    pub fn test_indices(&self) -> Option<&[usize]> {
        self.split.as_ref().map(|s| s.test.as_slice())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub records: Vec<DatasetRecord>,
}

pub fn scene_hash(scene: &RoomScene) -> String {
    let bytes = serde_json::to_vec(scene).expect("scenes serialize");
    hex::encode(Sha256::digest(&bytes))
}

fn camera<'a>(scene: &'a RoomScene, id: &str) -> Result<&'a Camera, DatasetError> {
    scene
        .cameras
        .iter()
        .find(|c| c.id == id)
        .ok_or(DatasetError::IncompleteScene(if id == LEFT { "camera L" } else { "camera R" }))
}

fn check_scene(scene: &RoomScene) -> Result<(), DatasetError> {
    if scene.objects.is_empty() {
        return Err(DatasetError::IncompleteScene("an object"));
    }
    if scene.sources.is_empty() {
        return Err(DatasetError::IncompleteScene("a source"));
    }
    if scene.arrays.is_empty() {
        return Err(DatasetError::IncompleteScene("a receive array"));
    }
    camera(scene, LEFT)?;
    camera(scene, RIGHT)?;
    Ok(())
}

/// `n` rotations, each angle uniform on [−π, π), drawn in index order.
pub fn draw_rotations(n: usize, seed: u64) -> Vec<EulerAngles> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let yaw = rng.random_range(-PI..PI);
            let pitch = rng.random_range(-PI..PI);
            let roll = rng.random_range(-PI..PI);
            EulerAngles::new(yaw, pitch, roll)
        })
        .collect()
}

/// One record: the first object rotated by `rotation` about its pivot, the
/// first array's reading, and both camera views.
pub fn make_record(
    scene: &RoomScene,
    cfg: &PropagationConfig,
    index: usize,
    rotation: EulerAngles,
) -> Result<DatasetRecord, DatasetError> {
    check_scene(scene)?;
    let mut posed = scene.clone();
    posed.objects[0] = rotate_object(&scene.objects[0], rotation);
    let reading = array_reading(&posed, cfg, &posed.arrays[0])?;
    if !reading.is_finite() {
        return Err(DatasetError::NonFinite(index));
    }
    Ok(DatasetRecord {
        index,
        rotation,
        reading,
        photo_l: rasterize_view(&posed, camera(&posed, LEFT)?)?,
        photo_r: rasterize_view(&posed, camera(&posed, RIGHT)?)?,
    })
}

/// Generates `n` records. Rotations come off one seeded stream in index
/// order; records are then computed in parallel, so the output does not
/// depend on scheduling.
pub fn generate_dataset(scene: &RoomScene, cfg: &PropagationConfig, n: usize, seed: u64) -> Result<Dataset, DatasetError> {
    if n == 0 {
        return Err(DatasetError::Empty);
    }
    check_scene(scene)?;
    let rotations = draw_rotations(n, seed);
    let records = rotations
        .par_iter()
        .enumerate()
        .map(|(i, &rot)| make_record(scene, cfg, i, rot))
        .collect::<Result<Vec<_>, _>>()?;
    let left = camera(scene, LEFT)?;
    let array = &scene.arrays[0];
    let manifest = DatasetManifest {
        format: FORMAT.into(),
        version: FORMAT_VERSION,
        count: n,
        seed,
        scene_sha256: scene_hash(scene),
        frequency_hz: cfg.k * crate::SPEED_OF_LIGHT / (2.0 * PI),
        array_rows: array.rows,
        array_cols: array.cols,
        photo_width: left.width,
        photo_height: left.height,
        object: scene.objects[0].id.clone(),
        array: array.id.clone(),
        records: records.iter().map(|r| RecordMeta { index: r.index, rotation: r.rotation }).collect(),
        split: None,
        noise: None,
    };
    Ok(Dataset { manifest, records })
}

/// Shuffles indices with a seeded generator; the first
/// `round(fraction·n)` go to training. Both lists are stored sorted.
pub fn split_dataset(manifest: &DatasetManifest, train_fraction: f64, seed: u64) -> Result<DatasetManifest, DatasetError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DatasetError::InvalidFraction(train_fraction));
    }
    let n = manifest.count;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((train_fraction * n as f64).round() as usize).min(n);
    let mut train = order[..n_train].to_vec();
    let mut test = order[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    let mut out = manifest.clone();
    out.split = Some(SplitAssignment { train_fraction, seed, train, test });
    Ok(out)
}

pub fn photo_path(dir: &Path, index: usize, camera: &str) -> std::path::PathBuf {
    dir.join(PHOTO_DIR).join(format!("{index}_{camera}.png"))
}

pub fn encode_readings<'a>(readings: impl IntoIterator<Item = &'a RfReading>) -> Vec<u8> {
    let mut out = Vec::new();
    for r in readings {
        for z in &r.data {
            out.extend_from_slice(&z.re.to_le_bytes());
            out.extend_from_slice(&z.im.to_le_bytes());
        }
    }
    out
}

pub fn write_manifest(dir: &Path, manifest: &DatasetManifest) -> Result<(), DatasetError> {
    let mut json = serde_json::to_string_pretty(manifest).map_err(|e| DatasetError::CorruptManifest(e.to_string()))?;
    json.push('\n');
    fs::write(dir.join(MANIFEST_FILE), json)?;
    Ok(())
}

pub fn write_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<(), DatasetError> {
    let dir = dir.as_ref();
    let m = &dataset.manifest;
    if dataset.records.len() != m.count {
        return Err(DatasetError::CorruptManifest(format!(
            "{} records for count {}",
            dataset.records.len(),
            m.count
        )));
    }
    fs::create_dir_all(dir.join(PHOTO_DIR))?;
    let mut w = BufWriter::new(fs::File::create(dir.join(READINGS_FILE))?);
    w.write_all(&encode_readings(dataset.records.iter().map(|r| &r.reading)))?;
    w.flush()?;
    for r in &dataset.records {
        r.photo_l.write_png(photo_path(dir, r.index, LEFT))?;
        r.photo_r.write_png(photo_path(dir, r.index, RIGHT))?;
    }
    write_manifest(dir, m)
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<DatasetManifest, DatasetError> {
    let text = fs::read_to_string(dir.as_ref().join(MANIFEST_FILE))?;
    let m: DatasetManifest = serde_json::from_str(&text).map_err(|e| DatasetError::CorruptManifest(e.to_string()))?;
    m.check()?;
    Ok(m)
}

/// Manifest plus readings, without touching the photos.
pub fn read_readings(dir: impl AsRef<Path>) -> Result<(DatasetManifest, Vec<RfReading>), DatasetError> {
    let dir = dir.as_ref();
    let m = read_manifest(dir)?;
    let bytes = fs::read(dir.join(READINGS_FILE))?;
    if bytes.len() as u64 != m.reading_bytes() {
        return Err(DatasetError::SizeMismatch {
            file: READINGS_FILE.into(),
            expected: m.reading_bytes(),
            actual: bytes.len() as u64,
        });
    }
    let per = m.array_rows * m.array_cols;
    let samples: Vec<Complex64> = bytes
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().expect("8 bytes"));
            let im = f64::from_le_bytes(c[8..].try_into().expect("8 bytes"));
            Complex64::new(re, im)
        })
        .collect();
    let readings = if per == 0 {
        vec![RfReading::new(m.array_rows, m.array_cols, Vec::new()); m.count]
    } else {
        samples.chunks(per).map(|c| RfReading::new(m.array_rows, m.array_cols, c.to_vec())).collect()
    };
    Ok((m, readings))
}

pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    let dir = dir.as_ref();
    let (manifest, readings) = read_readings(dir)?;
    let records = readings
        .into_iter()
        .zip(&manifest.records)
        .map(|(reading, meta)| {
            Ok(DatasetRecord {
                index: meta.index,
                rotation: meta.rotation,
                reading,
                photo_l: ImageU8::read_png(photo_path(dir, meta.index, LEFT))?,
                photo_r: ImageU8::read_png(photo_path(dir, meta.index, RIGHT))?,
            })
        })
        .collect::<Result<Vec<_>, DatasetError>>()?;
    Ok(Dataset { manifest, records })
}

/// Rewrites the manifest of an on-disk dataset with a fresh split.
pub fn split_dataset_dir(dir: impl AsRef<Path>, train_fraction: f64, seed: u64) -> Result<DatasetManifest, DatasetError> {
    let dir = dir.as_ref();
    let m = split_dataset(&read_manifest(dir)?, train_fraction, seed)?;
    write_manifest(dir, &m)?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::training_scene;

    fn cfg() -> PropagationConfig {
        crate::scenario::training_config()
    }

    #[test]
    fn same_seed_gives_identical_records() {
        let s = training_scene();
        let a = generate_dataset(&s, &cfg(), 2, 7).unwrap();
        let b = generate_dataset(&s, &cfg(), 2, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&s, &cfg(), 2, 8).unwrap();
        assert_ne!(a.records[0].reading, c.records[0].reading);
    }

    #[test]
    fn rotations_are_uniform_in_range() {
        let r = draw_rotations(3000, 1);
        let all: Vec<f64> = r.iter().flat_map(|a| [a.yaw, a.pitch, a.roll]).collect();
        assert!(all.iter().all(|x| (-PI..PI).contains(x)));
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        assert!(mean.abs() < 0.1, "{mean}");
        let below = all.iter().filter(|&&x| x < 0.0).count() as f64 / all.len() as f64;
        assert!((below - 0.5).abs() < 0.03);
    }

    #[test]
    fn zero_rotation_matches_static_scene() {
        let s = training_scene();
        let rec = make_record(&s, &cfg(), 0, EulerAngles::ZERO).unwrap();
        let direct = array_reading(&s, &cfg(), &s.arrays[0]).unwrap();
        assert_eq!(rec.reading, direct);
        assert_eq!(rec.photo_l, rasterize_view(&s, camera(&s, LEFT).unwrap()).unwrap());
    }

    #[test]
    fn readings_are_finite_and_nonzero() {
        let d = generate_dataset(&training_scene(), &cfg(), 3, 2).unwrap();
        for r in &d.records {
            assert!(r.reading.is_finite());
            assert!(r.reading.data.iter().any(|z| z.norm() > 0.0));
            assert_eq!((r.photo_l.height(), r.photo_l.width()), (64, 64));
        }
    }

    #[test]
    fn roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let d = generate_dataset(&training_scene(), &cfg(), 4, 3).unwrap();
        let d = Dataset { manifest: split_dataset(&d.manifest, 0.5, 1).unwrap(), ..d };
        write_dataset(&d, dir.path()).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back, d);
        let len = fs::metadata(dir.path().join(READINGS_FILE)).unwrap().len();
        assert_eq!(len, 4 * 100 * 16);
    }

    fn synthetic(n: usize) -> Dataset {
        let records = (0..n)
            .map(|i| DatasetRecord {
                index: i,
                rotation: EulerAngles::new(i as f64 * 0.1, -0.2, 0.3),
                reading: RfReading::new(10, 10, (0..100).map(|j| Complex64::new(i as f64 + j as f64 * 1e-3, -1.0 / (j as f64 + 1.0))).collect()),
                photo_l: ImageU8::filled(64, 64, [i as u8, 2, 3]),
                photo_r: ImageU8::filled(64, 64, [4, i as u8, 6]),
            })
            .collect::<Vec<_>>();
        let manifest = DatasetManifest {
            format: FORMAT.into(),
            version: FORMAT_VERSION,
            count: n,
            seed: 0,
            scene_sha256: String::new(),
            frequency_hz: 5e9,
            array_rows: 10,
            array_cols: 10,
            photo_width: 64,
            photo_height: 64,
            object: "obj".into(),
            array: "rx".into(),
            records: records.iter().map(|r| RecordMeta { index: r.index, rotation: r.rotation }).collect(),
            split: None,
            noise: None,
        };
        Dataset { manifest, records }
    }

    #[test]
    fn count_mismatch_is_size_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&synthetic(10), dir.path()).unwrap();
        let mut m = read_manifest(dir.path()).unwrap();
        m.count = 11;
        m.records.push(RecordMeta { index: 10, rotation: EulerAngles::ZERO });
        write_manifest(dir.path(), &m).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(DatasetError::SizeMismatch { expected: 17600, actual: 16000, .. })));
    }

    #[test]
    fn garbage_manifest_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&synthetic(2), dir.path()).unwrap();
        fs::write(dir.path().join(MANIFEST_FILE), "{ not json").unwrap();
        assert!(matches!(read_manifest(dir.path()), Err(DatasetError::CorruptManifest(_))));
        let mut m = synthetic(2).manifest;
        m.count = 3;
        write_manifest(dir.path(), &m).unwrap();
        assert!(matches!(read_manifest(dir.path()), Err(DatasetError::CorruptManifest(_))));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let m = synthetic(1000).manifest;
        let a = split_dataset(&m, 0.9, 5).unwrap();
        let b = split_dataset(&m, 0.9, 5).unwrap();
        assert_eq!(a, b);
        let s = a.split.unwrap();
        assert_eq!((s.train.len(), s.test.len()), (900, 100));
        assert!(s.train.iter().all(|i| !s.is_test(*i)));
        let c = split_dataset(&m, 0.1, 5).unwrap().split.unwrap();
        assert_eq!((c.train.len(), c.test.len()), (100, 900));
        assert_ne!(split_dataset(&m, 0.9, 6).unwrap().split.unwrap().test, s.test);
    }

    #[test]
    fn bad_fraction_is_rejected() {
        let m = synthetic(3).manifest;
        for f in [0.0, 1.0, -0.5, f64::NAN] {
            assert!(matches!(split_dataset(&m, f, 0), Err(DatasetError::InvalidFraction(_))));
        }
    }

    #[test]
    fn zero_records_is_an_error() {
        assert!(matches!(generate_dataset(&training_scene(), &cfg(), 0, 0), Err(DatasetError::Empty)));
    }

    #[test]
    fn manifest_keeps_noise_hook() {
        let json = serde_json::to_value(&synthetic(1).manifest).unwrap();
        assert!(json["noise"].is_null());
        assert_eq!(json["format"], FORMAT);
    }
}

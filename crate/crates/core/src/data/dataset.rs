//! Synthetic datasets on disk.
//!
//! Layout: `<root>/manifest.json` plus one directory per sample holding
//! `partial.ply`, `gt_sparse.ply`, `gt_dense.ply` and `meta.json`. The split
//! of a sample is `sha256(id) mod 10`: 0-7 train, 8 val, 9 test.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::io::{ply_bytes, read_ply};
use super::partial::{simulate_partial, simulate_partial_sequence};
use super::shapes::{generate_shape, Family, ShapeSpec};
use crate::cloud::{normalize_to_unit_sphere, seeded_rng, PointCloud, Rng, SymPlane};
use crate::error::{Error, Result};
use crate::spatial::fps;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn of_id(id: &str) -> Split {
        let digest = Sha256::digest(id.as_bytes());
        let v = u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"));
        match v % 10 {
            0..=7 => Split::Train,
            8 => Split::Val,
            _ => Split::Test,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}` (expected train, val or test)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub count: usize,
    pub seed: u64,
    /// Fraction of samples drawn from the asymmetric family.
    pub asym_fraction: f64,
    /// Symmetric families to draw the remaining samples from.
    pub families: Vec<Family>,
    pub n_dense: usize,
    pub n_sparse: usize,
    pub n_partial: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            count: 300,
            seed: 0,
            asym_fraction: 0.2,
            families: Family::SYMMETRIC.to_vec(),
            n_dense: 2048,
            n_sparse: 256,
            n_partial: 256,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config("count must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.asym_fraction) {
            return Err(Error::Config(format!("asym_fraction must be in [0, 1], got {}", self.asym_fraction)));
        }
        if self.asym_fraction < 1.0 && !self.families.iter().any(|f| f.is_symmetric()) {
            return Err(Error::Config("families must include a symmetric family".into()));
        }
        if self.n_dense == 0 || self.n_sparse == 0 || self.n_partial == 0 {
            return Err(Error::Config("point counts must be positive".into()));
        }
        if self.n_sparse > self.n_dense {
            return Err(Error::Config("n_sparse cannot exceed n_dense".into()));
        }
        Ok(())
    }

    /// Whether sample `index` belongs to the asymmetric family. Spreads
    /// exactly `floor(count · asym_fraction)` such samples over the set.
    pub fn is_asymmetric(&self, index: usize) -> bool {
        let f = self.asym_fraction;
        ((index + 1) as f64 * f).floor() > (index as f64 * f).floor()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub id: String,
    pub family: Family,
    pub shape: ShapeSpec,
    /// Symmetry plane in the frame of the stored clouds.
    pub plane: Option<SymPlane>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub meta: SampleMeta,
    pub partial: PointCloud,
    pub gt_sparse: PointCloud,
    pub gt_dense: PointCloud,
}

/// Complete unit-sphere-normalized ground truth of `spec` and its plane.
pub fn ground_truth(spec: &ShapeSpec, n_dense: usize, rng: &mut Rng) -> Result<(PointCloud, Option<SymPlane>)> {
    let canonical = generate_shape(spec, n_dense, rng)?;
    let (dense, t) = normalize_to_unit_sphere(&canonical)?;
    Ok((dense, spec.plane().map(|p| t.apply_plane(&p))))
}

fn id_for(index: usize) -> String {
    format!("s{index:05}")
}

/// Builds sample `index` from its own seed (`cfg.seed + index`).
pub fn generate_sample(index: usize, cfg: &GenConfig) -> Result<Sample> {
    let seed = cfg.seed.wrapping_add(index as u64);
    let mut rng = seeded_rng(seed);
    let symmetric: Vec<Family> = cfg.families.iter().copied().filter(|f| f.is_symmetric()).collect();
    let family = if cfg.is_asymmetric(index) || symmetric.is_empty() {
        Family::EllBracket
    } else {
        symmetric[rng.gen_range(0..symmetric.len())]
    };
    let mut last_err = None;
    for _ in 0..5 {
        let spec = ShapeSpec::random(family, seed, &mut rng);
        let (gt_dense, plane) = ground_truth(&spec, cfg.n_dense, &mut rng)?;
        let sparse_idx = fps(gt_dense.points(), cfg.n_sparse, &mut rng)?;
        let gt_sparse = gt_dense.select(&sparse_idx);
        match simulate_partial(&gt_dense, cfg.n_partial, &mut rng) {
            Ok(partial) => {
                return Ok(Sample {
                    meta: SampleMeta {
                        id: id_for(index),
                        family,
                        shape: spec,
                        plane,
                        seed,
                    },
                    partial,
                    gt_sparse,
                    gt_dense,
                })
            }
            Err(e @ Error::Generation(_)) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.expect("loop ran"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    pub family: Family,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub gen: GenConfig,
    /// SHA-256 over every sample's files, in id order.
    pub hash: String,
    pub samples: Vec<ManifestEntry>,
}

struct SampleFiles {
    partial: Vec<u8>,
    gt_sparse: Vec<u8>,
    gt_dense: Vec<u8>,
    meta: Vec<u8>,
}

fn sample_files(s: &Sample) -> Result<SampleFiles> {
    Ok(SampleFiles {
        partial: ply_bytes(&s.partial),
        gt_sparse: ply_bytes(&s.gt_sparse),
        gt_dense: ply_bytes(&s.gt_dense),
        meta: serde_json::to_vec_pretty(&s.meta)?,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Generates `cfg.count` samples under `root` and writes the manifest.
pub fn generate_dataset(root: &Path, cfg: &GenConfig) -> Result<Manifest> {
    cfg.validate()?;
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut hasher = Sha256::new();
    let mut entries = Vec::with_capacity(cfg.count);
    for i in 0..cfg.count {
        let sample = generate_sample(i, cfg)?;
        let files = sample_files(&sample)?;
        let dir = root.join(&sample.meta.id);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_file(&dir.join("partial.ply"), &files.partial)?;
        write_file(&dir.join("gt_sparse.ply"), &files.gt_sparse)?;
        write_file(&dir.join("gt_dense.ply"), &files.gt_dense)?;
        write_file(&dir.join("meta.json"), &files.meta)?;
        hasher.update(sample.meta.id.as_bytes());
        for bytes in [&files.partial, &files.gt_sparse, &files.gt_dense, &files.meta] {
            hasher.update((bytes.len() as u64).to_le_bytes());
            hasher.update(bytes);
        }
        entries.push(ManifestEntry {
            split: Split::of_id(&sample.meta.id),
            id: sample.meta.id,
            family: sample.meta.family,
        });
    }
    let manifest = Manifest {
        version: 1,
        gen: cfg.clone(),
        hash: format!("{:x}", hasher.finalize()),
        samples: entries,
    };
    let path = root.join(MANIFEST_FILE);
    write_file(&path, &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Read access to a generated dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        Ok(Dataset {
            root: root.to_path_buf(),
            manifest,
        })
    }

    pub fn ids(&self, split: Split) -> Vec<String> {
        self.manifest
            .samples
            .iter()
            .filter(|e| e.split == split)
            .map(|e| e.id.clone())
            .collect()
    }

    pub fn load(&self, id: &str) -> Result<Sample> {
        let dir = self.root.join(id);
        let meta_path = dir.join("meta.json");
        let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: SampleMeta =
            serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", meta_path.display())))?;
        Ok(Sample {
            meta,
            partial: read_ply(&dir.join("partial.ply"))?,
            gt_sparse: read_ply(&dir.join("gt_sparse.ply"))?,
            gt_dense: read_ply(&dir.join("gt_dense.ply"))?,
        })
    }

    /// All samples of a split; an empty split is a data error.
    pub fn load_split(&self, split: Split) -> Result<Vec<Sample>> {
        let ids = self.ids(split);
        if ids.is_empty() {
            return Err(Error::Data(format!("split `{split}` has no samples")));
        }
        ids.iter().map(|id| self.load(id)).collect()
    }
}

/// Reference library for MMD: `per_family` normalized shapes of each family.
pub fn family_library(families: &[Family], per_family: usize, n_dense: usize, seed: u64) -> Result<Vec<PointCloud>> {
    let mut rng = seeded_rng(seed);
    let mut out = Vec::new();
    for &f in families {
        for _ in 0..per_family {
            let spec = ShapeSpec::random(f, seed, &mut rng);
            out.push(ground_truth(&spec, n_dense, &mut rng)?.0);
        }
    }
    Ok(out)
}

/// Frames of an orbiting scan of one shape, stored as `frame_NNN.ply`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceMeta {
    pub family: Family,
    pub shape: ShapeSpec,
    pub frames: usize,
    pub step_deg: f64,
    pub seed: u64,
}

pub fn generate_sequence(
    dir: &Path,
    family: Family,
    frames: usize,
    step_deg: f64,
    cfg: &GenConfig,
    seed: u64,
) -> Result<SequenceMeta> {
    if frames < 2 {
        return Err(Error::Config("a sequence needs at least 2 frames".into()));
    }
    let mut rng = seeded_rng(seed);
    let spec = ShapeSpec::random(family, seed, &mut rng);
    let (dense, _) = ground_truth(&spec, cfg.n_dense, &mut rng)?;
    let partials = simulate_partial_sequence(&dense, frames, step_deg, cfg.n_partial, &mut rng)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, p) in partials.iter().enumerate() {
        write_file(&dir.join(format!("frame_{i:03}.ply")), &ply_bytes(p))?;
    }
    write_file(&dir.join("gt_dense.ply"), &ply_bytes(&dense))?;
    let meta = SequenceMeta {
        family,
        shape: spec,
        frames,
        step_deg,
        seed,
    };
    write_file(&dir.join("sequence.json"), &serde_json::to_vec_pretty(&meta)?)?;
    Ok(meta)
}

/// Frames of a sequence directory in frame order.
pub fn load_sequence(dir: &Path) -> Result<Vec<PointCloud>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("frame_") && n.ends_with(".ply"))
        })
        .collect();
    paths.sort();
    if paths.len() < 2 {
        return Err(Error::Data(format!("{} holds fewer than 2 frames", dir.display())));
    }
    paths.iter().map(|p| read_ply(p)).collect()
}

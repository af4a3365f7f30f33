//! On-disk neighbor store: `store.json` (parameters), `records.jsonl` (one
//! labeled record per line) and `features.bin` (precomputed descriptors).

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::orb::{extract_features, Descriptor, FeatureSet, Keypoint, OrbParams};
use super::{MatchParams, RetrievalError};
use crate::imaging::TableImage;
use crate::table::{parse_markup, MarkupSequence, ParseMode};

pub const STORE_FORMAT_VERSION: u32 = 1;
const FORMAT_NAME: &str = "tablekit-neighbor-store";
const FEATURE_MAGIC: &[u8; 8] = b"TKFEAT01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreMeta {
    pub format: String,
    pub version: u32,
    pub toolkit_version: String,
    pub orb: OrbParams,
    pub matching: MatchParams,
    pub record_count: usize,
}

impl StoreMeta {
    pub fn new(orb: OrbParams, matching: MatchParams) -> Self {
        Self {
            format: FORMAT_NAME.to_string(),
            version: STORE_FORMAT_VERSION,
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            orb,
            matching,
            record_count: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborRecord {
    pub id: String,
    pub image_path: PathBuf,
    pub features: FeatureSet,
    pub gold_markup: MarkupSequence,
    /// Short free-text notes about the image shown to the model.
    pub traits: Option<String>,
}

/// Serialized form of a record without its features.
#[derive(Debug, Serialize, Deserialize)]
struct RecordLine {
    id: String,
    image_path: PathBuf,
    gold_markup: MarkupSequence,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    traits: Option<String>,
    feature_count: usize,
}

/// Immutable after construction; safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborStore {
    pub meta: StoreMeta,
    records: Vec<NeighborRecord>,
}

/// One labeled image to index.
#[derive(Debug, Clone)]
pub struct NeighborInput {
    pub id: String,
    pub image_path: PathBuf,
    pub gold_markup: MarkupSequence,
    pub traits: Option<String>,
}

impl NeighborStore {
    /// Checks id uniqueness and that every gold markup parses.
    pub fn from_records(mut meta: StoreMeta, records: Vec<NeighborRecord>) -> Result<Self, RetrievalError> {
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                return Err(RetrievalError::DuplicateId(r.id.clone()));
            }
            if let Err(e) = parse_markup(&r.gold_markup.0, ParseMode::Strict) {
                return Err(RetrievalError::InvalidRecord {
                    id: r.id.clone(),
                    message: format!("gold markup does not parse: {e}"),
                });
            }
        }
        meta.record_count = records.len();
        Ok(Self { meta, records })
    }

    /// Extracts features for every input in parallel. Inputs whose image
    /// yields too few features are left out and returned with the reason.
    pub fn build(
        inputs: Vec<(NeighborInput, TableImage)>,
        orb: OrbParams,
        matching: MatchParams,
    ) -> Result<(Self, Vec<(String, String)>), RetrievalError> {
        let results: Vec<_> = inputs
            .into_par_iter()
            .map(|(input, img)| {
                let features = extract_features(&img.to_gray(), &orb);
                (input, features)
            })
            .collect();
        let mut records = Vec::new();
        let mut skipped = Vec::new();
        for (input, features) in results {
            match features {
                Ok(features) => records.push(NeighborRecord {
                    id: input.id,
                    image_path: input.image_path,
                    features,
                    gold_markup: input.gold_markup,
                    traits: input.traits,
                }),
                Err(e) => {
                    warn!("skipping neighbor {}: {e}", input.id);
                    skipped.push((input.id, e.to_string()));
                }
            }
        }
        Ok((Self::from_records(StoreMeta::new(orb, matching), records)?, skipped))
    }

    pub fn records(&self) -> &[NeighborRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&NeighborRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Writes the three store files into `dir`, creating it if needed.
    /// Image paths inside `dir` are stored relative to it.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), RetrievalError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let abs_dir = dir.canonicalize()?;

        let mut meta = self.meta.clone();
        meta.record_count = self.records.len();
        let mut f = BufWriter::new(File::create(dir.join("store.json"))?);
        serde_json::to_writer_pretty(&mut f, &meta)?;
        f.write_all(b"\n")?;
        f.flush()?;

        let mut f = BufWriter::new(File::create(dir.join("records.jsonl"))?);
        for r in &self.records {
            let line = RecordLine {
                id: r.id.clone(),
                image_path: relative_to(&r.image_path, &abs_dir),
                gold_markup: r.gold_markup.clone(),
                traits: r.traits.clone(),
                feature_count: r.features.len(),
            };
            serde_json::to_writer(&mut f, &line)?;
            f.write_all(b"\n")?;
        }
        f.flush()?;

        let mut f = BufWriter::new(File::create(dir.join("features.bin"))?);
        f.write_all(FEATURE_MAGIC)?;
        f.write_all(&STORE_FORMAT_VERSION.to_le_bytes())?;
        f.write_all(&(self.records.len() as u32).to_le_bytes())?;
        for r in &self.records {
            f.write_all(&(r.id.len() as u32).to_le_bytes())?;
            f.write_all(r.id.as_bytes())?;
            f.write_all(&(r.features.len() as u32).to_le_bytes())?;
            for (k, d) in r.features.keypoints.iter().zip(&r.features.descriptors) {
                for v in [k.x, k.y, k.angle, k.response] {
                    f.write_all(&v.to_le_bytes())?;
                }
                f.write_all(&[k.octave])?;
                f.write_all(&d.to_bytes())?;
            }
        }
        f.flush()?;
        Ok(())
    }

    /// Loads a store written by [`NeighborStore::save`]. Relative image
    /// paths are resolved against `dir`.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, RetrievalError> {
        let dir = dir.as_ref();
        let meta: StoreMeta = serde_json::from_reader(BufReader::new(File::open(dir.join("store.json"))?))?;
        if meta.format != FORMAT_NAME || meta.version != STORE_FORMAT_VERSION {
            return Err(RetrievalError::Format(format!(
                "unsupported store {} v{}",
                meta.format, meta.version
            )));
        }

        let mut lines = Vec::new();
        for line in BufReader::new(File::open(dir.join("records.jsonl"))?).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            lines.push(serde_json::from_str::<RecordLine>(&line)?);
        }

        let mut f = BufReader::new(File::open(dir.join("features.bin"))?);
        let mut magic = [0u8; 8];
        f.read_exact(&mut magic)?;
        if &magic != FEATURE_MAGIC {
            return Err(RetrievalError::Format("bad feature file magic".into()));
        }
        let version = read_u32(&mut f)?;
        if version != STORE_FORMAT_VERSION {
            return Err(RetrievalError::Format(format!("feature file version {version}")));
        }
        let count = read_u32(&mut f)? as usize;
        if count != lines.len() {
            return Err(RetrievalError::Format(format!(
                "{count} feature blocks for {} records",
                lines.len()
            )));
        }

        let mut records = Vec::with_capacity(count);
        for line in lines {
            let id_len = read_u32(&mut f)? as usize;
            let mut id = vec![0u8; id_len];
            f.read_exact(&mut id)?;
            if id != line.id.as_bytes() {
                return Err(RetrievalError::Format(format!(
                    "feature block out of order at record {:?}",
                    line.id
                )));
            }
            let n = read_u32(&mut f)? as usize;
            let mut features = FeatureSet::default();
            for _ in 0..n {
                let mut vals = [0f32; 4];
                for v in &mut vals {
                    *v = f32::from_le_bytes(read_array(&mut f)?);
                }
                let [octave] = read_array::<1>(&mut f)?;
                let desc = read_array::<32>(&mut f)?;
                features.keypoints.push(Keypoint {
                    x: vals[0],
                    y: vals[1],
                    angle: vals[2],
                    response: vals[3],
                    octave,
                });
                features.descriptors.push(Descriptor::from_bytes(&desc));
            }
            if n != line.feature_count {
                return Err(RetrievalError::Format(format!(
                    "record {:?} lists {} features, file holds {n}",
                    line.id, line.feature_count
                )));
            }
            let image_path = if line.image_path.is_relative() {
                dir.join(&line.image_path)
            } else {
                line.image_path
            };
            records.push(NeighborRecord {
                id: line.id,
                image_path,
                features,
                gold_markup: line.gold_markup,
                traits: line.traits,
            });
        }
        Self::from_records(meta, records)
    }
}

fn relative_to(path: &Path, dir: &Path) -> PathBuf {
    let abs = path.canonicalize().unwrap_or_else(|_| path.to_path_buf());
    match abs.strip_prefix(dir) {
        Ok(rel) => rel.to_path_buf(),
        Err(_) => abs,
    }
}

fn read_array<const N: usize>(r: &mut impl Read) -> std::io::Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

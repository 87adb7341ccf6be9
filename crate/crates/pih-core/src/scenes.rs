//! Synthetic grid scenes rendered to image-pad token blocks, plus JSONL
//! dataset manifests for externally sourced counting data.

use std::collections::BTreeSet;
use std::io::BufRead;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seq::{Role, TokenSeq};
use crate::vocab::{TokenId, Vocabulary, PALETTE};

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("count {count} exceeds grid capacity {capacity}")]
    CountExceedsCapacity { count: usize, capacity: usize },
    #[error("manifest line {line}: parse error: {message}")]
    ParseError { line: usize, message: String },
    #[error("manifest line {line}: invalid record field {field:?}: {message}")]
    InvalidRecord {
        line: usize,
        field: &'static str,
        message: String,
    },
    #[error("manifest io: {0}")]
    Io(#[from] std::io::Error),
}

/// One synthetic scene: `true_count` objects of one color placed on a
/// `grid`×`grid` board.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scene {
    pub grid: usize,
    pub object: TokenId,
    pub object_color: TokenId,
    pub true_count: usize,
    pub placement: BTreeSet<usize>,
    pub seed: u64,
}

/// Deterministic placement of `true_count` objects from `seed`.
pub fn generate_scene(
    grid: usize,
    object: TokenId,
    color: TokenId,
    true_count: usize,
    seed: u64,
) -> Result<Scene, SceneError> {
    let capacity = grid * grid;
    if true_count > capacity {
        return Err(SceneError::CountExceedsCapacity {
            count: true_count,
            capacity,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells: Vec<usize> = (0..capacity).collect();
    cells.shuffle(&mut rng);
    let placement = cells.into_iter().take(true_count).collect();
    Ok(Scene {
        grid,
        object,
        object_color: color,
        true_count,
        placement,
        seed,
    })
}

/// Renders a scene as `<img>`, one pad per cell, `</img>`, all image-role.
pub fn render_scene(scene: &Scene, vocab: &Vocabulary) -> TokenSeq {
    let color = vocab
        .color_index(scene.object_color)
        .expect("scene color must be a palette token");
    let mut seq = TokenSeq::empty();
    seq.push(vocab.img_open(), Role::Image);
    for cell in 0..scene.grid * scene.grid {
        let id = if scene.placement.contains(&cell) {
            vocab.object_pad(color)
        } else {
            vocab.background_pad()
        };
        seq.push(id, Role::Image);
    }
    seq.push(vocab.img_close(), Role::Image);
    seq
}

/// One row of an external dataset manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub sample_id: String,
    pub object: String,
    pub true_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_color: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
}

/// Loads and validates a JSONL manifest. External `image_ref`s are carried
/// through for bookkeeping; evaluation later re-renders synthetically.
pub fn load_manifest(path: &Path, vocab: &Vocabulary) -> Result<DatasetManifest, SceneError> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut records = Vec::new();
    let mut seen_ids = BTreeSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ManifestRecord =
            serde_json::from_str(&line).map_err(|e| SceneError::ParseError {
                line: line_no,
                message: e.to_string(),
            })?;
        if record.true_count < 1 {
            return Err(SceneError::InvalidRecord {
                line: line_no,
                field: "true_count",
                message: "must be at least 1".to_string(),
            });
        }
        if !seen_ids.insert(record.sample_id.clone()) {
            return Err(SceneError::InvalidRecord {
                line: line_no,
                field: "sample_id",
                message: format!("duplicate id {:?}", record.sample_id),
            });
        }
        if vocab
            .id(&record.object)
            .and_then(|id| vocab.object_index(id))
            .is_none()
        {
            return Err(SceneError::InvalidRecord {
                line: line_no,
                field: "object",
                message: format!("unknown object word {:?}", record.object),
            });
        }
        if let Some(color) = &record.true_color {
            if !PALETTE.contains(&color.as_str()) {
                return Err(SceneError::InvalidRecord {
                    line: line_no,
                    field: "true_color",
                    message: format!("color {:?} not in palette", color),
                });
            }
        }
        records.push(record);
    }
    Ok(DatasetManifest { records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::build_vocabulary;
    use std::io::Write;

    fn vocab() -> Vocabulary {
        build_vocabulary()
    }

    #[test]
    fn placement_is_deterministic() {
        let v = vocab();
        let obj = v.id("cats").unwrap();
        let red = v.id("red").unwrap();
        let a = generate_scene(4, obj, red, 3, 7).unwrap();
        let b = generate_scene(4, obj, red, 3, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_scene(4, obj, red, 3, 8).unwrap();
        assert_eq!(c.placement.len(), 3);
    }

    #[test]
    fn capacity_boundary() {
        let v = vocab();
        let obj = v.id("cats").unwrap();
        let red = v.id("red").unwrap();
        let full = generate_scene(4, obj, red, 16, 1).unwrap();
        assert_eq!(full.placement.len(), 16);
        assert!(matches!(
            generate_scene(4, obj, red, 17, 1),
            Err(SceneError::CountExceedsCapacity { count: 17, capacity: 16 })
        ));
    }

    #[test]
    fn render_counts_match() {
        let v = vocab();
        let obj = v.id("cats").unwrap();
        let red = v.id("red").unwrap();
        let scene = generate_scene(4, obj, red, 3, 42).unwrap();
        let block = render_scene(&scene, &v);
        assert_eq!(block.len(), 16 + 2);
        assert_eq!(block.ids()[0], v.img_open());
        assert_eq!(*block.ids().last().unwrap(), v.img_close());
        let object_pads = block
            .ids()
            .iter()
            .filter(|&&id| v.pad_color(id).is_some())
            .count();
        assert_eq!(object_pads, 3);
        assert!(block.roles().iter().all(|&r| r == Role::Image));
    }

    #[test]
    fn render_empty_scene_is_all_background() {
        let v = vocab();
        let obj = v.id("cats").unwrap();
        let red = v.id("red").unwrap();
        let scene = generate_scene(3, obj, red, 0, 0).unwrap();
        let block = render_scene(&scene, &v);
        let object_pads = block
            .ids()
            .iter()
            .filter(|&&id| v.pad_color(id).is_some())
            .count();
        assert_eq!(object_pads, 0);
    }

    fn write_manifest(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{}", l).unwrap();
        }
        f
    }

    #[test]
    fn manifest_round_trip() {
        let v = vocab();
        let f = write_manifest(&[
            r#"{"sample_id":"a","object":"cats","true_count":2}"#,
            r#"{"sample_id":"b","object":"dogs","true_count":5,"true_color":"red"}"#,
            r#"{"sample_id":"c","object":"forks","true_count":9,"image_ref":"img/c.jpg"}"#,
        ]);
        let m = load_manifest(f.path(), &v).unwrap();
        assert_eq!(m.records.len(), 3);
        assert_eq!(m.records[2].image_ref.as_deref(), Some("img/c.jpg"));
    }

    #[test]
    fn manifest_rejects_bad_records() {
        let v = vocab();
        let zero = write_manifest(&[r#"{"sample_id":"a","object":"cats","true_count":0}"#]);
        assert!(matches!(
            load_manifest(zero.path(), &v),
            Err(SceneError::InvalidRecord { field: "true_count", .. })
        ));

        let dup = write_manifest(&[
            r#"{"sample_id":"a","object":"cats","true_count":1}"#,
            r#"{"sample_id":"a","object":"dogs","true_count":2}"#,
        ]);
        assert!(matches!(
            load_manifest(dup.path(), &v),
            Err(SceneError::InvalidRecord { field: "sample_id", line: 2, .. })
        ));

        let garbled = write_manifest(&[r#"{"sample_id":"#]);
        assert!(matches!(
            load_manifest(garbled.path(), &v),
            Err(SceneError::ParseError { line: 1, .. })
        ));

        let color = write_manifest(&[
            r#"{"sample_id":"a","object":"cats","true_count":1,"true_color":"vermilion"}"#,
        ]);
        assert!(matches!(
            load_manifest(color.path(), &v),
            Err(SceneError::InvalidRecord { field: "true_color", .. })
        ));
    }
}

//! Dataset manifest: tile paths, splits, domain tags, and the declared tile
//! size. Tile paths are stored relative to the manifest file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Test => write!(f, "test"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub rgb: String,
    pub sar: String,
    pub label: String,
    pub split: Split,
    pub domain: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    /// `[height, width]` in pixels; every tile must match.
    pub image_size: [usize; 2],
    pub entries: Vec<ManifestEntry>,
    /// Directory the relative tile paths resolve against. Not serialized;
    /// set to the manifest's parent directory on load.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.base_dir.join(rel)
    }

    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn height(&self) -> usize {
        self.image_size[0]
    }

    pub fn width(&self) -> usize {
        self.image_size[1]
    }
}

/// Load and validate a manifest: every referenced tile must exist and match
/// the declared image size. Entry order is preserved.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path)?;
    let mut manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Manifest(format!("malformed manifest {}: {e}", path.display())))?;
    manifest.base_dir = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();

    let (want_h, want_w) = (manifest.height(), manifest.width());
    for (index, entry) in manifest.entries.iter().enumerate() {
        for (kind, rel) in [("rgb", &entry.rgb), ("sar", &entry.sar), ("label", &entry.label)] {
            let tile = manifest.resolve(rel);
            if !tile.exists() {
                return Err(Error::ManifestEntry {
                    index,
                    message: format!("missing {kind} tile {}", tile.display()),
                });
            }
            let (w, h) = image::image_dimensions(&tile).map_err(|e| Error::ManifestEntry {
                index,
                message: format!("unreadable {kind} tile {}: {e}", tile.display()),
            })?;
            if (h as usize, w as usize) != (want_h, want_w) {
                return Err(Error::ManifestEntry {
                    index,
                    message: format!(
                        "{kind} tile is {h}x{w}, manifest declares {want_h}x{want_w}"
                    ),
                });
            }
        }
    }
    Ok(manifest)
}

/// Write a manifest next to its tiles.
pub fn save_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::Manifest(format!("serialize: {e}")))?;
    std::fs::write(path, json)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, RgbImage};

    fn write_tiles(dir: &Path, stem: &str, size: u32) {
        RgbImage::new(size, size).save(dir.join(format!("{stem}_rgb.png"))).unwrap();
        GrayImage::new(size, size).save(dir.join(format!("{stem}_sar.png"))).unwrap();
        GrayImage::new(size, size).save(dir.join(format!("{stem}_label.png"))).unwrap();
    }

    fn entry(stem: &str, split: Split) -> ManifestEntry {
        ManifestEntry {
            rgb: format!("{stem}_rgb.png"),
            sar: format!("{stem}_sar.png"),
            label: format!("{stem}_label.png"),
            split,
            domain: "toy".into(),
        }
    }

    #[test]
    fn loads_two_valid_entries_with_split_counts() {
        let dir = tempfile::tempdir().unwrap();
        write_tiles(dir.path(), "a", 32);
        write_tiles(dir.path(), "b", 32);
        let manifest = DatasetManifest {
            image_size: [32, 32],
            entries: vec![entry("a", Split::Train), entry("b", Split::Test)],
            base_dir: PathBuf::new(),
        };
        let path = dir.path().join("manifest.json");
        save_manifest(&manifest, &path).unwrap();

        let loaded = load_manifest(&path).unwrap();
        assert_eq!(loaded.entries.len(), 2);
        assert_eq!(loaded.split_indices(Split::Train), vec![0]);
        assert_eq!(loaded.split_indices(Split::Test), vec![1]);
    }

    #[test]
    fn missing_sar_tile_is_reported_with_entry_index() {
        let dir = tempfile::tempdir().unwrap();
        write_tiles(dir.path(), "a", 32);
        std::fs::remove_file(dir.path().join("a_sar.png")).unwrap();
        let manifest = DatasetManifest {
            image_size: [32, 32],
            entries: vec![entry("a", Split::Train)],
            base_dir: PathBuf::new(),
        };
        let path = dir.path().join("manifest.json");
        save_manifest(&manifest, &path).unwrap();

        let err = load_manifest(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("entry 0"), "{msg}");
        assert!(msg.contains("sar"), "{msg}");
    }

    #[test]
    fn inconsistent_tile_size_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_tiles(dir.path(), "a", 32);
        write_tiles(dir.path(), "b", 64);
        let manifest = DatasetManifest {
            image_size: [32, 32],
            entries: vec![entry("a", Split::Train), entry("b", Split::Test)],
            base_dir: PathBuf::new(),
        };
        let path = dir.path().join("manifest.json");
        save_manifest(&manifest, &path).unwrap();

        let err = load_manifest(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("entry 1"), "{msg}");
        assert!(msg.contains("64x64"), "{msg}");
    }

    #[test]
    fn reserialized_manifest_is_value_identical() {
        let dir = tempfile::tempdir().unwrap();
        write_tiles(dir.path(), "a", 16);
        let manifest = DatasetManifest {
            image_size: [16, 16],
            entries: vec![entry("a", Split::Train)],
            base_dir: PathBuf::new(),
        };
        let path = dir.path().join("manifest.json");
        save_manifest(&manifest, &path).unwrap();
        let loaded = load_manifest(&path).unwrap();

        let original: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        let roundtrip = serde_json::to_value(&loaded).unwrap();
        assert_eq!(original, roundtrip);
    }

    #[test]
    fn missing_manifest_file_errors() {
        let err = load_manifest(Path::new("/nonexistent/manifest.json")).unwrap_err();
        assert!(matches!(err, Error::MissingFile(_)));
    }
}

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image::Image;
use crate::error::{Error, Result};

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Path relative to the dataset root.
    pub file: PathBuf,
    pub label: usize,
}

/// Folder dataset with a fixed train/test assignment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub root: PathBuf,
    /// Class names; the position is the label.
    pub classes: Vec<String>,
    pub train: Vec<ManifestEntry>,
    pub test: Vec<ManifestEntry>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Per-class split: the first `train_per_class` images of a seeded shuffle go to
/// train, the next `test_per_class` (or all remaining) to test.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRule {
    pub train_per_class: usize,
    pub test_per_class: Option<usize>,
    pub seed: u64,
}

/// Files that were found but could not be decoded.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipReport {
    pub skipped: Vec<(PathBuf, String)>,
}

/// Decoded images of one split with their labels.
#[derive(Clone, Debug)]
pub struct LabeledImages {
    pub images: Vec<Image>,
    pub labels: Vec<usize>,
    pub files: Vec<PathBuf>,
}

impl LabeledImages {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    out.sort();
    Ok(out)
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

/// Scans `root/<class>/<image>` into a manifest.
pub fn load_image_folder(root: &Path, rule: SplitRule) -> Result<(DatasetManifest, SkipReport)> {
    if !root.is_dir() {
        return Err(Error::Data(format!("dataset root {} is not a directory", root.display())));
    }
    let mut classes = Vec::new();
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut report = SkipReport::default();
    for class_dir in read_dir_sorted(root)?.into_iter().filter(|p| p.is_dir()) {
        let name = class_dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Data(format!("non-UTF-8 class dir {}", class_dir.display())))?
            .to_string();
        let label = classes.len();
        let mut files = Vec::new();
        for file in read_dir_sorted(&class_dir)?.into_iter().filter(|p| is_image(p)) {
            match image::image_dimensions(&file) {
                Ok(_) => files.push(file.strip_prefix(root).unwrap_or(&file).to_path_buf()),
                Err(e) => report.skipped.push((file, e.to_string())),
            }
        }
        if files.is_empty() {
            return Err(Error::Data(format!("class `{name}` has no readable images")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(rule.seed ^ (label as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        files.shuffle(&mut rng);
        let n_train = rule.train_per_class.min(files.len());
        let n_test = rule
            .test_per_class
            .unwrap_or(files.len() - n_train)
            .min(files.len() - n_train);
        if n_train == 0 || n_test == 0 {
            return Err(Error::Data(format!(
                "class `{name}` has {} images; split leaves a side empty",
                files.len()
            )));
        }
        for (i, file) in files.into_iter().take(n_train + n_test).enumerate() {
            let entry = ManifestEntry { file, label };
            if i < n_train {
                train.push(entry);
            } else {
                test.push(entry);
            }
        }
        classes.push(name);
    }
    if classes.is_empty() {
        return Err(Error::Data(format!("no class directories under {}", root.display())));
    }
    Ok((
        DatasetManifest {
            root: root.to_path_buf(),
            classes,
            train,
            test,
        },
        report,
    ))
}

impl DatasetManifest {
    pub fn class_index(&self) -> BTreeMap<&str, usize> {
        self.classes
            .iter()
            .enumerate()
            .map(|(i, c)| (c.as_str(), i))
            .collect()
    }

    pub fn entries(&self, split: Split) -> &[ManifestEntry] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    /// Checks the split invariants: disjoint, every class present on both sides.
    pub fn validate(&self) -> Result<()> {
        let train: std::collections::HashSet<_> = self.train.iter().map(|e| &e.file).collect();
        if let Some(dup) = self.test.iter().find(|e| train.contains(&e.file)) {
            return Err(Error::Data(format!("{} in both splits", dup.file.display())));
        }
        for (label, name) in self.classes.iter().enumerate() {
            for split in [&self.train, &self.test] {
                if !split.iter().any(|e| e.label == label) {
                    return Err(Error::Data(format!("class `{name}` empty in a split")));
                }
            }
        }
        let n = self.classes.len();
        if self.train.iter().chain(&self.test).any(|e| e.label >= n) {
            return Err(Error::Data("label out of range".into()));
        }
        Ok(())
    }

    pub fn load(&self, split: Split) -> Result<LabeledImages> {
        let entries = self.entries(split);
        let mut images = Vec::with_capacity(entries.len());
        for e in entries {
            images.push(Image::load(&self.root.join(&e.file))?);
        }
        Ok(LabeledImages {
            images,
            labels: entries.iter().map(|e| e.label).collect(),
            files: entries.iter().map(|e| e.file.clone()).collect(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: DatasetManifest = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn make_tree(dir: &Path, classes: &[(&str, usize)]) {
        for (name, n) in classes {
            let cdir = dir.join(name);
            std::fs::create_dir_all(&cdir).unwrap();
            for i in 0..*n {
                Image::filled(4, 4, [i as f32 / 10.0, 0.5, 0.5])
                    .save_png(&cdir.join(format!("{i}.png")))
                    .unwrap();
            }
        }
    }

    #[test]
    fn two_by_three_split() {
        let dir = tempfile::tempdir().unwrap();
        make_tree(dir.path(), &[("a", 3), ("b", 3)]);
        let rule = SplitRule {
            train_per_class: 2,
            test_per_class: Some(1),
            seed: 7,
        };
        let (m, skip) = load_image_folder(dir.path(), rule).unwrap();
        assert_eq!((m.train.len(), m.test.len()), (4, 2));
        assert!(skip.skipped.is_empty());
        m.validate().unwrap();
        let (again, _) = load_image_folder(dir.path(), rule).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn empty_class_dir_names_the_class() {
        let dir = tempfile::tempdir().unwrap();
        make_tree(dir.path(), &[("a", 3)]);
        std::fs::create_dir_all(dir.path().join("empty_one")).unwrap();
        let rule = SplitRule {
            train_per_class: 1,
            test_per_class: None,
            seed: 0,
        };
        match load_image_folder(dir.path(), rule) {
            Err(Error::Data(msg)) => assert!(msg.contains("empty_one")),
            other => panic!("expected data error, got {other:?}"),
        }
    }

    #[test]
    fn undecodable_file_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        make_tree(dir.path(), &[("a", 3)]);
        std::fs::write(dir.path().join("a").join("broken.png"), b"not a png").unwrap();
        let rule = SplitRule {
            train_per_class: 2,
            test_per_class: None,
            seed: 0,
        };
        let (m, skip) = load_image_folder(dir.path(), rule).unwrap();
        assert_eq!(skip.skipped.len(), 1);
        assert_eq!(m.train.len() + m.test.len(), 3);
    }
}

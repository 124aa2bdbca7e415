use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;

use crate::session::Condition;
use crate::{Result, SubjectiveError};

/// Media available for sessions: original clips (`<video>.y4m`) and
/// enhanced outputs named `<video>__<model>.y4m`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Catalog {
    originals: BTreeMap<String, PathBuf>,
    enhanced: BTreeMap<(String, String), PathBuf>,
}

fn y4m_files(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let entries = fs::read_dir(dir).map_err(|source| SubjectiveError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry
            .map_err(|source| SubjectiveError::Io {
                path: dir.to_path_buf(),
                source,
            })?
            .path();
        if path.is_file() && path.extension().is_some_and(|e| e.eq_ignore_ascii_case("y4m")) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push((stem.to_string(), path.clone()));
            }
        }
    }
    Ok(out)
}

impl Catalog {
    pub fn scan(originals: &Path, enhanced: &Path) -> Result<Self> {
        let mut cat = Catalog::default();
        for (stem, path) in y4m_files(originals)? {
            cat.originals.insert(stem, path);
        }
        for (stem, path) in y4m_files(enhanced)? {
            match stem.split_once("__") {
                Some((video, model)) if !video.is_empty() && !model.is_empty() && model != Condition::ORIGINAL => {
                    if !cat.originals.contains_key(video) {
                        warn!("{}: no original clip named `{video}`", path.display());
                    }
                    cat.enhanced.insert((video.to_string(), model.to_string()), path);
                }
                _ => warn!("{}: not named <video>__<model>.y4m, skipped", path.display()),
            }
        }
        Ok(cat)
    }

    pub fn insert_original(&mut self, video: &str, path: PathBuf) {
        self.originals.insert(video.to_string(), path);
    }

    pub fn insert_enhanced(&mut self, video: &str, model: &str, path: PathBuf) {
        self.enhanced.insert((video.to_string(), model.to_string()), path);
    }

    pub fn videos(&self) -> Vec<String> {
        self.originals.keys().cloned().collect()
    }

    /// `original` followed by every model with at least one output.
    pub fn conditions(&self) -> Vec<Condition> {
        let mut models: Vec<&String> = self.enhanced.keys().map(|(_, m)| m).collect();
        models.sort_unstable();
        models.dedup();
        std::iter::once(Condition::Original)
            .chain(models.into_iter().map(|m| Condition::Model(m.clone())))
            .collect()
    }

    pub fn media_path(&self, video: &str, condition: &Condition) -> Option<PathBuf> {
        match condition {
            Condition::Original => self.originals.get(video).cloned(),
            Condition::Model(m) => self.enhanced.get(&(video.to_string(), m.clone())).cloned(),
        }
    }
}

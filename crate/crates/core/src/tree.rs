//! In-memory file sets produced by the generators and compilers.

use std::collections::{BTreeMap, BTreeSet};
use std::io;
use std::path::{Component, Path, PathBuf};

/// Relative paths mapped to file contents, plus directories that must exist even when empty.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FileTree {
    files: BTreeMap<PathBuf, String>,
    dirs: BTreeSet<PathBuf>,
}

impl FileTree {
    pub fn new() -> Self {
        FileTree::default()
    }

    /// Adds a file. Panics on absolute paths or `..` components, which no generator produces.
    pub fn insert(&mut self, path: impl Into<PathBuf>, content: impl Into<String>) {
        let path = path.into();
        assert!(
            is_contained(&path),
            "generated path escapes its root: {}",
            path.display()
        );
        self.files.insert(path, content.into());
    }

    pub fn insert_dir(&mut self, path: impl Into<PathBuf>) {
        let path = path.into();
        assert!(
            is_contained(&path),
            "generated path escapes its root: {}",
            path.display()
        );
        self.dirs.insert(path);
    }

    pub fn get(&self, path: impl AsRef<Path>) -> Option<&str> {
        self.files.get(path.as_ref()).map(String::as_str)
    }

    pub fn contains_dir(&self, path: impl AsRef<Path>) -> bool {
        let path = path.as_ref();
        self.dirs.contains(path) || self.files.keys().any(|f| f.starts_with(path) && f != path)
    }

    pub fn files(&self) -> impl Iterator<Item = (&Path, &str)> {
        self.files.iter().map(|(p, c)| (p.as_path(), c.as_str()))
    }

    pub fn dirs(&self) -> impl Iterator<Item = &Path> {
        self.dirs.iter().map(PathBuf::as_path)
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty() && self.dirs.is_empty()
    }

    /// Moves every entry under `prefix`.
    pub fn nest(self, prefix: impl AsRef<Path>) -> FileTree {
        let prefix = prefix.as_ref();
        FileTree {
            files: self
                .files
                .into_iter()
                .map(|(p, c)| (prefix.join(p), c))
                .collect(),
            dirs: self.dirs.into_iter().map(|d| prefix.join(d)).collect(),
        }
    }

    pub fn merge(&mut self, other: FileTree) {
        self.files.extend(other.files);
        self.dirs.extend(other.dirs);
    }

    /// Writes all entries below `root`, creating directories as needed and overwriting files.
    pub fn write_to(&self, root: &Path) -> io::Result<()> {
        for dir in &self.dirs {
            std::fs::create_dir_all(root.join(dir))?;
        }
        for (path, content) in &self.files {
            let full = root.join(path);
            if let Some(parent) = full.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(full, content)?;
        }
        Ok(())
    }
}

fn is_contained(path: &Path) -> bool {
    path.components().all(|c| matches!(c, Component::Normal(_)))
}

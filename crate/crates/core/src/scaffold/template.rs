use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use crate::tree::FileTree;

use super::ScaffoldError;

macro_rules! embed {
    ($($path:literal),* $(,)?) => {
        &[$(($path, include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/templates/", $path)))),*]
    };
}

const EMBEDDED: &[(&str, &str)] = embed![
    "project/Cargo.toml",
    "project/gitignore",
    "project/README.md",
    "project/docs/README.md",
    "library/Cargo.toml",
    "library/src/lib.rs",
    "service/Cargo.toml",
    "service/Dockerfile",
    "bare/src/main.rs",
    "sample/src/main.rs",
    "producer/src/main.rs",
    "consumer/src/main.rs",
];

/// Every template shipped with the framework.
pub const TEMPLATE_IDS: &[&str] = &[
    "project", "library", "service", "bare", "sample", "producer", "consumer",
];

/// A file tree whose paths and contents may contain `{{name}}` placeholders.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Template {
    pub id: String,
    files: BTreeMap<PathBuf, String>,
}

/// Template files named `gitignore` become `.gitignore`, so they survive packaging.
fn output_path(path: &Path) -> PathBuf {
    match path.file_name().and_then(|n| n.to_str()) {
        Some("gitignore") => path.with_file_name(".gitignore"),
        _ => path.to_path_buf(),
    }
}

fn scan_placeholders(text: &str) -> Vec<(usize, usize, &str)> {
    let mut out = Vec::new();
    let mut from = 0;
    while let Some(start) = text[from..].find("{{").map(|i| i + from) {
        let rest = &text[start + 2..];
        let len = rest
            .bytes()
            .take_while(|b| b.is_ascii_lowercase() || *b == b'_')
            .count();
        if len > 0 && rest[len..].starts_with("}}") {
            out.push((start, start + 2 + len + 2, &rest[..len]));
            from = start + 2 + len + 2;
        } else {
            from = start + 2;
        }
    }
    out
}

fn substitute(
    text: &str,
    vars: &BTreeMap<&str, String>,
    id: &str,
) -> Result<String, ScaffoldError> {
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for (start, end, name) in scan_placeholders(text) {
        let value = vars
            .get(name)
            .ok_or_else(|| ScaffoldError::UnresolvedPlaceholder {
                template: id.to_owned(),
                placeholder: name.to_owned(),
            })?;
        out.push_str(&text[last..start]);
        out.push_str(value);
        last = end;
    }
    out.push_str(&text[last..]);
    Ok(out)
}

impl Template {
    pub fn new(id: impl Into<String>, files: BTreeMap<PathBuf, String>) -> Self {
        Template {
            id: id.into(),
            files,
        }
    }

    /// The template compiled into this binary.
    pub fn embedded(id: &str) -> Option<Template> {
        let prefix = format!("{id}/");
        let files: BTreeMap<PathBuf, String> = EMBEDDED
            .iter()
            .filter_map(|(path, content)| {
                path.strip_prefix(&prefix)
                    .map(|rel| (output_path(Path::new(rel)), (*content).to_owned()))
            })
            .collect();
        (!files.is_empty()).then(|| Template::new(id, files))
    }

    /// `<override_dir>/<id>/` when that directory exists, the embedded template otherwise.
    pub fn load(id: &str, override_dir: Option<&Path>) -> Result<Template, ScaffoldError> {
        if let Some(dir) = override_dir.map(|d| d.join(id)).filter(|d| d.is_dir()) {
            let mut files = BTreeMap::new();
            read_dir_into(&dir, &dir, &mut files)?;
            return Ok(Template::new(id, files));
        }
        Template::embedded(id).ok_or_else(|| ScaffoldError::UnknownTemplate(id.to_owned()))
    }

    pub fn files(&self) -> impl Iterator<Item = (&Path, &str)> {
        self.files.iter().map(|(p, c)| (p.as_path(), c.as_str()))
    }

    /// Every placeholder name used in paths or contents.
    pub fn placeholders(&self) -> BTreeSet<String> {
        self.files
            .iter()
            .flat_map(|(p, c)| {
                let path = p.to_string_lossy().into_owned();
                let mut names: Vec<String> = scan_placeholders(&path)
                    .iter()
                    .map(|(_, _, n)| n.to_string())
                    .collect();
                names.extend(scan_placeholders(c).iter().map(|(_, _, n)| n.to_string()));
                names
            })
            .collect()
    }

    /// Substitutes every placeholder. Any placeholder missing from `vars` is an error.
    pub fn render(&self, vars: &BTreeMap<&str, String>) -> Result<FileTree, ScaffoldError> {
        let mut tree = FileTree::new();
        for (path, content) in &self.files {
            let path = substitute(&path.to_string_lossy(), vars, &self.id)?;
            tree.insert(PathBuf::from(path), substitute(content, vars, &self.id)?);
        }
        Ok(tree)
    }
}

fn read_dir_into(
    root: &Path,
    dir: &Path,
    files: &mut BTreeMap<PathBuf, String>,
) -> Result<(), ScaffoldError> {
    let io = |e: std::io::Error| ScaffoldError::Io {
        path: dir.to_path_buf(),
        source: e,
    };
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .map_err(io)?
        .collect::<Result<_, _>>()
        .map_err(io)?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let path = entry.path();
        if path.is_dir() {
            read_dir_into(root, &path, files)?;
        } else {
            let content = std::fs::read_to_string(&path).map_err(|e| ScaffoldError::Io {
                path: path.clone(),
                source: e,
            })?;
            let rel = path.strip_prefix(root).expect("walked below root");
            files.insert(output_path(rel), content);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_id_is_embedded() {
        for id in TEMPLATE_IDS {
            assert!(Template::embedded(id).is_some(), "{id}");
        }
        assert!(Template::embedded("nope").is_none());
    }

    #[test]
    fn placeholders_are_found_and_substituted() {
        let t = Template::new(
            "t",
            BTreeMap::from([(
                PathBuf::from("src/{{name}}.rs"),
                "a {{name}} {{ spaced }} {{x}} {}".to_string(),
            )]),
        );
        assert_eq!(
            t.placeholders(),
            BTreeSet::from(["name".to_string(), "x".to_string()])
        );
        let vars = BTreeMap::from([("name", "n".to_string()), ("x", "{{name}}".to_string())]);
        let tree = t.render(&vars).unwrap();
        // Substituted values are not rescanned.
        assert_eq!(tree.get("src/n.rs"), Some("a n {{ spaced }} {{name}} {}"));
        assert!(matches!(
            t.render(&BTreeMap::from([("name", "n".to_string())])),
            Err(ScaffoldError::UnresolvedPlaceholder { .. })
        ));
    }

    #[test]
    fn gitignore_is_renamed() {
        let t = Template::embedded("project").unwrap();
        assert!(t.files().any(|(p, _)| p == Path::new(".gitignore")));
    }

    #[test]
    fn override_dir_wins() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("bare/src")).unwrap();
        std::fs::write(dir.path().join("bare/src/main.rs"), "fn main() {}\n").unwrap();
        let t = Template::load("bare", Some(dir.path())).unwrap();
        assert_eq!(t.files().next().unwrap().1, "fn main() {}\n");
        assert_eq!(
            Template::load("sample", Some(dir.path())).unwrap(),
            Template::embedded("sample").unwrap()
        );
    }
}

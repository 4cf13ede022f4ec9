//! Flat `KEY=value` files shared by the runtime and the deployment compiler.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum EnvFileError {
    #[error("malformed env file {path}: {reason}")]
    Malformed { path: String, reason: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

/// Reads an env file. A missing file yields `Ok(None)`.
pub fn read_env_file(path: &Path) -> Result<Option<BTreeMap<String, String>>, EnvFileError> {
    let display = path.display().to_string();
    let iter = match dotenvy::from_path_iter(path) {
        Ok(iter) => iter,
        Err(dotenvy::Error::Io(e)) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
        Err(dotenvy::Error::Io(e)) => {
            return Err(EnvFileError::Io {
                path: display,
                source: e,
            })
        }
        Err(e) => {
            return Err(EnvFileError::Malformed {
                path: display,
                reason: e.to_string(),
            })
        }
    };
    let mut out = BTreeMap::new();
    for item in iter {
        let (k, v) = item.map_err(|e| EnvFileError::Malformed {
            path: display.clone(),
            reason: e.to_string(),
        })?;
        out.insert(k, v);
    }
    Ok(Some(out))
}

/// Parses env-file text, for content that is not on disk.
pub fn parse_env(text: &str) -> Result<BTreeMap<String, String>, EnvFileError> {
    dotenvy::from_read_iter(text.as_bytes())
        .map(|item| {
            item.map_err(|e| EnvFileError::Malformed {
                path: "<inline>".into(),
                reason: e.to_string(),
            })
        })
        .collect()
}

fn is_plain(value: &str) -> bool {
    value
        .chars()
        .all(|c| c.is_ascii_alphanumeric() || "_-./:,@%+=".contains(c))
}

/// Renders one `KEY=value` line per entry in key order, double-quoting values that need it.
pub fn render_env(vars: &BTreeMap<String, String>) -> String {
    let mut out = String::new();
    for (k, v) in vars {
        out.push_str(k);
        out.push('=');
        if is_plain(v) {
            out.push_str(v);
        } else {
            out.push('"');
            for c in v.chars() {
                match c {
                    '"' | '\\' | '$' => {
                        out.push('\\');
                        out.push(c);
                    }
                    '\n' => out.push_str("\\n"),
                    _ => out.push(c),
                }
            }
            out.push('"');
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_round_trips_through_the_parser() {
        let mut vars = BTreeMap::new();
        vars.insert("A".to_string(), "plain-value_1.2".to_string());
        vars.insert("B".to_string(), "with space and # hash".to_string());
        vars.insert(
            "C".to_string(),
            r#"quote " back \ dollar $HOME"#.to_string(),
        );
        vars.insert("D".to_string(), String::new());
        vars.insert("E".to_string(), "line\nbreak".to_string());
        let text = render_env(&vars);
        assert_eq!(parse_env(&text).unwrap(), vars);
    }

    #[test]
    fn missing_file_is_none() {
        let dir = tempfile::tempdir().unwrap();
        assert!(read_env_file(&dir.path().join("nope.env"))
            .unwrap()
            .is_none());
    }

    #[test]
    fn malformed_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.env");
        std::fs::write(&path, "GOOD=1\nthis is not an assignment\n").unwrap();
        assert!(matches!(
            read_env_file(&path),
            Err(EnvFileError::Malformed { .. })
        ));
    }
}

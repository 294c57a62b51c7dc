//! Shared loader for the TAB-separated entity files used by gazetteers and
//! candidate pools: one `entity<TAB>category` per line, `#` comments and
//! blank lines allowed.

use std::path::Path;

use thiserror::Error;

use crate::model::EntityCategory;

#[derive(Debug, Error)]
pub enum DataFileError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected `entity<TAB>category`, got {text:?}")]
    BadLine { line: usize, text: String },
    #[error("line {line}: {source}")]
    BadCategory {
        line: usize,
        #[source]
        source: crate::model::UnknownCategory,
    },
    #[error("line {line}: duplicate entity {entity:?}")]
    Duplicate { line: usize, entity: String },
    #[error("file contains no entries")]
    Empty,
}

/// Parse file contents into `(entity, category)` entries, preserving order.
/// Duplicate entity strings are rejected.
pub fn parse_entries(contents: &str) -> Result<Vec<(String, EntityCategory)>, DataFileError> {
    let mut entries: Vec<(String, EntityCategory)> = Vec::new();
    for (idx, raw) in contents.lines().enumerate() {
        let line = idx + 1;
        let text = raw.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let (entity, category) = text
            .split_once('\t')
            .ok_or_else(|| DataFileError::BadLine {
                line,
                text: text.to_string(),
            })?;
        let entity = entity.trim();
        if entity.is_empty() {
            return Err(DataFileError::BadLine {
                line,
                text: text.to_string(),
            });
        }
        let category: EntityCategory = category
            .parse()
            .map_err(|source| DataFileError::BadCategory { line, source })?;
        if entries.iter().any(|(e, _)| e == entity) {
            return Err(DataFileError::Duplicate {
                line,
                entity: entity.to_string(),
            });
        }
        entries.push((entity.to_string(), category));
    }
    if entries.is_empty() {
        return Err(DataFileError::Empty);
    }
    Ok(entries)
}

pub fn load_entries(path: &Path) -> Result<Vec<(String, EntityCategory)>, DataFileError> {
    let contents = std::fs::read_to_string(path).map_err(|source| DataFileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_entries(&contents)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_entries_with_comments() {
        let entries = parse_entries("# people\nAlice\tperson\n\nParis\tlocation\n").unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0], ("Alice".to_string(), EntityCategory::Person));
        assert_eq!(entries[1], ("Paris".to_string(), EntityCategory::Location));
    }

    #[test]
    fn rejects_duplicates_and_garbage() {
        assert!(matches!(
            parse_entries("Alice\tperson\nAlice\tlocation\n"),
            Err(DataFileError::Duplicate { .. })
        ));
        assert!(matches!(
            parse_entries("Alice person\n"),
            Err(DataFileError::BadLine { .. })
        ));
        assert!(matches!(
            parse_entries("Alice\tcity\n"),
            Err(DataFileError::BadCategory { .. })
        ));
        assert!(matches!(
            parse_entries("# only comments\n"),
            Err(DataFileError::Empty)
        ));
    }
}

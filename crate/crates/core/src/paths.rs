//! Repository-relative path handling.

use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum PathError {
    #[error("path is empty")]
    Empty,
    #[error("absolute path `{0}` is not repository-relative")]
    Absolute(String),
    #[error("path `{0}` escapes the repository")]
    ParentEscape(String),
}

/// Normalises a repository-relative path: strips `./` and empty segments,
/// converts backslashes, rejects absolute paths and any `..` segment.
pub fn normalize_repo_path(raw: &str) -> Result<String, PathError> {
    let raw = raw.trim().trim_matches('`');
    let unified = raw.replace('\\', "/");
    if unified.is_empty() {
        return Err(PathError::Empty);
    }
    let bytes = unified.as_bytes();
    let drive = bytes.len() >= 2 && bytes[0].is_ascii_alphabetic() && bytes[1] == b':';
    if unified.starts_with('/') || unified.starts_with('~') || drive {
        return Err(PathError::Absolute(raw.to_string()));
    }
    let mut parts = Vec::new();
    for seg in unified.split('/') {
        match seg {
            "" | "." => {}
            ".." => return Err(PathError::ParentEscape(raw.to_string())),
            s => parts.push(s),
        }
    }
    if parts.is_empty() {
        return Err(PathError::Empty);
    }
    Ok(parts.join("/"))
}

/// Parent directory of a normalised path, `None` at the repository root.
pub fn parent_of(path: &str) -> Option<&str> {
    path.rfind('/').map(|i| &path[..i])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalizes() {
        assert_eq!(normalize_repo_path("./src//app.py").unwrap(), "src/app.py");
        assert_eq!(normalize_repo_path("`src\\x.ts`").unwrap(), "src/x.ts");
        assert!(matches!(
            normalize_repo_path("/etc/passwd"),
            Err(PathError::Absolute(_))
        ));
        assert!(matches!(
            normalize_repo_path("C:/x"),
            Err(PathError::Absolute(_))
        ));
        assert!(matches!(
            normalize_repo_path("a/../../b"),
            Err(PathError::ParentEscape(_))
        ));
        assert!(matches!(normalize_repo_path("./"), Err(PathError::Empty)));
        assert_eq!(parent_of("a/b/c.py"), Some("a/b"));
        assert_eq!(parent_of("c.py"), None);
    }

    proptest! {
        #[test]
        fn normalized_paths_never_escape(s in "[a-z./\\\\]{0,24}") {
            if let Ok(p) = normalize_repo_path(&s) {
                prop_assert!(!p.starts_with('/'));
                prop_assert!(p.split('/').all(|seg| !seg.is_empty() && seg != ".." && seg != "."));
                prop_assert_eq!(normalize_repo_path(&p).unwrap(), p);
            }
        }
    }
}

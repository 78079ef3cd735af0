//! Offline backends.

use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use super::{Backend, BackendError};

/// Replays a script of response groups, one group per call.
///
/// The file format is a JSON list of string lists. Groups longer than `b`
/// are truncated; shorter ones are padded with empty completions.
#[derive(Debug)]
pub struct ScriptedMock {
    groups: Vec<Vec<String>>,
    cursor: AtomicUsize,
}

impl ScriptedMock {
    pub fn new(groups: Vec<Vec<String>>) -> Self {
        Self { groups, cursor: AtomicUsize::new(0) }
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let err = |reason: String| BackendError::Script { path: path.display().to_string(), reason };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let groups: Vec<Vec<String>> = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        Ok(Self::new(groups))
    }

    pub fn groups(&self) -> &[Vec<String>] {
        &self.groups
    }
}

impl Backend for ScriptedMock {
    fn complete(&self, _prompt: &str, b: usize) -> Result<Vec<String>, BackendError> {
        let call = self.cursor.fetch_add(1, Ordering::SeqCst);
        let group = self.groups.get(call).ok_or(BackendError::ScriptExhausted { call })?;
        let mut out: Vec<String> = group.iter().take(b).cloned().collect();
        out.resize(b, String::new());
        Ok(out)
    }

    fn begin_run(&self) {
        self.cursor.store(0, Ordering::SeqCst);
    }
}

/// Backend defined by a closure over the prompt text; handy for reactive test doubles.
pub struct FnBackend<F>(pub F);

impl<F> Backend for FnBackend<F>
where
    F: Fn(&str, usize) -> Vec<String> + Send + Sync,
{
    fn complete(&self, prompt: &str, b: usize) -> Result<Vec<String>, BackendError> {
        let mut out = (self.0)(prompt, b);
        out.resize(b, String::new());
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_json_groups() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("script.json");
        fs::write(&path, r#"[["a", "b"], ["c"]]"#).unwrap();
        let m = ScriptedMock::load(&path).unwrap();
        assert_eq!(m.complete("", 1).unwrap(), ["a"]);
        assert_eq!(m.complete("", 2).unwrap(), ["c", ""]);
        fs::write(&path, r#"{"not": "a list"}"#).unwrap();
        assert!(matches!(ScriptedMock::load(&path), Err(BackendError::Script { .. })));
    }
}

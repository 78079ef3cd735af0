//! Feature-transformation programs: source text plus provenance.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Stem of every entry-point name; versions are appended as `_v{n}`.
pub const FUNCTION_STEM: &str = "modify_features";

pub fn versioned_name(version: usize) -> String {
    format!("{FUNCTION_STEM}_v{version}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// `None` for the seed program.
    pub island: Option<usize>,
    pub iteration: Option<usize>,
    /// Identities of the demonstrations shown when this program was proposed.
    pub parents: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureProgram {
    pub source: String,
    pub function_name: String,
    pub version: usize,
    pub provenance: Provenance,
}

impl FeatureProgram {
    pub fn new(source: impl Into<String>, version: usize, provenance: Provenance) -> Self {
        Self {
            source: source.into(),
            function_name: versioned_name(version),
            version,
            provenance,
        }
    }

    /// The starting program every island holds: returns its input unchanged.
    pub fn identity_seed() -> Self {
        Self::new(IDENTITY_SOURCE, 0, Provenance { island: None, iteration: None, parents: vec![] })
    }

    /// Source with the entry point renamed to `name`, including recursive references.
    pub fn source_named(&self, name: &str) -> String {
        if name == self.function_name {
            return self.source.clone();
        }
        let pattern = Regex::new(&format!(r"\b{}\b", regex::escape(&self.function_name)))
            .expect("escaped identifier is a valid pattern");
        pattern.replace_all(&self.source, name).into_owned()
    }

    /// Content identity, independent of the version suffix the program was proposed under.
    pub fn identity(&self) -> String {
        let canonical = self.source_named(FUNCTION_STEM);
        let normalized: String = canonical.trim().lines().map(str::trim_end).collect::<Vec<_>>().join("\n");
        hex::encode(Sha256::digest(normalized.as_bytes()))
    }

    /// Short hash of the raw source text.
    pub fn source_hash(&self) -> String {
        hex::encode(&Sha256::digest(self.source.as_bytes())[..8])
    }
}

pub const IDENTITY_SOURCE: &str = "def modify_features_v0(df_input):
    # Starting point: return the input features unchanged.
    df_output = df_input.copy()
    return df_output
";

pub(crate) fn def_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?m)^\s*def\s+([A-Za-z_][A-Za-z0-9_]*)\s*\(").unwrap())
}

//! Extraction of a candidate program from free-form model output.

use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::program::{def_pattern, versioned_name, FeatureProgram, Provenance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseFailure {
    Empty,
    NoCodeBlock,
    WrongFunctionName,
}

impl fmt::Display for ParseFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParseFailure::Empty => "empty",
            ParseFailure::NoCodeBlock => "no_code_block",
            ParseFailure::WrongFunctionName => "wrong_function_name",
        })
    }
}

fn fence_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    // an unterminated final fence runs to the end of the text
    RE.get_or_init(|| Regex::new(r"(?ms)^[ \t]*```[A-Za-z0-9_+-]*[ \t]*\r?\n(.*?)(?:^[ \t]*```|\z)").unwrap())
}

fn defines(code: &str, name: &str) -> bool {
    def_pattern().captures_iter(code).any(|c| &c[1] == name)
}

/// Code starting at the first `def`, with any top-level imports before it,
/// up to the first unindented line that does not look like code.
fn unfenced_code(text: &str) -> Option<String> {
    let lines: Vec<&str> = text.lines().collect();
    let start = lines.iter().position(|l| l.starts_with("def "))?;
    let mut out: Vec<&str> = lines[..start]
        .iter()
        .copied()
        .filter(|l| l.starts_with("import ") || l.starts_with("from "))
        .collect();
    for line in &lines[start..] {
        let top_level = !line.is_empty() && !line.starts_with(char::is_whitespace);
        let codeish = ["def ", "import ", "from ", "@", "#", "class ", "return"].iter().any(|p| line.starts_with(p))
            || line.contains(" = ");
        if top_level && !codeish {
            break;
        }
        out.push(line);
    }
    Some(out.join("\n").trim_end().to_string() + "\n")
}

/// Pulls the program for `modify_features_v{expected_version}` out of a completion.
///
/// Fenced blocks are searched first and the first one defining the expected
/// function wins. Without fences the first `def` and what follows is used.
pub fn parse_program(raw: &str, expected_version: usize) -> Result<FeatureProgram, ParseFailure> {
    if raw.trim().is_empty() {
        return Err(ParseFailure::Empty);
    }
    let name = versioned_name(expected_version);
    let blocks: Vec<&str> = fence_pattern().captures_iter(raw).map(|c| c.get(1).map_or("", |m| m.as_str())).collect();
    let code = if blocks.iter().any(|b| !b.trim().is_empty()) {
        blocks.into_iter().find(|b| defines(b, &name)).map(|b| b.trim_end().to_string() + "\n")
    } else {
        match unfenced_code(raw) {
            None => return Err(ParseFailure::NoCodeBlock),
            Some(code) => Some(code).filter(|c| defines(c, &name)),
        }
    };
    let code = code.ok_or(ParseFailure::WrongFunctionName)?;
    Ok(FeatureProgram::new(code, expected_version, Provenance { island: None, iteration: None, parents: vec![] }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fenced_block() {
        let raw = "Here you go:\n```python\nimport numpy as np\n\ndef modify_features_v1(df_input):\n    return df_input\n```\nThis adds nothing.";
        let p = parse_program(raw, 1).unwrap();
        assert_eq!(p.function_name, "modify_features_v1");
        assert_eq!(p.source, "import numpy as np\n\ndef modify_features_v1(df_input):\n    return df_input\n");
    }

    #[test]
    fn first_matching_block_wins() {
        let raw = "```\nx = 1\n```\n```python\ndef modify_features_v2(df):\n    return df\n```\n```python\ndef modify_features_v2(df):\n    return None\n```";
        assert!(parse_program(raw, 2).unwrap().source.contains("return df\n"));
    }

    #[test]
    fn unterminated_fence() {
        let raw = "```python\ndef modify_features_v1(df):\n    return df\n";
        assert!(parse_program(raw, 1).is_ok());
    }

    #[test]
    fn bare_definition() {
        let raw = "Sure.\nimport pandas as pd\ndef modify_features_v1(df):\n    df = df.copy()\n\n    return df\nThat is all.";
        let p = parse_program(raw, 1).unwrap();
        assert_eq!(p.source, "import pandas as pd\ndef modify_features_v1(df):\n    df = df.copy()\n\n    return df\n");
    }

    #[test]
    fn failures() {
        assert_eq!(parse_program("", 1), Err(ParseFailure::Empty));
        assert_eq!(parse_program("  \n", 1), Err(ParseFailure::Empty));
        assert_eq!(parse_program("I cannot help with that.", 1), Err(ParseFailure::NoCodeBlock));
        assert_eq!(parse_program("```python\ndef helper():\n    pass\n```", 1), Err(ParseFailure::WrongFunctionName));
        assert_eq!(parse_program("def modify_features_v0(df):\n    return df\n", 1), Err(ParseFailure::WrongFunctionName));
        // a name that merely starts with the expected one does not count
        assert_eq!(parse_program("def modify_features_v10(df):\n    return df\n", 1), Err(ParseFailure::WrongFunctionName));
    }

    proptest! {
        #[test]
        fn never_panics(s in "\\PC*", v in 0usize..5) {
            let _ = parse_program(&s, v);
        }

        #[test]
        fn never_panics_on_code_like_text(parts in proptest::collection::vec(
            prop_oneof![Just("```"), Just("```python\n"), Just("def modify_features_v1(df):\n"), Just("    return df\n"), Just("\n"), Just("text "), Just("def ")],
            0..12,
        )) {
            let s: String = parts.concat();
            if let Ok(p) = parse_program(&s, 1) {
                prop_assert!(p.source.contains("def modify_features_v1("));
            }
        }
    }
}

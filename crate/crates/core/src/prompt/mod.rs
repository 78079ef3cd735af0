//! Prompt construction.
//!
//! A prompt has five sections in fixed order: instruction, dataset
//! specification, evaluation function, demonstrations, and the stub of the
//! function the model must complete. Section text comes from templates with
//! the named placeholders `{task_description}`, `{feature_block}`,
//! `{examples_block}` and `{demonstrations}`.

use std::collections::BTreeMap;
use std::fs;
use std::ops::Range;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{anonymize, serialize_row, ColumnKind, Dataset, DatasetError};
use crate::memory::ScoredProgram;
use crate::program::{versioned_name, FeatureProgram};

/// Placeholders recognised in templates.
pub const PLACEHOLDERS: [&str; 4] = ["{task_description}", "{feature_block}", "{examples_block}", "{demonstrations}"];

const WITHHELD_TASK: &str = "Predict the target from the features below.";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("at least one demonstration is required")]
    EmptyDemonstrations,
    #[error("prompt has {len} characters, above the cap of {cap}")]
    TooLong { len: usize, cap: usize },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("cannot read template {path}: {source}")]
    Template {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstructionVariant {
    Basic,
    ComplexOperators,
}

/// Picks one of the two instruction variants with equal probability.
pub fn select_instruction_variant<R: Rng + ?Sized>(rng: &mut R) -> InstructionVariant {
    if rng.random_bool(0.5) {
        InstructionVariant::ComplexOperators
    } else {
        InstructionVariant::Basic
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    /// Fixed variant, or `None` to draw one per prompt.
    pub instruction_variant: Option<InstructionVariant>,
    pub include_domain_knowledge: bool,
    pub include_data_examples: bool,
    pub n_example_rows: usize,
    /// Demonstrations per prompt.
    pub k: usize,
    pub max_chars: Option<usize>,
}

impl Default for PromptSpec {
    fn default() -> Self {
        Self {
            instruction_variant: None,
            include_domain_knowledge: true,
            include_data_examples: true,
            n_example_rows: 10,
            k: 2,
            max_chars: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Section {
    Instruction,
    DatasetSpec,
    EvaluationFn,
    Demonstrations,
    Stub,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptText {
    pub text: String,
    /// Byte ranges of each section within `text`.
    pub section_spans: BTreeMap<Section, Range<usize>>,
    pub variant: InstructionVariant,
}

impl PromptText {
    pub fn section(&self, s: Section) -> &str {
        &self.text[self.section_spans[&s].clone()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplates {
    pub instruction_basic: String,
    pub instruction_complex: String,
    pub dataset_spec: String,
    pub evaluation_fn: String,
    pub demonstrations: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            instruction_basic: include_str!("templates/instruction_basic.txt").to_string(),
            instruction_complex: include_str!("templates/instruction_complex.txt").to_string(),
            dataset_spec: include_str!("templates/dataset_spec.txt").to_string(),
            evaluation_fn: include_str!("templates/evaluation_fn.txt").to_string(),
            demonstrations: include_str!("templates/demonstrations.txt").to_string(),
        }
    }
}

impl PromptTemplates {
    /// Loads templates from a directory; files that are absent keep their defaults.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut t = Self::default();
        for (file, slot) in [
            ("instruction_basic.txt", &mut t.instruction_basic),
            ("instruction_complex.txt", &mut t.instruction_complex),
            ("dataset_spec.txt", &mut t.dataset_spec),
            ("evaluation_fn.txt", &mut t.evaluation_fn),
            ("demonstrations.txt", &mut t.demonstrations),
        ] {
            let path = dir.join(file);
            if path.exists() {
                *slot = fs::read_to_string(&path)
                    .map_err(|source| PromptError::Template { path: path.display().to_string(), source })?;
            }
        }
        Ok(t)
    }

    fn instruction(&self, v: InstructionVariant) -> &str {
        match v {
            InstructionVariant::Basic => &self.instruction_basic,
            InstructionVariant::ComplexOperators => &self.instruction_complex,
        }
    }
}

fn fill(template: &str, pairs: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (key, value) in pairs {
        out = out.replace(key, value);
    }
    out
}

/// Rows spread across classes (round-robin quota, evenly spaced within each
/// class) or, for regression, evenly over the table.
pub fn representative_rows(ds: &Dataset, n: usize) -> Vec<usize> {
    let n = n.min(ds.n_rows());
    let spaced = |rows: &[usize], q: usize| -> Vec<usize> { (0..q).map(|i| rows[i * rows.len() / q]).collect() };
    match ds.task_kind().n_classes() {
        Some(k) => {
            let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
            for (i, &y) in ds.labels.iter().enumerate() {
                by_class[y as usize].push(i);
            }
            let mut quota = vec![0usize; k];
            let mut assigned = 0;
            while assigned < n {
                for c in 0..k {
                    if assigned < n && quota[c] < by_class[c].len() {
                        quota[c] += 1;
                        assigned += 1;
                    }
                }
            }
            let picks: Vec<Vec<usize>> = by_class.iter().zip(&quota).map(|(rows, &q)| spaced(rows, q)).collect();
            // interleave classes so the listing alternates labels
            let mut out = Vec::with_capacity(n);
            for i in 0..quota.iter().copied().max().unwrap_or(0) {
                out.extend(picks.iter().filter_map(|p| p.get(i)));
            }
            out
        }
        None => spaced(&(0..ds.n_rows()).collect::<Vec<_>>(), n),
    }
}

/// Dataset section: task, features and (optionally) serialized example rows.
pub fn render_dataset_spec(
    ds: &Dataset,
    spec: &PromptSpec,
    templates: &PromptTemplates,
) -> Result<String, PromptError> {
    let anonymized;
    let ds = if spec.include_domain_knowledge {
        ds
    } else {
        anonymized = anonymize(ds);
        &anonymized
    };
    let task = if spec.include_domain_knowledge && !ds.metadata.task_description.trim().is_empty() {
        ds.metadata.task_description.trim().to_string()
    } else {
        WITHHELD_TASK.to_string()
    };
    let kind_text = match ds.task_kind().n_classes() {
        Some(k) => format!("{task}\nThis is a classification task with {k} classes."),
        None => format!("{task}\nThis is a regression task."),
    };
    let feature_block = ds
        .feature_names()
        .iter()
        .zip(ds.features.kinds())
        .map(|(name, kind)| {
            let kind = match kind {
                ColumnKind::Numeric => "numeric",
                ColumnKind::Categorical => "categorical",
            };
            match ds.metadata.feature_descriptions.get(name).filter(|_| spec.include_domain_knowledge) {
                Some(desc) if !desc.trim().is_empty() => format!("- {name} ({kind}): {}", desc.trim()),
                _ => format!("- {name} ({kind})"),
            }
        })
        .collect::<Vec<_>>()
        .join("\n");
    let examples_block = if spec.include_data_examples && spec.n_example_rows > 0 {
        representative_rows(ds, spec.n_example_rows)
            .into_iter()
            .map(|i| serialize_row(&ds.features.row(i), &ds.label_text(ds.labels[i]), ds.feature_names()))
            .collect::<Result<Vec<_>, _>>()?
            .join("\n")
    } else {
        "(not provided)".to_string()
    };
    Ok(fill(
        &templates.dataset_spec,
        &[("{task_description}", &kind_text), ("{feature_block}", &feature_block), ("{examples_block}", &examples_block)],
    ))
}

fn stub_text(version: usize) -> String {
    let name = versioned_name(version);
    let doc = if version == 0 {
        "Transform the input features.".to_string()
    } else {
        format!("Improved version of `{}`.", versioned_name(version - 1))
    };
    format!("def {name}(df_input):\n    \"\"\"{doc}\"\"\"\n")
}

fn demonstration_bodies(programs: &[ScoredProgram]) -> String {
    programs
        .iter()
        .enumerate()
        .map(|(v, p)| p.program.source_named(&versioned_name(v)).trim_end().to_string())
        .collect::<Vec<_>>()
        .join("\n\n\n")
}

/// Demonstrations renamed `_v0.._v{k-1}` (ascending score, best last) and the
/// stub for `_v{k}`.
pub fn render_demonstrations(programs: &[ScoredProgram]) -> Result<String, PromptError> {
    render_demonstrations_with(programs, &PromptTemplates::default())
}

pub fn render_demonstrations_with(programs: &[ScoredProgram], templates: &PromptTemplates) -> Result<String, PromptError> {
    let (demos, stub) = demonstration_sections(programs, templates)?;
    Ok(demos + &stub)
}

fn demonstration_sections(programs: &[ScoredProgram], templates: &PromptTemplates) -> Result<(String, String), PromptError> {
    if programs.is_empty() {
        return Err(PromptError::EmptyDemonstrations);
    }
    let mut sorted = programs.to_vec();
    sorted.sort_by(|a, b| a.score.total_cmp(&b.score).then(a.admission.cmp(&b.admission)));
    let demos = fill(&templates.demonstrations, &[("{demonstrations}", &demonstration_bodies(&sorted))]);
    let stub = format!(
        "\n## Function to complete\nWrite the body of `{}` below.\n```python\n{}",
        versioned_name(sorted.len()),
        stub_text(sorted.len())
    );
    Ok((demos, stub))
}

/// Version the model is expected to write given `k` demonstrations.
pub fn expected_version(k: usize) -> usize {
    k
}

pub fn build_prompt<R: Rng + ?Sized>(
    ds: &Dataset,
    demos: &[ScoredProgram],
    spec: &PromptSpec,
    templates: &PromptTemplates,
    rng: &mut R,
) -> Result<PromptText, PromptError> {
    let variant = match spec.instruction_variant {
        Some(v) => v,
        None => select_instruction_variant(rng),
    };
    let (demo_text, stub) = demonstration_sections(demos, templates)?;
    let parts = [
        (Section::Instruction, templates.instruction(variant).trim_end().to_string() + "\n\n"),
        (Section::DatasetSpec, render_dataset_spec(ds, spec, templates)?.trim_end().to_string() + "\n\n"),
        (Section::EvaluationFn, templates.evaluation_fn.trim_end().to_string() + "\n\n"),
        (Section::Demonstrations, demo_text.trim_end().to_string() + "\n"),
        (Section::Stub, stub),
    ];
    let mut text = String::new();
    let mut section_spans = BTreeMap::new();
    for (section, body) in parts {
        let start = text.len();
        text.push_str(&body);
        section_spans.insert(section, start..text.len());
    }
    if let Some(cap) = spec.max_chars {
        let len = text.chars().count();
        if len > cap {
            return Err(PromptError::TooLong { len, cap });
        }
    }
    Ok(PromptText { text, section_spans, variant })
}

/// Seed demonstration used when evolution is switched off.
pub fn seed_demonstration(seed: &FeatureProgram, score: f64, raw_metric: f64) -> ScoredProgram {
    ScoredProgram { program: seed.clone(), score, raw_metric, admission: 0 }
}

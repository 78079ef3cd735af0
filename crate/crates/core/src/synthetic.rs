//! Small generated datasets used by examples and tests.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{dataset_from_columns, Dataset, MetadataFile};

pub const BALANCE_FEATURES: [&str; 4] =
    ["left_weight", "left_distance", "right_weight", "right_distance"];

/// The full 5x5x5x5 balance-scale grid. The scale tips toward the side with
/// the larger weight-times-distance torque; equal torques are balanced.
pub fn balance_scale() -> Dataset {
    let mut columns: Vec<Vec<String>> = (0..5).map(|_| Vec::with_capacity(625)).collect();
    for lw in 1..=5i32 {
        for ld in 1..=5 {
            for rw in 1..=5 {
                for rd in 1..=5 {
                    let torque = lw * ld - rw * rd;
                    let class = match torque.signum() {
                        1 => "L",
                        -1 => "R",
                        _ => "B",
                    };
                    for (col, v) in columns.iter_mut().zip([
                        lw.to_string(),
                        ld.to_string(),
                        rw.to_string(),
                        rd.to_string(),
                        class.to_string(),
                    ]) {
                        col.push(v);
                    }
                }
            }
        }
    }
    let header = BALANCE_FEATURES
        .iter()
        .map(|s| s.to_string())
        .chain(std::iter::once("class".to_string()))
        .collect();
    dataset_from_columns(balance_metadata(), header, columns).expect("generated dataset is valid")
}

pub fn balance_metadata() -> MetadataFile {
    let features: BTreeMap<String, String> = [
        ("left_weight", "Weight placed on the left arm of the scale"),
        ("left_distance", "Distance of the left weight from the fulcrum"),
        ("right_weight", "Weight placed on the right arm of the scale"),
        ("right_distance", "Distance of the right weight from the fulcrum"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect();
    MetadataFile {
        name: "balance-scale".into(),
        task_description: "Decide whether a balance scale tips to the left, tips to the right, or stays balanced.".into(),
        label: "class".into(),
        task_kind: "classification".into(),
        features,
        categorical: vec![],
        classes: None,
    }
}

/// Regression data whose target is the product of two features plus small noise.
pub fn product_regression(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut columns: Vec<Vec<String>> = (0..4).map(|_| Vec::with_capacity(n)).collect();
    for _ in 0..n {
        let a: f64 = rng.random_range(0.5..4.0);
        let b: f64 = rng.random_range(0.5..4.0);
        let c: f64 = rng.random_range(-1.0..1.0);
        let y = a * b + 0.05 * rng.random_range(-1.0..1.0);
        for (col, v) in columns.iter_mut().zip([a, b, c, y]) {
            col.push(format!("{v}"));
        }
    }
    let meta = MetadataFile {
        name: "product".into(),
        task_description: "Predict the rectangle area from its side lengths.".into(),
        label: "area".into(),
        task_kind: "regression".into(),
        features: [("side_a", "First side length"), ("side_b", "Second side length")]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect(),
        categorical: vec![],
        classes: None,
    };
    let header = ["side_a", "side_b", "jitter", "area"].map(String::from).to_vec();
    dataset_from_columns(meta, header, columns).expect("generated dataset is valid")
}

/// Torque-difference program for [`balance_scale`].
pub const TORQUE_DIFFERENCE_PROGRAM: &str = r#"def modify_features_v1(df_input):
    df_output = df_input.copy()
    df_output["torque_difference"] = (
        df_output["left_weight"] * df_output["left_distance"]
        - df_output["right_weight"] * df_output["right_distance"]
    )
    return df_output
"#;

/// Programs of increasing quality for [`balance_scale`], each tagged with a
/// `# ladder level N` marker. Level 3 adds the full torque difference.
pub const BALANCE_LADDER: [&str; 3] = [
    r#"def modify_features_v1(df_input):
    # ladder level 1
    df_output = df_input.copy()
    df_output["left_torque"] = df_output["left_weight"] * df_output["left_distance"]
    return df_output
"#,
    r#"def modify_features_v1(df_input):
    # ladder level 2
    df_output = df_input.copy()
    df_output["left_torque"] = df_output["left_weight"] * df_output["left_distance"]
    df_output["right_torque"] = df_output["right_weight"] * df_output["right_distance"]
    return df_output
"#,
    r#"def modify_features_v1(df_input):
    # ladder level 3
    df_output = df_input.copy()
    df_output["left_torque"] = df_output["left_weight"] * df_output["left_distance"]
    df_output["right_torque"] = df_output["right_weight"] * df_output["right_distance"]
    df_output["torque_difference"] = df_output["left_torque"] - df_output["right_torque"]
    return df_output
"#,
];

fn stub_version(prompt: &str) -> usize {
    let re = regex::Regex::new(r"def modify_features_v(\d+)\(df_input\):\s*\n\s*\x22\x22\x22[^\n]*\x22\x22\x22\s*$").unwrap();
    re.captures(prompt.trim_end()).and_then(|c| c[1].parse().ok()).unwrap_or(1)
}

/// Reply of a proposer that only improves on what it is shown: one level
/// above the best ladder level among the prompt's demonstrations, as a
/// fenced block named after the prompt's stub.
pub fn ladder_completion(prompt: &str) -> String {
    let shown = (1..=BALANCE_LADDER.len())
        .rev()
        .find(|l| prompt.contains(&format!("# ladder level {l}\n")))
        .unwrap_or(0);
    let next = (shown + 1).min(BALANCE_LADDER.len());
    let version = stub_version(prompt);
    let source = BALANCE_LADDER[next - 1].replace("modify_features_v1", &crate::program::versioned_name(version));
    format!("Here is an improved version.\n```python\n{source}```\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::TaskKind;

    #[test]
    fn balance_scale_shape() {
        let ds = balance_scale();
        assert_eq!(ds.n_rows(), 625);
        assert_eq!(ds.n_features(), 4);
        assert_eq!(ds.task_kind(), &TaskKind::Classification { n_classes: 3 });
        assert_eq!(ds.metadata.class_names, vec!["B", "L", "R"]);
        let balanced = ds.labels.iter().filter(|&&y| y == 0.0).count();
        assert_eq!(balanced, 49);
    }

    #[test]
    fn ladder_climbs_one_level_per_prompt() {
        let stub = "\n```python\ndef modify_features_v2(df_input):\n    \"\"\"Improved version of `modify_features_v1`.\"\"\"\n";
        let first = ladder_completion(&format!("seed only{stub}"));
        assert!(first.contains("# ladder level 1\n") && first.contains("def modify_features_v2("));
        let second = ladder_completion(&format!("{first}{stub}"));
        assert!(second.contains("# ladder level 2\n"));
        let top = ladder_completion(&format!("{}{stub}", BALANCE_LADDER[2]));
        assert!(top.contains("# ladder level 3\n"));
    }

    #[test]
    fn regression_is_reproducible() {
        assert_eq!(product_regression(30, 2), product_regression(30, 2));
    }
}

//! Base model accuracy on the balance-scale data as Gaussian noise grows.
//! The full sweep through the search runs with `llmfe noise-sweep`.

use llmfe::dataset::{inject_noise, split, SplitSpec};
use llmfe::evaluation::{Evaluator, Metric, ModelKind, ModelSpec};
use llmfe::sandbox::{ExecutionLimits, Sandbox};
use llmfe::synthetic::balance_scale;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ds = balance_scale();
    let evaluator = Evaluator::new(
        ModelSpec::new(ModelKind::GradientBoostedTrees),
        Metric::Accuracy,
        Sandbox::new("python3", ExecutionLimits::default()),
        0,
    );
    for sigma in [0.0, 0.01, 0.05, 0.1, 0.5] {
        let mut accs = Vec::new();
        for seed in 0..3 {
            let noisy = inject_noise(&ds, sigma, seed);
            let parts = split(&noisy, &SplitSpec { test_fraction: 0.2, val_fraction: 0.2, seed })?;
            let full = parts.train_full(&noisy);
            accs.push(evaluator.base_score(&full, &parts.test)?.raw_metric().expect("valid"));
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        println!("sigma {sigma:<5} base accuracy {mean:.4}  ({accs:.3?})");
    }
    Ok(())
}

//! Full search against the no-evolution ablation with a proposer that only
//! improves on programs it is shown.

use std::sync::Arc;

use llmfe::backend::{Backend, FnBackend};
use llmfe::search::{run, Ablation, SearchConfig};
use llmfe::synthetic::{balance_scale, ladder_completion};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ds = balance_scale();
    for ablation in [Ablation::default(), Ablation { no_evolution: true, ..Default::default() }] {
        let backend: Arc<dyn Backend> = Arc::new(FnBackend(|prompt: &str, b: usize| (0..b).map(|_| ladder_completion(prompt)).collect()));
        let cfg = SearchConfig { ablation, ..Default::default() };
        let (result, _) = run(&cfg, &ds, backend)?;
        let trajectory: Vec<String> = result.best_trajectory.iter().map(|s| format!("{s:.3}")).collect();
        println!("{:<13} best {:.4}  trajectory {}", ablation.label(), result.best_score, trajectory.join(" "));
    }
    Ok(())
}

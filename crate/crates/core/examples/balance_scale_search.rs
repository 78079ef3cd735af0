//! One search on the synthetic balance-scale data with the scripted proposer,
//! then the base model against the top-program ensemble on held-out rows.
//!
//! ```text
//! cargo run --release --example balance_scale_search
//! ```

use std::path::Path;
use std::sync::Arc;

use llmfe::backend::ScriptedMock;
use llmfe::search::{run_split, SearchConfig};
use llmfe::synthetic::balance_scale;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let script = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data/balance_scale_script.json");
    let backend = Arc::new(ScriptedMock::load(&script)?);
    let cfg = SearchConfig::default();
    let (result, record) = run_split(&cfg, &balance_scale(), backend, 0)?;

    for it in &result.trace {
        let valid = it.candidates.iter().filter(|c| c.outcome.score().is_some()).count();
        println!("iteration {} island {}: {valid}/{} valid, best {:.4}", it.iteration, it.island, it.requested, it.best_score);
    }
    println!("\nbest validation program ({:.4}):\n{}", result.best_score, result.best_program.source);
    println!("test accuracy: base {:.4}, ensemble of {} {:.4}", record.base, record.ensemble_size, record.llmfe);
    Ok(())
}

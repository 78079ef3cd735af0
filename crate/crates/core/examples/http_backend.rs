//! One search against a chat-completions endpoint.
//!
//! ```text
//! LLMFE_API_KEY=... cargo run --release --example http_backend -- https://api.example.com/v1/chat/completions gpt-4o-mini
//! ```

use llmfe::backend::BackendConfig;
use llmfe::search::{run, SearchConfig};
use llmfe::synthetic::balance_scale;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let (Some(endpoint), Some(model)) = (args.next(), args.next()) else {
        eprintln!("usage: http_backend <endpoint> <model>");
        std::process::exit(2);
    };
    let backend = BackendConfig { temperature: 0.8, ..BackendConfig::http(endpoint, model) }.build()?;
    let (result, _) = run(&SearchConfig::default(), &balance_scale(), backend)?;
    println!("{} completions used, best validation accuracy {:.4}", result.samples_used, result.best_score);
    println!("{}", result.best_program.source);
    Ok(())
}

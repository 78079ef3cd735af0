//! Prints the prompt the proposer would receive for the balance-scale data,
//! with and without domain knowledge.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use llmfe::program::FeatureProgram;
use llmfe::prompt::{build_prompt, seed_demonstration, PromptSpec, PromptTemplates, Section};
use llmfe::synthetic::balance_scale;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ds = balance_scale();
    let demos = [seed_demonstration(&FeatureProgram::identity_seed(), 0.86, 0.86)];
    let templates = PromptTemplates::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    let full = build_prompt(&ds, &demos, &PromptSpec { k: 1, ..Default::default() }, &templates, &mut rng)?;
    println!("{}", full.text);

    let anon_spec = PromptSpec { k: 1, include_domain_knowledge: false, include_data_examples: false, ..Default::default() };
    let anon = build_prompt(&ds, &demos, &anon_spec, &templates, &mut rng)?;
    println!("==== without domain knowledge or rows, dataset section only ====\n{}", anon.section(Section::DatasetSpec));
    Ok(())
}

//! Cluster selection in the program memory: how the temperature schedule
//! sharpens the preference for high-scoring clusters.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use llmfe::evaluation::{Metric, Score};
use llmfe::memory::{boltzmann_probabilities, temperature, BoltzmannParams, MemoryBuffer};
use llmfe::program::{FeatureProgram, Provenance};

fn program(tag: usize) -> FeatureProgram {
    let source = format!("def modify_features_v1(df_input):\n    # variant {tag}\n    return df_input\n");
    FeatureProgram::new(source, 1, Provenance { island: Some(0), iteration: Some(tag), parents: vec![FeatureProgram::identity_seed().identity()] })
}

fn main() {
    let params = BoltzmannParams::default();
    for u in [0, 2_500, 5_000, 9_999, 10_000] {
        let tau = temperature(u, &params);
        let p = boltzmann_probabilities(&[0.5, 0.6], tau);
        println!("u = {u:>5}  tau = {tau:.6}  P(0.5) = {:.5}  P(0.6) = {:.5}", p[0], p[1]);
    }

    let seed = Score::from_metric(Metric::Accuracy, 0.80);
    let mut buffer = MemoryBuffer::init(&FeatureProgram::identity_seed(), &seed, 1, params).expect("valid seed");
    for (tag, acc) in [0.80, 0.82, 0.79, 0.85, 0.85].into_iter().enumerate() {
        let admitted = buffer.register(0, program(tag), acc, acc);
        println!("offer {acc:.2}: {}", if admitted { "admitted" } else { "rejected" });
    }
    let island = buffer.island(0);
    println!("\n{} programs in {} clusters, cluster probabilities {:?}", island.len(), island.clusters.len(), island.cluster_probabilities(&params));

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..3 {
        let demos = buffer.sample_demonstrations(0, 2, &mut rng);
        println!("demonstrations: {:?}", demos.iter().map(|d| d.score).collect::<Vec<_>>());
    }
}

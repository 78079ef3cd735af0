//! Multi-island program memory.
//!
//! Each island keeps its admitted programs grouped into clusters keyed by the
//! rounded validation score. Demonstrations are drawn by picking clusters
//! with a Boltzmann distribution over mean cluster scores, whose temperature
//! decays with the island's registration count and resets every period.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::Score;
use crate::program::FeatureProgram;

/// Decimal places kept in a cluster signature.
pub const SIGNATURE_DECIMALS: i32 = 6;
const MAX_REDRAWS: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MemoryError {
    #[error("the seed program must have a valid score")]
    InvalidSeed,
    #[error("need at least one island")]
    NoIslands,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredProgram {
    pub program: FeatureProgram,
    /// Signed score (larger is better).
    pub score: f64,
    pub raw_metric: f64,
    /// Buffer-wide admission counter; earlier admissions win ties.
    pub admission: u64,
}

pub fn signature_key(score: f64) -> i64 {
    (score * 10f64.powi(SIGNATURE_DECIMALS)).round() as i64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub signature: f64,
    pub programs: Vec<ScoredProgram>,
}

impl Cluster {
    pub fn mean_score(&self) -> f64 {
        self.programs.iter().map(|p| p.score).sum::<f64>() / self.programs.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoltzmannParams {
    /// Base temperature.
    pub t0: f64,
    /// Registrations after which the schedule resets.
    pub period: u64,
}

impl Default for BoltzmannParams {
    fn default() -> Self {
        Self { t0: 0.1, period: 10_000 }
    }
}

/// Cluster-selection temperature after `registrations` admissions.
pub fn temperature(registrations: u64, params: &BoltzmannParams) -> f64 {
    let period = params.period as f64;
    params.t0 * (1.0 - (registrations % params.period) as f64 / period)
}

/// Softmax of `scores / tau`, shifted by the maximum for stability.
pub fn boltzmann_probabilities(scores: &[f64], tau: f64) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scores.iter().map(|s| ((s - max) / tau).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.iter().map(|w| w / total).collect()
}

fn draw_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdmissionRule {
    /// Admit when the score is at least the island's best.
    #[default]
    IslandBestWithTies,
    /// Admit only when the score beats the island's best.
    StrictIslandBest,
    /// Admit only when the score beats the best across all islands.
    StrictGlobalBest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WithinClusterChoice {
    #[default]
    Uniform,
    /// Prefer shorter programs inside a cluster.
    PreferShort,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Island {
    pub id: usize,
    pub clusters: BTreeMap<i64, Cluster>,
    /// Programs ever admitted here, the seed included.
    pub registrations: u64,
    pub best_score: f64,
}

impl Island {
    pub fn temperature(&self, params: &BoltzmannParams) -> f64 {
        temperature(self.registrations, params)
    }

    pub fn programs(&self) -> impl Iterator<Item = &ScoredProgram> {
        self.clusters.values().flat_map(|c| c.programs.iter())
    }

    pub fn len(&self) -> usize {
        self.clusters.values().map(|c| c.programs.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// Selection probability of each cluster, in signature order.
    pub fn cluster_probabilities(&self, params: &BoltzmannParams) -> Vec<f64> {
        let means: Vec<f64> = self.clusters.values().map(Cluster::mean_score).collect();
        boltzmann_probabilities(&means, self.temperature(params))
    }

    pub fn sample_cluster<R: Rng + ?Sized>(&self, params: &BoltzmannParams, rng: &mut R) -> &Cluster {
        assert!(!self.is_empty(), "cannot sample from an empty island");
        let probs = self.cluster_probabilities(params);
        let i = draw_index(&probs, rng);
        self.clusters.values().nth(i).expect("index within cluster count")
    }

    fn pick_in_cluster<'a, R: Rng + ?Sized>(
        cluster: &'a Cluster,
        choice: WithinClusterChoice,
        rng: &mut R,
    ) -> &'a ScoredProgram {
        let n = cluster.programs.len();
        let i = match choice {
            WithinClusterChoice::Uniform => rng.random_range(0..n),
            WithinClusterChoice::PreferShort => {
                let lens: Vec<f64> = cluster.programs.iter().map(|p| p.program.source.len() as f64).collect();
                let min = lens.iter().copied().fold(f64::INFINITY, f64::min);
                let max = lens.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let scaled: Vec<f64> = lens.iter().map(|l| -(l - min) / (max - min + 1e-6)).collect();
                draw_index(&boltzmann_probabilities(&scaled, 1.0), rng)
            }
        };
        &cluster.programs[i]
    }

    /// Draws `k` demonstrations: one Boltzmann cluster draw per slot, one
    /// program per drawn cluster. Repeats are redrawn a bounded number of
    /// times and then accepted. The result is sorted by ascending score.
    pub fn sample_demonstrations<R: Rng + ?Sized>(
        &self,
        k: usize,
        params: &BoltzmannParams,
        choice: WithinClusterChoice,
        rng: &mut R,
    ) -> Vec<ScoredProgram> {
        assert!(k >= 1, "need at least one demonstration");
        let mut picked: Vec<ScoredProgram> = Vec::with_capacity(k);
        for _ in 0..k {
            let mut candidate = None;
            for _ in 0..=MAX_REDRAWS {
                let cluster = self.sample_cluster(params, rng);
                let p = Self::pick_in_cluster(cluster, choice, rng);
                let fresh = picked.iter().all(|q| q.program.identity() != p.program.identity());
                candidate = Some(p);
                if fresh {
                    break;
                }
            }
            picked.push(candidate.expect("at least one draw").clone());
        }
        picked.sort_by(|a, b| a.score.total_cmp(&b.score).then(a.admission.cmp(&b.admission)));
        picked
    }

    fn insert(&mut self, entry: ScoredProgram) {
        let key = signature_key(entry.score);
        let signature = key as f64 / 10f64.powi(SIGNATURE_DECIMALS);
        self.clusters
            .entry(key)
            .or_insert_with(|| Cluster { signature, programs: Vec::new() })
            .programs
            .push(entry.clone());
        self.registrations += 1;
        if entry.score > self.best_score {
            self.best_score = entry.score;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryBuffer {
    pub islands: Vec<Island>,
    pub params: BoltzmannParams,
    pub rule: AdmissionRule,
    pub within_cluster: WithinClusterChoice,
    next_admission: u64,
}

impl MemoryBuffer {
    /// Seeds `m` islands with a copy of the seed program each.
    pub fn init(
        seed: &FeatureProgram,
        seed_score: &Score,
        m: usize,
        params: BoltzmannParams,
    ) -> Result<Self, MemoryError> {
        let (score, raw) = match seed_score {
            Score::Valid { value, raw_metric } => (*value, *raw_metric),
            Score::Disqualified(_) => return Err(MemoryError::InvalidSeed),
        };
        if m == 0 {
            return Err(MemoryError::NoIslands);
        }
        let mut buffer = Self {
            islands: Vec::with_capacity(m),
            params,
            rule: AdmissionRule::default(),
            within_cluster: WithinClusterChoice::default(),
            next_admission: 0,
        };
        for id in 0..m {
            let mut island = Island { id, clusters: BTreeMap::new(), registrations: 0, best_score: f64::NEG_INFINITY };
            island.insert(ScoredProgram { program: seed.clone(), score, raw_metric: raw, admission: buffer.next_admission });
            buffer.next_admission += 1;
            buffer.islands.push(island);
        }
        Ok(buffer)
    }

    pub fn with_rule(mut self, rule: AdmissionRule) -> Self {
        self.rule = rule;
        self
    }

    pub fn with_within_cluster(mut self, choice: WithinClusterChoice) -> Self {
        self.within_cluster = choice;
        self
    }

    pub fn n_islands(&self) -> usize {
        self.islands.len()
    }

    pub fn island(&self, id: usize) -> &Island {
        &self.islands[id]
    }

    pub fn sample_demonstrations<R: Rng + ?Sized>(&self, island: usize, k: usize, rng: &mut R) -> Vec<ScoredProgram> {
        self.islands[island].sample_demonstrations(k, &self.params, self.within_cluster, rng)
    }

    /// Offers a validly scored program to an island. Returns whether it was admitted.
    pub fn register(&mut self, island: usize, program: FeatureProgram, score: f64, raw_metric: f64) -> bool {
        let global = self.global_best().score;
        let target = &mut self.islands[island];
        let admit = match self.rule {
            AdmissionRule::IslandBestWithTies => score >= target.best_score,
            AdmissionRule::StrictIslandBest => score > target.best_score,
            AdmissionRule::StrictGlobalBest => score > global,
        };
        if admit {
            target.insert(ScoredProgram { program, score, raw_metric, admission: self.next_admission });
            self.next_admission += 1;
        }
        admit
    }

    pub fn programs(&self) -> impl Iterator<Item = &ScoredProgram> {
        self.islands.iter().flat_map(Island::programs)
    }

    /// Highest score across islands; earliest admission breaks ties.
    pub fn global_best(&self) -> &ScoredProgram {
        self.programs()
            .min_by(|a, b| b.score.total_cmp(&a.score).then(a.admission.cmp(&b.admission)))
            .expect("buffer always holds the seed")
    }

    /// Up to `m` distinct programs by descending score, earliest admission first on ties.
    pub fn top_programs(&self, m: usize) -> Vec<ScoredProgram> {
        let mut all: Vec<&ScoredProgram> = self.programs().collect();
        all.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.admission.cmp(&b.admission)));
        let mut seen = std::collections::HashSet::new();
        all.into_iter()
            .filter(|p| seen.insert(p.program.identity()))
            .take(m)
            .cloned()
            .collect()
    }

    pub fn to_snapshot(&self) -> String {
        serde_json::to_string_pretty(self).expect("buffer is serializable")
    }

    pub fn from_snapshot(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::program::Provenance;
    use crate::sandbox::DisqualifyReason;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn prog(tag: &str, island: Option<usize>) -> FeatureProgram {
        FeatureProgram::new(
            format!("def modify_features_v1(df):\n    # {tag}\n    return df\n"),
            1,
            Provenance { island, iteration: Some(0), parents: vec![] },
        )
    }

    fn seeded(m: usize, score: f64) -> MemoryBuffer {
        MemoryBuffer::init(&FeatureProgram::identity_seed(), &Score::Valid { value: score, raw_metric: score }, m, BoltzmannParams::default())
            .unwrap()
    }

    #[test]
    fn init_seeds_every_island() {
        let b = seeded(3, 0.8);
        assert_eq!(b.n_islands(), 3);
        for island in &b.islands {
            assert_eq!(island.clusters.len(), 1);
            assert_eq!(island.len(), 1);
            assert_eq!(island.registrations, 1);
        }
        assert_eq!(seeded(1, 0.8).n_islands(), 1);
        let bad = Score::disqualified(DisqualifyReason::RuntimeError, "x");
        assert_eq!(
            MemoryBuffer::init(&FeatureProgram::identity_seed(), &bad, 3, BoltzmannParams::default()),
            Err(MemoryError::InvalidSeed)
        );
    }

    #[test]
    fn temperature_schedule() {
        let p = BoltzmannParams { t0: 0.1, period: 10_000 };
        assert_eq!(temperature(0, &p), 0.1);
        assert!((temperature(5000, &p) - 0.05).abs() < 1e-15);
        assert_eq!(temperature(10_000, &p), 0.1);
    }

    #[test]
    fn softmax_of_two_clusters() {
        // exp(5) / (exp(5) + exp(6)) = 1 / (1 + e)
        let e = std::f64::consts::E;
        let p = boltzmann_probabilities(&[0.5, 0.6], 0.1);
        assert!((p[0] - 1.0 / (1.0 + e)).abs() < 1e-12);
        assert!((p[0] - 0.26894).abs() < 1e-5 && (p[1] - 0.73106).abs() < 1e-5);
        assert_eq!(boltzmann_probabilities(&[0.3, 0.3, 0.3], 0.05), vec![1.0 / 3.0; 3]);
        assert_eq!(boltzmann_probabilities(&[0.9], 0.1), vec![1.0]);
    }

    #[test]
    fn register_rules() {
        let mut b = seeded(2, 0.8);
        let before = b.island(0).clone();
        assert!(!b.register(0, prog("worse", Some(0)), 0.7, 0.7));
        assert_eq!(b.island(0), &before);

        assert!(b.register(0, prog("tie", Some(0)), 0.8, 0.8));
        assert_eq!(b.island(0).clusters.len(), 1);
        assert_eq!(b.island(0).clusters.values().next().unwrap().programs.len(), 2);
        assert_eq!(b.island(0).registrations, 2);

        assert!(b.register(0, prog("better", Some(0)), 0.9, 0.9));
        assert_eq!(b.island(0).clusters.len(), 2);
        assert_eq!(b.island(0).best_score, 0.9);
        assert_eq!(b.island(1).len(), 1);
    }

    #[test]
    fn strict_rules() {
        let mut b = seeded(2, 0.8).with_rule(AdmissionRule::StrictIslandBest);
        assert!(!b.register(0, prog("tie", Some(0)), 0.8, 0.8));
        let mut g = seeded(2, 0.8).with_rule(AdmissionRule::StrictGlobalBest);
        assert!(g.register(0, prog("a", Some(0)), 0.85, 0.85));
        assert!(!g.register(1, prog("b", Some(1)), 0.83, 0.83));
    }

    #[test]
    fn global_best_and_ties() {
        let mut b = seeded(3, 0.8);
        assert_eq!(b.global_best().program, FeatureProgram::identity_seed());
        b.register(2, prog("first", Some(2)), 0.9, 0.9);
        assert_eq!(b.global_best().program, prog("first", Some(2)));
        b.register(0, prog("second", Some(0)), 0.9, 0.9);
        assert_eq!(b.global_best().program, prog("first", Some(2)));
    }

    #[test]
    fn top_programs_are_distinct() {
        let mut b = seeded(3, 0.7);
        assert_eq!(b.top_programs(3).len(), 1);
        b.register(0, prog("a", Some(0)), 0.9, 0.9);
        b.register(1, prog("b", Some(1)), 0.9, 0.9);
        b.register(2, prog("c", Some(2)), 0.8, 0.8);
        let top = b.top_programs(3);
        let scores: Vec<f64> = top.iter().map(|p| p.score).collect();
        assert_eq!(scores, vec![0.9, 0.9, 0.8]);
        assert_eq!(top[0].program, prog("a", Some(0)));
        assert_eq!(b.top_programs(1)[0], *b.global_best());
    }

    #[test]
    fn seed_only_island_repeats_seed() {
        let b = seeded(1, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let demos = b.sample_demonstrations(0, 2, &mut rng);
        assert_eq!(demos.len(), 2);
        assert!(demos.iter().all(|d| d.program == FeatureProgram::identity_seed()));
    }

    #[test]
    fn demonstrations_are_ascending() {
        let mut b = seeded(1, 0.5);
        b.register(0, prog("hi", Some(0)), 0.6, 0.6);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let d = b.sample_demonstrations(0, 2, &mut rng);
            assert!(d[0].score <= d[1].score);
        }
    }

    #[test]
    fn snapshot_round_trip() {
        let mut b = seeded(2, 0.5);
        b.register(1, prog("x", Some(1)), 0.55, 0.55);
        assert_eq!(MemoryBuffer::from_snapshot(&b.to_snapshot()).unwrap(), b);
    }

    proptest! {
        #[test]
        fn probabilities_sum_to_one(scores in proptest::collection::vec(-5.0f64..5.0, 1..20), tau in 1e-4f64..1.0) {
            let p = boltzmann_probabilities(&scores, tau);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&q| q >= 0.0));
        }

        #[test]
        fn temperature_in_range(u in any::<u64>()) {
            let p = BoltzmannParams::default();
            let t = temperature(u, &p);
            prop_assert!(t > 0.0 && t <= p.t0);
        }

        #[test]
        fn cluster_members_share_signature(scores in proptest::collection::vec(0.0f64..1.0, 1..30)) {
            let mut b = seeded(1, 0.0);
            for (i, s) in scores.iter().enumerate() {
                b.register(0, prog(&i.to_string(), Some(0)), *s, *s);
                for (key, c) in &b.island(0).clusters {
                    prop_assert!(c.programs.iter().all(|p| signature_key(p.score) == *key));
                }
            }
        }
    }
}

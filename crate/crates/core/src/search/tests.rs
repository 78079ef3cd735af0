use std::sync::atomic::{AtomicUsize, Ordering};

use super::*;
use crate::backend::{FnBackend, ScriptedMock};
use crate::synthetic::{balance_scale, ladder_completion, BALANCE_LADDER};

fn fenced(src: &str, version: usize) -> String {
    format!("```python\n{}```", src.replace("modify_features_v1", &crate::program::versioned_name(version)))
}

fn script(groups: Vec<Vec<String>>) -> Arc<dyn Backend> {
    Arc::new(ScriptedMock::new(groups))
}

#[test]
fn rejects_more_iterations_than_budget() {
    let cfg = SearchConfig { iterations: Some(7), batch_size: 3, sample_budget: 20, ..Default::default() };
    assert!(matches!(cfg.validate(), Err(SearchError::Config(_))));
    let cfg = SearchConfig { iterations: Some(6), ..cfg };
    assert!(cfg.validate().is_ok());
    assert_eq!(SearchConfig::default().iteration_count(), 7);
}

#[test]
fn budget_truncates_last_batch() {
    let groups = (0..7).map(|_| vec![String::new(); 3]).collect();
    let (result, _) = run(&SearchConfig::default(), &balance_scale(), script(groups)).unwrap();
    let requested: Vec<usize> = result.trace.iter().map(|t| t.requested).collect();
    assert_eq!(requested, [3, 3, 3, 3, 3, 3, 2]);
    assert_eq!(result.samples_used, 20);
    assert!(result.trace.iter().flat_map(|t| &t.candidates).all(|c| matches!(
        c.outcome,
        CandidateOutcome::ParseFailure { reason: crate::backend::ParseFailure::Empty }
    )));
    assert_eq!(result.best_program, FeatureProgram::identity_seed());
}

#[test]
fn escalating_script_tracks_best() {
    let groups: Vec<Vec<String>> = vec![
        vec![fenced(BALANCE_LADDER[0], 2), String::new(), "no code".into()],
        vec![fenced(BALANCE_LADDER[2], 2), fenced(BALANCE_LADDER[1], 2), "```python\ndef helper():\n    pass\n```".into()],
        vec![fenced("def modify_features_v1(df_input):\n    raise ValueError('boom')\n", 2)],
    ];
    let cfg = SearchConfig { iterations: Some(3), ..Default::default() };
    let ds = balance_scale();
    let (result, parts) = run(&cfg, &ds, script(groups)).unwrap();
    assert!(result.best_trajectory.windows(2).all(|w| w[0] <= w[1]));
    let evaluator = cfg.evaluator(&ds);
    let best_scripted = BALANCE_LADDER
        .iter()
        .map(|src| {
            let p = crate::backend::parse_program(&fenced(src, 2), 2).unwrap();
            evaluator.feature_score(&p, &parts.train, &parts.val).value().unwrap()
        })
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(result.best_score, best_scripted);
    assert_eq!(*result.best_trajectory.last().unwrap(), best_scripted);
    let max_in_trace = result.trace.iter().flat_map(|t| &t.candidates).filter_map(|c| c.outcome.score()).fold(result.seed_score, f64::max);
    assert_eq!(result.best_score, max_in_trace);
    let last = &result.trace[2].candidates;
    assert!(matches!(last[0].outcome, CandidateOutcome::Disqualified { reason: crate::sandbox::DisqualifyReason::RuntimeError, .. }));
    // every admitted candidate came from the island its prompt was built for
    for p in result.buffer.programs() {
        if let Some(island) = p.program.provenance.island {
            assert!(result.buffer.island(island).programs().any(|q| q == p));
        }
    }
}

#[test]
fn no_evolution_always_shows_the_seed() {
    let backend: Arc<dyn Backend> = Arc::new(FnBackend(|prompt: &str, b| vec![ladder_completion(prompt); b]));
    let ablation = Ablation { no_evolution: true, ..Default::default() };
    let cfg = SearchConfig { iterations: Some(4), ablation, ..Default::default() };
    let (result, _) = run(&cfg, &balance_scale(), backend).unwrap();
    let seed = FeatureProgram::identity_seed().identity();
    for it in &result.trace {
        assert_eq!(it.demonstrations.len(), 1);
        assert_eq!(it.demonstrations[0].identity, seed);
        assert_eq!(it.prompt.matches("def modify_features_v0(").count(), 1);
        assert_eq!(it.prompt.matches("def modify_features_v").count(), 2);
        assert!(!it.prompt.contains("# ladder level"));
    }
}

struct FailAfter {
    ok_calls: usize,
    calls: AtomicUsize,
}

impl Backend for FailAfter {
    fn complete(&self, _prompt: &str, b: usize) -> Result<Vec<String>, BackendError> {
        if self.calls.fetch_add(1, Ordering::SeqCst) < self.ok_calls {
            Ok(vec![String::new(); b])
        } else {
            Err(BackendError::BackendUnreachable("connection refused".into()))
        }
    }
}

#[test]
fn unreachable_backend_keeps_partial_trace() {
    let backend = Arc::new(FailAfter { ok_calls: 2, calls: AtomicUsize::new(0) });
    let err = run(&SearchConfig::default(), &balance_scale(), backend).unwrap_err();
    assert!(err.is_unreachable());
    match err {
        SearchError::Backend { partial, .. } => {
            assert_eq!(partial.trace.len(), 2);
            // the failed call was still charged
            assert_eq!(partial.samples_used, 9);
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn ablation_names() {
    assert_eq!(Ablation::parse("no_evolution").unwrap().label(), "no_evolution");
    assert_eq!(Ablation::parse("none").unwrap(), Ablation::default());
    assert!(Ablation::parse("no_everything").is_none());
}

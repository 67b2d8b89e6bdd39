//! Constrained hill-climbing over prototype configurations.
//!
//! Maximizes U = NetScore(val AUC, params, MACs) subject to the indicator
//! `params < max_params ∧ flops < max_flops ∧ auc > min_auc`.

use crate::analyzer::{netscore, ComplexityReport};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::{build_graph, seed_prototype, zoo::STAGES, PrototypeConfig};
use crate::metrics::roc_auc;
use crate::tensor::Shape;
use crate::train::{predict_scores, train, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write as _;
use std::path::Path;

pub const CHANNEL_LATTICE: [usize; 6] = [8, 12, 16, 24, 32, 48];
pub const MIN_BLOCKS: usize = 1;
pub const MAX_BLOCKS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConstraints {
    pub max_params: u64,
    pub max_flops: u64,
    pub min_auc: f64,
    pub flop_input_shape: Shape,
}

impl Default for SearchConstraints {
    fn default() -> Self {
        SearchConstraints {
            max_params: 1_000_000,
            max_flops: 1_000_000_000,
            min_auc: 0.9,
            flop_input_shape: [1, 1, 128, 128],
        }
    }
}

impl SearchConstraints {
    pub fn validate(&self) -> Result<()> {
        if self.max_params == 0 || self.max_flops == 0 {
            return Err(Error::Config("constraint limits must be positive".into()));
        }
        if !(self.min_auc > 0.0 && self.min_auc < 1.0) {
            return Err(Error::Config(format!("min_auc {} must lie in (0, 1)", self.min_auc)));
        }
        Ok(())
    }

    fn complexity_ok(&self, report: &ComplexityReport) -> bool {
        report.params < self.max_params && report.flops < self.max_flops
    }
}

/// True iff every constraint holds strictly.
pub fn indicator_1r(report: &ComplexityReport, auc: f64, constraints: &SearchConstraints) -> bool {
    constraints.complexity_ok(report) && auc > constraints.min_auc
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "move", rename_all = "snake_case")]
pub enum Mutation {
    Blocks { stage: usize, delta: i8 },
    Channels { stage: usize, up: bool },
    ToggleCondenser { stage: usize, block: usize },
}

fn step_channels(c: usize, up: bool) -> usize {
    if up {
        CHANNEL_LATTICE.iter().copied().find(|&v| v > c).unwrap_or(c.max(CHANNEL_LATTICE[5]))
    } else {
        CHANNEL_LATTICE.iter().rev().copied().find(|&v| v < c).unwrap_or(c.min(CHANNEL_LATTICE[0]))
    }
}

/// Applies one uniformly drawn move. Moves clamp at the lattice edges, so the
/// result can equal the input.
pub fn mutate(config: &PrototypeConfig, rng: &mut impl Rng) -> (PrototypeConfig, Mutation) {
    let mut out = config.clone();
    let stage = rng.random_range(0..STAGES);
    let m = match rng.random_range(0..3) {
        0 => {
            let delta: i8 = if rng.random_bool(0.5) { 1 } else { -1 };
            let b = config.blocks_per_stage[stage] as i64 + delta as i64;
            out.blocks_per_stage[stage] = b.clamp(MIN_BLOCKS as i64, MAX_BLOCKS as i64) as usize;
            Mutation::Blocks { stage, delta }
        }
        1 => {
            let up = rng.random_bool(0.5);
            out.stage_channels[stage] = step_channels(config.stage_channels[stage], up);
            Mutation::Channels { stage, up }
        }
        _ => {
            let block = rng.random_range(0..config.blocks_per_stage[stage].max(1));
            out.set_condenser(stage, block, !config.condenser_enabled(stage, block));
            Mutation::ToggleCondenser { stage, block }
        }
    };
    (out, m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchBudget {
    pub candidates_per_round: usize,
    pub rounds: usize,
    pub epochs_per_candidate: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub id: usize,
    pub round: usize,
    pub parent: Option<usize>,
    pub mutation: Option<Mutation>,
    pub config: PrototypeConfig,
    pub report: ComplexityReport,
    pub val_auc: f64,
    /// NetScore on validation AUC; `None` when the AUC is 0.
    pub performance: Option<f64>,
    pub feasible: bool,
    pub adopted: bool,
    /// Incumbent performance after this record's round was decided.
    pub incumbent_performance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SearchResult {
    Found { best: CandidateRecord, log: Vec<CandidateRecord> },
    Infeasible { log: Vec<CandidateRecord> },
}

impl SearchResult {
    pub fn log(&self) -> &[CandidateRecord] {
        match self {
            SearchResult::Found { log, .. } | SearchResult::Infeasible { log } => log,
        }
    }
}

fn complexity(config: &PrototypeConfig, c: &SearchConstraints) -> Result<ComplexityReport> {
    let specs = seed_prototype(config)?;
    ComplexityReport::from_specs("candidate", &specs, c.flop_input_shape)
}

struct Evaluator<'a> {
    train_set: &'a Dataset,
    val_set: &'a Dataset,
    constraints: &'a SearchConstraints,
    train_cfg: TrainConfig,
    seed: u64,
}

impl Evaluator<'_> {
    fn evaluate(&self, id: usize, round: usize, parent: Option<usize>, mutation: Option<Mutation>, config: PrototypeConfig) -> Result<CandidateRecord> {
        let mut config = config;
        config.input_shape = self.train_set.image_shape();
        let specs = seed_prototype(&config)?;
        let mut graph = build_graph(&specs, config.input_shape, self.seed)?;
        train(&mut graph, self.train_set, self.val_set, &self.train_cfg)?;
        let val_auc = roc_auc(&predict_scores(&graph, &self.val_set.images, self.train_cfg.batch_size)?, &self.val_set.labels)?;
        let mut report = complexity(&config, self.constraints)?;
        report.model = format!("candidate-{id}");
        let performance = match netscore(val_auc, report.params, report.macs) {
            Ok(u) => Some(u),
            Err(Error::Domain(_)) => None,
            Err(e) => return Err(e),
        };
        report.auc = Some(val_auc);
        report.netscore = performance;
        Ok(CandidateRecord {
            id,
            round,
            parent,
            mutation,
            feasible: indicator_1r(&report, val_auc, self.constraints) && performance.is_some(),
            config,
            report,
            val_auc,
            performance,
            adopted: false,
            incumbent_performance: None,
        })
    }
}

/// Runs the search. Every candidate gets the same training budget and seed.
pub fn search(
    seed_config: &PrototypeConfig,
    constraints: &SearchConstraints,
    budget: &SearchBudget,
    train_set: &Dataset,
    val_set: &Dataset,
    seed: u64,
) -> Result<SearchResult> {
    constraints.validate()?;
    if budget.rounds > 0 && budget.candidates_per_round == 0 {
        return Err(Error::Config("candidates_per_round must be positive".into()));
    }
    let seed_report = complexity(seed_config, constraints)?;
    if !constraints.complexity_ok(&seed_report) {
        return Err(Error::Config(format!(
            "seed configuration exceeds the complexity limits ({} params, {} FLOPs)",
            seed_report.params, seed_report.flops
        )));
    }
    let eval = Evaluator {
        train_set,
        val_set,
        constraints,
        train_cfg: TrainConfig::new(budget.epochs_per_candidate, seed),
        seed,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log = Vec::with_capacity(1 + budget.rounds * budget.candidates_per_round);

    let mut first = eval.evaluate(0, 0, None, None, seed_config.clone())?;
    let mut incumbent: Option<CandidateRecord> = None;
    if first.feasible {
        first.adopted = true;
        first.incumbent_performance = first.performance;
        incumbent = Some(first.clone());
    }
    log.push(first);

    for round in 1..=budget.rounds {
        let (base, parent) = match &incumbent {
            Some(r) => (r.config.clone(), r.id),
            None => (seed_config.clone(), 0),
        };
        let mut batch = Vec::with_capacity(budget.candidates_per_round);
        for _ in 0..budget.candidates_per_round {
            let (cfg, m) = mutate(&base, &mut rng);
            batch.push(eval.evaluate(log.len() + batch.len(), round, Some(parent), Some(m), cfg)?);
        }
        let best_idx = batch
            .iter()
            .enumerate()
            .filter(|(_, r)| r.feasible)
            .fold(None::<(usize, f64)>, |best, (i, r)| {
                let u = r.performance.expect("feasible implies defined U");
                match best {
                    Some((_, bu)) if bu >= u => best,
                    _ => Some((i, u)),
                }
            });
        if let Some((i, u)) = best_idx {
            let beats = incumbent.as_ref().is_none_or(|inc| u > inc.performance.expect("incumbent has U"));
            if beats {
                batch[i].adopted = true;
                incumbent = Some(batch[i].clone());
            }
        }
        let inc_u = incumbent.as_ref().and_then(|r| r.performance);
        for mut r in batch {
            r.incumbent_performance = inc_u;
            log.push(r);
        }
    }
    Ok(match incumbent {
        Some(mut best) => {
            best.incumbent_performance = best.performance;
            SearchResult::Found { best, log }
        }
        None => SearchResult::Infeasible { log },
    })
}

/// One JSON object per line, in (round, candidate) order.
pub fn log_to_jsonl(log: &[CandidateRecord]) -> String {
    let mut out = String::new();
    for r in log {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_log(path: &Path, log: &[CandidateRecord]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(log_to_jsonl(log).as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn report(params: u64, flops: u64) -> ComplexityReport {
        ComplexityReport {
            model: "m".into(),
            params,
            flops,
            macs: flops / 2,
            auc: None,
            netscore: None,
            latency_ms: None,
            input_shape: [1, 1, 128, 128],
            flop_convention: String::new(),
        }
    }

    #[test]
    fn indicator_examples() {
        let c = SearchConstraints::default();
        assert!(indicator_1r(&report(65_000, 596_000_000), 0.9824, &c));
        assert!(!indicator_1r(&report(1_000_000, 596_000_000), 0.95, &c));
        assert!(!indicator_1r(&report(65_000, 1_000_000_000), 0.95, &c));
        assert!(!indicator_1r(&report(65_000, 596_000_000), 0.89, &c));
        assert!(!indicator_1r(&report(65_000, 596_000_000), 0.9, &c));
    }

    fn minimal() -> PrototypeConfig {
        PrototypeConfig {
            stage_channels: [8, 8, 8],
            blocks_per_stage: [1, 1, 1],
            ..PrototypeConfig::default()
        }
    }

    #[test]
    fn decrease_moves_clamp_at_minimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut seen_clamped = 0;
        for _ in 0..200 {
            let (out, m) = mutate(&minimal(), &mut rng);
            match m {
                Mutation::Blocks { delta: -1, .. } | Mutation::Channels { up: false, .. } => {
                    assert_eq!(out, minimal());
                    seen_clamped += 1;
                }
                _ => {}
            }
        }
        assert!(seen_clamped > 0);
    }

    fn groups_changed(a: &PrototypeConfig, b: &PrototypeConfig) -> usize {
        let cond = |c: &PrototypeConfig| {
            (0..STAGES)
                .flat_map(|s| (0..MAX_BLOCKS).map(move |k| (s, k)))
                .map(|(s, k)| c.condenser_enabled(s, k))
                .collect::<Vec<_>>()
        };
        usize::from(a.stage_channels != b.stage_channels)
            + usize::from(a.blocks_per_stage != b.blocks_per_stage)
            + usize::from(cond(a) != cond(b))
    }

    #[test]
    fn mutations_stay_in_lattice_and_change_one_group() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut cfg = PrototypeConfig::default();
        for _ in 0..1000 {
            let (next, _) = mutate(&cfg, &mut rng);
            assert!(groups_changed(&cfg, &next) <= 1);
            assert!(next.stage_channels.iter().all(|c| CHANNEL_LATTICE.contains(c)));
            assert!(next.blocks_per_stage.iter().all(|b| (MIN_BLOCKS..=MAX_BLOCKS).contains(b)));
            assert!(seed_prototype(&next).is_ok());
            cfg = next;
        }
    }

    /// Tiny separable image set: positives carry a bright vertical bar.
    fn bars(n: usize, offset: usize) -> Dataset {
        let side = 16;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let l = (i + offset) % 2;
            for y in 0..side {
                for x in 0..side {
                    let noise = (((i * 131 + y * 17 + x * 7) % 23) as f64 / 23.0 - 0.5) * 0.4;
                    let bar = if l == 1 && (x == 5 + i % 6) && y > 4 { 2.0 } else { 0.0 };
                    data.push(noise + bar);
                }
            }
            labels.push(l);
        }
        Dataset {
            images: Tensor::from_vec([n, 1, side, side], data).unwrap(),
            labels,
            video_ids: (0..n).map(|i| format!("v{i}")).collect(),
            frames: (0..n).map(|i| format!("f{i}")).collect(),
        }
    }

    fn tiny_seed() -> PrototypeConfig {
        PrototypeConfig {
            stage_channels: [8, 8, 8],
            blocks_per_stage: [1, 1, 1],
            input_shape: [1, 1, 16, 16],
            ..PrototypeConfig::default()
        }
    }

    #[test]
    fn zero_rounds_returns_seed() {
        let (tr, va) = (bars(24, 0), bars(12, 1));
        let budget = SearchBudget { candidates_per_round: 2, rounds: 0, epochs_per_candidate: 2 };
        let c = SearchConstraints { min_auc: 0.5, ..SearchConstraints::default() };
        let r = search(&tiny_seed(), &c, &budget, &tr, &va, 3).unwrap();
        assert_eq!(r.log().len(), 1);
        if let SearchResult::Found { best, .. } = &r {
            assert_eq!(best.id, 0);
        }
    }

    #[test]
    fn infeasible_candidates_are_never_adopted() {
        let (tr, va) = (bars(24, 0), bars(12, 1));
        let budget = SearchBudget { candidates_per_round: 3, rounds: 2, epochs_per_candidate: 2 };
        // Only the seed's exact size fits; every larger candidate is logged but rejected.
        let seed_params = complexity(&tiny_seed(), &SearchConstraints::default()).unwrap().params;
        let c = SearchConstraints { max_params: seed_params + 1, min_auc: 0.01, ..SearchConstraints::default() };
        let r = search(&tiny_seed(), &c, &budget, &tr, &va, 5).unwrap();
        assert_eq!(r.log().len(), 7);
        for rec in r.log() {
            if rec.adopted {
                assert!(rec.feasible && rec.report.params < c.max_params);
            }
        }
        let again = search(&tiny_seed(), &c, &budget, &tr, &va, 5).unwrap();
        assert_eq!(log_to_jsonl(r.log()), log_to_jsonl(again.log()));
    }

    #[test]
    fn unreachable_auc_is_infeasible() {
        let tr = bars(24, 0);
        // Identical images under both labels pin the validation AUC at 0.5.
        let one = bars(1, 1);
        let va = Dataset {
            images: one.images.select_items(&[0; 6]),
            labels: vec![0, 1, 0, 1, 0, 1],
            video_ids: vec!["v".into(); 6],
            frames: (0..6).map(|i| format!("f{i}")).collect(),
        };
        let budget = SearchBudget { candidates_per_round: 2, rounds: 1, epochs_per_candidate: 1 };
        match search(&tiny_seed(), &SearchConstraints::default(), &budget, &tr, &va, 1).unwrap() {
            SearchResult::Infeasible { log } => {
                assert_eq!(log.len(), 3);
                assert!(log.iter().all(|r| r.val_auc == 0.5 && !r.adopted));
            }
            other => panic!("expected infeasible, got {other:?}"),
        }
    }
}

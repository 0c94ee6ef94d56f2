//! Benchmark schedules: sequencing rules, job hedging, and appointment
//! optimization for a fixed sequence over the full scenario set.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descent;
use crate::evaluator::Simulator;
use crate::model::{FirstStageSchedule, Instance, Minutes, ObjectiveWeights};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HeuristicError {
    #[error("unknown sequencing rule {0:?}")]
    UnknownRule(String),
    #[error("percentile must lie in [0, 1], got {0}")]
    Percentile(f64),
    #[error("sequence is not a permutation of the patients")]
    BadSequence,
    #[error("every candidate violates the overtime limit in some scenario")]
    Infeasible,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SequencingRule {
    /// Shortest mean treatment first.
    Spt,
    /// Longest mean treatment first.
    Lpt,
    /// Smallest treatment variance first.
    Var,
    /// Smallest coefficient of variation first.
    Cov,
}

impl SequencingRule {
    pub const ALL: [SequencingRule; 4] = [SequencingRule::Spt, SequencingRule::Lpt, SequencingRule::Var, SequencingRule::Cov];
}

impl fmt::Display for SequencingRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SequencingRule::Spt => "SPT",
            SequencingRule::Lpt => "LPT",
            SequencingRule::Var => "VAR",
            SequencingRule::Cov => "CoV",
        })
    }
}

impl FromStr for SequencingRule {
    type Err = HeuristicError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "spt" => Ok(SequencingRule::Spt),
            "lpt" => Ok(SequencingRule::Lpt),
            "var" => Ok(SequencingRule::Var),
            "cov" => Ok(SequencingRule::Cov),
            _ => Err(HeuristicError::UnknownRule(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HedgingConfig {
    pub percentile: f64,
    /// Take the rank on descending samples instead of ascending ones.
    pub descending: bool,
}

impl HedgingConfig {
    pub fn new(percentile: f64) -> Result<Self, HeuristicError> {
        if !(0.0..=1.0).contains(&percentile) {
            return Err(HeuristicError::Percentile(percentile));
        }
        Ok(HedgingConfig { percentile, descending: false })
    }
}

/// Mean and population variance of s+t over the scenarios, per patient.
pub fn treatment_stats(inst: &Instance) -> Vec<(f64, f64)> {
    let k = inst.scenarios.len() as f64;
    (0..inst.num_patients())
        .map(|i| {
            let mean = inst.scenarios.iter().map(|s| s.treatment(i) as f64).sum::<f64>() / k;
            let var = inst.scenarios.iter().map(|s| (s.treatment(i) as f64 - mean).powi(2)).sum::<f64>() / k;
            (mean, var)
        })
        .collect()
}

/// Orders patients by the rule's statistic, ties by id. Under CoV a
/// patient with zero mean has no defined ratio and is placed last.
pub fn sequence_patients(inst: &Instance, rule: SequencingRule) -> Vec<usize> {
    let stats = treatment_stats(inst);
    let key = |i: usize| -> f64 {
        let (m, v) = stats[i];
        match rule {
            SequencingRule::Spt => m,
            SequencingRule::Lpt => -m,
            SequencingRule::Var => v,
            SequencingRule::Cov if m > 0.0 => v.sqrt() / m,
            SequencingRule::Cov => f64::INFINITY,
        }
    };
    let mut seq: Vec<usize> = (0..inst.num_patients()).collect();
    seq.sort_by(|&a, &b| key(a).total_cmp(&key(b)).then(a.cmp(&b)));
    seq
}

/// Nearest-rank percentile: the ⌈k·n⌉-th smallest sample (or largest when
/// `descending`), with rank clamped to [1, n].
pub fn percentile(samples: &[Minutes], k: f64, descending: bool) -> Minutes {
    assert!(!samples.is_empty(), "percentile of an empty sample");
    let mut v = samples.to_vec();
    v.sort_unstable();
    if descending {
        v.reverse();
    }
    let rank = ((k * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

/// Estimated (pre-medication, infusion) per patient: the class percentile
/// over all scenario draws of patients in the same class.
pub fn hedged_durations(inst: &Instance, cfg: &HedgingConfig) -> Vec<(Minutes, Minutes)> {
    inst.patients
        .iter()
        .map(|p| {
            let mates: Vec<usize> = inst.patients.iter().filter(|q| q.class_id == p.class_id).map(|q| q.id).collect();
            let pre: Vec<Minutes> = inst.scenarios.iter().flat_map(|s| mates.iter().map(move |&i| s.premed[i])).collect();
            let inf: Vec<Minutes> = inst.scenarios.iter().flat_map(|s| mates.iter().map(move |&i| s.infusion[i])).collect();
            (percentile(&pre, cfg.percentile, cfg.descending), percentile(&inf, cfg.percentile, cfg.descending))
        })
        .collect()
}

/// Appointments for `sequence` from estimated durations: the first
/// min(|N|, |C|) patients at zero, every later one at the first estimated
/// moment a nurse and a chair are both available.
pub fn appointments_from_estimates(inst: &Instance, sequence: &[usize], est: &[(Minutes, Minutes)]) -> Vec<Minutes> {
    let n = inst.num_patients();
    let premed: Vec<Minutes> = est.iter().map(|e| e.0).collect();
    let infusion: Vec<Minutes> = est.iter().map(|e| e.1).collect();
    let mut sim = Simulator::new(inst, None);
    sim.run(sequence, &vec![0; n], &premed, &infusion, None);
    let front = inst.num_nurses.min(inst.num_chairs);
    let mut a = vec![0; n];
    for (k, &p) in sequence.iter().enumerate() {
        a[p] = if k < front { 0 } else { sim.starts()[p].min(inst.horizon()) };
    }
    a
}

pub fn job_hedging_schedule(inst: &Instance, rule: SequencingRule, cfg: &HedgingConfig) -> FirstStageSchedule {
    let seq = sequence_patients(inst, rule);
    job_hedging_for_sequence(inst, seq, cfg)
}

pub fn job_hedging_for_sequence(inst: &Instance, sequence: Vec<usize>, cfg: &HedgingConfig) -> FirstStageSchedule {
    let est = hedged_durations(inst, cfg);
    let a = appointments_from_estimates(inst, &sequence, &est);
    FirstStageSchedule::new(sequence, a)
}

/// Zero-wait appointments under the rounded mean durations.
pub fn mean_duration_schedule(inst: &Instance, sequence: Vec<usize>) -> FirstStageSchedule {
    let mean = inst.mean_scenario();
    let n = inst.num_patients();
    let mut sim = Simulator::new(inst, None);
    sim.run(&sequence, &vec![0; n], &mean.premed, &mean.infusion, None);
    let a = (0..n).map(|p| sim.starts()[p].min(inst.horizon())).collect();
    FirstStageSchedule::new(sequence, a)
}

/// Expected objective over all scenarios with a reused simulator; infinite
/// when any scenario breaks the overtime limit.
pub(crate) struct ExpectedEvaluator<'a> {
    inst: &'a Instance,
    w: ObjectiveWeights,
    sim: Simulator,
    pub evaluations: u64,
}

impl<'a> ExpectedEvaluator<'a> {
    pub fn new(inst: &'a Instance, w: &ObjectiveWeights, capacity: Option<usize>) -> Self {
        ExpectedEvaluator { inst, w: *w, sim: Simulator::new(inst, capacity), evaluations: 0 }
    }

    pub fn cost(&mut self, seq: &[usize], a: &[Minutes]) -> f64 {
        self.evaluations += 1;
        let mut total = 0.0;
        for s in &self.inst.scenarios {
            let t = self.sim.run(seq, a, &s.premed, &s.infusion, None);
            if t.max_overtime > self.inst.overtime_limit {
                return f64::INFINITY;
            }
            total += s.probability * t.objective(&self.w);
        }
        total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptBudget {
    /// Expected-objective evaluations allowed per start.
    pub max_evaluations: u64,
    pub max_passes: usize,
}

impl Default for OptBudget {
    fn default() -> Self {
        OptBudget { max_evaluations: 20_000, max_passes: 100 }
    }
}

/// Best appointments found for a fixed sequence by coordinate descent on
/// the expected objective, from zero-wait mean-duration times, job hedging
/// at the median, and any `extra_starts` with the same sequence.
pub fn fixed_sequence_opt(
    inst: &Instance,
    w: &ObjectiveWeights,
    sequence: &[usize],
    budget: &OptBudget,
    extra_starts: &[Vec<Minutes>],
) -> Result<FirstStageSchedule, HeuristicError> {
    let n = inst.num_patients();
    let mut seen = vec![false; n];
    if sequence.len() != n || !sequence.iter().all(|&p| p < n && !std::mem::replace(&mut seen[p], true)) {
        return Err(HeuristicError::BadSequence);
    }
    let median = HedgingConfig { percentile: 0.5, descending: false };
    let mut starts = vec![
        mean_duration_schedule(inst, sequence.to_vec()).appointment,
        job_hedging_for_sequence(inst, sequence.to_vec(), &median).appointment,
    ];
    starts.extend(extra_starts.iter().cloned());
    let mut ev = ExpectedEvaluator::new(inst, w, None);
    let lo = vec![0; n];
    let hi = vec![inst.horizon(); n];
    let frozen = |_: usize| false;
    let bx = descent::Box { seq: sequence, lo: &lo, hi: &hi, horizon: inst.horizon(), frozen: &frozen, max_passes: budget.max_passes };
    let mut best: Option<(f64, Vec<Minutes>)> = None;
    for mut a in starts {
        // keep the start admissible for this sequence
        let mut run = 0;
        for &p in sequence {
            run = a[p].clamp(run, inst.horizon());
            a[p] = run;
        }
        let c0 = ev.cost(sequence, &a);
        let mut left = budget.max_evaluations;
        let c = if c0.is_finite() {
            descent::coordinate_descent(&bx, &mut a, c0, (), &mut left, |x| (ev.cost(sequence, x), ())).0
        } else {
            c0
        };
        if c.is_finite() && best.as_ref().is_none_or(|(b, _)| c < *b - 1e-12) {
            best = Some((c, a));
        }
    }
    let (_, a) = best.ok_or(HeuristicError::Infeasible)?;
    Ok(FirstStageSchedule::new(sequence.to_vec(), a))
}

/// Percentile levels 40%, 45%, ..., 65%.
pub fn default_hedging_levels() -> Vec<f64> {
    (0..6).map(|k| 0.40 + 0.05 * k as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::expected_objective;
    use crate::EvaluatorConfig;

    fn inst_with_means(means: &[Minutes]) -> Instance {
        let pre = vec![0; means.len()];
        Instance::from_durations("t", &[(pre.clone(), means.to_vec()), (pre, means.to_vec())], 2, 4, 240, 180).unwrap()
    }

    #[test]
    fn lpt_and_spt_orders() {
        let inst = inst_with_means(&[30, 100, 60]);
        assert_eq!(sequence_patients(&inst, SequencingRule::Lpt), vec![1, 2, 0]);
        assert_eq!(sequence_patients(&inst, SequencingRule::Spt), vec![0, 2, 1]);
    }

    #[test]
    fn constant_durations_var_is_id_order() {
        let inst = inst_with_means(&[90, 30, 60]);
        assert_eq!(sequence_patients(&inst, SequencingRule::Var), vec![0, 1, 2]);
        assert_eq!(sequence_patients(&inst, SequencingRule::Cov), vec![0, 1, 2]);
    }

    #[test]
    fn cov_uses_ratio() {
        let inst = Instance::from_durations(
            "t",
            &[(vec![0, 0], vec![10, 100]), (vec![0, 0], vec![20, 120])],
            1,
            1,
            240,
            180,
        )
        .unwrap();
        // sd/mean: 5/15 vs 10/110
        assert_eq!(sequence_patients(&inst, SequencingRule::Cov), vec![1, 0]);
        assert_eq!(sequence_patients(&inst, SequencingRule::Var), vec![0, 1]);
    }

    #[test]
    fn nearest_rank_percentile() {
        assert_eq!(percentile(&[10, 20, 30, 40, 50], 0.40, false), 20);
        assert_eq!(percentile(&[50, 10, 40, 30, 20], 0.40, false), 20);
        assert_eq!(percentile(&[10, 20, 30, 40, 50], 0.40, true), 40);
        assert_eq!(percentile(&[10, 20, 30, 40, 50], 0.0, false), 10);
        assert_eq!(percentile(&[10, 20, 30, 40, 50], 1.0, false), 50);
    }

    #[test]
    fn rule_names_round_trip() {
        for r in SequencingRule::ALL {
            assert_eq!(r.to_string().parse::<SequencingRule>().unwrap(), r);
        }
        assert!("fifo".parse::<SequencingRule>().is_err());
        assert!(HedgingConfig::new(1.5).is_err());
    }

    #[test]
    fn front_patients_start_at_zero() {
        let inst = Instance::from_durations("t", &[(vec![10, 10, 10], vec![50, 50, 50])], 2, 3, 240, 180).unwrap();
        let s = job_hedging_schedule(&inst, SequencingRule::Lpt, &HedgingConfig::new(0.5).unwrap());
        assert_eq!(s.appointment[s.sequence[0]], 0);
        assert_eq!(s.appointment[s.sequence[1]], 0);
        // third waits for the first free nurse
        assert_eq!(s.appointment[s.sequence[2]], 10);
        assert!(crate::model::validate(&s, &inst).is_empty());
    }

    #[test]
    fn budget_zero_single_start_is_unchanged() {
        let inst = crate::gen::fixture_instances().remove(0);
        let w = ObjectiveWeights::default();
        let seq = sequence_patients(&inst, SequencingRule::Lpt);
        let start = mean_duration_schedule(&inst, seq.clone());
        let out = fixed_sequence_opt(&inst, &w, &seq, &OptBudget { max_evaluations: 0, max_passes: 10 }, &[]).unwrap();
        let cfg = EvaluatorConfig::default();
        let e_start = expected_objective(&start, &inst, &w, &cfg).unwrap();
        let jh = job_hedging_for_sequence(&inst, seq.clone(), &HedgingConfig::new(0.5).unwrap());
        let e_jh = expected_objective(&jh, &inst, &w, &cfg).unwrap();
        let e_out = expected_objective(&out, &inst, &w, &cfg).unwrap();
        assert!((e_out - e_start.min(e_jh)).abs() < 1e-9);
    }

    #[test]
    fn opt_never_worse_than_its_starts() {
        let inst = crate::gen::fixture_instances().remove(3);
        let w = ObjectiveWeights::new(0.1, 0.8, 0.1).unwrap();
        let cfg = EvaluatorConfig::with_weights(w);
        for rule in SequencingRule::ALL {
            let jh = job_hedging_schedule(&inst, rule, &HedgingConfig::new(0.6).unwrap());
            let out = fixed_sequence_opt(&inst, &w, &jh.sequence, &OptBudget::default(), std::slice::from_ref(&jh.appointment)).unwrap();
            let a = expected_objective(&out, &inst, &w, &cfg).unwrap();
            let b = expected_objective(&jh, &inst, &w, &cfg).unwrap();
            assert!(a <= b + 1e-9, "{rule}: {a} > {b}");
        }
    }

    #[test]
    fn single_scenario_opt_matches_subproblem_for_sequence() {
        let inst = Instance::from_durations("t", &[(vec![10, 20, 15], vec![100, 60, 130])], 1, 2, 240, 180).unwrap();
        let w = ObjectiveWeights::default();
        let sol = crate::subproblem::solve_subproblem(
            &inst.scenarios[0],
            &inst,
            &w,
            &crate::subproblem::PenaltyTerms::zero(3),
            &Default::default(),
        )
        .unwrap();
        let out = fixed_sequence_opt(&inst, &w, &sol.schedule.sequence, &OptBudget::default(), &[]).unwrap();
        let e = expected_objective(&out, &inst, &w, &EvaluatorConfig::default()).unwrap();
        assert!((e - sol.base_objective).abs() < 1e-9);
    }

    #[test]
    fn bad_sequence_rejected() {
        let inst = inst_with_means(&[30, 100, 60]);
        let w = ObjectiveWeights::default();
        assert_eq!(fixed_sequence_opt(&inst, &w, &[0, 0, 1], &OptBudget::default(), &[]), Err(HeuristicError::BadSequence));
    }
}

//! Linearized progressive hedging: scenario subproblems are coupled through
//! consensus appointment times, Lagrange multipliers and a bounded dynamic
//! penalty, with hash-based cycle detection and variable fixing.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluator::EvaluatorConfig;
use crate::heuristics::{fixed_sequence_opt, ExpectedEvaluator, OptBudget};
use crate::model::{expected_cost, ExpectedCost, FirstStageSchedule, Instance, Minutes, ObjectiveWeights};
use crate::subproblem::{
    solve_subproblem, PenaltyTerms, SearchMode, SubproblemError, SubproblemOptions, SubproblemSolution,
    EXHAUSTIVE_MAX_PATIENTS,
};

/// How scenario subproblems are searched across iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SubproblemPolicy {
    /// Exhaustive in the first iteration when small enough, then local
    /// search warm-started from the previous solution.
    #[default]
    Auto,
    Exhaustive,
    LocalSearch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LphaConfig {
    pub alpha: f64,
    pub rho0: f64,
    pub rho_u1: f64,
    pub rho_u2: f64,
    pub iterlimit: usize,
    pub fix_start_iter: usize,
    pub fix_fraction: f64,
    pub cycle_window: usize,
    pub cycle_threshold: f64,
    pub max_iterations: usize,
    pub seed: u64,
    /// Worker threads for subproblem solves; rayon's default when absent.
    pub threads: Option<usize>,
    pub nurse_capacity: Option<usize>,
    pub policy: SubproblemPolicy,
    /// Random restarts of local search in the first iteration.
    pub restarts: usize,
    /// Keep the best schedule seen (consensus or scenario solution) under
    /// the full scenario set and return it instead of the last consensus.
    pub incumbent: bool,
    /// Expected-objective evaluations for the final appointment polish;
    /// zero disables it.
    pub polish_evaluations: u64,
}

impl Default for LphaConfig {
    fn default() -> Self {
        LphaConfig {
            alpha: 2.0,
            rho0: 1e-4,
            rho_u1: 0.1,
            rho_u2: 1.0,
            iterlimit: 100,
            fix_start_iter: 50,
            fix_fraction: 0.8,
            cycle_window: 3,
            cycle_threshold: 1e-4,
            max_iterations: 500,
            seed: 0,
            threads: None,
            nurse_capacity: None,
            policy: SubproblemPolicy::Auto,
            restarts: 3,
            incumbent: true,
            polish_evaluations: 20_000,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("alpha must exceed 1, got {0}")]
    Alpha(f64),
    #[error("rho0 must be positive, got {0}")]
    Rho0(f64),
    #[error("penalty caps must satisfy 0 < rho_u1 < rho_u2, got {0} and {1}")]
    Caps(f64, f64),
    #[error("fix_fraction must lie in (0, 1], got {0}")]
    FixFraction(f64),
    #[error("cycle_window must be at least 2")]
    Window,
    #[error("max_iterations must be at least 1")]
    MaxIterations,
}

impl LphaConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.alpha > 1.0) {
            return Err(ConfigError::Alpha(self.alpha));
        }
        if !(self.rho0 > 0.0) {
            return Err(ConfigError::Rho0(self.rho0));
        }
        if !(self.rho_u1 > 0.0 && self.rho_u1 < self.rho_u2) {
            return Err(ConfigError::Caps(self.rho_u1, self.rho_u2));
        }
        if !(self.fix_fraction > 0.0 && self.fix_fraction <= 1.0) {
            return Err(ConfigError::FixFraction(self.fix_fraction));
        }
        if self.cycle_window < 2 {
            return Err(ConfigError::Window);
        }
        if self.max_iterations == 0 {
            return Err(ConfigError::MaxIterations);
        }
        Ok(())
    }

    /// Active penalty cap at iteration `v`.
    pub fn cap(&self, v: usize) -> f64 {
        if v <= self.iterlimit {
            self.rho_u1
        } else {
            self.rho_u2
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixReason {
    /// Agreement in at least the fixing fraction of probability mass.
    Consensus,
    /// Stable hash over the cycle window.
    Cycle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixEvent {
    pub iteration: usize,
    pub patient: usize,
    pub value: Minutes,
    pub reason: FixReason,
}

/// Mutable state of one run.
#[derive(Debug, Clone)]
pub struct LphaState {
    pub iter: usize,
    pub probabilities: Vec<f64>,
    /// a^ω per scenario, indexed by patient.
    pub appointments: Vec<Vec<Minutes>>,
    pub solutions: Vec<FirstStageSchedule>,
    /// μ^ω per scenario, indexed by patient.
    pub mu: Vec<Vec<f64>>,
    pub rho: f64,
    pub consensus: Vec<f64>,
    pub prev_consensus: Option<Vec<f64>>,
    pub delta_p: Vec<f64>,
    pub delta_d: Vec<f64>,
    pub hash_weights: Vec<f64>,
    pub hash_history: Vec<Vec<f64>>,
    pub fixed: Vec<Option<Minutes>>,
    pub cuts: Vec<Vec<Vec<Minutes>>>,
    /// λ2·overtime + λ3·idle of each first-iteration solution.
    pub ot_idle_lb: Vec<f64>,
}

impl LphaState {
    pub fn new(inst: &Instance, seed: u64) -> Self {
        let n = inst.num_patients();
        let k = inst.scenarios.len();
        let probabilities: Vec<f64> = inst.scenarios.iter().map(|s| s.probability).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let hash_weights = probabilities
            .iter()
            .map(|&p| loop {
                let z: f64 = rng.gen();
                if (z - p).abs() > 1e-12 {
                    break z;
                }
            })
            .collect();
        LphaState {
            iter: 0,
            probabilities,
            appointments: vec![vec![0; n]; k],
            solutions: Vec::new(),
            mu: vec![vec![0.0; n]; k],
            rho: 0.0,
            consensus: vec![0.0; n],
            prev_consensus: None,
            delta_p: Vec::new(),
            delta_d: Vec::new(),
            hash_weights,
            hash_history: Vec::new(),
            fixed: vec![None; n],
            cuts: vec![vec![Vec::new(); n]; k],
            ot_idle_lb: Vec::new(),
        }
    }

    pub fn num_patients(&self) -> usize {
        self.consensus.len()
    }

    /// â_i = Σ_ω p^ω a_i^ω, together with Δp (when a previous consensus
    /// exists) and Δd.
    pub fn update_consensus(&mut self) {
        let n = self.num_patients();
        let mut hat = vec![0.0; n];
        for (p, a) in self.probabilities.iter().zip(&self.appointments) {
            for i in 0..n {
                hat[i] += p * a[i] as f64;
            }
        }
        let old = std::mem::replace(&mut self.consensus, hat);
        if self.iter > 1 {
            let dp = old.iter().zip(&self.consensus).map(|(x, y)| (y - x) * (y - x)).sum();
            self.delta_p.push(dp);
            self.prev_consensus = Some(old);
        }
        let dd = self
            .appointments
            .iter()
            .map(|a| (0..n).map(|i| (a[i] as f64 - self.consensus[i]).powi(2)).sum::<f64>())
            .sum();
        self.delta_d.push(dd);
    }

    /// μ_i^ω ← μ_i^ω + ρ(a_i^ω − â_i) with the current ρ.
    pub fn update_multipliers(&mut self) {
        let n = self.num_patients();
        for (mu, a) in self.mu.iter_mut().zip(&self.appointments) {
            for i in 0..n {
                mu[i] += self.rho * (a[i] as f64 - self.consensus[i]);
            }
        }
    }

    /// h_i = Σ_ω z_ω μ_i^ω, appended to the history.
    pub fn record_hash(&mut self) {
        let n = self.num_patients();
        let h = (0..n).map(|i| self.hash_weights.iter().zip(&self.mu).map(|(z, mu)| z * mu[i]).sum()).collect();
        self.hash_history.push(h);
    }

    /// Largest |Σ_ω p^ω μ_i^ω| over patients.
    pub fn multiplier_imbalance(&self) -> f64 {
        (0..self.num_patients())
            .map(|i| self.probabilities.iter().zip(&self.mu).map(|(p, mu)| p * mu[i]).sum::<f64>().abs())
            .fold(0.0, f64::max)
    }

    /// True when every patient has the same appointment in every scenario.
    pub fn agreed(&self) -> bool {
        let first = &self.appointments[0];
        self.appointments.iter().all(|a| a == first)
    }

    /// Consensus rounded to integers, sequenced by (â, id).
    pub fn consensus_schedule(&self) -> FirstStageSchedule {
        let appt: Vec<Minutes> = (0..self.num_patients())
            .map(|i| self.fixed[i].unwrap_or_else(|| self.consensus[i].round() as Minutes))
            .collect();
        let mut seq: Vec<usize> = (0..appt.len()).collect();
        seq.sort_by(|&x, &y| {
            self.consensus[x].total_cmp(&self.consensus[y]).then(x.cmp(&y))
        });
        // rounding can swap near-equal values; keep appointments monotone
        let mut fixed_order: Vec<Minutes> = seq.iter().map(|&p| appt[p]).collect();
        for k in 1..fixed_order.len() {
            fixed_order[k] = fixed_order[k].max(fixed_order[k - 1]);
        }
        let mut a = appt;
        for (k, &p) in seq.iter().enumerate() {
            a[p] = fixed_order[k];
        }
        FirstStageSchedule::new(seq, a)
    }

    fn terms_for(&self, scenario: usize) -> PenaltyTerms {
        PenaltyTerms {
            mu: self.mu[scenario].clone(),
            rho: self.rho,
            consensus: self.consensus.clone(),
            cuts: self.cuts[scenario].clone(),
        }
    }
}

/// Penalty for the next iteration under the capped dynamic rule. Requires
/// at least two Δd values; a missing previous Δp counts as not increasing.
pub fn update_penalty(state: &LphaState, cfg: &LphaConfig) -> f64 {
    let cap = cfg.cap(state.iter);
    let rising = |h: &[f64]| h.len() >= 2 && h[h.len() - 1] - h[h.len() - 2] > 0.0;
    let rho = state.rho;
    if rising(&state.delta_d) && rho < cap {
        rho * cfg.alpha
    } else if rising(&state.delta_d) {
        cap
    } else if rising(&state.delta_p) {
        rho / cfg.alpha
    } else if rho <= cap {
        rho
    } else {
        cap
    }
}

/// Most frequent value by probability mass, ties to the smallest.
fn majority(values: impl Iterator<Item = (Minutes, f64)>) -> Option<(Minutes, f64)> {
    let mut tally: Vec<(Minutes, f64)> = Vec::new();
    for (v, p) in values {
        match tally.iter_mut().find(|(x, _)| *x == v) {
            Some(e) => e.1 += p,
            None => tally.push((v, p)),
        }
    }
    tally.sort_by_key(|e| e.0);
    tally.into_iter().fold(None, |best, e| match best {
        Some(b) if b.1 >= e.1 - 1e-12 => Some(b),
        _ => Some(e),
    })
}

/// Applies cycle-based and consensus-based fixing and returns the new fixes.
pub fn detect_cycles_and_fix(state: &mut LphaState, cfg: &LphaConfig) -> Vec<FixEvent> {
    let n = state.num_patients();
    let mut events = Vec::new();
    let hist = &state.hash_history;
    for i in 0..n {
        if state.fixed[i].is_some() {
            continue;
        }
        let column = state.appointments.iter().map(|a| a[i]).zip(state.probabilities.iter().copied());
        let Some((mode, mass)) = majority(column) else { continue };
        if mass >= cfg.fix_fraction - 1e-9 {
            events.push(FixEvent { iteration: state.iter, patient: i, value: mode, reason: FixReason::Consensus });
            continue;
        }
        if state.iter > cfg.fix_start_iter && hash_stable(hist, i, cfg.cycle_window, cfg.cycle_threshold) {
            events.push(FixEvent { iteration: state.iter, patient: i, value: mode, reason: FixReason::Cycle });
        }
    }
    for e in &events {
        state.fixed[e.patient] = Some(e.value);
    }
    events
}

/// True when the hash of patient `i` moved less than the threshold over the
/// last `window` entries.
pub fn hash_stable(history: &[Vec<f64>], i: usize, window: usize, threshold: f64) -> bool {
    history.len() >= window && {
        let last = history[history.len() - 1][i];
        (1..window).all(|k| (last - history[history.len() - 1 - k][i]).abs() < threshold)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub rho: f64,
    pub delta_p: Option<f64>,
    pub delta_d: f64,
    pub num_fixed: usize,
    /// Patients whose scenario appointments still disagree.
    pub disagreeing: usize,
    /// Expected objective of the rounded consensus schedule.
    pub consensus_objective: f64,
    pub max_multiplier_imbalance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub label: String,
    pub objective: f64,
    pub ewt: f64,
    pub eot: f64,
    pub eit: f64,
    pub infeasible_mass: f64,
    pub weights: ObjectiveWeights,
    pub iterations: usize,
    pub converged: bool,
    pub wall_time_s: f64,
    pub config: LphaConfig,
    pub seed: u64,
    pub version: String,
    pub schedule: FirstStageSchedule,
    /// Expected objective of the last rounded consensus.
    pub consensus_objective: f64,
    /// Iteration that produced the returned schedule before polishing.
    pub incumbent_iteration: Option<usize>,
    pub polished: bool,
    pub trace: Vec<IterationRecord>,
    pub fixes: Vec<FixEvent>,
    /// Later solutions whose overtime and idle part fell below the
    /// first-iteration bound of their scenario.
    pub lower_bound_violations: usize,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Convergence trace, one row per iteration.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iteration,rho,delta_p,delta_d,num_fixed,disagreeing,consensus_objective\n");
        for r in &self.trace {
            out.push_str(&format!(
                "{},{},{},{},{},{},{:.6}\n",
                r.iteration,
                r.rho,
                r.delta_p.map(|x| x.to_string()).unwrap_or_default(),
                r.delta_d,
                r.num_fixed,
                r.disagreeing,
                r.consensus_objective
            ));
        }
        out
    }

    /// Fixed patients after each iteration, cumulative.
    pub fn fixed_counts(&self) -> Vec<usize> {
        self.trace.iter().map(|r| r.num_fixed).collect()
    }
}

/// Assembles the report for a final schedule.
pub fn run_report(
    state: &LphaState,
    inst: &Instance,
    w: &ObjectiveWeights,
    cfg: &LphaConfig,
    schedule: FirstStageSchedule,
    trace: Vec<IterationRecord>,
    fixes: Vec<FixEvent>,
    started: Instant,
    converged: bool,
    lower_bound_violations: usize,
    origin: ScheduleOrigin,
) -> RunReport {
    let ev = EvaluatorConfig { nurse_capacity: cfg.nurse_capacity, strict_overtime: false, weights: *w };
    let cost = expected_cost(&schedule, inst, w, &ev).expect("schedule is valid");
    RunReport {
        label: inst.label.clone(),
        objective: cost.objective,
        ewt: cost.wait,
        eot: cost.overtime,
        eit: cost.idle,
        infeasible_mass: cost.infeasible_mass,
        weights: *w,
        iterations: state.iter,
        converged,
        wall_time_s: started.elapsed().as_secs_f64(),
        config: cfg.clone(),
        seed: cfg.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        schedule,
        consensus_objective: origin.consensus_objective,
        incumbent_iteration: origin.incumbent_iteration,
        polished: origin.polished,
        trace,
        fixes,
        lower_bound_violations,
    }
}

/// Where the returned schedule came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleOrigin {
    pub consensus_objective: f64,
    pub incumbent_iteration: Option<usize>,
    pub polished: bool,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LphaError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("every scenario subproblem is infeasible")]
    Infeasible,
    #[error("no convergence within {max_iterations} iterations")]
    NoConvergence { max_iterations: usize, schedule: FirstStageSchedule, report: Box<RunReport> },
    #[error(transparent)]
    Subproblem(#[from] SubproblemError),
}

fn solve_all(
    inst: &Instance,
    w: &ObjectiveWeights,
    cfg: &LphaConfig,
    state: &LphaState,
) -> Result<Vec<SubproblemSolution>, LphaError> {
    let n = inst.num_patients();
    let first = state.iter == 1;
    let mode = match cfg.policy {
        SubproblemPolicy::Exhaustive => SearchMode::Exhaustive,
        SubproblemPolicy::LocalSearch => SearchMode::LocalSearch,
        SubproblemPolicy::Auto if first && n <= EXHAUSTIVE_MAX_PATIENTS => SearchMode::Exhaustive,
        SubproblemPolicy::Auto => SearchMode::LocalSearch,
    };
    let results: Vec<Result<SubproblemSolution, SubproblemError>> = (0..inst.scenarios.len())
        .into_par_iter()
        .map(|k| {
            let terms = if first { PenaltyTerms::zero(n) } else { state.terms_for(k) };
            let prev = state.solutions.get(k).cloned();
            let mut opts = SubproblemOptions {
                mode,
                seed_sequence: prev.as_ref().map(|s| s.sequence.clone()),
                warm_start: prev,
                fixed: state.fixed.clone(),
                restarts: if first { cfg.restarts } else { 0 },
                seed: cfg.seed.wrapping_mul(1_000_003).wrapping_add((state.iter * 7919 + k) as u64),
                nurse_capacity: cfg.nurse_capacity,
                ..Default::default()
            };
            let scenario = &inst.scenarios[k];
            match solve_subproblem(scenario, inst, w, &terms, &opts) {
                Err(SubproblemError::Infeasible) => {
                    opts.enforce_limit = false;
                    solve_subproblem(scenario, inst, w, &terms, &opts).map_err(|_| SubproblemError::Infeasible)
                }
                r => r,
            }
        })
        .collect();
    let mut out = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(s) => out.push(s),
            Err(SubproblemError::Infeasible) => return Err(LphaError::Infeasible),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(out)
}

/// Runs the algorithm and returns the final rounded consensus schedule.
///
/// On hitting `max_iterations` the consensus at that point is returned
/// inside [`LphaError::NoConvergence`].
pub fn run_lpha(
    inst: &Instance,
    w: &ObjectiveWeights,
    cfg: &LphaConfig,
) -> Result<(FirstStageSchedule, RunReport), LphaError> {
    cfg.validate()?;
    match cfg.threads {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build().expect("thread pool");
            pool.install(|| run_inner(inst, w, cfg))
        }
        None => run_inner(inst, w, cfg),
    }
}

fn consensus_cost(inst: &Instance, w: &ObjectiveWeights, cfg: &LphaConfig, s: &FirstStageSchedule) -> ExpectedCost {
    let ev = EvaluatorConfig { nurse_capacity: cfg.nurse_capacity, strict_overtime: false, weights: *w };
    expected_cost(s, inst, w, &ev).expect("consensus schedule is valid")
}

fn run_inner(
    inst: &Instance,
    w: &ObjectiveWeights,
    cfg: &LphaConfig,
) -> Result<(FirstStageSchedule, RunReport), LphaError> {
    let started = Instant::now();
    let n = inst.num_patients();
    let mut state = LphaState::new(inst, cfg.seed);
    state.rho = cfg.rho0;
    let mut trace = Vec::new();
    let mut fixes = Vec::new();
    let mut lb_violations = 0;
    let mut converged = false;
    let mut ev = ExpectedEvaluator::new(inst, w, cfg.nurse_capacity);
    let mut incumbent: Option<(f64, FirstStageSchedule, usize)> = None;

    while state.iter < cfg.max_iterations {
        state.iter += 1;
        let sols = solve_all(inst, w, cfg, &state)?;
        if state.iter == 1 {
            state.ot_idle_lb = sols.iter().map(|s| s.ot_idle_lb).collect();
        } else {
            for (s, lb) in sols.iter().zip(&state.ot_idle_lb) {
                if s.ot_idle_lb < lb - 1e-6 {
                    lb_violations += 1;
                    log::debug!("iteration {}: overtime+idle {} below bound {}", state.iter, s.ot_idle_lb, lb);
                }
            }
        }
        for (k, s) in sols.iter().enumerate() {
            for i in 0..n {
                let a = s.schedule.appointment[i];
                let pool = &mut state.cuts[k][i];
                if let Err(pos) = pool.binary_search(&a) {
                    pool.insert(pos, a);
                }
            }
        }
        state.appointments = sols.iter().map(|s| s.schedule.appointment.clone()).collect();
        state.solutions = sols.into_iter().map(|s| s.schedule).collect();
        state.update_consensus();

        let agreed = state.agreed();
        let rho_used = state.rho;
        let next_rho = if state.iter > 1 { update_penalty(&state, cfg) } else { state.rho };
        state.update_multipliers();
        state.record_hash();
        let new_fixes = if !agreed && state.iter > 1 { detect_cycles_and_fix(&mut state, cfg) } else { Vec::new() };
        state.rho = next_rho;

        let disagreeing = (0..n)
            .filter(|&i| state.appointments.iter().any(|a| a[i] != state.appointments[0][i]))
            .count();
        let consensus = state.consensus_schedule();
        let cc = consensus_cost(inst, w, cfg, &consensus);
        if cfg.incumbent {
            let mut offer = |cand: &FirstStageSchedule| {
                let c = ev.cost(&cand.sequence, &cand.appointment);
                if c.is_finite() && incumbent.as_ref().is_none_or(|(b, _, _)| c < *b - 1e-12) {
                    incumbent = Some((c, cand.clone(), state.iter));
                }
            };
            offer(&consensus);
            for sol in &state.solutions {
                offer(sol);
            }
        }
        trace.push(IterationRecord {
            iteration: state.iter,
            rho: rho_used,
            delta_p: if state.iter > 1 { state.delta_p.last().copied() } else { None },
            delta_d: *state.delta_d.last().expect("pushed above"),
            num_fixed: state.fixed.iter().filter(|f| f.is_some()).count(),
            disagreeing,
            consensus_objective: cc.objective,
            max_multiplier_imbalance: state.multiplier_imbalance(),
        });
        log::debug!(
            "iteration {}: rho {:.3e} dd {:.1} disagreeing {} fixed {} consensus {:.3}",
            state.iter,
            rho_used,
            state.delta_d.last().unwrap(),
            disagreeing,
            trace.last().unwrap().num_fixed,
            cc.objective
        );
        fixes.extend(new_fixes);
        if agreed {
            converged = true;
            break;
        }
    }

    let last = state.consensus_schedule();
    let mut origin = ScheduleOrigin {
        consensus_objective: consensus_cost(inst, w, cfg, &last).objective,
        incumbent_iteration: None,
        polished: false,
    };
    let mut schedule = match incumbent {
        Some((_, s, it)) => {
            origin.incumbent_iteration = Some(it);
            s
        }
        None => last,
    };
    if cfg.polish_evaluations > 0 && cfg.nurse_capacity.is_none() {
        let budget = OptBudget { max_evaluations: cfg.polish_evaluations, ..Default::default() };
        if let Ok(p) = fixed_sequence_opt(inst, w, &schedule.sequence, &budget, &[schedule.appointment.clone()]) {
            if ev.cost(&p.sequence, &p.appointment) < ev.cost(&schedule.sequence, &schedule.appointment) - 1e-12 {
                schedule = p;
                origin.polished = true;
            }
        }
    }
    let report = run_report(&state, inst, w, cfg, schedule.clone(), trace, fixes, started, converged, lb_violations, origin);
    if converged {
        Ok((schedule, report))
    } else {
        Err(LphaError::NoConvergence { max_iterations: cfg.max_iterations, schedule, report: Box::new(report) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state_with(dd: &[f64], dp: &[f64], rho: f64, iter: usize) -> LphaState {
        let inst = Instance::from_durations("t", &[(vec![1], vec![5])], 1, 1, 240, 180).unwrap();
        let mut s = LphaState::new(&inst, 1);
        s.delta_d = dd.to_vec();
        s.delta_p = dp.to_vec();
        s.rho = rho;
        s.iter = iter;
        s
    }

    #[test]
    fn penalty_branch_multiply() {
        let cfg = LphaConfig::default();
        let s = state_with(&[1.0, 2.0], &[], 0.01, 5);
        assert!((update_penalty(&s, &cfg) - 0.02).abs() < 1e-15);
    }

    #[test]
    fn penalty_branch_clamp_after_overshoot() {
        let cfg = LphaConfig::default();
        let s = state_with(&[1.0, 2.0], &[], 0.09, 5);
        let r = update_penalty(&s, &cfg);
        assert!((r - 0.18).abs() < 1e-15);
        let s = state_with(&[1.0, 2.0, 3.0], &[], r, 6);
        assert_eq!(update_penalty(&s, &cfg), 0.1);
    }

    #[test]
    fn penalty_branch_divide() {
        let cfg = LphaConfig::default();
        let s = state_with(&[2.0, 2.0], &[1.0, 3.0], 0.04, 5);
        assert!((update_penalty(&s, &cfg) - 0.02).abs() < 1e-15);
    }

    #[test]
    fn penalty_branch_keep() {
        let cfg = LphaConfig::default();
        let s = state_with(&[2.0, 1.0], &[3.0, 1.0], 0.04, 5);
        assert_eq!(update_penalty(&s, &cfg), 0.04);
    }

    #[test]
    fn penalty_branch_cap_when_above() {
        let cfg = LphaConfig::default();
        let s = state_with(&[2.0, 1.0], &[3.0, 1.0], 0.5, 5);
        assert_eq!(update_penalty(&s, &cfg), 0.1);
        // the second cap applies after iterlimit
        let s = state_with(&[2.0, 1.0], &[3.0, 1.0], 0.5, 101);
        assert_eq!(update_penalty(&s, &cfg), 0.5);
    }

    #[test]
    fn hash_arithmetic() {
        let inst = Instance::from_durations("t", &[(vec![1], vec![5]), (vec![1], vec![6])], 1, 1, 240, 180).unwrap();
        let mut s = LphaState::new(&inst, 3);
        s.hash_weights = vec![0.3, 0.7];
        s.mu = vec![vec![2.0], vec![-1.0]];
        s.record_hash();
        assert!((s.hash_history[0][0] - (-0.1)).abs() < 1e-12);
    }

    #[test]
    fn hash_weights_differ_from_probabilities() {
        let inst = Instance::from_durations("t", &[(vec![1], vec![5]), (vec![1], vec![6])], 1, 1, 240, 180).unwrap();
        let s = LphaState::new(&inst, 3);
        assert!(s.hash_weights.iter().zip(&s.probabilities).all(|(z, p)| z != p && (0.0..1.0).contains(z)));
    }

    #[test]
    fn constant_multipliers_flag_cycle() {
        let h = vec![vec![0.5], vec![0.5], vec![0.5]];
        assert!(hash_stable(&h, 0, 3, 1e-4));
        let h = vec![vec![0.5], vec![0.6], vec![0.5]];
        assert!(!hash_stable(&h, 0, 3, 1e-4));
        assert!(!hash_stable(&h[..2], 0, 3, 1e-4));
    }

    fn five_scenario_state(values: [Minutes; 5]) -> LphaState {
        let pairs: Vec<(Vec<Minutes>, Vec<Minutes>)> = (0..5).map(|k| (vec![1], vec![5 + k])).collect();
        let inst = Instance::from_durations("t", &pairs, 1, 1, 240, 180).unwrap();
        let mut s = LphaState::new(&inst, 1);
        s.appointments = values.iter().map(|&v| vec![v]).collect();
        s.iter = 2;
        s
    }

    #[test]
    fn eighty_percent_agreement_fixes() {
        let mut s = five_scenario_state([30, 30, 30, 30, 45]);
        let ev = detect_cycles_and_fix(&mut s, &LphaConfig::default());
        assert_eq!(ev.len(), 1);
        assert_eq!(s.fixed[0], Some(30));
        assert_eq!(ev[0].reason, FixReason::Consensus);
        let mut s = five_scenario_state([30, 30, 30, 45, 45]);
        assert!(detect_cycles_and_fix(&mut s, &LphaConfig::default()).is_empty());
    }

    #[test]
    fn cycle_fix_uses_majority_after_start_iteration() {
        let mut s = five_scenario_state([30, 45, 45, 30, 60]);
        s.hash_history = vec![vec![1.0]; 3];
        s.iter = 51;
        let ev = detect_cycles_and_fix(&mut s, &LphaConfig::default());
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].reason, FixReason::Cycle);
        // 30 and 45 tie on mass; the smallest wins
        assert_eq!(ev[0].value, 30);
        let mut s = five_scenario_state([30, 45, 45, 30, 60]);
        s.hash_history = vec![vec![1.0]; 3];
        s.iter = 50;
        assert!(detect_cycles_and_fix(&mut s, &LphaConfig::default()).is_empty());
    }

    #[test]
    fn multipliers_sum_to_zero() {
        let mut s = five_scenario_state([10, 20, 35, 0, 90]);
        s.rho = 0.37;
        s.update_consensus();
        s.update_multipliers();
        s.appointments = vec![vec![11], vec![22], vec![33], vec![44], vec![55]];
        s.update_consensus();
        s.update_multipliers();
        assert!(s.multiplier_imbalance() < 1e-9);
    }

    #[test]
    fn config_validation() {
        assert!(LphaConfig::default().validate().is_ok());
        let bad = LphaConfig { alpha: 1.0, ..Default::default() };
        assert_eq!(bad.validate(), Err(ConfigError::Alpha(1.0)));
        let bad = LphaConfig { rho_u1: 2.0, ..Default::default() };
        assert!(matches!(bad.validate(), Err(ConfigError::Caps(..))));
        let bad = LphaConfig { fix_fraction: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn consensus_schedule_orders_by_value_then_id() {
        let mut s = five_scenario_state([0; 5]);
        s.consensus = vec![10.4];
        s.fixed = vec![None];
        assert_eq!(s.consensus_schedule().appointment, vec![10]);
    }
}

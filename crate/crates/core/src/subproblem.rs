//! Single-scenario subproblem with augmented-Lagrangian penalty terms.
//!
//! The search splits into an outer loop over patient sequences and an inner
//! integer timing descent for a fixed sequence. The quadratic penalty is
//! replaced by tangent cuts collected at earlier operating points, which
//! makes the per-patient penalty piecewise linear.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descent;
use crate::evaluator::{CostTerms, Simulator};
use crate::model::{FirstStageSchedule, Instance, Minutes, ObjectiveWeights, Scenario};

pub const EXHAUSTIVE_MAX_PATIENTS: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SubproblemError {
    #[error("no sequence keeps nurse overtime within the limit")]
    Infeasible,
    #[error("exhaustive search is limited to {EXHAUSTIVE_MAX_PATIENTS} patients, got {0}")]
    TooManyPatients(usize),
    #[error("fixed appointments cover {got} patients, instance has {expected}")]
    FixedLength { expected: usize, got: usize },
}

/// Value of the tangent cut taken at `c`, evaluated at `a`.
#[inline]
pub fn cut_value(c: Minutes, a: Minutes) -> f64 {
    let (c, a) = (c as f64, a as f64);
    2.0 * c * a - c * c
}

/// Penalty data attached to one scenario subproblem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyTerms {
    pub mu: Vec<f64>,
    pub rho: f64,
    pub consensus: Vec<f64>,
    /// Operating points per patient, kept sorted and deduplicated.
    pub cuts: Vec<Vec<Minutes>>,
}

impl PenaltyTerms {
    pub fn zero(n: usize) -> Self {
        PenaltyTerms { mu: vec![0.0; n], rho: 0.0, consensus: vec![0.0; n], cuts: vec![Vec::new(); n] }
    }

    pub fn is_zero(&self) -> bool {
        self.rho == 0.0 && self.mu.iter().all(|&m| m == 0.0)
    }

    /// Adds a cut at `point` for patient `i`; false when it already exists.
    pub fn add_cut(&mut self, i: usize, point: Minutes) -> bool {
        match self.cuts[i].binary_search(&point) {
            Ok(_) => false,
            Err(pos) => {
                self.cuts[i].insert(pos, point);
                true
            }
        }
    }

    /// Linearized square ĝ_i(a) = max over cuts of the tangent value, which
    /// equals a² minus the squared distance to the nearest cut point.
    pub fn g_hat(&self, i: usize, a: Minutes) -> f64 {
        let cuts = &self.cuts[i];
        if cuts.is_empty() {
            return (a as f64) * (a as f64);
        }
        let pos = cuts.partition_point(|&c| c < a);
        let mut d = Minutes::MAX;
        if pos < cuts.len() {
            d = d.min(cuts[pos] - a);
        }
        if pos > 0 {
            d = d.min(a - cuts[pos - 1]);
        }
        let (a, d) = (a as f64, d as f64);
        a * a - d * d
    }

    /// μ_i(a − â_i) + ρ/2·(ĝ_i(a) − 2a·â_i + â_i²).
    #[inline]
    pub fn patient_penalty(&self, i: usize, a: Minutes) -> f64 {
        let hat = self.consensus[i];
        let af = a as f64;
        let mut v = self.mu[i] * (af - hat);
        if self.rho != 0.0 {
            v += 0.5 * self.rho * (self.g_hat(i, a) - 2.0 * af * hat + hat * hat);
        }
        v
    }

    pub fn total_penalty(&self, appointment: &[Minutes]) -> f64 {
        appointment.iter().enumerate().map(|(i, &a)| self.patient_penalty(i, a)).sum()
    }

    /// Integer in `[0, horizon]` minimizing the patient's penalty alone.
    fn target(&self, i: usize, horizon: Minutes) -> Option<Minutes> {
        if self.rho == 0.0 && self.mu[i] == 0.0 {
            return None;
        }
        let mut cands: Vec<Minutes> = vec![0, horizon, self.consensus[i].round() as Minutes];
        if self.rho > 0.0 {
            cands.push((self.consensus[i] - self.mu[i] / self.rho).round() as Minutes);
        }
        cands.extend(self.cuts[i].iter().copied());
        cands
            .into_iter()
            .map(|c| c.clamp(0, horizon))
            .min_by(|&x, &y| {
                self.patient_penalty(i, x).total_cmp(&self.patient_penalty(i, y)).then(x.cmp(&y))
            })
    }
}

/// Base objective plus the linearized penalty for one scenario.
pub fn penalized_cost(
    schedule: &FirstStageSchedule,
    scenario: &Scenario,
    inst: &Instance,
    w: &ObjectiveWeights,
    terms: &PenaltyTerms,
) -> f64 {
    let mut sim = Simulator::new(inst, None);
    let base = sim.run_scenario(schedule, scenario).objective(w);
    base + terms.total_penalty(&schedule.appointment)
}

/// max(0, Σ(s+t)/|C| − H): the latest discharge is at least the average
/// chair load, and some nurse owns that patient.
pub fn overtime_lb(scenario: &Scenario, inst: &Instance) -> f64 {
    (scenario.total_treatment() as f64 / inst.num_chairs as f64 - inst.shift_length as f64).max(0.0)
}

/// Lower bound on λ2·overtime + λ3·idle valid for every schedule.
pub fn ot_idle_floor(scenario: &Scenario, inst: &Instance, w: &ObjectiveWeights) -> f64 {
    let idle = (inst.num_chairs as Minutes * inst.shift_length - scenario.total_treatment()).max(0);
    w.lambda_overtime * overtime_lb(scenario, inst) + w.lambda_idle * idle as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    /// Every permutation; requires at most eight patients.
    #[default]
    Exhaustive,
    /// Adjacent swaps and insertions with first improvement and restarts.
    LocalSearch,
}

#[derive(Debug, Clone)]
pub struct SubproblemOptions {
    pub mode: SearchMode,
    /// Starting sequence for local search; LPT on this scenario when absent.
    pub seed_sequence: Option<Vec<usize>>,
    /// Previous solution, tried as an extra timing start.
    pub warm_start: Option<FirstStageSchedule>,
    /// Per-patient clamped appointment, empty for none.
    pub fixed: Vec<Option<Minutes>>,
    pub restarts: usize,
    pub seed: u64,
    pub nurse_capacity: Option<usize>,
    /// Sequences given the full timing descent after screening.
    pub refine_top: usize,
    pub max_passes: usize,
    /// Record the screened cost of every visited sequence.
    pub trace: bool,
    /// Treat nurse overtime above the limit as infeasible.
    pub enforce_limit: bool,
}

impl Default for SubproblemOptions {
    fn default() -> Self {
        SubproblemOptions {
            mode: SearchMode::Exhaustive,
            seed_sequence: None,
            warm_start: None,
            fixed: Vec::new(),
            restarts: 3,
            seed: 0,
            nurse_capacity: None,
            refine_top: 4,
            max_passes: 50,
            trace: false,
            enforce_limit: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceTrace {
    pub sequence: Vec<usize>,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubproblemSolution {
    pub schedule: FirstStageSchedule,
    /// λ-weighted wait, overtime and idle only.
    pub base_objective: f64,
    pub penalized_objective: f64,
    /// λ2·overtime + λ3·idle at this solution.
    pub ot_idle_lb: f64,
    pub wait: Minutes,
    pub overtime: Minutes,
    pub idle: Minutes,
    pub trace: Vec<SequenceTrace>,
}

/// Timing search state for one scenario.
struct Timing<'a> {
    sim: Simulator,
    scenario: &'a Scenario,
    w: &'a ObjectiveWeights,
    terms: &'a PenaltyTerms,
    limit: Minutes,
    horizon: Minutes,
    fixed: &'a [Option<Minutes>],
    evals: u64,
}

struct Point {
    appointment: Vec<Minutes>,
    cost: f64,
    terms: CostTerms,
}

impl<'a> Timing<'a> {
    fn is_fixed(&self, p: usize) -> Option<Minutes> {
        self.fixed.get(p).copied().flatten()
    }

    fn cost(&mut self, seq: &[usize], a: &[Minutes]) -> (f64, CostTerms) {
        self.evals += 1;
        let t = self.sim.run(seq, a, &self.scenario.premed, &self.scenario.infusion, None);
        if t.max_overtime > self.limit {
            return (f64::INFINITY, t);
        }
        (t.objective(self.w) + self.terms.total_penalty(a), t)
    }

    /// Position-wise bounds implied by fixed patients; `None` when the
    /// sequence contradicts their order.
    fn bounds(&self, seq: &[usize]) -> Option<(Vec<Minutes>, Vec<Minutes>)> {
        let n = seq.len();
        let mut lo = vec![0; n];
        let mut hi = vec![self.horizon; n];
        let mut run = 0;
        for k in 0..n {
            if let Some(f) = self.is_fixed(seq[k]) {
                if f < run {
                    return None;
                }
                run = f;
            }
            lo[k] = run;
        }
        let mut run = self.horizon;
        for k in (0..n).rev() {
            if let Some(f) = self.is_fixed(seq[k]) {
                run = f;
            }
            hi[k] = run;
        }
        Some((lo, hi))
    }

    /// Cheap timing candidates for a sequence: zero-wait tight times, the
    /// penalty targets projected onto the sequence order, and their midpoint.
    fn screen(&mut self, seq: &[usize], lo: &[Minutes], hi: &[Minutes]) -> Point {
        let n = seq.len();
        let mut a = vec![0; n];
        for k in 0..n {
            a[seq[k]] = lo[k];
        }
        self.sim.run(seq, &a, &self.scenario.premed, &self.scenario.infusion, None);
        for k in 0..n {
            a[seq[k]] = self.sim.starts()[seq[k]].clamp(lo[k], hi[k]);
        }
        let (c, t) = self.cost(seq, &a);
        let mut best = Point { appointment: a, cost: c, terms: t };
        if self.terms.is_zero() {
            return best;
        }
        let tight = best.appointment.clone();
        let mut target = vec![0; n];
        let mut run = 0;
        for k in 0..n {
            let p = seq[k];
            let v = self.terms.target(p, self.horizon).unwrap_or(tight[p]);
            run = v.max(run).clamp(lo[k], hi[k]);
            target[p] = run;
        }
        let mut mid = vec![0; n];
        let mut run = 0;
        for k in 0..n {
            let p = seq[k];
            run = ((tight[p] + target[p]) / 2).max(run).clamp(lo[k], hi[k]);
            mid[p] = run;
        }
        for cand in [target, mid] {
            let (c, t) = self.cost(seq, &cand);
            if c < best.cost {
                best = Point { appointment: cand, cost: c, terms: t };
            }
        }
        best
    }

    fn descend(&mut self, seq: &[usize], lo: &[Minutes], hi: &[Minutes], mut pt: Point, max_passes: usize) -> Point {
        let fixed = self.fixed;
        let frozen = |p: usize| fixed.get(p).copied().flatten().is_some();
        let bx = descent::Box { seq, lo, hi, horizon: self.horizon, frozen: &frozen, max_passes };
        let mut budget = u64::MAX;
        let (c, t) = descent::coordinate_descent(&bx, &mut pt.appointment, pt.cost, pt.terms, &mut budget, |a| self.cost(seq, a));
        pt.cost = c;
        pt.terms = t;
        pt
    }
}

fn next_permutation(v: &mut [usize]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

/// Reorders the fixed patients among their own positions so their fixed
/// values are nondecreasing; free patients keep their places.
fn respect_fixed(seq: &mut [usize], fixed: &[Option<Minutes>]) {
    let value = |p: usize| fixed.get(p).copied().flatten();
    let slots: Vec<usize> = (0..seq.len()).filter(|&k| value(seq[k]).is_some()).collect();
    let mut pinned: Vec<usize> = slots.iter().map(|&k| seq[k]).collect();
    pinned.sort_by_key(|&p| value(p));
    for (k, p) in slots.into_iter().zip(pinned) {
        seq[k] = p;
    }
}

/// Longest treatment first on this scenario, ties by id.
pub fn lpt_order(scenario: &Scenario) -> Vec<usize> {
    let mut seq: Vec<usize> = (0..scenario.len()).collect();
    seq.sort_by_key(|&i| (std::cmp::Reverse(scenario.treatment(i)), i));
    seq
}

/// All single-move neighbors: adjacent swaps, then insertions.
fn neighbors(seq: &[usize]) -> impl Iterator<Item = Vec<usize>> + '_ {
    let n = seq.len();
    let swaps = (0..n.saturating_sub(1)).map(move |k| {
        let mut s = seq.to_vec();
        s.swap(k, k + 1);
        s
    });
    let inserts = (0..n).flat_map(move |from| {
        (0..n).filter(move |&to| to != from && to != from + 1 && to + 1 != from).map(move |to| {
            let mut s = seq.to_vec();
            let x = s.remove(from);
            s.insert(to, x);
            s
        })
    });
    swaps.chain(inserts)
}

/// Solves one scenario subproblem.
///
/// Sequences are first screened with cheap timing candidates; the best
/// `refine_top` of them then get the full coordinate descent.
pub fn solve_subproblem(
    scenario: &Scenario,
    inst: &Instance,
    w: &ObjectiveWeights,
    terms: &PenaltyTerms,
    opts: &SubproblemOptions,
) -> Result<SubproblemSolution, SubproblemError> {
    let n = inst.num_patients();
    if !opts.fixed.is_empty() && opts.fixed.len() != n {
        return Err(SubproblemError::FixedLength { expected: n, got: opts.fixed.len() });
    }
    if opts.mode == SearchMode::Exhaustive && n > EXHAUSTIVE_MAX_PATIENTS {
        return Err(SubproblemError::TooManyPatients(n));
    }
    let mut tm = Timing {
        sim: Simulator::new(inst, opts.nurse_capacity),
        scenario,
        w,
        terms,
        limit: if opts.enforce_limit { inst.overtime_limit } else { Minutes::MAX },
        horizon: inst.horizon(),
        fixed: &opts.fixed,
        evals: 0,
    };
    let mut trace = Vec::new();
    // screened candidates, best first, at most refine_top entries
    let keep = opts.refine_top.max(1);
    let mut pool: Vec<(f64, Vec<usize>)> = Vec::new();
    let offer = |pool: &mut Vec<(f64, Vec<usize>)>, cost: f64, seq: &[usize]| {
        if !cost.is_finite() || pool.iter().any(|(_, s)| s == seq) {
            return;
        }
        if pool.len() < keep || cost < pool[pool.len() - 1].0 {
            let pos = pool.partition_point(|(c, _)| *c <= cost);
            pool.insert(pos, (cost, seq.to_vec()));
            pool.truncate(keep);
        }
    };

    let floor = if terms.is_zero() && opts.nurse_capacity.is_none() {
        Some(ot_idle_floor(scenario, inst, w))
    } else {
        None
    };

    let screen = |tm: &mut Timing, seq: &[usize], trace: &mut Vec<SequenceTrace>| -> f64 {
        let c = match tm.bounds(seq) {
            Some((lo, hi)) => tm.screen(seq, &lo, &hi).cost,
            None => f64::INFINITY,
        };
        if opts.trace {
            trace.push(SequenceTrace { sequence: seq.to_vec(), cost: c });
        }
        c
    };

    if let Some(ws) = &opts.warm_start {
        let c = screen(&mut tm, &ws.sequence, &mut trace);
        offer(&mut pool, c, &ws.sequence);
    }

    match opts.mode {
        SearchMode::Exhaustive => {
            let mut seq: Vec<usize> = (0..n).collect();
            loop {
                let c = screen(&mut tm, &seq, &mut trace);
                offer(&mut pool, c, &seq);
                if let Some(f) = floor {
                    if c <= f + 1e-9 {
                        break;
                    }
                }
                if !next_permutation(&mut seq) {
                    break;
                }
            }
        }
        SearchMode::LocalSearch => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut starts = vec![opts.seed_sequence.clone().unwrap_or_else(|| lpt_order(scenario))];
            for _ in 0..opts.restarts {
                let mut s: Vec<usize> = (0..n).collect();
                s.shuffle(&mut rng);
                starts.push(s);
            }
            for mut start in starts {
                respect_fixed(&mut start, &opts.fixed);
                let mut cur = start;
                let mut cur_c = screen(&mut tm, &cur, &mut trace);
                loop {
                    let mut moved = None;
                    for nb in neighbors(&cur) {
                        let c = screen(&mut tm, &nb, &mut trace);
                        if c < cur_c - 1e-12 {
                            moved = Some((nb, c));
                            break;
                        }
                    }
                    match moved {
                        Some((nb, c)) => {
                            cur = nb;
                            cur_c = c;
                        }
                        None => break,
                    }
                }
                offer(&mut pool, cur_c, &cur);
            }
        }
    }

    let mut best: Option<(Point, Vec<usize>)> = None;
    for (_, seq) in &pool {
        let (lo, hi) = tm.bounds(seq).expect("pooled sequences are consistent");
        let start = tm.screen(seq, &lo, &hi);
        let mut cands = vec![start];
        if let Some(ws) = &opts.warm_start {
            if &ws.sequence == seq {
                let mut a = ws.appointment.clone();
                let mut run = 0;
                for k in 0..n {
                    run = a[seq[k]].max(run).clamp(lo[k], hi[k]);
                    a[seq[k]] = run;
                }
                let (c, t) = tm.cost(seq, &a);
                cands.push(Point { appointment: a, cost: c, terms: t });
            }
        }
        for pt in cands {
            if !pt.cost.is_finite() {
                continue;
            }
            let pt = tm.descend(seq, &lo, &hi, pt, opts.max_passes);
            if best.as_ref().is_none_or(|(b, _)| pt.cost < b.cost - 1e-12) {
                best = Some((pt, seq.clone()));
            }
        }
    }
    let (pt, seq) = best.ok_or(SubproblemError::Infeasible)?;
    log::trace!("subproblem: {} evaluations, cost {}", tm.evals, pt.cost);
    let base = pt.terms.objective(w);
    Ok(SubproblemSolution {
        schedule: FirstStageSchedule::new(seq, pt.appointment),
        base_objective: base,
        penalized_objective: pt.cost,
        ot_idle_lb: pt.terms.overtime_idle(w),
        wait: pt.terms.wait,
        overtime: pt.terms.overtime,
        idle: pt.terms.idle,
        trace,
    })
}

//! Second-stage evaluation: given a sequence, appointment times and one
//! duration realization, assign each arriving patient to the first available
//! nurse and chair and measure waiting, overtime and idle time.
//!
//! The hot path ([`Simulator`]) is allocation-free so the subproblem and
//! heuristic searches can call it millions of times.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{FirstStageSchedule, Instance, Minutes, ObjectiveWeights, Scenario, SecondStageOutcome};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("schedule does not match the instance: {0}")]
    InvalidSchedule(String),
    #[error("nurse overtime {overtime} exceeds the limit {limit}")]
    OvertimeLimitExceeded { overtime: Minutes, limit: Minutes },
    #[error("brute force is limited to {max_patients} patients, {max_nurses} nurses and {max_chairs} chairs")]
    InstanceTooLarge { max_patients: usize, max_nurses: usize, max_chairs: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[derive(Default)]
pub struct EvaluatorConfig {
    /// Maximum number of patients a nurse may observe at once.
    pub nurse_capacity: Option<usize>,
    /// Report overtime above the limit as an error instead of a flag.
    pub strict_overtime: bool,
    pub weights: ObjectiveWeights,
}


impl EvaluatorConfig {
    pub fn with_weights(weights: ObjectiveWeights) -> Self {
        EvaluatorConfig { weights, ..Default::default() }
    }
}

/// Per-resource bookkeeping while patients are placed in sequence order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResourceState {
    /// End of the last pre-medication performed by each nurse.
    pub nurse_free_at: Vec<Minutes>,
    /// Discharge of the last occupant of each chair.
    pub chair_free_at: Vec<Minutes>,
    pub processed: usize,
    nurse_last_discharge: Vec<Minutes>,
    chair_busy: Vec<Minutes>,
    nurse_discharges: Vec<Vec<Minutes>>,
}

impl ResourceState {
    pub fn new(nurses: usize, chairs: usize) -> Self {
        ResourceState {
            nurse_free_at: vec![0; nurses],
            chair_free_at: vec![0; chairs],
            processed: 0,
            nurse_last_discharge: vec![0; nurses],
            chair_busy: vec![0; chairs],
            nurse_discharges: vec![Vec::new(); nurses],
        }
    }

    fn reset(&mut self) {
        self.nurse_free_at.iter_mut().for_each(|x| *x = 0);
        self.chair_free_at.iter_mut().for_each(|x| *x = 0);
        self.nurse_last_discharge.iter_mut().for_each(|x| *x = 0);
        self.chair_busy.iter_mut().for_each(|x| *x = 0);
        self.nurse_discharges.iter_mut().for_each(Vec::clear);
        self.processed = 0;
    }

    /// Patients of nurse `n` still in treatment at time `t`.
    fn observing(&self, n: usize, t: Minutes) -> usize {
        self.nurse_discharges[n].iter().filter(|&&d| d > t).count()
    }
}

/// Integer totals of one simulated scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CostTerms {
    pub wait: Minutes,
    pub overtime: Minutes,
    pub idle: Minutes,
    pub max_overtime: Minutes,
}

impl CostTerms {
    #[inline]
    pub fn objective(&self, w: &ObjectiveWeights) -> f64 {
        w.combine(self.wait as f64, self.overtime as f64, self.idle as f64)
    }

    /// λ2·overtime + λ3·idle.
    #[inline]
    pub fn overtime_idle(&self, w: &ObjectiveWeights) -> f64 {
        w.lambda_overtime * self.overtime as f64 + w.lambda_idle * self.idle as f64
    }
}

/// Per-patient placement produced when a trace is requested.
#[derive(Debug, Clone, Default)]
pub struct Placement {
    pub start: Vec<Minutes>,
    pub nurse_of: Vec<usize>,
    pub chair_of: Vec<usize>,
    pub nurse_overtime: Vec<Minutes>,
    pub chair_idle: Vec<Minutes>,
}

/// Reusable first-available simulator for one instance shape.
#[derive(Debug, Clone)]
pub struct Simulator {
    nurses: usize,
    chairs: usize,
    shift: Minutes,
    capacity: Option<usize>,
    state: ResourceState,
    starts: Vec<Minutes>,
}

impl Simulator {
    pub fn new(inst: &Instance, capacity: Option<usize>) -> Self {
        Simulator::with_shape(inst.num_nurses, inst.num_chairs, inst.shift_length, capacity)
    }

    pub fn with_shape(nurses: usize, chairs: usize, shift: Minutes, capacity: Option<usize>) -> Self {
        Simulator { nurses, chairs, shift, capacity, state: ResourceState::new(nurses, chairs), starts: Vec::new() }
    }

    /// Earliest time at or after `t0` when some nurse is free and, under a
    /// capacity limit, observing fewer than `B` patients.
    fn nurse_ready(&self, t0: Minutes) -> Minutes {
        let st = &self.state;
        match self.capacity {
            None => t0.max(*st.nurse_free_at.iter().min().expect("at least one nurse")),
            Some(b) => {
                let mut best = Minutes::MAX;
                for n in 0..self.nurses {
                    let mut t = t0.max(st.nurse_free_at[n]);
                    if st.observing(n, t) >= b {
                        // the count only drops at discharges; the b-th latest one frees a slot
                        let mut later: Vec<Minutes> = st.nurse_discharges[n].iter().copied().filter(|&d| d > t).collect();
                        later.sort_unstable();
                        t = later[later.len() - b];
                    }
                    best = best.min(t);
                }
                best
            }
        }
    }

    fn nurse_eligible(&self, n: usize, t: Minutes) -> bool {
        self.state.nurse_free_at[n] <= t && self.capacity.is_none_or(|b| self.state.observing(n, t) < b)
    }

    /// Places every patient of `sequence` and returns the totals. When
    /// `trace` is given it receives per-patient starts and assignments.
    pub fn run(
        &mut self,
        sequence: &[usize],
        appointment: &[Minutes],
        premed: &[Minutes],
        infusion: &[Minutes],
        mut trace: Option<&mut Placement>,
    ) -> CostTerms {
        self.state.reset();
        if self.starts.len() != appointment.len() {
            self.starts.resize(appointment.len(), 0);
        }
        if let Some(tr) = trace.as_deref_mut() {
            let n = appointment.len();
            tr.start.clear();
            tr.start.resize(n, 0);
            tr.nurse_of.clear();
            tr.nurse_of.resize(n, 0);
            tr.chair_of.clear();
            tr.chair_of.resize(n, 0);
        }
        let mut terms = CostTerms::default();
        let mut prev_start = Minutes::MIN;
        for &p in sequence {
            let a = appointment[p];
            let chair_min = *self.state.chair_free_at.iter().min().expect("at least one chair");
            let t0 = a.max(prev_start).max(chair_min);
            let start = self.nurse_ready(t0);

            // among chairs already free, take the one freed last
            let mut chair = usize::MAX;
            for c in 0..self.chairs {
                let f = self.state.chair_free_at[c];
                if f <= start && (chair == usize::MAX || f > self.state.chair_free_at[chair]) {
                    chair = c;
                }
            }
            // among eligible nurses, take the one whose latest discharge is latest
            let mut nurse = usize::MAX;
            for n in 0..self.nurses {
                if self.nurse_eligible(n, start)
                    && (nurse == usize::MAX
                        || self.state.nurse_last_discharge[n] > self.state.nurse_last_discharge[nurse])
                {
                    nurse = n;
                }
            }
            debug_assert!(chair != usize::MAX && nurse != usize::MAX);

            let s = premed[p];
            let d = start + s + infusion[p];
            let st = &mut self.state;
            st.nurse_free_at[nurse] = start + s;
            st.nurse_last_discharge[nurse] = st.nurse_last_discharge[nurse].max(d);
            if self.capacity.is_some() {
                st.nurse_discharges[nurse].push(d);
            }
            st.chair_free_at[chair] = d;
            st.chair_busy[chair] += s + infusion[p];
            st.processed += 1;
            terms.wait += start - a;
            prev_start = start;
            self.starts[p] = start;
            if let Some(tr) = trace.as_deref_mut() {
                tr.start[p] = start;
                tr.nurse_of[p] = nurse;
                tr.chair_of[p] = chair;
            }
        }
        let st = &self.state;
        for n in 0..self.nurses {
            let ot = (st.nurse_last_discharge[n] - self.shift).max(0);
            terms.overtime += ot;
            terms.max_overtime = terms.max_overtime.max(ot);
        }
        for c in 0..self.chairs {
            terms.idle += st.chair_free_at[c].max(self.shift) - st.chair_busy[c];
        }
        if let Some(tr) = trace {
            tr.nurse_overtime = (0..self.nurses).map(|n| (st.nurse_last_discharge[n] - self.shift).max(0)).collect();
            tr.chair_idle = (0..self.chairs).map(|c| st.chair_free_at[c].max(self.shift) - st.chair_busy[c]).collect();
        }
        terms
    }

    /// Start times of the last run, indexed by patient.
    pub fn starts(&self) -> &[Minutes] {
        &self.starts
    }

    /// Convenience wrapper over [`Simulator::run`] for one scenario.
    pub fn run_scenario(&mut self, schedule: &FirstStageSchedule, scenario: &Scenario) -> CostTerms {
        self.run(&schedule.sequence, &schedule.appointment, &scenario.premed, &scenario.infusion, None)
    }
}

fn check_shape(schedule: &FirstStageSchedule, scenario: &Scenario, inst: &Instance) -> Result<(), EvalError> {
    let problems = crate::model::validate(schedule, inst);
    if let Some(v) = problems.first() {
        return Err(EvalError::InvalidSchedule(v.to_string()));
    }
    if scenario.premed.len() != inst.num_patients() || scenario.infusion.len() != inst.num_patients() {
        return Err(EvalError::InvalidSchedule("scenario length differs from patient count".into()));
    }
    Ok(())
}

pub(crate) fn assemble_outcome(
    schedule: &FirstStageSchedule,
    scenario: &Scenario,
    inst: &Instance,
    cfg: &EvaluatorConfig,
    placement: Placement,
) -> Result<SecondStageOutcome, EvalError> {
    let n = inst.num_patients();
    let wait: Vec<Minutes> = (0..n).map(|p| placement.start[p] - schedule.appointment[p]).collect();
    let discharge: Vec<Minutes> = (0..n).map(|p| placement.start[p] + scenario.treatment(p)).collect();
    let mut overtime = placement.nurse_overtime;
    overtime.sort_unstable_by(|a, b| b.cmp(a));
    let worst = overtime.first().copied().unwrap_or(0);
    let feasible = worst <= inst.overtime_limit;
    if cfg.strict_overtime && !feasible {
        return Err(EvalError::OvertimeLimitExceeded { overtime: worst, limit: inst.overtime_limit });
    }
    let mut out = SecondStageOutcome {
        start: placement.start,
        wait,
        discharge,
        nurse_of: placement.nurse_of,
        chair_of: placement.chair_of,
        overtime,
        idle: placement.chair_idle,
        objective: 0.0,
        feasible,
    };
    out.objective = crate::model::objective_value(&out, &cfg.weights);
    Ok(out)
}

/// Second stage of one scenario under the first-available chair-and-nurse rule.
///
/// Patients are placed in sequence order. Each starts at the latest of its
/// appointment, the previous patient's start, the earliest free chair and the
/// earliest free nurse. Among resources already free at that moment the chair
/// freed last and the nurse with the latest discharge so far are used; both
/// choices leave every start time unchanged.
pub fn evaluate(
    schedule: &FirstStageSchedule,
    scenario: &Scenario,
    inst: &Instance,
    cfg: &EvaluatorConfig,
) -> Result<SecondStageOutcome, EvalError> {
    check_shape(schedule, scenario, inst)?;
    if let Some(0) = cfg.nurse_capacity {
        return Err(EvalError::InvalidSchedule("nurse capacity must be at least 1".into()));
    }
    let mut sim = Simulator::new(inst, cfg.nurse_capacity);
    let mut placement = Placement::default();
    sim.run(&schedule.sequence, &schedule.appointment, &scenario.premed, &scenario.infusion, Some(&mut placement));
    assemble_outcome(schedule, scenario, inst, cfg, placement)
}

pub const BRUTE_FORCE_MAX_PATIENTS: usize = 7;
pub const BRUTE_FORCE_MAX_NURSES: usize = 3;
pub const BRUTE_FORCE_MAX_CHAIRS: usize = 4;

/// All labelings of `n` items into at most `k` unlabeled groups, as
/// restricted growth strings.
fn restricted_growth(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, n: usize, k: usize, used: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        let limit = (used + 1).min(k);
        for g in 0..limit {
            prefix.push(g);
            rec(prefix, n, k, used.max(g + 1), out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(n), n, k, 0, &mut out);
    out
}

/// Exhaustive second stage: every nurse and chair assignment (up to
/// relabeling of identical resources), each timed by earliest-start
/// propagation in sequence order. Schedules respecting the overtime limit are
/// preferred; if none does, the cheapest infeasible one is returned.
pub fn brute_force_second_stage(
    schedule: &FirstStageSchedule,
    scenario: &Scenario,
    inst: &Instance,
    weights: &ObjectiveWeights,
) -> Result<SecondStageOutcome, EvalError> {
    let n = inst.num_patients();
    if n > BRUTE_FORCE_MAX_PATIENTS || inst.num_nurses > BRUTE_FORCE_MAX_NURSES || inst.num_chairs > BRUTE_FORCE_MAX_CHAIRS {
        return Err(EvalError::InstanceTooLarge {
            max_patients: BRUTE_FORCE_MAX_PATIENTS,
            max_nurses: BRUTE_FORCE_MAX_NURSES,
            max_chairs: BRUTE_FORCE_MAX_CHAIRS,
        });
    }
    check_shape(schedule, scenario, inst)?;
    let h = inst.shift_length;
    // labels are assigned by position in the sequence
    let nurse_labelings = restricted_growth(n, inst.num_nurses);
    let chair_labelings = restricted_growth(n, inst.num_chairs);

    let mut best: Option<(bool, f64, Vec<Minutes>, Vec<usize>, Vec<usize>)> = None;
    let mut start = vec![0; n];
    for nl in &nurse_labelings {
        for cl in &chair_labelings {
            let mut nurse_free = vec![Minutes::MIN; inst.num_nurses];
            let mut nurse_last = vec![0; inst.num_nurses];
            let mut chair_free = vec![Minutes::MIN; inst.num_chairs];
            let mut chair_busy = vec![0; inst.num_chairs];
            let mut prev = Minutes::MIN;
            let mut wait = 0;
            for (k, &p) in schedule.sequence.iter().enumerate() {
                let (nu, ch) = (nl[k], cl[k]);
                let t = schedule.appointment[p].max(prev).max(nurse_free[nu]).max(chair_free[ch]);
                start[k] = t;
                wait += t - schedule.appointment[p];
                nurse_free[nu] = t + scenario.premed[p];
                let d = t + scenario.treatment(p);
                nurse_last[nu] = nurse_last[nu].max(d);
                chair_free[ch] = d;
                chair_busy[ch] += scenario.treatment(p);
                prev = t;
            }
            let overtime: Vec<Minutes> = nurse_last.iter().map(|&d| (d - h).max(0)).collect();
            let idle: Minutes = (0..inst.num_chairs).map(|c| chair_free[c].max(h) - chair_busy[c]).sum();
            let feasible = overtime.iter().all(|&o| o <= inst.overtime_limit);
            let obj = weights.combine(wait as f64, overtime.iter().sum::<Minutes>() as f64, idle as f64);
            let better = match &best {
                None => true,
                Some((bf, bo, ..)) => (feasible && !bf) || (feasible == *bf && obj < *bo),
            };
            if better {
                best = Some((feasible, obj, start.clone(), nl.clone(), cl.clone()));
            }
        }
    }
    let (_, _, starts_by_pos, nl, cl) = best.expect("at least one labeling");
    let mut placement = Placement {
        start: vec![0; n],
        nurse_of: vec![0; n],
        chair_of: vec![0; n],
        nurse_overtime: vec![0; inst.num_nurses],
        chair_idle: vec![0; inst.num_chairs],
    };
    let mut chair_free = vec![Minutes::MIN; inst.num_chairs];
    let mut chair_busy = vec![0; inst.num_chairs];
    for (k, &p) in schedule.sequence.iter().enumerate() {
        placement.start[p] = starts_by_pos[k];
        placement.nurse_of[p] = nl[k];
        placement.chair_of[p] = cl[k];
        let d = starts_by_pos[k] + scenario.treatment(p);
        placement.nurse_overtime[nl[k]] = placement.nurse_overtime[nl[k]].max(d);
        chair_free[cl[k]] = d;
        chair_busy[cl[k]] += scenario.treatment(p);
    }
    for o in placement.nurse_overtime.iter_mut() {
        *o = (*o - h).max(0);
    }
    placement.chair_idle = (0..inst.num_chairs).map(|c| chair_free[c].max(h) - chair_busy[c]).collect();
    let cfg = EvaluatorConfig { weights: *weights, ..Default::default() };
    assemble_outcome(schedule, scenario, inst, &cfg, placement)
}

/// Number of patients each nurse observes at every minute of `[0, horizon)`,
/// counting a patient from treatment start to discharge.
pub fn nurse_load_profile(outcome: &SecondStageOutcome, inst: &Instance) -> Vec<Vec<u32>> {
    let horizon = outcome
        .discharge
        .iter()
        .copied()
        .max()
        .unwrap_or(0)
        .max(inst.horizon())
        .max(0) as usize;
    let mut profile = vec![vec![0u32; horizon]; inst.num_nurses];
    for p in 0..outcome.start.len() {
        let n = outcome.nurse_of[p];
        for k in outcome.start[p].max(0) as usize..outcome.discharge[p].max(0) as usize {
            profile[n][k] += 1;
        }
    }
    profile
}

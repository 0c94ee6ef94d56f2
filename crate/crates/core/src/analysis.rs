//! Batch workflows on top of the solvers: value of the stochastic solution,
//! sensitivity sweeps, heuristic gap tables, and CSV/SVG output.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluator::EvaluatorConfig;
use crate::heuristics::{
    default_hedging_levels, fixed_sequence_opt, job_hedging_schedule, sequence_patients, HedgingConfig,
    HeuristicError, OptBudget, SequencingRule,
};
use crate::lpha::{run_lpha, LphaConfig, LphaError, RunReport};
use crate::model::{expected_cost, FirstStageSchedule, Instance, ModelError, ObjectiveWeights, Scenario, SecondStageOutcome};
use crate::subproblem::{solve_subproblem, PenaltyTerms, SearchMode, SubproblemError, SubproblemOptions, EXHAUSTIVE_MAX_PATIENTS};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("sweep grid is empty")]
    EmptyGrid,
    #[error("no instances given")]
    NoInstances,
    #[error(transparent)]
    Lpha(#[from] LphaError),
    #[error(transparent)]
    Subproblem(#[from] SubproblemError),
    #[error(transparent)]
    Heuristic(#[from] HeuristicError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] crate::evaluator::EvalError),
}

/// LPHA result, accepting the incumbent when the iteration cap is hit.
pub fn solve_or_incumbent(inst: &Instance, w: &ObjectiveWeights, cfg: &LphaConfig) -> Result<(FirstStageSchedule, RunReport), LphaError> {
    match run_lpha(inst, w, cfg) {
        Err(LphaError::NoConvergence { schedule, report, .. }) => Ok((schedule, *report)),
        r => r,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VssResult {
    pub mv_objective: f64,
    pub lpha_objective: f64,
    pub relative_vss: f64,
}

/// (MV − LPHA) / LPHA × 100.
pub fn relative_vss(mv: f64, lpha: f64) -> f64 {
    (mv - lpha) / lpha * 100.0
}

/// Optimal schedule of the deterministic problem on rounded mean durations.
pub fn mean_value_schedule(inst: &Instance, w: &ObjectiveWeights) -> Result<FirstStageSchedule, AnalysisError> {
    let mean = inst.mean_scenario();
    let mode = if inst.num_patients() <= EXHAUSTIVE_MAX_PATIENTS { SearchMode::Exhaustive } else { SearchMode::LocalSearch };
    let opts = SubproblemOptions { mode, ..Default::default() };
    let sol = solve_subproblem(&mean, inst, w, &PenaltyTerms::zero(inst.num_patients()), &opts)?;
    Ok(sol.schedule)
}

pub fn cmd_vss(inst: &Instance, w: &ObjectiveWeights, cfg: &LphaConfig) -> Result<VssResult, AnalysisError> {
    let (lpha, _) = solve_or_incumbent(inst, w, cfg)?;
    vss_against(inst, w, &lpha)
}

/// VSS of a given stochastic schedule.
pub fn vss_against(inst: &Instance, w: &ObjectiveWeights, schedule: &FirstStageSchedule) -> Result<VssResult, AnalysisError> {
    let ev = EvaluatorConfig::with_weights(*w);
    let mv = mean_value_schedule(inst, w)?;
    let mv_objective = expected_cost(&mv, inst, w, &ev)?.objective;
    let lpha_objective = expected_cost(schedule, inst, w, &ev)?.objective;
    Ok(VssResult { mv_objective, lpha_objective, relative_vss: relative_vss(mv_objective, lpha_objective) })
}

/// The twelve weight combinations of the sensitivity study, each normalized
/// to sum to one.
pub fn lambda_presets() -> Vec<ObjectiveWeights> {
    [
        (1.0, 10.0, 10.0),
        (1.0, 2.0, 2.0),
        (1.0, 0.5, 0.5),
        (1.0, 0.1, 0.1),
        (1.0, 0.1, 1.0),
        (1.0, 0.5, 1.0),
        (1.0, 2.0, 1.0),
        (1.0, 10.0, 1.0),
        (1.0, 1.0, 0.1),
        (1.0, 1.0, 0.5),
        (1.0, 1.0, 2.0),
        (1.0, 1.0, 10.0),
    ]
    .iter()
    .map(|&(a, b, c)| ObjectiveWeights { lambda_wait: a, lambda_overtime: b, lambda_idle: c }.normalized())
    .collect()
}

/// Weight triples of the value-of-stochastic-solution study.
pub fn vss_weights() -> Vec<ObjectiveWeights> {
    [(0.3, 0.3, 0.4), (0.2, 0.6, 0.2), (0.8, 0.1, 0.1), (0.1, 0.8, 0.1), (0.1, 0.1, 0.8)]
        .iter()
        .map(|&(a, b, c)| ObjectiveWeights { lambda_wait: a, lambda_overtime: b, lambda_idle: c })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub lambda_grid: Vec<ObjectiveWeights>,
    pub nurse_range: Vec<usize>,
    pub chair_range: Vec<usize>,
    pub repetitions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub weights: ObjectiveWeights,
    pub nurses: usize,
    pub chairs: usize,
    pub runs: usize,
    pub mean_objective: f64,
    pub mean_cpu_s: f64,
    pub mean_ewt: f64,
    pub mean_eot: f64,
    pub mean_eit: f64,
}

/// Runs LPHA on every instance for each (weights, nurses, chairs) cell and
/// averages the results. Seeds differ per repetition.
pub fn cmd_sweep(instances: &[Instance], spec: &SweepSpec, cfg: &LphaConfig) -> Result<Vec<SweepCell>, AnalysisError> {
    if spec.lambda_grid.is_empty() || spec.nurse_range.is_empty() || spec.chair_range.is_empty() || spec.repetitions == 0 {
        return Err(AnalysisError::EmptyGrid);
    }
    if instances.is_empty() {
        return Err(AnalysisError::NoInstances);
    }
    let mut cells = Vec::new();
    for w in &spec.lambda_grid {
        for &nurses in &spec.nurse_range {
            for &chairs in &spec.chair_range {
                let mut acc = [0.0f64; 5];
                let mut runs = 0;
                for inst in instances {
                    let inst = inst.with_resources(nurses, chairs)?;
                    for rep in 0..spec.repetitions {
                        let c = LphaConfig { seed: cfg.seed + rep as u64, ..cfg.clone() };
                        let t = Instant::now();
                        let (_, r) = solve_or_incumbent(&inst, w, &c)?;
                        acc[0] += r.objective;
                        acc[1] += t.elapsed().as_secs_f64();
                        acc[2] += r.ewt;
                        acc[3] += r.eot;
                        acc[4] += r.eit;
                        runs += 1;
                    }
                }
                let m = |x: f64| x / runs as f64;
                cells.push(SweepCell {
                    weights: *w,
                    nurses,
                    chairs,
                    runs,
                    mean_objective: m(acc[0]),
                    mean_cpu_s: m(acc[1]),
                    mean_ewt: m(acc[2]),
                    mean_eot: m(acc[3]),
                    mean_eit: m(acc[4]),
                });
            }
        }
    }
    Ok(cells)
}

pub fn sweep_csv(cells: &[SweepCell]) -> String {
    let mut out = String::from("lambda_wait,lambda_overtime,lambda_idle,nurses,chairs,runs,objective,cpu_s,ewt,eot,eit\n");
    for c in cells {
        let _ = writeln!(
            out,
            "{:.6},{:.6},{:.6},{},{},{},{:.4},{:.3},{:.4},{:.4},{:.4}",
            c.weights.lambda_wait,
            c.weights.lambda_overtime,
            c.weights.lambda_idle,
            c.nurses,
            c.chairs,
            c.runs,
            c.mean_objective,
            c.mean_cpu_s,
            c.mean_ewt,
            c.mean_eot,
            c.mean_eit
        );
    }
    out
}

/// One row of a gap table: a method and its percent gaps per instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub method: String,
    pub objectives: Vec<f64>,
    pub gaps: Vec<f64>,
    pub mean_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareTable {
    pub instances: Vec<String>,
    pub lpha_objectives: Vec<f64>,
    pub rows: Vec<GapRow>,
}

impl CompareTable {
    pub fn row(&self, method: &str) -> Option<&GapRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,mean_gap");
        for l in &self.instances {
            let _ = write!(out, ",{l}");
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{},{:.3}", r.method, r.mean_gap);
            for g in &r.gaps {
                let _ = write!(out, ",{g:.3}");
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareSpec {
    pub rules: Vec<SequencingRule>,
    pub levels: Vec<f64>,
    pub opt: bool,
    pub budget: OptBudget,
}

impl Default for CompareSpec {
    fn default() -> Self {
        CompareSpec { rules: SequencingRule::ALL.to_vec(), levels: default_hedging_levels(), opt: true, budget: OptBudget::default() }
    }
}

/// Percent gap (heuristic − LPHA) / LPHA × 100.
pub fn percent_gap(heuristic: f64, lpha: f64) -> f64 {
    (heuristic - lpha) / lpha * 100.0
}

/// Gap table of hedging heuristics (rule × level) and their `-opt`
/// variants against LPHA. `lpha` holds precomputed LPHA objectives; when
/// absent LPHA is run here.
pub fn cmd_compare(
    instances: &[Instance],
    w: &ObjectiveWeights,
    cfg: &LphaConfig,
    spec: &CompareSpec,
    lpha: Option<&[f64]>,
) -> Result<CompareTable, AnalysisError> {
    if instances.is_empty() {
        return Err(AnalysisError::NoInstances);
    }
    let ev = EvaluatorConfig::with_weights(*w);
    let lpha_objectives: Vec<f64> = match lpha {
        Some(v) => v.to_vec(),
        None => instances.iter().map(|i| solve_or_incumbent(i, w, cfg).map(|r| r.1.objective)).collect::<Result<_, _>>()?,
    };
    let mut rows: Vec<GapRow> = Vec::new();
    let push = |rows: &mut Vec<GapRow>, method: String, objective: f64, k: usize| {
        if let Some(r) = rows.iter_mut().find(|r| r.method == method) {
            r.objectives.push(objective);
            r.gaps.push(percent_gap(objective, lpha_objectives[k]));
        } else {
            rows.push(GapRow { method, objectives: vec![objective], gaps: vec![percent_gap(objective, lpha_objectives[k])], mean_gap: 0.0 });
        }
    };
    for (k, inst) in instances.iter().enumerate() {
        push(&mut rows, "LPHA".into(), lpha_objectives[k], k);
        for &rule in &spec.rules {
            let mut best: Option<(f64, FirstStageSchedule)> = None;
            let mut sum = 0.0;
            for &level in &spec.levels {
                let s = job_hedging_schedule(inst, rule, &HedgingConfig::new(level)?);
                let e = expected_cost(&s, inst, w, &ev)?.objective;
                sum += e;
                push(&mut rows, format!("{rule}-{:.0}", level * 100.0), e, k);
                if best.as_ref().is_none_or(|b| e < b.0) {
                    best = Some((e, s));
                }
            }
            if !spec.levels.is_empty() {
                push(&mut rows, format!("{rule}-avg"), sum / spec.levels.len() as f64, k);
            }
            if spec.opt {
                let seq = sequence_patients(inst, rule);
                let extra: Vec<Vec<_>> = best.into_iter().map(|b| b.1.appointment).collect();
                let o = fixed_sequence_opt(inst, w, &seq, &spec.budget, &extra)?;
                push(&mut rows, format!("{rule}-opt"), expected_cost(&o, inst, w, &ev)?.objective, k);
            }
        }
    }
    for r in &mut rows {
        r.mean_gap = r.gaps.iter().sum::<f64>() / r.gaps.len() as f64;
    }
    Ok(CompareTable { instances: instances.iter().map(|i| i.label.clone()).collect(), lpha_objectives, rows })
}

/// One row per patient followed by the scenario totals.
pub fn outcome_csv(schedule: &FirstStageSchedule, outcome: &SecondStageOutcome) -> String {
    let mut out = String::from("id,appointment,wait,start,discharge,nurse,chair\n");
    for &p in &schedule.sequence {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            p,
            schedule.appointment[p],
            outcome.wait[p],
            outcome.start[p],
            outcome.discharge[p],
            outcome.nurse_of[p],
            outcome.chair_of[p]
        );
    }
    let _ = writeln!(out, "total_wait,{}", outcome.total_wait());
    let _ = writeln!(out, "total_overtime,{}", outcome.total_overtime());
    let _ = writeln!(out, "total_idle,{}", outcome.total_idle());
    let _ = writeln!(out, "objective,{:.4}", outcome.objective);
    out
}

const PX_PER_MIN: f64 = 2.0;
const ROW_H: f64 = 28.0;
const LEFT: f64 = 80.0;
const TOP: f64 = 20.0;

fn patient_color(p: usize) -> String {
    format!("hsl({},55%,60%)", (p * 47) % 360)
}

/// Chair and nurse timelines of one scenario. Chair rows show treatment
/// bars, nurse rows show pre-medications and, in gray, the time a nurse
/// keeps observing her patients' infusions. Vertical rules mark every hour
/// and the shift end.
pub fn gantt_svg(schedule: &FirstStageSchedule, scenario: &Scenario, inst: &Instance, outcome: &SecondStageOutcome) -> String {
    let end = outcome.discharge.iter().copied().max().unwrap_or(0).max(inst.shift_length);
    let rows = inst.num_chairs + inst.num_nurses;
    let width = LEFT + end as f64 * PX_PER_MIN + 20.0;
    let height = TOP + rows as f64 * ROW_H + 30.0;
    let x = |t: i64| LEFT + t as f64 * PX_PER_MIN;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="11">"#);
    for r in 0..rows {
        let label = if r < inst.num_chairs { format!("Chair {}", r + 1) } else { format!("Nurse {}", r - inst.num_chairs + 1) };
        let y = TOP + r as f64 * ROW_H;
        let _ = writeln!(s, r#"<text class="row-label" x="4" y="{:.1}">{label}</text>"#, y + ROW_H * 0.65);
    }
    for &p in &schedule.sequence {
        let (st, d) = (outcome.start[p], outcome.discharge[p]);
        let color = patient_color(p);
        let y = TOP + outcome.chair_of[p] as f64 * ROW_H + 3.0;
        let _ = writeln!(
            s,
            r#"<rect class="chair-bar" x="{:.1}" y="{y:.1}" width="{:.1}" height="{:.1}" fill="{color}" stroke="black"/>"#,
            x(st),
            (d - st) as f64 * PX_PER_MIN,
            ROW_H - 6.0
        );
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">P{}</text>"#, x(st) + 3.0, y + ROW_H * 0.55, p + 1);
        let yn = TOP + (inst.num_chairs + outcome.nurse_of[p]) as f64 * ROW_H + 3.0;
        let pre_end = st + scenario.premed[p];
        let _ = writeln!(
            s,
            r#"<rect class="proctor-bar" x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="gray" fill-opacity="0.5"/>"#,
            x(pre_end),
            yn + 6.0,
            (d - pre_end) as f64 * PX_PER_MIN,
            ROW_H - 18.0
        );
        let _ = writeln!(
            s,
            r#"<rect class="premed-bar" x="{:.1}" y="{yn:.1}" width="{:.1}" height="{:.1}" fill="{color}" stroke="black"/>"#,
            x(st),
            scenario.premed[p] as f64 * PX_PER_MIN,
            ROW_H - 6.0
        );
    }
    let bottom = TOP + rows as f64 * ROW_H;
    let mut t = 0;
    while t <= end {
        let _ = writeln!(s, r#"<line class="hour-rule" x1="{0:.1}" y1="{TOP}" x2="{0:.1}" y2="{bottom:.1}" stroke="gray" stroke-dasharray="2,3"/>"#, x(t));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{t}</text>"#, x(t) - 6.0, bottom + 14.0);
        t += 60;
    }
    let h = inst.shift_length;
    let _ = writeln!(s, r#"<line class="shift-rule" data-minute="{h}" x1="{0:.1}" y1="{TOP}" x2="{0:.1}" y2="{bottom:.1}" stroke="red" stroke-width="2"/>"#, x(h));
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" fill="red">H={h}</text>"#, x(h) + 3.0, bottom + 26.0);
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_vss_example() {
        let v = relative_vss(58.56, 54.34);
        assert!((v - 7.7).abs() < 0.1, "{v}");
    }

    #[test]
    fn presets_are_normalized() {
        let p = lambda_presets();
        assert_eq!(p.len(), 12);
        assert!(p.iter().all(|w| w.is_normalized()));
        assert_eq!(vss_weights().len(), 5);
    }

    #[test]
    fn empty_sweep_is_an_error() {
        let spec = SweepSpec { lambda_grid: vec![], nurse_range: vec![2], chair_range: vec![4], repetitions: 1 };
        assert!(matches!(cmd_sweep(&[], &spec, &LphaConfig::default()), Err(AnalysisError::EmptyGrid)));
        let spec = SweepSpec { lambda_grid: vec![ObjectiveWeights::default()], nurse_range: vec![], chair_range: vec![4], repetitions: 1 };
        assert!(matches!(cmd_sweep(&[], &spec, &LphaConfig::default()), Err(AnalysisError::EmptyGrid)));
    }

    #[test]
    fn no_uncertainty_means_zero_vss() {
        let pair = (vec![10, 15, 20], vec![100, 60, 150]);
        let inst = Instance::from_durations("t", &[pair.clone(), pair], 2, 2, 240, 180).unwrap();
        let w = ObjectiveWeights::default();
        let r = cmd_vss(&inst, &w, &LphaConfig::default()).unwrap();
        assert!(r.relative_vss.abs() < 1e-9, "{r:?}");
    }

    fn one_patient() -> (Instance, FirstStageSchedule, SecondStageOutcome) {
        let inst = Instance::from_durations("t", &[(vec![10], vec![20])], 1, 1, 240, 180).unwrap();
        let s = FirstStageSchedule::new(vec![0], vec![0]);
        let out = crate::evaluate(&s, &inst.scenarios[0], &inst, &EvaluatorConfig::default()).unwrap();
        (inst, s, out)
    }

    #[test]
    fn single_patient_gantt() {
        let (inst, s, out) = one_patient();
        let svg = gantt_svg(&s, &inst.scenarios[0], &inst, &out);
        assert_eq!(svg.matches("class=\"chair-bar\"").count(), 1);
        assert_eq!(svg.matches("class=\"premed-bar\"").count(), 1);
        assert!(svg.contains("data-minute=\"240\""));
        assert_eq!(svg.matches("class=\"hour-rule\"").count(), 5);
    }

    #[test]
    fn outcome_csv_has_row_per_patient_and_total() {
        let (_, s, out) = one_patient();
        let csv = outcome_csv(&s, &out);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 6);
        assert_eq!(lines[1], "0,0,0,0,30,0,0");
        assert_eq!(lines[2], "total_wait,0");
    }

    #[test]
    fn gap_arithmetic() {
        assert_eq!(percent_gap(110.0, 100.0), 10.0);
        assert_eq!(percent_gap(100.0, 100.0), 0.0);
    }
}

//! Domain types shared by every solver: instances, scenarios, first-stage
//! schedules, second-stage outcomes and the weighted objective.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

use crate::evaluator::{self, EvalError, EvaluatorConfig};

/// Integer minutes. Appointment, start and discharge times are all integral.
pub type Minutes = i64;

pub const DEFAULT_SHIFT_LENGTH: Minutes = 240;
pub const DEFAULT_OVERTIME_LIMIT: Minutes = 180;

const PROBABILITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("instance has no patients")]
    NoPatients,
    #[error("instance has no scenarios")]
    NoScenarios,
    #[error("patient ids must be 0..n in order; position {position} holds id {id}")]
    NonContiguousIds { position: usize, id: usize },
    #[error("patient {id} has class {class_id}, expected 1..=4")]
    BadClass { id: usize, class_id: u8 },
    #[error("scenario {scenario} has {found} durations, expected {expected}")]
    ScenarioLength { scenario: usize, expected: usize, found: usize },
    #[error("scenario {scenario}, patient {patient}: pre-medication {value} is negative")]
    NegativePremed { scenario: usize, patient: usize, value: Minutes },
    #[error("scenario {scenario}, patient {patient}: infusion {value} must be at least 1")]
    ShortInfusion { scenario: usize, patient: usize, value: Minutes },
    #[error("scenario {scenario} has probability {value}, expected a value in (0, 1]")]
    BadProbability { scenario: usize, value: f64 },
    #[error("scenario probabilities sum to {0}, expected 1")]
    ProbabilitySum(f64),
    #[error("need at least one nurse and one chair (got {nurses} nurses, {chairs} chairs)")]
    NoResources { nurses: usize, chairs: usize },
    #[error("shift length must be positive, got {0}")]
    ShiftLength(Minutes),
    #[error("overtime limit must be non-negative, got {0}")]
    OvertimeLimit(Minutes),
    #[error("big-M {big_m} is below the safe minimum {minimum}")]
    BigMTooSmall { big_m: Minutes, minimum: Minutes },
    #[error("objective weights must be finite, non-negative and not all zero")]
    BadWeights,
    #[error("cannot parse weights from {0:?}; expected three comma-separated numbers")]
    WeightsSyntax(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Patient {
    pub id: usize,
    pub class_id: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

impl Patient {
    pub fn new(id: usize, class_id: u8) -> Self {
        Patient { id, class_id, notes: None }
    }
}

/// One realization of every patient's pre-medication and infusion duration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub probability: f64,
    pub premed: Vec<Minutes>,
    pub infusion: Vec<Minutes>,
}

impl Scenario {
    pub fn new(probability: f64, premed: Vec<Minutes>, infusion: Vec<Minutes>) -> Self {
        Scenario { probability, premed, infusion }
    }

    /// Pre-medication plus infusion for one patient.
    #[inline]
    pub fn treatment(&self, patient: usize) -> Minutes {
        self.premed[patient] + self.infusion[patient]
    }

    pub fn total_treatment(&self) -> Minutes {
        self.premed.iter().sum::<Minutes>() + self.infusion.iter().sum::<Minutes>()
    }

    pub fn len(&self) -> usize {
        self.premed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.premed.is_empty()
    }
}

/// On-disk shape of an instance. `big_m` is derived, never stored.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct InstanceFile {
    label: String,
    num_nurses: usize,
    num_chairs: usize,
    shift_length: Minutes,
    overtime_limit: Minutes,
    patients: Vec<Patient>,
    scenarios: Vec<Scenario>,
}

/// A daily scheduling problem: patients, identical nurses and chairs, the
/// shift parameters and a finite scenario set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InstanceFile", into = "InstanceFile")]
pub struct Instance {
    pub label: String,
    pub patients: Vec<Patient>,
    pub scenarios: Vec<Scenario>,
    pub num_nurses: usize,
    pub num_chairs: usize,
    pub shift_length: Minutes,
    pub overtime_limit: Minutes,
    pub big_m: Minutes,
}

impl TryFrom<InstanceFile> for Instance {
    type Error = ModelError;

    fn try_from(f: InstanceFile) -> Result<Self, Self::Error> {
        Instance::new(
            f.label,
            f.patients,
            f.scenarios,
            f.num_nurses,
            f.num_chairs,
            f.shift_length,
            f.overtime_limit,
        )
    }
}

impl From<Instance> for InstanceFile {
    fn from(i: Instance) -> Self {
        InstanceFile {
            label: i.label,
            num_nurses: i.num_nurses,
            num_chairs: i.num_chairs,
            shift_length: i.shift_length,
            overtime_limit: i.overtime_limit,
            patients: i.patients,
            scenarios: i.scenarios,
        }
    }
}

impl Instance {
    /// Builds and validates an instance; `big_m` is set to its safe default.
    pub fn new(
        label: impl Into<String>,
        patients: Vec<Patient>,
        scenarios: Vec<Scenario>,
        num_nurses: usize,
        num_chairs: usize,
        shift_length: Minutes,
        overtime_limit: Minutes,
    ) -> Result<Self, ModelError> {
        let mut inst = Instance {
            label: label.into(),
            patients,
            scenarios,
            num_nurses,
            num_chairs,
            shift_length,
            overtime_limit,
            big_m: 0,
        };
        inst.big_m = inst.default_big_m();
        inst.validate()?;
        Ok(inst)
    }

    /// Instance with a unit-probability scenario list built from duration
    /// pairs; handy for tests and small examples.
    pub fn from_durations(
        label: impl Into<String>,
        scenarios: &[(Vec<Minutes>, Vec<Minutes>)],
        num_nurses: usize,
        num_chairs: usize,
        shift_length: Minutes,
        overtime_limit: Minutes,
    ) -> Result<Self, ModelError> {
        let n = scenarios.first().map(|s| s.0.len()).unwrap_or(0);
        let p = 1.0 / scenarios.len().max(1) as f64;
        let patients = (0..n).map(|i| Patient::new(i, 1)).collect();
        let scenarios = scenarios
            .iter()
            .map(|(s, t)| Scenario::new(p, s.clone(), t.clone()))
            .collect();
        Instance::new(
            label,
            patients,
            scenarios,
            num_nurses,
            num_chairs,
            shift_length,
            overtime_limit,
        )
    }

    #[inline]
    pub fn num_patients(&self) -> usize {
        self.patients.len()
    }

    /// Latest admissible appointment time, H + L.
    #[inline]
    pub fn horizon(&self) -> Minutes {
        self.shift_length + self.overtime_limit
    }

    /// H + L + sum over patients of the largest scenario treatment time.
    pub fn default_big_m(&self) -> Minutes {
        let worst: Minutes = (0..self.patients.len())
            .map(|i| {
                self.scenarios
                    .iter()
                    .filter(|s| i < s.len() && i < s.infusion.len())
                    .map(|s| s.treatment(i))
                    .max()
                    .unwrap_or(0)
            })
            .sum();
        self.shift_length + self.overtime_limit.max(0) + worst
    }

    fn min_safe_big_m(&self) -> Minutes {
        let worst_scenario = self
            .scenarios
            .iter()
            .map(Scenario::total_treatment)
            .max()
            .unwrap_or(0);
        self.shift_length + self.overtime_limit + worst_scenario
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let n = self.patients.len();
        if n == 0 {
            return Err(ModelError::NoPatients);
        }
        if self.scenarios.is_empty() {
            return Err(ModelError::NoScenarios);
        }
        for (position, p) in self.patients.iter().enumerate() {
            if p.id != position {
                return Err(ModelError::NonContiguousIds { position, id: p.id });
            }
            if !(1..=4).contains(&p.class_id) {
                return Err(ModelError::BadClass { id: p.id, class_id: p.class_id });
            }
        }
        if self.num_nurses == 0 || self.num_chairs == 0 {
            return Err(ModelError::NoResources {
                nurses: self.num_nurses,
                chairs: self.num_chairs,
            });
        }
        if self.shift_length <= 0 {
            return Err(ModelError::ShiftLength(self.shift_length));
        }
        if self.overtime_limit < 0 {
            return Err(ModelError::OvertimeLimit(self.overtime_limit));
        }
        let mut total_p = 0.0;
        for (k, s) in self.scenarios.iter().enumerate() {
            for found in [s.premed.len(), s.infusion.len()] {
                if found != n {
                    return Err(ModelError::ScenarioLength { scenario: k, expected: n, found });
                }
            }
            if !(s.probability > 0.0 && s.probability <= 1.0) {
                return Err(ModelError::BadProbability { scenario: k, value: s.probability });
            }
            total_p += s.probability;
            for i in 0..n {
                if s.premed[i] < 0 {
                    return Err(ModelError::NegativePremed { scenario: k, patient: i, value: s.premed[i] });
                }
                if s.infusion[i] < 1 {
                    return Err(ModelError::ShortInfusion { scenario: k, patient: i, value: s.infusion[i] });
                }
            }
        }
        if (total_p - 1.0).abs() > PROBABILITY_TOLERANCE {
            return Err(ModelError::ProbabilitySum(total_p));
        }
        let minimum = self.min_safe_big_m();
        if self.big_m < minimum {
            return Err(ModelError::BigMTooSmall { big_m: self.big_m, minimum });
        }
        Ok(())
    }

    /// Non-fatal remarks about the instance.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.num_nurses > self.num_chairs {
            out.push(format!(
                "{} nurses for {} chairs: more nurses than chairs is unusual",
                self.num_nurses, self.num_chairs
            ));
        }
        out
    }

    /// Copy of this instance with different resource counts.
    pub fn with_resources(&self, num_nurses: usize, num_chairs: usize) -> Result<Self, ModelError> {
        let mut inst = self.clone();
        inst.num_nurses = num_nurses;
        inst.num_chairs = num_chairs;
        inst.validate()?;
        Ok(inst)
    }

    /// Copy restricted to the given scenario, renormalized to probability 1.
    pub fn single_scenario(&self, scenario: usize) -> Self {
        let mut inst = self.clone();
        let mut s = self.scenarios[scenario].clone();
        s.probability = 1.0;
        inst.scenarios = vec![s];
        inst
    }

    /// Per-patient scenario-mean durations, rounded to the nearest minute.
    pub fn mean_scenario(&self) -> Scenario {
        let n = self.num_patients();
        let mean = |pick: fn(&Scenario, usize) -> Minutes, i: usize| -> Minutes {
            let m: f64 = self
                .scenarios
                .iter()
                .map(|s| s.probability * pick(s, i) as f64)
                .sum();
            m.round() as Minutes
        };
        let premed = (0..n).map(|i| mean(|s, i| s.premed[i], i)).collect();
        let infusion = (0..n).map(|i| mean(|s, i| s.infusion[i], i).max(1)).collect();
        Scenario::new(1.0, premed, infusion)
    }
}

/// Trade-off weights for waiting, overtime and idle time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveWeights {
    pub lambda_wait: f64,
    pub lambda_overtime: f64,
    pub lambda_idle: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        ObjectiveWeights { lambda_wait: 1.0, lambda_overtime: 1.0, lambda_idle: 1.0 }
    }
}

impl ObjectiveWeights {
    pub fn new(wait: f64, overtime: f64, idle: f64) -> Result<Self, ModelError> {
        let w = ObjectiveWeights { lambda_wait: wait, lambda_overtime: overtime, lambda_idle: idle };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let parts = [self.lambda_wait, self.lambda_overtime, self.lambda_idle];
        if parts.iter().any(|x| !x.is_finite() || *x < 0.0) || parts.iter().all(|x| *x == 0.0) {
            return Err(ModelError::BadWeights);
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.lambda_wait + self.lambda_overtime + self.lambda_idle
    }

    /// Scaled so the three weights sum to one.
    pub fn normalized(&self) -> Self {
        let s = self.sum();
        ObjectiveWeights {
            lambda_wait: self.lambda_wait / s,
            lambda_overtime: self.lambda_overtime / s,
            lambda_idle: self.lambda_idle / s,
        }
    }

    pub fn is_normalized(&self) -> bool {
        (self.sum() - 1.0).abs() < 1e-12
    }

    #[inline]
    pub fn combine(&self, wait: f64, overtime: f64, idle: f64) -> f64 {
        self.lambda_wait * wait + self.lambda_overtime * overtime + self.lambda_idle * idle
    }
}

impl fmt::Display for ObjectiveWeights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.lambda_wait, self.lambda_overtime, self.lambda_idle)
    }
}

impl FromStr for ObjectiveWeights {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let trimmed = s.trim().trim_start_matches('(').trim_end_matches(')');
        let parts: Vec<f64> = trimmed
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| ModelError::WeightsSyntax(s.to_string()))?;
        match parts.as_slice() {
            [a, b, c] => ObjectiveWeights::new(*a, *b, *c),
            _ => Err(ModelError::WeightsSyntax(s.to_string())),
        }
    }
}

/// The first-stage decision: a patient sequence plus appointment times
/// (indexed by patient id).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FirstStageSchedule {
    pub sequence: Vec<usize>,
    pub appointment: Vec<Minutes>,
}

impl FirstStageSchedule {
    pub fn new(sequence: Vec<usize>, appointment: Vec<Minutes>) -> Self {
        FirstStageSchedule { sequence, appointment }
    }

    /// Sequence implied by appointment times, ties broken by patient id.
    pub fn from_appointments(appointment: Vec<Minutes>) -> Self {
        let mut sequence: Vec<usize> = (0..appointment.len()).collect();
        sequence.sort_by_key(|&i| (appointment[i], i));
        FirstStageSchedule { sequence, appointment }
    }

    pub fn len(&self) -> usize {
        self.sequence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequence.is_empty()
    }

    /// `b[i][j]` is true iff patient `i` precedes patient `j`.
    pub fn precedence(&self) -> Vec<Vec<bool>> {
        let n = self.sequence.len();
        let mut pos = vec![0usize; n];
        for (k, &p) in self.sequence.iter().enumerate() {
            pos[p] = k;
        }
        (0..n)
            .map(|i| (0..n).map(|j| i != j && pos[i] < pos[j]).collect())
            .collect()
    }

    /// Appointment times listed in sequence order.
    pub fn appointments_in_order(&self) -> Vec<Minutes> {
        self.sequence.iter().map(|&p| self.appointment[p]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    LengthMismatch { expected: usize, sequence: usize, appointment: usize },
    NotPermutation,
    PrecedenceViolation { earlier: usize, later: usize },
    RangeViolation { patient: usize, value: Minutes },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::LengthMismatch { expected, sequence, appointment } => write!(
                f,
                "expected {expected} patients, sequence has {sequence}, appointments {appointment}"
            ),
            Violation::NotPermutation => write!(f, "sequence is not a permutation of patient ids"),
            Violation::PrecedenceViolation { earlier, later } => write!(
                f,
                "patient {earlier} precedes {later} but has a later appointment"
            ),
            Violation::RangeViolation { patient, value } => {
                write!(f, "patient {patient} appointment {value} outside [0, H+L]")
            }
        }
    }
}

/// Structural violations of a schedule against an instance.
pub fn validate(schedule: &FirstStageSchedule, inst: &Instance) -> Vec<Violation> {
    let n = inst.num_patients();
    if schedule.sequence.len() != n || schedule.appointment.len() != n {
        return vec![Violation::LengthMismatch {
            expected: n,
            sequence: schedule.sequence.len(),
            appointment: schedule.appointment.len(),
        }];
    }
    let mut out = Vec::new();
    let mut seen = vec![false; n];
    for &p in &schedule.sequence {
        if p >= n || seen[p] {
            return vec![Violation::NotPermutation];
        }
        seen[p] = true;
    }
    for w in schedule.sequence.windows(2) {
        if schedule.appointment[w[0]] > schedule.appointment[w[1]] {
            out.push(Violation::PrecedenceViolation { earlier: w[0], later: w[1] });
        }
    }
    for (p, &a) in schedule.appointment.iter().enumerate() {
        if a < 0 || a > inst.horizon() {
            out.push(Violation::RangeViolation { patient: p, value: a });
        }
    }
    out
}

/// Second-stage decisions and measures for one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondStageOutcome {
    pub start: Vec<Minutes>,
    pub wait: Vec<Minutes>,
    pub discharge: Vec<Minutes>,
    pub nurse_of: Vec<usize>,
    pub chair_of: Vec<usize>,
    /// Per-nurse overtime, sorted non-increasing.
    pub overtime: Vec<Minutes>,
    pub idle: Vec<Minutes>,
    pub objective: f64,
    pub feasible: bool,
}

impl SecondStageOutcome {
    pub fn total_wait(&self) -> Minutes {
        self.wait.iter().sum()
    }

    pub fn total_overtime(&self) -> Minutes {
        self.overtime.iter().sum()
    }

    pub fn total_idle(&self) -> Minutes {
        self.idle.iter().sum()
    }
}

/// λ1·Σwait + λ2·Σovertime + λ3·Σidle.
pub fn objective_value(outcome: &SecondStageOutcome, w: &ObjectiveWeights) -> f64 {
    w.combine(
        outcome.total_wait() as f64,
        outcome.total_overtime() as f64,
        outcome.total_idle() as f64,
    )
}

/// Probability-weighted objective together with its three expected totals.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ExpectedCost {
    pub objective: f64,
    /// Expected total waiting time (EWT).
    pub wait: f64,
    /// Expected total nurse overtime (EOT).
    pub overtime: f64,
    /// Expected total chair idle time (EIT).
    pub idle: f64,
    /// Probability mass of scenarios exceeding the overtime limit.
    pub infeasible_mass: f64,
}

/// Expected recourse cost of a schedule over the whole scenario set.
pub fn expected_objective(
    schedule: &FirstStageSchedule,
    inst: &Instance,
    w: &ObjectiveWeights,
    cfg: &EvaluatorConfig,
) -> Result<f64, EvalError> {
    expected_cost(schedule, inst, w, cfg).map(|c| c.objective)
}

pub fn expected_cost(
    schedule: &FirstStageSchedule,
    inst: &Instance,
    w: &ObjectiveWeights,
    cfg: &EvaluatorConfig,
) -> Result<ExpectedCost, EvalError> {
    let mut acc = ExpectedCost::default();
    for scenario in &inst.scenarios {
        let out = evaluator::evaluate(schedule, scenario, inst, cfg)?;
        let p = scenario.probability;
        acc.wait += p * out.total_wait() as f64;
        acc.overtime += p * out.total_overtime() as f64;
        acc.idle += p * out.total_idle() as f64;
        if !out.feasible {
            acc.infeasible_mass += p;
        }
    }
    acc.objective = w.combine(acc.wait, acc.overtime, acc.idle);
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(wait: Vec<Minutes>, overtime: Vec<Minutes>, idle: Vec<Minutes>) -> SecondStageOutcome {
        let n = wait.len();
        SecondStageOutcome {
            start: vec![0; n],
            wait,
            discharge: vec![0; n],
            nurse_of: vec![0; n],
            chair_of: vec![0; n],
            overtime,
            idle,
            objective: 0.0,
            feasible: true,
        }
    }

    #[test]
    fn objective_single_term() {
        let o = outcome(vec![0], vec![0, 0], vec![210]);
        assert_eq!(objective_value(&o, &ObjectiveWeights::default()), 210.0);
    }

    #[test]
    fn objective_zero_outcome() {
        let o = outcome(vec![0, 0], vec![0], vec![0, 0]);
        let w = ObjectiveWeights::new(0.3, 0.3, 0.4).unwrap();
        assert_eq!(objective_value(&o, &w), 0.0);
    }

    #[test]
    fn weights_parse_and_normalize() {
        let w: ObjectiveWeights = "1, 10, 10".parse().unwrap();
        let n = w.normalized();
        assert!((n.sum() - 1.0).abs() < 1e-12);
        assert!((n.lambda_wait - 1.0 / 21.0).abs() < 1e-12);
        assert!("1,2".parse::<ObjectiveWeights>().is_err());
        assert!(ObjectiveWeights::new(0.0, 0.0, 0.0).is_err());
        assert!(ObjectiveWeights::new(-1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn precedence_matrix_is_antisymmetric() {
        let s = FirstStageSchedule::new(vec![2, 0, 3, 1], vec![5, 20, 0, 7]);
        let b = s.precedence();
        for i in 0..4 {
            for j in (i + 1)..4 {
                assert_eq!(b[i][j] as u8 + b[j][i] as u8, 1);
            }
        }
        assert!(b[2][0] && b[0][3] && b[3][1]);
    }

    fn toy() -> Instance {
        Instance::from_durations("t_2_1", &[(vec![10, 5], vec![20, 30])], 1, 1, 240, 180).unwrap()
    }

    #[test]
    fn validate_detects_violations() {
        let inst = toy();
        assert!(validate(&FirstStageSchedule::new(vec![0, 1], vec![0, 10]), &inst).is_empty());
        assert_eq!(
            validate(&FirstStageSchedule::new(vec![0, 1], vec![10, 0]), &inst),
            vec![Violation::PrecedenceViolation { earlier: 0, later: 1 }]
        );
        assert_eq!(
            validate(&FirstStageSchedule::new(vec![0, 1], vec![0, 500]), &inst),
            vec![Violation::RangeViolation { patient: 1, value: 500 }]
        );
        assert_eq!(
            validate(&FirstStageSchedule::new(vec![0, 0], vec![0, 0]), &inst),
            vec![Violation::NotPermutation]
        );
    }

    #[test]
    fn instance_validation_errors() {
        let bad = Instance::from_durations("x", &[(vec![-1], vec![20])], 1, 1, 240, 180);
        assert!(matches!(bad, Err(ModelError::NegativePremed { .. })));
        let bad = Instance::from_durations("x", &[(vec![1], vec![0])], 1, 1, 240, 180);
        assert!(matches!(bad, Err(ModelError::ShortInfusion { .. })));
        let bad = Instance::from_durations("x", &[(vec![1], vec![5])], 0, 1, 240, 180);
        assert!(matches!(bad, Err(ModelError::NoResources { .. })));
        let mut inst = toy();
        inst.scenarios[0].probability = 0.5;
        assert!(matches!(inst.validate(), Err(ModelError::ProbabilitySum(_))));
    }

    #[test]
    fn default_big_m_is_safe() {
        let inst = toy();
        assert_eq!(inst.big_m, 240 + 180 + 30 + 35);
        assert!(inst.big_m >= inst.min_safe_big_m());
    }

    #[test]
    fn instance_json_uses_fixed_keys() {
        let inst = toy();
        let json = serde_json::to_value(&inst).unwrap();
        let mut keys: Vec<_> = json.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(
            keys,
            ["label", "num_chairs", "num_nurses", "overtime_limit", "patients", "scenarios", "shift_length"]
        );
        let back: Instance = serde_json::from_value(json).unwrap();
        assert_eq!(back, inst);
    }

    #[test]
    fn mean_scenario_rounds() {
        let inst = Instance::from_durations(
            "m",
            &[(vec![10, 0], vec![20, 1]), (vec![13, 0], vec![21, 2])],
            1,
            1,
            240,
            180,
        )
        .unwrap();
        let m = inst.mean_scenario();
        assert_eq!(m.premed, vec![12, 0]);
        assert_eq!(m.infusion, vec![21, 2]);
    }
}

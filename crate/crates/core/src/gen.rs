//! Instance generation from the four-class duration model, plus the
//! goodness-of-fit and forecast-error utilities used to check it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::evaluator::Simulator;
use crate::model::{Instance, Minutes, ModelError, Patient, Scenario};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenError {
    #[error("class probabilities sum to {0}, expected 1")]
    ProbabilitySum(f64),
    #[error("class {0} has an empty interval")]
    EmptyInterval(usize),
    #[error("generation spec needs positive patient, scenario, nurse and chair counts")]
    BadSpec,
    #[error("no class draw reached the overtime target within {0} retries")]
    GenerationExhausted(usize),
    #[error("need at least two bins with five expected samples each")]
    TooFewSamples,
    #[error("sample {0} lies outside [{1}, {2}]")]
    OutOfRange(Minutes, Minutes, Minutes),
    #[error("actual and predicted lengths differ")]
    LengthMismatch,
    #[error("actual value at index {0} is not positive")]
    ZeroActual(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DurationClass {
    pub probability: f64,
    pub premed: (Minutes, Minutes),
    pub infusion: (Minutes, Minutes),
}

impl DurationClass {
    pub fn mean_treatment(&self) -> f64 {
        (self.premed.0 + self.premed.1 + self.infusion.0 + self.infusion.1) as f64 / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassModel {
    pub classes: Vec<DurationClass>,
}

impl Default for ClassModel {
    /// Outpatient chemotherapy classes observed at the reference unit.
    fn default() -> Self {
        let c = |probability, premed, infusion| DurationClass { probability, premed, infusion };
        ClassModel {
            classes: vec![
                c(0.2696, (0, 14), (16, 44)),
                c(0.0785, (6, 35), (29, 80)),
                c(0.3333, (8, 26), (74, 132)),
                c(0.3186, (6, 27), (125, 217)),
            ],
        }
    }
}

impl ClassModel {
    pub fn validate(&self) -> Result<(), GenError> {
        let sum: f64 = self.classes.iter().map(|c| c.probability).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(GenError::ProbabilitySum(sum));
        }
        for (k, c) in self.classes.iter().enumerate() {
            if c.premed.0 > c.premed.1 || c.infusion.0 > c.infusion.1 || c.infusion.0 < 1 || c.premed.0 < 0 {
                return Err(GenError::EmptyInterval(k + 1));
            }
        }
        Ok(())
    }

    pub fn cumulative(&self) -> Vec<f64> {
        self.classes
            .iter()
            .scan(0.0, |acc, c| {
                *acc += c.probability;
                Some(*acc)
            })
            .collect()
    }

    /// Class (1-based) for a uniform draw `u` in [0, 1).
    pub fn class_for(&self, u: f64) -> u8 {
        let cum = self.cumulative();
        let k = cum.iter().position(|&c| u < c).unwrap_or(cum.len() - 1);
        (k + 1) as u8
    }

    pub fn class(&self, class_id: u8) -> &DurationClass {
        &self.classes[class_id as usize - 1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenSpec {
    /// Leading number of the `i_j_k` label.
    pub index: usize,
    pub num_patients: usize,
    pub num_scenarios: usize,
    pub num_nurses: usize,
    pub num_chairs: usize,
    pub shift_length: Minutes,
    pub overtime_limit: Minutes,
    pub seed: u64,
    /// Desired per-nurse overtime implied by mean durations.
    pub target_overtime: Option<Minutes>,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            index: 1,
            num_patients: 8,
            num_scenarios: 50,
            num_nurses: 2,
            num_chairs: 4,
            shift_length: crate::model::DEFAULT_SHIFT_LENGTH,
            overtime_limit: crate::model::DEFAULT_OVERTIME_LIMIT,
            seed: 0,
            target_overtime: None,
        }
    }
}

pub const TARGET_TOLERANCE: f64 = 30.0;
pub const MAX_RETRIES: usize = 1000;

impl GenSpec {
    pub fn label(&self) -> String {
        format!("{}_{}_{}", self.index, self.num_patients, self.num_scenarios)
    }
}

/// Per-nurse overtime of a zero-wait LPT day at class-mean durations.
pub fn implied_overtime(model: &ClassModel, classes: &[u8], spec: &GenSpec) -> f64 {
    let means: Vec<(Minutes, Minutes)> = classes
        .iter()
        .map(|&c| {
            let d = model.class(c);
            ((d.premed.0 + d.premed.1) / 2, (d.infusion.0 + d.infusion.1) / 2)
        })
        .collect();
    let mut seq: Vec<usize> = (0..classes.len()).collect();
    seq.sort_by_key(|&i| (std::cmp::Reverse(means[i].0 + means[i].1), i));
    let premed: Vec<Minutes> = means.iter().map(|m| m.0).collect();
    let infusion: Vec<Minutes> = means.iter().map(|m| m.1).collect();
    let mut sim = Simulator::with_shape(spec.num_nurses, spec.num_chairs, spec.shift_length, None);
    let zero = vec![0; classes.len()];
    let t = sim.run(&seq, &zero, &premed, &infusion, None);
    t.overtime as f64 / spec.num_nurses as f64
}

/// Draws durations for given patient classes, scenario by scenario.
fn draw_scenarios(model: &ClassModel, classes: &[u8], spec: &GenSpec, rng: &mut ChaCha8Rng) -> Vec<Scenario> {
    let p = 1.0 / spec.num_scenarios as f64;
    (0..spec.num_scenarios)
        .map(|_| {
            let mut premed = Vec::with_capacity(classes.len());
            let mut infusion = Vec::with_capacity(classes.len());
            for &c in classes {
                let d = model.class(c);
                premed.push(rng.gen_range(d.premed.0..=d.premed.1));
                infusion.push(rng.gen_range(d.infusion.0..=d.infusion.1));
            }
            Scenario::new(p, premed, infusion)
        })
        .collect()
}

fn check_spec(spec: &GenSpec) -> Result<(), GenError> {
    if spec.num_patients == 0 || spec.num_scenarios == 0 || spec.num_nurses == 0 || spec.num_chairs == 0 {
        return Err(GenError::BadSpec);
    }
    Ok(())
}

/// Random instance: classes by cumulative probability, then independent
/// discrete-uniform pre-medication and infusion times per scenario.
pub fn generate_instance(model: &ClassModel, spec: &GenSpec) -> Result<Instance, GenError> {
    model.validate()?;
    check_spec(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let draw = |rng: &mut ChaCha8Rng| -> Vec<u8> {
        (0..spec.num_patients).map(|_| model.class_for(rng.gen::<f64>())).collect()
    };
    let classes = match spec.target_overtime {
        None => draw(&mut rng),
        Some(target) => {
            let mut found = None;
            for _ in 0..MAX_RETRIES {
                let c = draw(&mut rng);
                if (implied_overtime(model, &c, spec) - target as f64).abs() <= TARGET_TOLERANCE {
                    found = Some(c);
                    break;
                }
            }
            found.ok_or(GenError::GenerationExhausted(MAX_RETRIES))?
        }
    };
    generate_with_classes(model, &classes, spec, &mut rng)
}

fn generate_with_classes(
    model: &ClassModel,
    classes: &[u8],
    spec: &GenSpec,
    rng: &mut ChaCha8Rng,
) -> Result<Instance, GenError> {
    let scenarios = draw_scenarios(model, classes, spec, rng);
    let patients = classes.iter().enumerate().map(|(i, &c)| Patient::new(i, c)).collect();
    Ok(Instance::new(
        spec.label(),
        patients,
        scenarios,
        spec.num_nurses,
        spec.num_chairs,
        spec.shift_length,
        spec.overtime_limit,
    )?)
}

/// Instance with a prescribed class composition (counts per class).
pub fn generate_with_composition(model: &ClassModel, counts: &[usize], spec: &GenSpec) -> Result<Instance, GenError> {
    model.validate()?;
    let classes: Vec<u8> = counts.iter().enumerate().flat_map(|(k, &n)| std::iter::repeat_n((k + 1) as u8, n)).collect();
    let spec = GenSpec { num_patients: classes.len(), ..spec.clone() };
    check_spec(&spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    generate_with_classes(model, &classes, &spec, &mut rng)
}

/// Class counts of the ten benchmark instances.
pub const FIXTURE_COMPOSITIONS: [[usize; 4]; 10] = [
    [2, 1, 1, 4],
    [1, 3, 0, 4],
    [1, 2, 1, 4],
    [2, 1, 2, 3],
    [1, 2, 1, 4],
    [1, 1, 3, 3],
    [1, 2, 2, 3],
    [1, 1, 3, 3],
    [1, 2, 1, 4],
    [2, 1, 1, 4],
];

pub const FIXTURE_SEED_BASE: u64 = 1000;

/// Ten 8-patient, 50-scenario instances with two nurses and four chairs.
pub fn fixture_instances() -> Vec<Instance> {
    let model = ClassModel::default();
    FIXTURE_COMPOSITIONS
        .iter()
        .enumerate()
        .map(|(k, counts)| {
            let spec = GenSpec { index: k + 1, seed: FIXTURE_SEED_BASE + k as u64 + 1, ..GenSpec::default() };
            generate_with_composition(&model, counts, &spec).expect("fixture specs are valid")
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareFit {
    pub statistic: f64,
    pub p_value: f64,
    pub degrees_of_freedom: usize,
    pub bins_used: usize,
    pub reject_at_95: bool,
}

/// Pearson test of integer samples against the discrete uniform law on
/// `[lo, hi]`. The range is cut into `bins` contiguous groups and adjacent
/// groups are merged until each expects at least five samples.
pub fn chi_square_uniform_fit(samples: &[Minutes], lo: Minutes, hi: Minutes, bins: usize) -> Result<ChiSquareFit, GenError> {
    if let Some(&x) = samples.iter().find(|&&x| x < lo || x > hi) {
        return Err(GenError::OutOfRange(x, lo, hi));
    }
    let width = (hi - lo + 1) as usize;
    let bins = bins.clamp(1, width);
    let total = samples.len() as f64;
    // value edges of each initial bin
    let edges: Vec<usize> = (0..=bins).map(|b| b * width / bins).collect();
    let mut counts = vec![0usize; width];
    for &x in samples {
        counts[(x - lo) as usize] += 1;
    }
    let mut groups: Vec<(f64, f64)> = Vec::new();
    let (mut obs, mut exp) = (0.0, 0.0);
    for b in 0..bins {
        obs += counts[edges[b]..edges[b + 1]].iter().sum::<usize>() as f64;
        exp += total * (edges[b + 1] - edges[b]) as f64 / width as f64;
        if exp >= 5.0 {
            groups.push((obs, exp));
            obs = 0.0;
            exp = 0.0;
        }
    }
    if exp > 0.0 {
        match groups.last_mut() {
            Some(g) => {
                g.0 += obs;
                g.1 += exp;
            }
            None => groups.push((obs, exp)),
        }
    }
    if groups.len() < 2 || groups.iter().any(|g| g.1 < 5.0) {
        return Err(GenError::TooFewSamples);
    }
    let statistic: f64 = groups.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let df = groups.len() - 1;
    let dist = ChiSquared::new(df as f64).expect("positive degrees of freedom");
    let p_value = (1.0 - dist.cdf(statistic)).clamp(0.0, 1.0);
    Ok(ChiSquareFit { statistic, p_value, degrees_of_freedom: df, bins_used: groups.len(), reject_at_95: p_value < 0.05 })
}

/// Mean absolute percentage error, in percent.
pub fn compute_mape(actual: &[f64], predicted: &[f64]) -> Result<f64, GenError> {
    if actual.len() != predicted.len() || actual.is_empty() {
        return Err(GenError::LengthMismatch);
    }
    if let Some(i) = actual.iter().position(|&a| !(a > 0.0)) {
        return Err(GenError::ZeroActual(i));
    }
    let sum: f64 = actual.iter().zip(predicted).map(|(a, p)| (a - p).abs() / a).sum();
    Ok(sum / actual.len() as f64 * 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cumulative_lookup() {
        let m = ClassModel::default();
        let cum = m.cumulative();
        for (c, e) in cum.iter().zip([0.2696, 0.3481, 0.6814, 1.0]) {
            assert!((c - e).abs() < 1e-12);
        }
        assert_eq!(m.class_for(0.30), 2);
        assert_eq!(m.class_for(0.0), 1);
        assert_eq!(m.class_for(0.9999), 4);
        assert_eq!(m.class_for(0.5), 3);
    }

    #[test]
    fn draws_stay_in_class_intervals() {
        let m = ClassModel::default();
        let spec = GenSpec { num_patients: 30, num_scenarios: 40, seed: 5, ..Default::default() };
        let inst = generate_instance(&m, &spec).unwrap();
        for s in &inst.scenarios {
            for (i, p) in inst.patients.iter().enumerate() {
                let d = m.class(p.class_id);
                assert!((d.premed.0..=d.premed.1).contains(&s.premed[i]));
                assert!((d.infusion.0..=d.infusion.1).contains(&s.infusion[i]));
            }
        }
        assert_eq!(inst.label, "1_30_40");
    }

    #[test]
    fn seeded_generation_is_byte_identical() {
        let m = ClassModel::default();
        let spec = GenSpec { seed: 42, ..Default::default() };
        let a = serde_json::to_string(&generate_instance(&m, &spec).unwrap()).unwrap();
        let b = serde_json::to_string(&generate_instance(&m, &spec).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn overtime_target_is_met_or_exhausted() {
        let m = ClassModel::default();
        let spec = GenSpec { seed: 9, target_overtime: Some(60), ..Default::default() };
        let inst = generate_instance(&m, &spec).unwrap();
        let classes: Vec<u8> = inst.patients.iter().map(|p| p.class_id).collect();
        assert!((implied_overtime(&m, &classes, &spec) - 60.0).abs() <= TARGET_TOLERANCE);
        let spec = GenSpec { num_patients: 1, target_overtime: Some(500), ..spec };
        assert_eq!(generate_instance(&m, &spec), Err(GenError::GenerationExhausted(MAX_RETRIES)));
    }

    #[test]
    fn invalid_models_are_rejected() {
        let mut m = ClassModel::default();
        m.classes[0].probability = 0.5;
        assert!(matches!(m.validate(), Err(GenError::ProbabilitySum(_))));
        let mut m = ClassModel::default();
        m.classes[2].premed = (9, 3);
        assert_eq!(m.validate(), Err(GenError::EmptyInterval(3)));
    }

    #[test]
    fn fixture_compositions() {
        let fx = fixture_instances();
        assert_eq!(fx.len(), 10);
        for (inst, counts) in fx.iter().zip(FIXTURE_COMPOSITIONS) {
            assert_eq!(inst.num_patients(), 8);
            assert_eq!(inst.scenarios.len(), 50);
            let mut got = [0usize; 4];
            for p in &inst.patients {
                got[p.class_id as usize - 1] += 1;
            }
            assert_eq!(got, counts);
        }
        assert_eq!(fx[0].label, "1_8_50");
        assert_eq!(FIXTURE_COMPOSITIONS[0], [2, 1, 1, 4]);
        assert_eq!(FIXTURE_COMPOSITIONS[1], [1, 3, 0, 4]);
    }

    #[test]
    fn exact_uniform_counts_give_zero_statistic() {
        let samples: Vec<Minutes> = (0..10).flat_map(|_| 16..=44).collect();
        let fit = chi_square_uniform_fit(&samples, 16, 44, 29).unwrap();
        assert_eq!(fit.statistic, 0.0);
        assert_eq!(fit.p_value, 1.0);
        assert!(!fit.reject_at_95);
    }

    #[test]
    fn constant_samples_are_rejected() {
        let samples = vec![20; 500];
        assert!(chi_square_uniform_fit(&samples, 16, 44, 10).unwrap().reject_at_95);
    }

    #[test]
    fn sparse_bins_are_merged() {
        let samples: Vec<Minutes> = (0..58).map(|k| 16 + k % 29).collect();
        let fit = chi_square_uniform_fit(&samples, 16, 44, 29).unwrap();
        assert!(fit.bins_used < 29);
        assert!(fit.bins_used >= 2);
        assert_eq!(chi_square_uniform_fit(&[16, 17], 16, 44, 5), Err(GenError::TooFewSamples));
        assert!(matches!(chi_square_uniform_fit(&[10], 16, 44, 5), Err(GenError::OutOfRange(10, 16, 44))));
    }

    #[test]
    fn mape_arithmetic() {
        assert!((compute_mape(&[100.0, 200.0], &[90.0, 220.0]).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(compute_mape(&[5.0, 7.0], &[5.0, 7.0]).unwrap(), 0.0);
        assert_eq!(compute_mape(&[0.0], &[1.0]), Err(GenError::ZeroActual(0)));
        assert_eq!(compute_mape(&[1.0], &[]), Err(GenError::LengthMismatch));
    }
}

use proptest::prelude::*;

use chemosched::evaluator::nurse_load_profile;
use chemosched::gen::{generate_instance, ClassModel, GenSpec};
use chemosched::heuristics::percentile;
use chemosched::lpha::{run_lpha, LphaConfig, LphaError, LphaState};
use chemosched::subproblem::cut_value;
use chemosched::{brute_force_second_stage, evaluate, EvaluatorConfig, FirstStageSchedule, Instance, ObjectiveWeights};

/// Small single-scenario case: durations, resources, sequence and sorted
/// appointments.
#[derive(Debug, Clone)]
struct Case {
    premed: Vec<i64>,
    infusion: Vec<i64>,
    nurses: usize,
    chairs: usize,
    sequence: Vec<usize>,
    sorted_appts: Vec<i64>,
}

impl Case {
    fn instance(&self) -> Instance {
        Instance::from_durations("p", &[(self.premed.clone(), self.infusion.clone())], self.nurses, self.chairs, 240, 10_000)
            .unwrap()
    }

    fn schedule(&self) -> FirstStageSchedule {
        let mut a = vec![0; self.sequence.len()];
        for (k, &p) in self.sequence.iter().enumerate() {
            a[p] = self.sorted_appts[k];
        }
        FirstStageSchedule::new(self.sequence.clone(), a)
    }
}

fn case(max_patients: usize) -> impl Strategy<Value = Case> {
    (1..=max_patients, 1usize..=2, 1usize..=3).prop_flat_map(|(n, nurses, chairs)| {
        (
            prop::collection::vec(0i64..=35, n),
            prop::collection::vec(16i64..=217, n),
            Just((0..n).collect::<Vec<usize>>()).prop_shuffle(),
            prop::collection::vec(0i64..=240, n),
        )
            .prop_map(move |(premed, infusion, sequence, mut a)| {
                a.sort_unstable();
                Case { premed, infusion, nurses, chairs, sequence, sorted_appts: a }
            })
    })
}

fn eval(inst: &Instance, s: &FirstStageSchedule) -> chemosched::SecondStageOutcome {
    evaluate(s, &inst.scenarios[0], inst, &EvaluatorConfig::default()).unwrap()
}

proptest! {
    #[test]
    fn starts_follow_sequence_and_respect_appointments(c in case(7)) {
        let inst = c.instance();
        let s = c.schedule();
        let out = eval(&inst, &s);
        for w in s.sequence.windows(2) {
            prop_assert!(out.start[w[0]] <= out.start[w[1]]);
        }
        for p in 0..s.len() {
            prop_assert!(out.start[p] >= s.appointment[p]);
            prop_assert_eq!(out.wait[p], out.start[p] - s.appointment[p]);
            prop_assert_eq!(out.discharge[p], out.start[p] + c.premed[p] + c.infusion[p]);
        }
    }

    #[test]
    fn relabeling_patients_keeps_objective(c in case(6), perm_seed in any::<u64>()) {
        let n = c.premed.len();
        let mut perm: Vec<usize> = (0..n).collect();
        // deterministic shuffle from the seed
        let mut x = perm_seed | 1;
        for i in (1..n).rev() {
            x ^= x << 13; x ^= x >> 7; x ^= x << 17;
            perm.swap(i, (x % (i as u64 + 1)) as usize);
        }
        let mut r = c.clone();
        for old in 0..n {
            r.premed[perm[old]] = c.premed[old];
            r.infusion[perm[old]] = c.infusion[old];
        }
        r.sequence = c.sequence.iter().map(|&p| perm[p]).collect();
        let a = eval(&c.instance(), &c.schedule());
        let b = eval(&r.instance(), &r.schedule());
        prop_assert_eq!(a.objective, b.objective);
        prop_assert_eq!(a.total_wait(), b.total_wait());
    }

    #[test]
    fn delaying_a_tail_never_moves_starts_earlier(c in case(7), from in 0usize..7, d in 1i64..60) {
        let inst = c.instance();
        let base = eval(&inst, &c.schedule());
        let mut later = c.clone();
        let from = from % c.sequence.len();
        for a in &mut later.sorted_appts[from..] {
            *a += d;
        }
        let moved = eval(&inst, &later.schedule());
        for (k, &p) in c.sequence.iter().enumerate() {
            if k < from {
                prop_assert_eq!(moved.start[p], base.start[p]);
            } else {
                prop_assert!(moved.start[p] >= base.start[p]);
            }
        }
    }

    #[test]
    fn brute_force_never_worse_than_rule(c in case(5)) {
        let inst = c.instance();
        let s = c.schedule();
        let w = ObjectiveWeights::default();
        let rule = eval(&inst, &s);
        let best = brute_force_second_stage(&s, &inst.scenarios[0], &inst, &w).unwrap();
        prop_assert!(best.objective <= rule.objective + 1e-9);
    }

    #[test]
    fn nurse_capacity_holds(c in case(7), cap in 1usize..=3) {
        let inst = c.instance();
        let cfg = EvaluatorConfig { nurse_capacity: Some(cap), ..Default::default() };
        let out = evaluate(&c.schedule(), &inst.scenarios[0], &inst, &cfg).unwrap();
        for row in nurse_load_profile(&out, &inst) {
            prop_assert!(row.iter().all(|&k| k as usize <= cap));
        }
    }

    #[test]
    fn cuts_underestimate_square(c in -500i64..500, a in -500i64..500) {
        prop_assert!(cut_value(c, a) <= (a * a) as f64);
        prop_assert_eq!(cut_value(a, a), (a * a) as f64);
    }

    #[test]
    fn percentile_is_monotone(v in prop::collection::vec(0i64..300, 1..60), k1 in 0.0f64..=1.0, k2 in 0.0f64..=1.0) {
        let (lo, hi) = if k1 <= k2 { (k1, k2) } else { (k2, k1) };
        prop_assert!(percentile(&v, lo, false) <= percentile(&v, hi, false));
        prop_assert!(percentile(&v, lo, true) >= percentile(&v, hi, true));
    }

    #[test]
    fn multipliers_stay_balanced(
        rounds in prop::collection::vec((prop::collection::vec(0i64..240, 12), 1e-4f64..1.0), 1..8)
    ) {
        let pairs: Vec<(Vec<i64>, Vec<i64>)> = (0..4).map(|k| (vec![5; 3], vec![30 + k; 3])).collect();
        let inst = Instance::from_durations("m", &pairs, 1, 2, 240, 180).unwrap();
        let mut s = LphaState::new(&inst, 11);
        for (k, (vals, rho)) in rounds.iter().enumerate() {
            s.iter = k + 1;
            s.appointments = vals.chunks(3).map(|c| c.to_vec()).collect();
            s.rho = *rho;
            s.update_consensus();
            s.update_multipliers();
        }
        prop_assert!(s.multiplier_imbalance() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn same_seed_same_instance_and_schedule(seed in 0u64..1000) {
        let spec = GenSpec { num_patients: 5, num_scenarios: 4, seed, ..GenSpec::default() };
        let a = generate_instance(&ClassModel::default(), &spec).unwrap();
        let b = generate_instance(&ClassModel::default(), &spec).unwrap();
        prop_assert_eq!(&a, &b);
        let w = ObjectiveWeights::default();
        let cfg = LphaConfig { seed, ..Default::default() };
        let run = || match run_lpha(&a, &w, &cfg) {
            Ok((s, _)) => s,
            Err(LphaError::NoConvergence { schedule, .. }) => schedule,
            Err(e) => panic!("{e}"),
        };
        prop_assert_eq!(run(), run());
    }
}

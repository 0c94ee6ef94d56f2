//! Two scenarios of a seven-patient day with durations read off the
//! published chair and nurse timelines.

use chemosched::{evaluate, EvaluatorConfig, FirstStageSchedule, Instance};

fn instance() -> Instance {
    // (premed, infusion) for patients 1..7
    let s1 = [(21, 150), (31, 106), (13, 59), (13, 37), (18, 181), (12, 31), (25, 121)];
    let s2 = [(16, 142), (28, 119), (15, 69), (9, 28), (13, 167), (11, 37), (33, 149)];
    let split = |s: &[(i64, i64)]| (s.iter().map(|d| d.0).collect(), s.iter().map(|d| d.1).collect());
    Instance::from_durations("fig3", &[split(&s1), split(&s2)], 2, 4, 240, 180).unwrap()
}

fn schedule() -> FirstStageSchedule {
    FirstStageSchedule::from_appointments(vec![52, 16, 163, 0, 0, 182, 13])
}

#[test]
fn first_scenario_two_minutes_wait_for_patient_two_and_no_overtime() {
    let inst = instance();
    let out = evaluate(&schedule(), &inst.scenarios[0], &inst, &EvaluatorConfig::default()).unwrap();
    assert_eq!(out.total_wait(), 2);
    assert_eq!(out.wait[1], 2);
    assert_eq!(out.overtime, vec![0, 0]);
}

#[test]
fn second_scenario_no_wait_and_seven_minutes_overtime() {
    let inst = instance();
    let out = evaluate(&schedule(), &inst.scenarios[1], &inst, &EvaluatorConfig::default()).unwrap();
    assert_eq!(out.total_wait(), 0);
    assert_eq!(out.overtime, vec![7, 0]);
}

#[test]
fn chair_bars_never_overlap() {
    let inst = instance();
    for sc in &inst.scenarios {
        let out = evaluate(&schedule(), sc, &inst, &EvaluatorConfig::default()).unwrap();
        for c in 0..inst.num_chairs {
            let mut bars: Vec<(i64, i64)> =
                (0..7).filter(|&p| out.chair_of[p] == c).map(|p| (out.start[p], out.discharge[p])).collect();
            bars.sort();
            assert!(bars.windows(2).all(|w| w[0].1 <= w[1].0), "chair {c}: {bars:?}");
        }
    }
}

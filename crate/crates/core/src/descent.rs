//! Cyclic coordinate descent over integer appointment times that stay
//! non-decreasing along a fixed sequence.

use crate::model::Minutes;

/// Search box and stopping rules for [`coordinate_descent`].
pub(crate) struct Box<'a> {
    pub seq: &'a [usize],
    /// Bounds by sequence position.
    pub lo: &'a [Minutes],
    pub hi: &'a [Minutes],
    pub horizon: Minutes,
    /// Patients whose appointment must not move.
    pub frozen: &'a dyn Fn(usize) -> bool,
    pub max_passes: usize,
}

/// Improves `a` in place. Each coordinate is probed with doubling steps in
/// both directions and the best probe is refined by bisection; strict
/// improvements are accepted until a pass changes nothing or `budget`
/// evaluations are spent. Returns the final cost and payload.
pub(crate) fn coordinate_descent<T: Copy>(
    bx: &Box,
    a: &mut [Minutes],
    mut cost: f64,
    mut payload: T,
    budget: &mut u64,
    mut eval: impl FnMut(&[Minutes]) -> (f64, T),
) -> (f64, T) {
    let seq = bx.seq;
    let n = seq.len();
    let mut probe = |a: &mut [Minutes], p: usize, v: Minutes, budget: &mut u64| -> Option<(f64, T)> {
        if *budget == 0 {
            return None;
        }
        *budget -= 1;
        let old = a[p];
        a[p] = v;
        let r = eval(a);
        a[p] = old;
        Some(r)
    };
    'passes: for _ in 0..bx.max_passes {
        let mut improved = false;
        for k in 0..n {
            let p = seq[k];
            if (bx.frozen)(p) {
                continue;
            }
            let left = if k > 0 { a[seq[k - 1]] } else { 0 }.max(bx.lo[k]);
            let right = if k + 1 < n { a[seq[k + 1]] } else { bx.horizon }.min(bx.hi[k]);
            let cur = a[p];
            let mut best_v = cur;
            for dir in [1i64, -1] {
                let limit = if dir > 0 { right - cur } else { cur - left };
                if limit <= 0 {
                    continue;
                }
                let mut found = false;
                let mut step = 1;
                loop {
                    let v = cur + dir * step;
                    let Some((c, t)) = probe(a, p, v, budget) else { break };
                    if c < cost - 1e-12 {
                        cost = c;
                        payload = t;
                        best_v = v;
                        found = true;
                    }
                    if step == limit {
                        break;
                    }
                    step = (step * 2).min(limit);
                }
                if found {
                    let mut half = ((best_v - cur) * dir) / 2;
                    while half >= 1 {
                        for off in [half, -half] {
                            let ds = (best_v - cur) * dir + off;
                            if ds < 1 || ds > limit {
                                continue;
                            }
                            let v = cur + dir * ds;
                            let Some((c, t)) = probe(a, p, v, budget) else { break };
                            if c < cost - 1e-12 {
                                cost = c;
                                payload = t;
                                best_v = v;
                            }
                        }
                        half /= 2;
                    }
                }
            }
            if best_v != cur {
                a[p] = best_v;
                improved = true;
            }
            if *budget == 0 {
                break 'passes;
            }
        }
        if !improved {
            break;
        }
    }
    (cost, payload)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_separable_minimum() {
        let seq = [0, 1, 2];
        let lo = [0; 3];
        let hi = [100; 3];
        let frozen = |_: usize| false;
        let bx = Box { seq: &seq, lo: &lo, hi: &hi, horizon: 100, frozen: &frozen, max_passes: 50 };
        let target = [7.0, 30.0, 61.0];
        let f = |a: &[Minutes]| -> (f64, ()) { (a.iter().zip(target).map(|(&x, t)| (x as f64 - t).abs()).sum(), ()) };
        let mut a = vec![0, 0, 0];
        let c0 = f(&a).0;
        let mut budget = u64::MAX;
        let (c, _) = coordinate_descent(&bx, &mut a, c0, (), &mut budget, f);
        assert_eq!(a, vec![7, 30, 61]);
        assert_eq!(c, 0.0);
    }

    #[test]
    fn respects_order_and_frozen() {
        let seq = [1, 0];
        let lo = [0; 2];
        let hi = [100; 2];
        let frozen = |p: usize| p == 1;
        let bx = Box { seq: &seq, lo: &lo, hi: &hi, horizon: 100, frozen: &frozen, max_passes: 50 };
        // patient 0 wants 10 but follows patient 1 frozen at 40
        let f = |a: &[Minutes]| -> (f64, ()) { ((a[0] - 10).abs() as f64, ()) };
        let mut a = vec![90, 40];
        let c0 = f(&a).0;
        let mut budget = u64::MAX;
        coordinate_descent(&bx, &mut a, c0, (), &mut budget, f);
        assert_eq!(a, vec![40, 40]);
    }

    #[test]
    fn zero_budget_leaves_point() {
        let seq = [0];
        let frozen = |_: usize| false;
        let bx = Box { seq: &seq, lo: &[0], hi: &[100], horizon: 100, frozen: &frozen, max_passes: 50 };
        let mut a = vec![50];
        let mut budget = 0;
        coordinate_descent(&bx, &mut a, 50.0, (), &mut budget, |a: &[Minutes]| (a[0] as f64, ()));
        assert_eq!(a, vec![50]);
    }
}

//! Conversion of conditional intensity matrices into subnode CPTs.

use super::AdbnError;
use crate::linalg::IntensityMatrix;
use crate::model::Cpt;

/// One piece of the interval between two updates of a variable, governed by
/// a fixed assignment of parent subnodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Subperiod {
    pub start: f64,
    pub end: f64,
    /// Time of the parent subnode bound for each parent.
    pub bindings: Vec<f64>,
    /// True for every piece but the last; its end subnode is auxiliary.
    pub intermediate: bool,
}

fn check_interval(t_prev: f64, t_now: f64) -> Result<(), AdbnError> {
    if t_now > t_prev && (t_now - t_prev).is_finite() {
        Ok(())
    } else {
        Err(AdbnError::NonpositiveInterval { t_prev, t_now })
    }
}

/// Latest time in an ascending timeline satisfying `pred`, or the earliest
/// entry when none does.
fn latest(timeline: &[f64], pred: impl Fn(f64) -> bool) -> f64 {
    timeline
        .iter()
        .rev()
        .copied()
        .find(|&t| pred(t))
        .or_else(|| timeline.first().copied())
        .unwrap_or(f64::NEG_INFINITY)
}

/// Parent subnodes for a subnode created at `t_now`: for each parent the
/// most recent known update strictly before `t_now`. Timelines are ascending.
pub fn approach1_bindings(timelines: &[&[f64]], t_now: f64) -> Vec<f64> {
    timelines.iter().map(|tl| latest(tl, |t| t < t_now)).collect()
}

/// Splits `(t_prev, t_now]` at every parent update strictly inside it. Each
/// piece is governed by the parents' most recent updates at or before its
/// start.
pub fn plan_approach2(t_prev: f64, t_now: f64, timelines: &[&[f64]]) -> Result<Vec<Subperiod>, AdbnError> {
    check_interval(t_prev, t_now)?;
    let mut cuts: Vec<f64> = timelines
        .iter()
        .flat_map(|tl| tl.iter().copied())
        .filter(|&t| t > t_prev && t < t_now)
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut bounds = Vec::with_capacity(cuts.len() + 2);
    bounds.push(t_prev);
    bounds.extend(cuts);
    bounds.push(t_now);
    let last = bounds.len() - 2;
    Ok(bounds
        .windows(2)
        .enumerate()
        .map(|(i, w)| Subperiod {
            start: w[0],
            end: w[1],
            bindings: if i == last {
                approach1_bindings(timelines, t_now)
            } else {
                timelines.iter().map(|tl| latest(tl, |t| t <= w[0])).collect()
            },
            intermediate: i != last,
        })
        .collect())
}

/// CPT of a subnode at `t_now` whose predecessor is at `t_prev`, with the
/// parents held at their bound values throughout.
pub fn cpt_approach1(cims: &[IntensityMatrix], parent_cards: &[usize], t_prev: f64, t_now: f64) -> Result<Cpt, AdbnError> {
    check_interval(t_prev, t_now)?;
    Ok(Cpt::from_cims(cims, parent_cards, t_now - t_prev)?)
}

/// One CPT per subperiod of [`plan_approach2`].
pub fn cpt_approach2(
    cims: &[IntensityMatrix],
    parent_cards: &[usize],
    t_prev: f64,
    t_now: f64,
    timelines: &[&[f64]],
) -> Result<Vec<(Subperiod, Cpt)>, AdbnError> {
    plan_approach2(t_prev, t_now, timelines)?
        .into_iter()
        .map(|sp| {
            let cpt = cpt_approach1(cims, parent_cards, sp.start, sp.end)?;
            Ok((sp, cpt))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::matrix_exp;

    fn cims() -> Vec<IntensityMatrix> {
        vec![
            IntensityMatrix::from_off_diagonal(&[vec![0.0, 0.3], vec![1.1, 0.0]]).unwrap(),
            IntensityMatrix::from_off_diagonal(&[vec![0.0, 2.0], vec![0.4, 0.0]]).unwrap(),
        ]
    }

    #[test]
    fn rows_are_matrix_exponentials() {
        let cpt = cpt_approach1(&cims(), &[2], 1.0, 1.5).unwrap();
        for (u, q) in cims().iter().enumerate() {
            let p = matrix_exp(q, 0.5).unwrap();
            for x in 0..2 {
                assert_eq!(cpt.row_for(&[x, u]), p.row(x));
            }
        }
    }

    #[test]
    fn short_interval_is_near_identity() {
        let cpt = cpt_approach1(&cims(), &[2], 1.0, 1.0 + 1e-9).unwrap();
        for u in 0..2 {
            assert!((cpt.row_for(&[0, u])[0] - 1.0).abs() < 1e-8);
            assert!((cpt.row_for(&[1, u])[1] - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn nonpositive_interval_is_rejected() {
        assert!(matches!(
            cpt_approach1(&cims(), &[2], 2.0, 2.0),
            Err(AdbnError::NonpositiveInterval { .. })
        ));
        assert!(plan_approach2(3.0, 1.0, &[]).is_err());
    }

    #[test]
    fn only_most_recent_parent_update_is_bound() {
        // X^(0), U^(1), U^(2), X^(3): U^(1) governs nothing.
        let u = [-1.0, 1.0, 2.0];
        assert_eq!(approach1_bindings(&[&u], 3.0), vec![2.0]);
        // U^(0), X^(1), X^(2): U^(0) is the parent of both.
        let u = [0.0];
        assert_eq!(approach1_bindings(&[&u], 1.0), vec![0.0]);
        assert_eq!(approach1_bindings(&[&u], 2.0), vec![0.0]);
    }

    #[test]
    fn four_subperiods_with_two_parents() {
        // U^(t0), V^(t1), X^(t2), U^(t3), V^(t4), U^(t5), X^(t6)
        let u = [0.0, 3.0, 5.0];
        let v = [1.0, 4.0];
        let plan = plan_approach2(2.0, 6.0, &[&u, &v]).unwrap();
        let spans: Vec<(f64, f64)> = plan.iter().map(|p| (p.start, p.end)).collect();
        assert_eq!(spans, vec![(2.0, 3.0), (3.0, 4.0), (4.0, 5.0), (5.0, 6.0)]);
        let bound: Vec<Vec<f64>> = plan.iter().map(|p| p.bindings.clone()).collect();
        assert_eq!(
            bound,
            vec![vec![0.0, 1.0], vec![3.0, 1.0], vec![3.0, 4.0], vec![5.0, 4.0]]
        );
        let inter: Vec<bool> = plan.iter().map(|p| p.intermediate).collect();
        assert_eq!(inter, vec![true, true, true, false]);
    }

    #[test]
    fn earlier_parent_governs_first_subperiod() {
        // U^(t0), X^(t1), U^(t2), U^(t3), X^(t4)
        let u = [0.0, 2.0, 3.0];
        let plan = plan_approach2(1.0, 4.0, &[&u]).unwrap();
        assert_eq!(plan[0].bindings, vec![0.0]);
        assert_eq!((plan[0].start, plan[0].end), (1.0, 2.0));
        // the first approach lets the latest update govern the whole interval
        assert_eq!(approach1_bindings(&[&u], 4.0), vec![3.0]);
    }

    #[test]
    fn single_subperiod_matches_first_approach() {
        let u = [0.0, 0.7];
        let pieces = cpt_approach2(&cims(), &[2], 1.0, 2.5, &[&u]).unwrap();
        assert_eq!(pieces.len(), 1);
        assert!(!pieces[0].0.intermediate);
        assert_eq!(pieces[0].0.bindings, approach1_bindings(&[&u], 2.5));
        assert_eq!(pieces[0].1, cpt_approach1(&cims(), &[2], 1.0, 2.5).unwrap());
    }
}

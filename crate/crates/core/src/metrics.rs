//! Trajectory capture and evaluation metrics: Hausdorff distance between
//! episode trajectories (exploration score) and the preference-entropy
//! time series.

use thiserror::Error;

use crate::env::Action;
use crate::numerics::entropy_categorical;
use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("point set is empty")]
    EmptyPointSet,
    #[error("need at least 2 trajectories, got {0}")]
    TooFewTrajectories(usize),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// One step of an episode trajectory.
#[derive(Debug, Clone)]
pub struct TrajectoryRow {
    pub step: usize,
    pub x: usize,
    pub y: usize,
    pub action: Action,
    pub g_value: f64,
    pub hole_reset: bool,
}

/// Per-episode sequence of grid positions, actions and planner costs.
#[derive(Debug, Clone)]
pub struct TrajectoryLog {
    pub episode: usize,
    pub rows: Vec<TrajectoryRow>,
}

impl TrajectoryLog {
    /// Positions as a point set (temporal order is irrelevant to Hausdorff).
    pub fn points(&self) -> Vec<(f64, f64)> {
        self.rows.iter().map(|r| (r.x as f64, r.y as f64)).collect()
    }
}

fn euclidean(a: (f64, f64), b: (f64, f64)) -> f64 {
    let dx = a.0 - b.0;
    let dy = a.1 - b.1;
    (dx * dx + dy * dy).sqrt()
}

/// max over a∈A of min over b∈B of |a − b|.
pub fn directed_hausdorff(a: &[(f64, f64)], b: &[(f64, f64)]) -> Result<f64, MetricsError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::EmptyPointSet);
    }
    let mut worst: f64 = 0.0;
    for pa in a {
        let nearest = b
            .iter()
            .map(|pb| euclidean(*pa, *pb))
            .fold(f64::INFINITY, f64::min);
        worst = worst.max(nearest);
    }
    Ok(worst)
}

/// Symmetric Hausdorff distance: max of the two directed distances.
pub fn hausdorff(a: &[(f64, f64)], b: &[(f64, f64)]) -> Result<f64, MetricsError> {
    Ok(directed_hausdorff(a, b)?.max(directed_hausdorff(b, a)?))
}

/// Hausdorff distance for each consecutive-episode pair (i vs i+1).
pub fn pairwise_exploration_scores(trajectories: &[Vec<(f64, f64)>]) -> Result<Vec<f64>, MetricsError> {
    if trajectories.len() < 2 {
        return Err(MetricsError::TooFewTrajectories(trajectories.len()));
    }
    trajectories
        .windows(2)
        .map(|w| hausdorff(&w[0], &w[1]))
        .collect()
}

/// Mean Hausdorff distance over all unordered trajectory pairs.
pub fn all_pairs_mean_hausdorff(trajectories: &[Vec<(f64, f64)>]) -> Result<f64, MetricsError> {
    if trajectories.len() < 2 {
        return Err(MetricsError::TooFewTrajectories(trajectories.len()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..trajectories.len() {
        for j in i + 1..trajectories.len() {
            total += hausdorff(&trajectories[i], &trajectories[j])?;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Entropy (nats) of each per-episode preference snapshot.
pub fn entropy_series(snapshots: &[Vec<f64>]) -> Result<Vec<(usize, f64)>, MetricsError> {
    snapshots
        .iter()
        .enumerate()
        .map(|(episode, p)| Ok((episode, entropy_categorical(p)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use rand::Rng;

    // Brute-force oracle written directly from the definition; kept separate
    // from the implementation under test.
    fn hausdorff_oracle(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
        let directed = |xs: &[(f64, f64)], ys: &[(f64, f64)]| -> f64 {
            let mut worst = 0.0f64;
            for x in xs {
                let mut best = f64::INFINITY;
                for y in ys {
                    let d = ((x.0 - y.0).powi(2) + (x.1 - y.1).powi(2)).sqrt();
                    if d < best {
                        best = d;
                    }
                }
                if best > worst {
                    worst = best;
                }
            }
            worst
        };
        directed(a, b).max(directed(b, a))
    }

    fn random_points(rng: &mut crate::rng::SeededRng, max_len: usize) -> Vec<(f64, f64)> {
        let n = rng.random_range(1..=max_len);
        (0..n)
            .map(|_| (rng.random_range(0..8) as f64, rng.random_range(0..8) as f64))
            .collect()
    }

    #[test]
    fn identical_sets_have_zero_distance() {
        let a = vec![(0.0, 0.0), (1.0, 2.0)];
        assert_eq!(hausdorff(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn three_four_five_triangle() {
        let a = vec![(0.0, 0.0)];
        let b = vec![(3.0, 4.0)];
        assert_eq!(hausdorff(&a, &b).unwrap(), 5.0);
    }

    #[test]
    fn directed_asymmetry_hand_case() {
        let a = vec![(0.0, 0.0), (0.0, 1.0)];
        let b = vec![(0.0, 0.0), (2.0, 1.0)];
        assert_eq!(directed_hausdorff(&a, &b).unwrap(), 1.0);
        assert_eq!(directed_hausdorff(&b, &a).unwrap(), 2.0);
        assert_eq!(hausdorff(&a, &b).unwrap(), 2.0);
    }

    #[test]
    fn subset_case() {
        let a = vec![(0.0, 0.0), (5.0, 0.0)];
        let b = vec![(0.0, 0.0)];
        assert_eq!(hausdorff(&a, &b).unwrap(), 5.0);
    }

    #[test]
    fn matches_brute_force_on_random_pairs() {
        let mut rng = seeded_rng(101);
        for _ in 0..500 {
            let a = random_points(&mut rng, 20);
            let b = random_points(&mut rng, 20);
            assert_eq!(hausdorff(&a, &b).unwrap(), hausdorff_oracle(&a, &b));
        }
    }

    #[test]
    fn symmetry_and_identity_properties() {
        let mut rng = seeded_rng(7);
        for _ in 0..100 {
            let a = random_points(&mut rng, 12);
            let b = random_points(&mut rng, 12);
            assert_eq!(hausdorff(&a, &b).unwrap(), hausdorff(&b, &a).unwrap());
        }
    }

    #[test]
    fn triangle_inequality_on_random_triples() {
        let mut rng = seeded_rng(13);
        for _ in 0..100 {
            let a = random_points(&mut rng, 10);
            let b = random_points(&mut rng, 10);
            let c = random_points(&mut rng, 10);
            let ab = hausdorff(&a, &b).unwrap();
            let bc = hausdorff(&b, &c).unwrap();
            let ac = hausdorff(&a, &c).unwrap();
            assert!(ac <= ab + bc + 1e-12);
        }
    }

    #[test]
    fn empty_set_errors() {
        assert!(hausdorff(&[], &[(0.0, 0.0)]).is_err());
        assert!(directed_hausdorff(&[(0.0, 0.0)], &[]).is_err());
    }

    #[test]
    fn consecutive_scores_count_and_zeros() {
        let t = vec![vec![(0.0, 0.0), (1.0, 1.0)]; 5];
        let scores = pairwise_exploration_scores(&t).unwrap();
        assert_eq!(scores.len(), 4);
        assert!(scores.iter().all(|s| *s == 0.0));
        assert!(pairwise_exploration_scores(&t[..1]).is_err());
    }

    #[test]
    fn pairwise_matches_oracle_on_hand_triple() {
        let t = vec![
            vec![(0.0, 0.0)],
            vec![(3.0, 4.0)],
            vec![(3.0, 4.0), (0.0, 0.0)],
        ];
        let scores = pairwise_exploration_scores(&t).unwrap();
        assert_eq!(scores, vec![5.0, hausdorff_oracle(&t[1], &t[2])]);
        let mean = all_pairs_mean_hausdorff(&t).unwrap();
        let expect = (hausdorff_oracle(&t[0], &t[1])
            + hausdorff_oracle(&t[0], &t[2])
            + hausdorff_oracle(&t[1], &t[2]))
            / 3.0;
        assert_eq!(mean, expect);
    }

    #[test]
    fn entropy_series_basics() {
        let uniform = vec![1.0 / 64.0; 64];
        let series = entropy_series(&[uniform.clone(), uniform]).unwrap();
        assert_eq!(series.len(), 2);
        for (_, h) in series {
            assert!((h - 64f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn concentrating_pepper_counts_give_nonincreasing_series() {
        use crate::preferences::{
            MemoryBuffer, MemoryEntry, MemorySource, PepperMechanism, PreferenceMechanism,
        };
        // β = 1 with exposure repeatedly landing on one category: the
        // snapshots concentrate and the entropy series never rises.
        let mut mech = PepperMechanism::new(4, 0.5, 1.0);
        let mut rng = seeded_rng(41);
        let mut snapshots = Vec::new();
        for _ in 0..10 {
            let mut state = vec![0.0; 8];
            state[2] = 1.0;
            state[4 + 2] = 1.0;
            let buffer = MemoryBuffer {
                dims: 2,
                categories: 4,
                entries: vec![
                    MemoryEntry {
                        state,
                        source: MemorySource::Real,
                    };
                    3
                ],
            };
            mech.update(&buffer, &mut rng).unwrap();
            let probs: Vec<f64> = mech
                .preference_logp()
                .unwrap()
                .iter()
                .map(|lp| lp.exp())
                .collect();
            snapshots.push(probs);
        }
        let series = entropy_series(&snapshots).unwrap();
        assert_eq!(series.len(), 10);
        for pair in series.windows(2) {
            assert!(pair[1].1 <= pair[0].1 + 1e-12, "series rose: {pair:?}");
        }
    }
}

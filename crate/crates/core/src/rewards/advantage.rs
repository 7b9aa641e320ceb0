use super::RewardError;
use crate::par::{self, Execution};

/// Guards the division for near-constant groups.
pub const ADVANTAGE_EPS: f64 = 1e-8;

/// Group-relative advantages: `(r_i - mean) / (std_pop + eps)`.
///
/// A group whose rewards are all identical yields exact zeros.
pub fn group_advantages(rewards: &[f64]) -> Result<Vec<f64>, RewardError> {
    if rewards.len() < 2 {
        return Err(RewardError::GroupTooSmall {
            group_id: String::new(),
            size: rewards.len(),
        });
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(RewardError::NonFinite);
    }
    if rewards.iter().all(|&r| r == rewards[0]) {
        return Ok(vec![0.0; rewards.len()]);
    }
    let g = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / g;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / g;
    let denom = var.sqrt() + ADVANTAGE_EPS;
    Ok(rewards.iter().map(|r| (r - mean) / denom).collect())
}

/// Advantages for many independent groups.
pub fn group_advantages_batch(groups: &[Vec<f64>], exec: Execution) -> Vec<Result<Vec<f64>, RewardError>> {
    par::map(exec, groups, |g| group_advantages(g))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_pair() {
        let a = group_advantages(&[2.0, 0.0]).unwrap();
        assert!((a[0] - 1.0).abs() < 1e-6 && (a[1] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn constant_group_is_zero() {
        assert_eq!(group_advantages(&[0.7; 4]).unwrap(), vec![0.0; 4]);
        assert_eq!(group_advantages(&[0.1, 0.1, 0.1]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn errors() {
        assert!(matches!(group_advantages(&[1.0]), Err(RewardError::GroupTooSmall { size: 1, .. })));
        assert!(matches!(group_advantages(&[]), Err(RewardError::GroupTooSmall { size: 0, .. })));
        assert!(matches!(group_advantages(&[1.0, f64::NAN]), Err(RewardError::NonFinite)));
        assert!(matches!(group_advantages(&[1.0, f64::INFINITY]), Err(RewardError::NonFinite)));
    }

    #[test]
    fn batch_matches_single() {
        let groups = vec![vec![1.0, 2.0, 3.0], vec![0.0, 0.0], vec![2.1, 1.0, 0.0, 2.0]];
        let seq = group_advantages_batch(&groups, Execution::Sequential);
        let par = group_advantages_batch(&groups, Execution::Parallel);
        for ((g, s), p) in groups.iter().zip(seq).zip(par) {
            assert_eq!(s.unwrap(), group_advantages(g).unwrap());
            assert_eq!(p.unwrap(), group_advantages(g).unwrap());
        }
    }
}

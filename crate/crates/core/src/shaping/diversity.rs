use ndarray::Array2;

use crate::trainer::PolicyNet;

use super::ShapingError;

/// `-ln(max(mean_prob, eps))`, in `[0, -ln eps]`.
pub fn diversity_reward(mean_prob: f64, eps: f64) -> f64 {
    -(mean_prob.max(eps)).ln()
}

/// Arithmetic mean of the members' action distributions, row by row.
pub fn population_mean_policy(members: &[&PolicyNet], obs: &Array2<f64>) -> Result<Array2<f64>, ShapingError> {
    let Some((first, rest)) = members.split_first() else {
        return Err(ShapingError::EmptyPool);
    };
    let mut acc = first.probs(obs.clone());
    for m in rest {
        acc += &m.probs(obs.clone());
    }
    acc /= members.len() as f64;
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reward_examples() {
        assert_eq!(diversity_reward(1.0, 1e-8), 0.0);
        assert!((diversity_reward((-1.0f64).exp(), 1e-8) - 1.0).abs() < 1e-12);
        assert!((diversity_reward(0.0, 1e-8) - 18.420680743952367).abs() < 1e-9);
    }

    #[test]
    fn mean_of_identical_members_is_the_member() {
        let pi = PolicyNet::new(3, &mut ChaCha8Rng::seed_from_u64(4));
        let obs = Array2::from_shape_fn((4, 3), |(r, c)| (r + c) as f64 * 0.3);
        let mean = population_mean_policy(&[&pi, &pi, &pi], &obs).unwrap();
        let own = pi.probs(obs);
        assert!(mean.iter().zip(own.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
        assert_eq!(population_mean_policy(&[], &Array2::zeros((1, 3))), Err(ShapingError::EmptyPool));
    }
}

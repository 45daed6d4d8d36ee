use crate::env::Action;

use super::ShapingError;

/// Binary follow-up labels: `labels[t][j]` is true iff agent `j` executes
/// `salient[t]` at some step `t + tau`, `tau` in `1..=k`, that exists in the
/// trajectory. Windows at the end are truncated, never padded.
pub fn event_labels(actions: &[Vec<Action>], salient: &[Action], k: usize) -> Result<Vec<Vec<bool>>, ShapingError> {
    if actions.is_empty() {
        return Err(ShapingError::EmptyTrajectory);
    }
    if k == 0 {
        return Err(ShapingError::InvalidWeights("event horizon must be at least 1".into()));
    }
    if salient.len() != actions.len() {
        return Err(ShapingError::LengthMismatch {
            what: "salient actions",
            expected: actions.len(),
            found: salient.len(),
        });
    }
    let n = actions[0].len();
    let len = actions.len();
    Ok((0..len)
        .map(|t| {
            let window = &actions[(t + 1).min(len)..(t + 1 + k).min(len)];
            (0..n).map(|j| window.iter().any(|a| a[j] == salient[t])).collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use Action::*;

    fn solo(seq: &[Action]) -> Vec<Vec<Action>> {
        seq.iter().map(|&a| vec![a]).collect()
    }

    #[test]
    fn window_membership() {
        let acts = solo(&[Stay, Stay, Interact, Stay, Stay, Stay, Stay]);
        let sal = vec![Interact; 7];
        let y = event_labels(&acts, &sal, 4).unwrap();
        assert!(y[0][0]);
        assert!(!y[2][0], "own step does not count");
        let late = solo(&[Stay, Stay, Stay, Stay, Stay, Interact]);
        assert!(!event_labels(&late, &[Interact; 6], 4).unwrap()[0][0]);
    }

    #[test]
    fn repeats_are_binary() {
        let acts = solo(&[Stay, Interact, Stay, Interact, Stay]);
        let y = event_labels(&acts, &[Interact; 5], 4).unwrap();
        assert!(y[0][0]);
        assert!(!y[4][0], "empty truncated window");
    }

    #[test]
    fn errors() {
        assert_eq!(event_labels(&[], &[], 4), Err(ShapingError::EmptyTrajectory));
        assert!(event_labels(&solo(&[Stay]), &[Stay], 0).is_err());
        assert!(event_labels(&solo(&[Stay]), &[], 1).is_err());
    }
}

use crate::error::{Error, Result};

/// Area under the precision-recall step curve.
///
/// Scores are swept in descending order. Tied scores form one block whose
/// precision is taken after the whole block is admitted, so AP does not
/// depend on the order of tied items.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let positives = labels.iter().filter(|l| **l).count();
    if positives == 0 {
        return Err(Error::Data("average precision needs at least one positive".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Data("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let (mut tp, mut seen) = (0usize, 0usize);
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let block_tp_before = tp;
        while i < order.len() && scores[order[i]] == s {
            tp += labels[order[i]] as usize;
            seen += 1;
            i += 1;
        }
        let recall_gain = (tp - block_tp_before) as f64 / positives as f64;
        ap += recall_gain * tp as f64 / seen as f64;
    }
    Ok(ap)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_examples() {
        assert_eq!(average_precision(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
        assert_eq!(average_precision(&[0.9, 0.1], &[false, true]).unwrap(), 0.5);
        assert_eq!(average_precision(&[0.3; 4], &[true, false, true, false]).unwrap(), 0.5);
        // Ranking P N P: 1/2 * 1 + 1/2 * 2/3.
        let ap = average_precision(&[0.9, 0.5, 0.2], &[true, false, true]).unwrap();
        assert!((ap - (0.5 + 1.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert!(average_precision(&[0.1], &[false]).is_err());
        assert!(average_precision(&[0.1, 0.2], &[true]).is_err());
    }
}

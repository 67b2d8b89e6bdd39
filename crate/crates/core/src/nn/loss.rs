use crate::error::{Error, Result};
use crate::tensor::{format_shape, Tensor};

/// Mean cross-entropy of row logits (N, K, 1, 1) against integer labels,
/// with its gradient `(softmax - onehot) / N`.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let [n, k, h, w] = logits.shape();
    if h != 1 || w != 1 {
        return Err(Error::Dimension(format!(
            "cross_entropy expects (N,K,1,1) logits, got {}",
            format_shape(&logits.shape())
        )));
    }
    if labels.len() != n {
        return Err(Error::Dimension(format!(
            "{} labels for a batch of {n}",
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Data(format!("label {bad} outside [0, {k})")));
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(n * k);
    for (row, &label) in logits.data().chunks(k).zip(labels) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
        let lse = m + z.ln();
        loss += lse - row[label];
        for (j, &v) in row.iter().enumerate() {
            let p = (v - lse).exp();
            let onehot = if j == label { 1.0 } else { 0.0 };
            grad.push((p - onehot) / n as f64);
        }
    }
    let loss = loss / n as f64;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("cross_entropy is {loss}")));
    }
    Ok((loss, Tensor::from_vec(logits.shape(), grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logits(rows: &[&[f64]]) -> Tensor {
        let k = rows[0].len();
        Tensor::from_vec([rows.len(), k, 1, 1], rows.concat()).unwrap()
    }

    #[test]
    fn uniform_logits_give_ln2() {
        let (l, _) = cross_entropy(&logits(&[&[0.0, 0.0]]), &[0]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logit_saturates() {
        let (l, _) = cross_entropy(&logits(&[&[30.0, 0.0]]), &[0]).unwrap();
        assert!(l < 1e-9);
    }

    #[test]
    fn closed_form_value() {
        // -log(e^2 / (e^1 + e^2)) = log(1 + e^-1)
        let expected = (1.0 + (-1.0f64).exp()).ln();
        let (l, _) = cross_entropy(&logits(&[&[1.0, 2.0]]), &[1]).unwrap();
        assert!((l - expected).abs() < 1e-12);
        assert!((l - 0.313262).abs() < 1e-6);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let base = [0.3, -1.2, 0.7, 2.0, 0.1, -0.4];
        let labels = [2, 0];
        let (_, g) = cross_entropy(&Tensor::from_vec([2, 3, 1, 1], base.to_vec()).unwrap(), &labels).unwrap();
        let eps = 1e-6;
        for i in 0..base.len() {
            let mut p = base;
            let mut m = base;
            p[i] += eps;
            m[i] -= eps;
            let lp = cross_entropy(&Tensor::from_vec([2, 3, 1, 1], p.to_vec()).unwrap(), &labels).unwrap().0;
            let lm = cross_entropy(&Tensor::from_vec([2, 3, 1, 1], m.to_vec()).unwrap(), &labels).unwrap().0;
            assert!(((lp - lm) / (2.0 * eps) - g.data()[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn out_of_range_label_is_data_error() {
        assert!(matches!(
            cross_entropy(&logits(&[&[0.0, 0.0]]), &[2]),
            Err(Error::Data(_))
        ));
    }
}

use crate::error::{Error, Result};

/// Floor applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-7;

fn check_simplex(rows: &[Vec<f64>], which: &str) -> Result<()> {
    for (i, r) in rows.iter().enumerate() {
        let sum: f64 = r.iter().sum();
        if r.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidDistribution(format!(
                "{which} row {i} is not a probability vector"
            )));
        }
    }
    Ok(())
}

/// Jensen-Shannon consistency among three posteriors per sample.
///
/// `M = (p₀+p₁+p₂)/3` and the loss is the batch mean of
/// `(KL(p₀‖M) + KL(p₁‖M) + KL(p₂‖M)) / 3`, with every probability floored at
/// [`PROB_FLOOR`] inside the logarithms. Returned gradients are with respect
/// to the logits that produced each posterior by softmax.
pub fn jsd_consistency(
    p_clean: &[Vec<f64>],
    p_aug1: &[Vec<f64>],
    p_aug2: &[Vec<f64>],
) -> Result<(f64, [Vec<Vec<f64>>; 3])> {
    let n = p_clean.len();
    if p_aug1.len() != n || p_aug2.len() != n {
        return Err(Error::Shape("jsd needs equally many rows per view".into()));
    }
    check_simplex(p_clean, "clean")?;
    check_simplex(p_aug1, "aug1")?;
    check_simplex(p_aug2, "aug2")?;
    let views = [p_clean, p_aug1, p_aug2];
    let mut grads: [Vec<Vec<f64>>; 3] = Default::default();
    let mut total = 0.0;
    let scale = 1.0 / (3.0 * n.max(1) as f64);
    for i in 0..n {
        let k = p_clean[i].len();
        if views.iter().any(|v| v[i].len() != k) {
            return Err(Error::Shape(format!("row {i} has differing class counts")));
        }
        let m: Vec<f64> = (0..k)
            .map(|c| (views[0][i][c] + views[1][i][c] + views[2][i][c]) / 3.0)
            .collect();
        let log_m: Vec<f64> = m.iter().map(|&v| v.max(PROB_FLOOR).ln()).collect();
        for (view, grad) in views.iter().zip(grads.iter_mut()) {
            let p = &view[i];
            let mut dp = vec![0.0; k];
            for c in 0..k {
                let log_p = p[c].max(PROB_FLOOR).ln();
                total += p[c] * (log_p - log_m[c]);
                let active_p = if p[c] >= PROB_FLOOR { 1.0 } else { 0.0 };
                let active_m = if m[c] >= PROB_FLOOR { 1.0 } else { 0.0 };
                dp[c] = (log_p - log_m[c] + active_p - active_m) * scale;
            }
            let dot: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
            grad.push(p.iter().zip(&dp).map(|(&pc, &g)| pc * (g - dot)).collect());
        }
    }
    Ok((total * scale, grads))
}

//! Least-squares helpers for rate and exponent fits.

/// Ordinary least squares y ≈ a x + b; returns (a, b, R²).
pub fn linear(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    let a = sxy / sxx;
    let b = my - a * mx;
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - a * x - b).powi(2)).sum();
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    (a, b, r2)
}

/// Fits |y| ≈ C e^{-k t}: returns (k, C, R² of the log fit). Rows with
/// |y| ≤ floor are skipped.
pub fn exp_decay(ts: &[f64], ys: &[f64], floor: f64) -> (f64, f64, f64) {
    let (xs, ls): (Vec<f64>, Vec<f64>) =
        ts.iter().zip(ys).filter(|(_, y)| y.abs() > floor).map(|(t, y)| (*t, y.abs().ln())).unzip();
    let (a, b, r2) = linear(&xs, &ls);
    (-a, b.exp(), r2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_line_and_rate() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x - 1.0).collect();
        let (a, b, r2) = linear(&xs, &ys);
        assert!((a - 3.0).abs() < 1e-12 && (b + 1.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
        let es: Vec<f64> = xs.iter().map(|t| 2.0 * (-0.5 * t).exp()).collect();
        let (k, c, _) = exp_decay(&xs, &es, 0.0);
        assert!((k - 0.5).abs() < 1e-12 && (c - 2.0).abs() < 1e-12);
    }
}

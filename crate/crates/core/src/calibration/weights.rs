use crate::model::JpegColor;

use super::CalibrationSet;

/// Knee and width of the per-channel saturation roll-off, in gray levels.
const SAT_KNEE: f64 = 235.0;
const SAT_WIDTH: f64 = 5.0;

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Down-weighting factor in `[0.01, 1]`: ~1 for mid-range colors, ~0.01 when
/// every channel is saturated.
pub fn saturation_score(y: &JpegColor) -> f64 {
    let prod: f64 = y
        .0
        .iter()
        .map(|&u| 1.0 - logistic((u as f64 - SAT_KNEE) / SAT_WIDTH))
        .product();
    0.01 + 0.99 * prod
}

/// Saturation score divided by a Gaussian kernel density estimate over RAW
/// space with bandwidth `T^(-1/3)`.
pub fn compute_weights(set: &mut CalibrationSet) {
    let n = set.samples.len();
    if n == 0 {
        set.weights.clear();
        return;
    }
    let sigma = (n as f64).powf(-1.0 / 3.0);
    let inv2s2 = 1.0 / (2.0 * sigma * sigma);
    let xs: Vec<[f64; 3]> = set.samples.iter().map(|s| s.x.0).collect();
    let mut density = vec![0.0; n];
    for i in 0..n {
        // Symmetric kernel: fill both halves, self term is exp(0) = 1.
        density[i] += 1.0;
        for j in (i + 1)..n {
            let d0 = xs[i][0] - xs[j][0];
            let d1 = xs[i][1] - xs[j][1];
            let d2 = xs[i][2] - xs[j][2];
            let k = (-(d0 * d0 + d1 * d1 + d2 * d2) * inv2s2).exp();
            density[i] += k;
            density[j] += k;
        }
    }
    set.weights = set
        .samples
        .iter()
        .zip(density)
        .map(|(s, d)| saturation_score(&s.y) / d)
        .collect();
}

use ndarray::Array1;

/// Clamp bound applied to probabilities before any logarithm.
pub const PROB_CLAMP: f64 = 1e-7;

/// Mean squared error over the four spatial components.
pub fn spatial_loss(pred: &[f64; 4], target: &[f64; 4]) -> f64 {
    pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / 4.0
}

pub fn spatial_loss_grad(pred: &[f64; 4], target: &[f64; 4]) -> [f64; 4] {
    std::array::from_fn(|i| 2.0 * (pred[i] - target[i]) / 4.0)
}

/// Element-wise binary cross-entropy between a distribution and the one-hot
/// vector at `target_index`, averaged over the set size.
pub fn selection_loss(dist: &Array1<f64>, target_index: usize) -> f64 {
    let n = dist.len() as f64;
    let mut loss = 0.0;
    for (j, &p) in dist.iter().enumerate() {
        let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        if j == target_index {
            loss -= p.ln();
        } else {
            loss -= (1.0 - p).ln();
        }
    }
    loss / n
}

/// Gradient of [`selection_loss`] with respect to the distribution. Clamped
/// entries get zero gradient.
pub fn selection_loss_grad(dist: &Array1<f64>, target_index: usize) -> Array1<f64> {
    let n = dist.len() as f64;
    Array1::from_shape_fn(dist.len(), |j| {
        let p = dist[j];
        if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
            return 0.0;
        }
        if j == target_index {
            -1.0 / p / n
        } else {
            1.0 / (1.0 - p) / n
        }
    })
}

/// Categorical cross-entropy variant, available for ablation.
pub fn categorical_loss(dist: &Array1<f64>, target_index: usize) -> f64 {
    -dist[target_index].clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).ln()
}

pub fn categorical_loss_grad(dist: &Array1<f64>, target_index: usize) -> Array1<f64> {
    let mut g = Array1::zeros(dist.len());
    let p = dist[target_index];
    if (PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
        g[target_index] = -1.0 / p;
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spatial_loss_is_zero_only_at_equality() {
        let t = [0.1, -0.2, 0.3, 0.4];
        assert_eq!(spatial_loss(&t, &t), 0.0);
        let p = [0.2, -0.2, 0.3, 0.4];
        assert!(spatial_loss(&p, &t) > 0.0);
    }

    #[test]
    fn spatial_loss_quarter_of_squared_offset() {
        let t = [0.0; 4];
        let p = [0.1, 0.0, 0.0, 0.0];
        let loss = spatial_loss(&p, &t);
        assert!((loss - 0.0025).abs() < 1e-15);
        // symmetric in argument order
        assert_eq!(loss, spatial_loss(&t, &p));
    }

    #[test]
    fn selection_loss_on_uniform_pair_is_ln_two() {
        let dist = Array1::from_vec(vec![0.5, 0.5]);
        let loss = selection_loss(&dist, 0);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((loss - 0.6931).abs() < 5e-5);
    }

    #[test]
    fn selection_loss_is_tiny_for_a_perfect_one_hot() {
        let dist = Array1::from_vec(vec![1.0, 0.0, 0.0]);
        let loss = selection_loss(&dist, 0);
        assert!(loss < 1e-6, "clamp floor, got {loss}");
    }

    #[test]
    fn selection_loss_decreases_as_target_mass_grows() {
        let n = 5;
        let mut prev = f64::INFINITY;
        for step in 1..20 {
            let p = step as f64 / 20.0;
            let rest = (1.0 - p) / (n - 1) as f64;
            let dist = Array1::from_shape_fn(n, |j| if j == 2 { p } else { rest });
            let loss = selection_loss(&dist, 2);
            assert!(loss < prev, "not monotone at p={p}");
            prev = loss;
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let dist = Array1::from_vec(vec![0.2, 0.5, 0.3]);
        let g = selection_loss_grad(&dist, 1);
        let h = 1e-7;
        for j in 0..3 {
            let mut up = dist.clone();
            up[j] += h;
            let mut down = dist.clone();
            down[j] -= h;
            let fd = (selection_loss(&up, 1) - selection_loss(&down, 1)) / (2.0 * h);
            assert!((fd - g[j]).abs() < 1e-6);
        }
    }
}

//! Squashed diagonal Gaussian: `a = tanh(mean + std · eps)`.

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
pub const SQUASH_EPS: f64 = 1e-6;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// One reparameterized draw and what its gradient needs.
#[derive(Debug, Clone, PartialEq)]
pub struct SquashedSample {
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub u: Vec<f64>,
    pub std: Vec<f64>,
    pub eps: Vec<f64>,
    /// Log-std outside the clamp range (zero gradient there).
    pub clamped: Vec<bool>,
}

/// `head` holds the means followed by the raw log-stds.
pub fn squash_sample(head: &[f64], eps: &[f64]) -> SquashedSample {
    let d = eps.len();
    debug_assert_eq!(head.len(), 2 * d);
    let mut s = SquashedSample {
        action: Vec::with_capacity(d),
        log_prob: 0.0,
        u: Vec::with_capacity(d),
        std: Vec::with_capacity(d),
        eps: eps.to_vec(),
        clamped: Vec::with_capacity(d),
    };
    for i in 0..d {
        let raw = head[d + i];
        let ls = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
        let std = ls.exp();
        let u = head[i] + std * eps[i];
        let a = u.tanh();
        s.log_prob += -0.5 * eps[i] * eps[i] - ls - HALF_LN_2PI - (1.0 - a * a + SQUASH_EPS).ln();
        s.action.push(a);
        s.u.push(u);
        s.std.push(std);
        s.clamped.push(raw != ls);
    }
    s
}

/// Deterministic action `tanh(mean)`.
pub fn squash_mean(head: &[f64]) -> Vec<f64> {
    head[..head.len() / 2].iter().map(|m| m.tanh()).collect()
}

/// Gradient with respect to `head` of `d_logp · log_prob + d_action · action`.
pub fn squash_backward(s: &SquashedSample, d_logp: f64, d_action: &[f64]) -> Vec<f64> {
    let d = s.action.len();
    let mut g = vec![0.0; 2 * d];
    for i in 0..d {
        let a = s.action[i];
        let sech2 = 1.0 - a * a;
        let g_u = d_logp * 2.0 * a * sech2 / (sech2 + SQUASH_EPS) + d_action[i] * sech2;
        g[i] = g_u;
        if !s.clamped[i] {
            g[d + i] = -d_logp + g_u * s.std[i] * s.eps[i];
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn zero_mean_deterministic_is_midpoint() {
        assert_eq!(squash_mean(&[0.0, 0.0, -1.0, 0.5]), vec![0.0, 0.0]);
    }

    #[test]
    fn zero_pre_activation_has_no_correction() {
        let s = squash_sample(&[0.0, 0.0], &[0.0]);
        // log N(0; 0, 1); only the stabilizer survives from the squash
        assert!((s.log_prob + HALF_LN_2PI + SQUASH_EPS.ln_1p()).abs() < 1e-15);
    }

    #[test]
    fn log_std_is_clamped() {
        let s = squash_sample(&[0.0, 50.0], &[0.1]);
        assert!(s.clamped[0]);
        assert!((s.std[0] - LOG_STD_MAX.exp()).abs() < 1e-12);
        let g = squash_backward(&s, 1.0, &[1.0]);
        assert_eq!(g[1], 0.0);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let head = [0.3, -0.8, -0.4, 0.2];
        let eps = [0.7, -1.1];
        let (dl, da) = (0.37, [0.5, -1.3]);
        let f = |h: &[f64]| {
            let s = squash_sample(h, &eps);
            dl * s.log_prob + da[0] * s.action[0] + da[1] * s.action[1]
        };
        let g = squash_backward(&squash_sample(&head, &eps), dl, &da);
        for i in 0..4 {
            let mut p = head;
            p[i] += 1e-6;
            let mut m = head;
            m[i] -= 1e-6;
            let num = (f(&p) - f(&m)) / 2e-6;
            assert!((num - g[i]).abs() < 1e-7 * (1.0 + num.abs()), "{i}: {num} vs {}", g[i]);
        }
    }

    /// Entropy of tanh(N(mu, sigma^2)) by quadrature: H_gauss + E[log(1 - tanh^2 u)].
    fn squashed_entropy(mu: f64, sigma: f64) -> f64 {
        let n = 20_000;
        let (lo, hi) = (-10.0, 10.0);
        let h = (hi - lo) / n as f64;
        let mut e = 0.0;
        for k in 0..=n {
            let z = lo + k as f64 * h;
            let w = if k == 0 || k == n { 0.5 } else { 1.0 };
            let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
            let a = (mu + sigma * z).tanh();
            e += w * pdf * (1.0 - a * a + SQUASH_EPS).ln();
        }
        0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * sigma * sigma).ln() + e * h
    }

    #[test]
    fn monte_carlo_entropy_matches_quadrature() {
        let (mu, ls) = (0.3f64, -0.5f64);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let e: f64 = rng.sample(StandardNormal);
            acc -= squash_sample(&[mu, ls], &[e]).log_prob;
        }
        let mc = acc / n as f64;
        let exact = squashed_entropy(mu, ls.exp());
        assert!((mc - exact).abs() < 0.01 * exact.abs(), "{mc} vs {exact}");
    }

    /// Entropy of the soft-optimal distribution softmax(q / alpha) on a grid.
    fn soft_optimal_entropy(q: &[f64], alpha: f64) -> f64 {
        let m = q.iter().cloned().fold(f64::MIN, f64::max);
        let w: Vec<f64> = q.iter().map(|v| ((v - m) / alpha).exp()).collect();
        let z: f64 = w.iter().sum();
        -w.iter().map(|x| x / z).filter(|&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
    }

    #[test]
    fn higher_temperature_never_lowers_entropy() {
        let q: Vec<f64> = (0..41).map(|k| -(k as f64 / 20.0 - 1.0).powi(2) + 0.3 * (k as f64).sin()).collect();
        let mut last = 0.0;
        for alpha in [0.01, 0.05, 0.1, 0.2, 0.5, 1.0, 5.0] {
            let h = soft_optimal_entropy(&q, alpha);
            assert!(h >= last - 1e-12);
            last = h;
        }
    }

    #[test]
    fn sample_rng_usage_is_deterministic() {
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = ChaCha8Rng::seed_from_u64(5);
        let ea: f64 = a.sample(StandardNormal);
        let eb: f64 = b.sample(StandardNormal);
        assert_eq!(squash_sample(&[0.1, 0.0], &[ea]), squash_sample(&[0.1, 0.0], &[eb]));
    }
}

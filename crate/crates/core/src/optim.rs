//! Adaptive-moment optimizer with decoupled weight decay, plus the soft
//! target-network update. Both operate on the flat parameter layout from
//! [`crate::qnet::QNetworkParams::flatten`].

use crate::qnet::QNetworkParams;

#[derive(Clone, Debug)]
pub struct AdamW {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step_count: u64,
}

impl AdamW {
    pub fn new(learning_rate: f64, weight_decay: f64, dim: usize) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One update: bias-corrected moment step on the loss gradient, then the
    /// decoupled decay θ ← θ − η·wd·θ.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
            params[i] -= self.learning_rate * self.weight_decay * params[i];
        }
    }
}

/// θ_target ← τ·θ + (1−τ)·θ_target, elementwise over the flat layout.
pub fn soft_update_flat(target: &mut [f64], online: &[f64], tau: f64) {
    assert_eq!(target.len(), online.len());
    for (t, &o) in target.iter_mut().zip(online) {
        *t = tau * o + (1.0 - tau) * *t;
    }
}

/// Structured convenience wrapper over [`soft_update_flat`].
pub fn soft_update(target: &mut QNetworkParams, online: &QNetworkParams, tau: f64) {
    let mut flat = target.flatten();
    soft_update_flat(&mut flat, &online.flatten(), tau);
    target.read_flat(&flat);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_zero_decay_is_identity() {
        let mut opt = AdamW::new(0.01, 0.0, 3);
        let mut params = vec![1.0, -2.0, 0.5];
        opt.step(&mut params, &[0.0, 0.0, 0.0]);
        assert_eq!(params, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_matches_the_closed_form() {
        // After one step: m_hat = g, v_hat = g², so the update is
        // −η·g/(|g| + eps), followed by the decay factor.
        let eta = 0.001;
        let wd = 0.01;
        let g = -3.7;
        let theta0 = 0.25;
        let mut opt = AdamW::new(eta, wd, 1);
        let mut params = vec![theta0];
        opt.step(&mut params, &[g]);
        let after_moment = theta0 - eta * g / (g.abs() + 1e-8);
        let expected = after_moment - eta * wd * after_moment;
        assert!((params[0] - expected).abs() < 1e-15, "{} vs {expected}", params[0]);
    }

    #[test]
    fn decay_alone_shrinks_parameters() {
        let eta = 0.1;
        let wd = 0.5;
        let mut opt = AdamW::new(eta, wd, 2);
        let mut params = vec![2.0, -4.0];
        opt.step(&mut params, &[0.0, 0.0]);
        assert!((params[0] - 2.0 * (1.0 - eta * wd)).abs() < 1e-15);
        assert!((params[1] + 4.0 * (1.0 - eta * wd)).abs() < 1e-15);
    }

    #[test]
    fn soft_update_is_a_convex_combination() {
        let mut target = vec![0.0, 8.0];
        soft_update_flat(&mut target, &[8.0, 0.0], 0.5);
        assert_eq!(target, vec![4.0, 4.0]);
        soft_update_flat(&mut target, &[8.0, 0.0], 0.5);
        assert_eq!(target, vec![6.0, 2.0]);
        // tau = 1 copies, tau = 0 leaves unchanged.
        let mut t = vec![1.0];
        soft_update_flat(&mut t, &[5.0], 1.0);
        assert_eq!(t, vec![5.0]);
        soft_update_flat(&mut t, &[9.0], 0.0);
        assert_eq!(t, vec![5.0]);
    }

    #[test]
    fn soft_update_contracts_toward_online() {
        let online = QNetworkParams::init(1);
        let mut target = QNetworkParams::init(2);
        let tau = 0.25;
        let dist = |a: &QNetworkParams, b: &QNetworkParams| -> f64 {
            a.flatten()
                .iter()
                .zip(b.flatten())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
        };
        let before = dist(&target, &online);
        soft_update(&mut target, &online, tau);
        let after = dist(&target, &online);
        assert!((after - (1.0 - tau) * before).abs() < 1e-9);
    }
}

//! First-order training machinery shared by the lattice solver and the networks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Triangular cyclic learning rate whose amplitude halves every cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CyclicLr {
    pub min_lr: f64,
    pub max_lr: f64,
    pub cycle_len: usize,
}

impl CyclicLr {
    pub fn new(min_lr: f64, max_lr: f64, cycle_len: usize) -> Result<Self> {
        let s = Self { min_lr, max_lr, cycle_len };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min_lr > 0.0 && self.min_lr <= self.max_lr && self.max_lr.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < min_lr <= max_lr, got {} and {}",
                self.min_lr, self.max_lr
            )));
        }
        if self.cycle_len == 0 {
            return Err(Error::InvalidParameter("cycle length must be at least 1".into()));
        }
        Ok(())
    }

    /// Learning rate at step `t`.
    pub fn at(&self, t: usize) -> f64 {
        cyclic_lr(t, self)
    }
}

/// `min + (max − min)·2^{−c}·tri(t mod L)` with `c = ⌊t/L⌋` and `tri` the unit
/// triangle peaking at `L/2`.
pub fn cyclic_lr(t: usize, s: &CyclicLr) -> f64 {
    let len = s.cycle_len as f64;
    let cycle = t / s.cycle_len;
    let pos = (t % s.cycle_len) as f64 / len;
    let tri = 1.0 - (2.0 * pos - 1.0).abs();
    let amp = (s.max_lr - s.min_lr) * 0.5f64.powi(cycle.min(i32::MAX as usize) as i32);
    s.min_lr + amp * tri
}

/// Euclidean norm.
pub fn l2_norm(g: &[f64]) -> f64 {
    g.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Global-norm clipping: `g` is returned unchanged when `‖g‖ ≤ threshold`,
/// otherwise rescaled to norm `threshold`.
pub fn clip_gradient(g: &[f64], threshold: f64) -> Vec<f64> {
    let mut out = g.to_vec();
    clip_in_place(&mut out, threshold);
    out
}

/// In-place [`clip_gradient`]; returns whether the gradient was rescaled.
pub fn clip_in_place(g: &mut [f64], threshold: f64) -> bool {
    let norm = l2_norm(g);
    if norm <= threshold || !norm.is_finite() {
        return false;
    }
    let s = threshold / norm;
    g.iter_mut().for_each(|v| *v *= s);
    true
}

/// Bias-corrected Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Advances the moments with gradient `g` and returns the parameter update.
    pub fn update(&mut self, g: &[f64], lr: f64) -> Vec<f64> {
        let mut out = vec![0.0; g.len()];
        self.advance(g, lr, |i, u| out[i] = u);
        out
    }

    /// Advances the moments and adds the update to `params`.
    pub fn step(&mut self, params: &mut [f64], g: &[f64], lr: f64) {
        assert_eq!(params.len(), g.len());
        self.advance(g, lr, |i, u| params[i] += u);
    }

    fn advance(&mut self, g: &[f64], lr: f64, mut emit: impl FnMut(usize, f64)) {
        assert_eq!(g.len(), self.m.len(), "gradient length differs from optimizer state");
        self.t += 1;
        let t = self.t.min(i32::MAX as u64) as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, &gi) in g.iter().enumerate() {
            let m = self.beta1 * self.m[i] + (1.0 - self.beta1) * gi;
            let v = self.beta2 * self.v[i] + (1.0 - self.beta2) * gi * gi;
            self.m[i] = m;
            self.v[i] = v;
            emit(i, -lr * (m / c1) / ((v / c2).sqrt() + self.eps));
        }
    }
}

/// Functional form of one Adam step.
pub fn adam_step(state: &Adam, g: &[f64], lr: f64) -> (Adam, Vec<f64>) {
    let mut next = state.clone();
    let u = next.update(g, lr);
    (next, u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn sched() -> CyclicLr {
        CyclicLr::new(0.0005, 0.01, 5000).unwrap()
    }

    #[test]
    fn lr_schedule_landmarks() {
        let s = sched();
        assert_eq!(cyclic_lr(0, &s), 0.0005);
        assert_relative_eq!(cyclic_lr(2500, &s), 0.01, max_relative = 1e-15);
        assert_relative_eq!(cyclic_lr(7500, &s), 0.0005 + 0.0095 / 2.0, max_relative = 1e-15);
        assert_eq!(cyclic_lr(5000, &s), 0.0005);
        assert_relative_eq!(cyclic_lr(1250, &s), 0.0005 + 0.0095 / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn lr_schedule_rejects_bad_bounds() {
        assert!(CyclicLr::new(0.0, 0.1, 10).is_err());
        assert!(CyclicLr::new(0.2, 0.1, 10).is_err());
        assert!(CyclicLr::new(0.1, 0.1, 0).is_err());
    }

    #[test]
    fn clipping_examples() {
        let g = vec![300.0, 400.0];
        assert_eq!(clip_gradient(&g, 1000.0), g);
        let big = clip_gradient(&[1200.0, 1600.0], 1000.0);
        assert_relative_eq!(l2_norm(&big), 1000.0, max_relative = 1e-14);
        assert_relative_eq!(big[0] / big[1], 0.75, max_relative = 1e-14);
        assert_eq!(clip_gradient(&[0.0; 3], 1.0), vec![0.0; 3]);
    }

    #[test]
    fn adam_first_steps() {
        let (s, u) = adam_step(&Adam::new(2), &[0.0, 0.0], 0.1);
        assert_eq!(u, vec![0.0, 0.0]);
        assert_eq!(s.steps(), 1);

        let (_, u) = adam_step(&Adam::new(1), &[1.0], 0.01);
        assert_relative_eq!(u[0], -0.01 / (1.0 + 1e-8), max_relative = 1e-14);
    }

    #[test]
    fn adam_step_matches_in_place_form() {
        let mut a = Adam::new(3);
        let mut b = Adam::new(3);
        let mut p = vec![1.0, 2.0, 3.0];
        for k in 0..5 {
            let g = [0.1 * k as f64, -1.0, 2.0];
            let u = a.update(&g, 0.01);
            let before = p.clone();
            b.step(&mut p, &g, 0.01);
            for i in 0..3 {
                assert_eq!(p[i], before[i] + u[i]);
            }
        }
    }

    proptest! {
        #[test]
        fn lr_stays_in_band(t in 0usize..200_000) {
            let s = sched();
            let lr = cyclic_lr(t, &s);
            let cap = s.min_lr + (s.max_lr - s.min_lr) * 0.5f64.powi((t / s.cycle_len) as i32);
            prop_assert!(lr >= s.min_lr && lr <= cap * (1.0 + 1e-15));
        }

        #[test]
        fn clipped_norm_never_exceeds_threshold(g in prop::collection::vec(-1e4f64..1e4, 1..20), th in 0.1f64..1e3) {
            let c = clip_gradient(&g, th);
            prop_assert!(l2_norm(&c) <= th * (1.0 + 1e-12) || l2_norm(&g) <= th);
        }

        #[test]
        fn first_adam_step_opposes_gradient(g in prop::collection::vec(-10.0f64..10.0, 1..10)) {
            prop_assume!(g.iter().all(|v| v.abs() > 1e-6));
            let (_, u) = adam_step(&Adam::new(g.len()), &g, 0.01);
            for (gi, ui) in g.iter().zip(&u) {
                prop_assert_eq!(gi.signum(), -ui.signum());
                prop_assert!((ui.abs() - 0.01).abs() < 1e-6);
            }
        }
    }
}

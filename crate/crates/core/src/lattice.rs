//! Uniform 1-D lattices and the finite-difference calculus used on them.
//!
//! Two discrete Dirichlet forms live here:
//!
//! * [`dirichlet_energy`] uses centered differences on a mirror-padded field.
//!   This is the form the field-theory objective is built on. Both boundary
//!   sites have gradient exactly zero, so a two-site lattice always has zero
//!   energy.
//! * [`weighted_laplacian_matrix`] factors as `Gᵀ diag(w) G` with `G` the
//!   forward difference on the `D − 1` edges. Its quadratic form is the
//!   edge-based Dirichlet sum and its null space is exactly the constants.
//!
//! Both converge to `∫ p |f'|²` as the lattice is refined. They differ at
//! `O(h)` (boundary sites, and centered differences skip every other site).

use std::ops::Deref;

use crate::error::{Error, Result};

/// Uniform grid `x_i = lo + i·h` with a normalized site density.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice1D {
    lo: f64,
    hi: f64,
    spacing: f64,
    weights: Vec<f64>,
}

impl Lattice1D {
    /// Equally spaced sites on `[lo, hi]`. Weights default to uniform `1/D`;
    /// explicit weights are normalized to sum to one.
    pub fn uniform(lo: f64, hi: f64, size: usize, weights: Option<&[f64]>) -> Result<Self> {
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidLattice(format!(
                "bounds must be finite, got [{lo}, {hi}]"
            )));
        }
        if lo >= hi {
            return Err(Error::InvalidLattice(format!("need lo < hi, got [{lo}, {hi}]")));
        }
        if size < 2 {
            return Err(Error::InvalidLattice(format!(
                "need at least 2 sites, got {size}"
            )));
        }
        let weights = match weights {
            None => vec![1.0 / size as f64; size],
            Some(w) => {
                if w.len() != size {
                    return Err(Error::InvalidLattice(format!(
                        "{} weights for {size} sites",
                        w.len()
                    )));
                }
                if let Some(i) = w.iter().position(|&v| !(v > 0.0) || !v.is_finite()) {
                    return Err(Error::InvalidLattice(format!(
                        "weight {i} is not a positive finite number ({})",
                        w[i]
                    )));
                }
                let total: f64 = w.iter().sum();
                w.iter().map(|&v| v / total).collect()
            }
        };
        Ok(Self {
            lo,
            hi,
            spacing: (hi - lo) / (size - 1) as f64,
            weights,
        })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    /// Number of sites `D`.
    pub fn size(&self) -> usize {
        self.weights.len()
    }

    /// Grid spacing `h`.
    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Site density `p_i`, summing to one.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn point(&self, i: usize) -> f64 {
        if i + 1 == self.size() {
            self.hi
        } else {
            self.lo + i as f64 * self.spacing
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.size()).map(|i| self.point(i)).collect()
    }

    /// Evaluates `f` at every site.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Field {
        Field::new((0..self.size()).map(|i| f(self.point(i))).collect())
    }

    pub(crate) fn check(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.size() {
            return Err(Error::LengthMismatch {
                expected: self.size(),
                got: f.len(),
            });
        }
        Ok(())
    }
}

/// Values of a scalar function at the lattice sites.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Field(Vec<f64>);

impl Field {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn constant(value: f64, len: usize) -> Self {
        Self(vec![value; len])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field(self.0.iter().map(|&v| f(v)).collect())
    }

    /// Index of the first non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.0.iter().position(|v| !v.is_finite())
    }
}

impl Deref for Field {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for Field {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Pads `f` with one mirrored ghost node per side: `g₋₁ = f₁`, `g_D = f_{D−2}`.
///
/// The mirror makes the centered difference at either boundary site vanish,
/// which is the homogeneous Neumann condition.
pub fn pad_reflect(f: &[f64]) -> Vec<f64> {
    assert!(f.len() >= 2, "reflection padding needs at least two sites");
    let d = f.len();
    let mut out = Vec::with_capacity(d + 2);
    out.push(f[1]);
    out.extend_from_slice(f);
    out.push(f[d - 2]);
    out
}

/// Centered difference of the mirror-padded field, one value per site.
pub fn grad_centered(f: &[f64], lat: &Lattice1D) -> Result<Field> {
    lat.check(f)?;
    Ok(Field(centered_diff(f, lat.spacing())))
}

pub(crate) fn centered_diff(f: &[f64], h: f64) -> Vec<f64> {
    let d = f.len();
    let mut out = vec![0.0; d];
    let inv = 0.5 / h;
    // Boundary entries stay 0: (g_{1} - g_{-1}) with g_{-1} = f_1.
    for i in 1..d.saturating_sub(1) {
        out[i] = (f[i + 1] - f[i - 1]) * inv;
    }
    out
}

/// `Σ_i p_i (∇_h f)_i²` with the centered gradient.
pub fn dirichlet_energy(f: &[f64], lat: &Lattice1D) -> Result<f64> {
    lat.check(f)?;
    Ok(weighted_sq_grad(f, lat.weights(), lat.spacing()))
}

pub(crate) fn weighted_sq_grad(f: &[f64], p: &[f64], h: f64) -> f64 {
    let inv = 0.5 / h;
    (1..f.len().saturating_sub(1))
        .map(|i| {
            let g = (f[i + 1] - f[i - 1]) * inv;
            p[i] * g * g
        })
        .sum()
}

/// Gradient of [`dirichlet_energy`] with respect to every site value.
///
/// Writing `d_j` for the centered difference (zero at both boundary sites),
/// `∂/∂f_k Σ_j p_j d_j² = (p_{k−1} d_{k−1} − p_{k+1} d_{k+1}) / h`.
pub(crate) fn weighted_sq_grad_adjoint(f: &[f64], p: &[f64], h: f64, out: &mut [f64]) {
    let d = f.len();
    let diff = centered_diff(f, h);
    let inv_h = 1.0 / h;
    for k in 0..d {
        let left = if k >= 1 { p[k - 1] * diff[k - 1] } else { 0.0 };
        let right = if k + 1 < d { p[k + 1] * diff[k + 1] } else { 0.0 };
        out[k] = (left - right) * inv_h;
    }
}

/// Symmetric tridiagonal matrix `L = Gᵀ diag(w) G`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedLaplacian {
    diag: Vec<f64>,
    off: Vec<f64>,
}

impl WeightedLaplacian {
    pub fn size(&self) -> usize {
        self.diag.len()
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    /// Entries `L_{i,i+1} = L_{i+1,i}`.
    pub fn off_diagonal(&self) -> &[f64] {
        &self.off
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match i.abs_diff(j) {
            0 => self.diag[i],
            1 => self.off[i.min(j)],
            _ => 0.0,
        }
    }

    pub fn matvec(&self, f: &[f64]) -> Result<Vec<f64>> {
        if f.len() != self.size() {
            return Err(Error::LengthMismatch {
                expected: self.size(),
                got: f.len(),
            });
        }
        let d = f.len();
        let mut out = vec![0.0; d];
        for i in 0..d {
            let mut acc = self.diag[i] * f[i];
            if i > 0 {
                acc += self.off[i - 1] * f[i - 1];
            }
            if i + 1 < d {
                acc += self.off[i] * f[i + 1];
            }
            out[i] = acc;
        }
        Ok(out)
    }

    /// `fᵀ L f`.
    pub fn quadratic_form(&self, f: &[f64]) -> Result<f64> {
        let lf = self.matvec(f)?;
        Ok(f.iter().zip(&lf).map(|(a, b)| a * b).sum())
    }

    /// Dense row-major copy, for small lattices and tests.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let d = self.size();
        (0..d).map(|i| (0..d).map(|j| self.get(i, j)).collect()).collect()
    }
}

/// Neumann weighted Laplacian: forward differences on the `D−1` edges, edge
/// weight `w_e = (p_i + p_{i+1}) / 2`.
pub fn weighted_laplacian_matrix(lat: &Lattice1D) -> WeightedLaplacian {
    let d = lat.size();
    let p = lat.weights();
    let inv_h2 = 1.0 / (lat.spacing() * lat.spacing());
    let mut diag = vec![0.0; d];
    let mut off = vec![0.0; d - 1];
    for e in 0..d - 1 {
        let w = 0.5 * (p[e] + p[e + 1]) * inv_h2;
        diag[e] += w;
        diag[e + 1] += w;
        off[e] = -w;
    }
    WeightedLaplacian { diag, off }
}

/// Edge-based Dirichlet sum `Σ_e w_e ((f_{i+1} − f_i)/h)²`.
pub fn forward_dirichlet_sum(f: &[f64], lat: &Lattice1D) -> Result<f64> {
    lat.check(f)?;
    let p = lat.weights();
    let h = lat.spacing();
    Ok((0..f.len() - 1)
        .map(|e| {
            let g = (f[e + 1] - f[e]) / h;
            0.5 * (p[e] + p[e + 1]) * g * g
        })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn unit(d: usize) -> Lattice1D {
        Lattice1D::uniform(0.0, 1.0, d, None).unwrap()
    }

    #[test]
    fn three_site_grid() {
        let lat = unit(3);
        assert_eq!(lat.points(), vec![0.0, 0.5, 1.0]);
        assert_eq!(lat.spacing(), 0.5);
        for &p in lat.weights() {
            assert_relative_eq!(p, 1.0 / 3.0);
        }
    }

    #[test]
    fn full_scale_grid() {
        let lat = Lattice1D::uniform(-1.0, 1.0, 4096, None).unwrap();
        assert_eq!(lat.size(), 4096);
        assert_relative_eq!(lat.spacing(), 2.0 / 4095.0, max_relative = 1e-15);
        assert_eq!(lat.point(4095), 1.0);
        let pts = lat.points();
        assert!(pts.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn smallest_grid() {
        let lat = unit(2);
        assert_eq!(lat.points(), vec![0.0, 1.0]);
        assert_eq!(lat.spacing(), 1.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Lattice1D::uniform(f64::NAN, 1.0, 4, None).is_err());
        assert!(Lattice1D::uniform(0.0, f64::INFINITY, 4, None).is_err());
        assert!(Lattice1D::uniform(1.0, 0.0, 4, None).is_err());
        assert!(Lattice1D::uniform(0.0, 1.0, 1, None).is_err());
        assert!(Lattice1D::uniform(0.0, 1.0, 3, Some(&[1.0, 0.0, 1.0])).is_err());
        assert!(Lattice1D::uniform(0.0, 1.0, 3, Some(&[1.0, 1.0])).is_err());
    }

    #[test]
    fn explicit_weights_are_normalized() {
        let lat = Lattice1D::uniform(0.0, 1.0, 3, Some(&[1.0, 2.0, 1.0])).unwrap();
        assert_eq!(lat.weights(), &[0.25, 0.5, 0.25]);
    }

    #[test]
    fn reflection_padding() {
        assert_eq!(pad_reflect(&[5.0, 5.0]), vec![5.0; 4]);
        assert_eq!(pad_reflect(&[1.0, 2.0, 3.0]), vec![2.0, 1.0, 2.0, 3.0, 2.0]);
        let g = pad_reflect(&[0.0, 4.0]);
        assert_eq!(g, vec![4.0, 0.0, 4.0, 0.0]);
        // centered differences at both boundary sites
        assert_eq!(g[2] - g[0], 0.0);
        assert_eq!(g[3] - g[1], 0.0);
    }

    #[test]
    fn centered_gradient_of_linear_field() {
        let lat = unit(11);
        let f = lat.sample(|x| 2.0 * x);
        let g = grad_centered(&f, &lat).unwrap();
        assert_eq!(g[0], 0.0);
        assert_eq!(g[10], 0.0);
        for &v in &g[1..10] {
            assert_relative_eq!(v, 2.0, max_relative = 1e-12);
        }
        let c = grad_centered(&Field::constant(3.0, 11), &lat).unwrap();
        assert!(c.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn centered_gradient_of_square() {
        let lat = unit(3);
        let g = grad_centered(&lat.sample(|x| x * x), &lat).unwrap();
        assert_relative_eq!(g[1], 1.0);
    }

    #[test]
    fn energy_of_linear_field() {
        let d = 101;
        let lat = unit(d);
        let m = 3.0;
        let e = dirichlet_energy(&lat.sample(|x| m * x), &lat).unwrap();
        assert_relative_eq!(e, m * m * (d - 2) as f64 / d as f64, max_relative = 1e-12);
        assert_eq!(dirichlet_energy(&Field::constant(1.0, d), &lat).unwrap(), 0.0);
    }

    #[test]
    fn two_site_lattice_has_zero_energy() {
        // both sites are boundary sites under reflection
        let lat = unit(2);
        assert_eq!(dirichlet_energy(&[0.0, 4.0], &lat).unwrap(), 0.0);
    }

    #[test]
    fn energy_converges_to_integral() {
        let lat = unit(4096);
        // ∫₀¹ cos²x dx
        let exact = 0.5 + (2.0f64).sin() / 4.0;
        let e = dirichlet_energy(&lat.sample(f64::sin), &lat).unwrap();
        assert_relative_eq!(e, exact, max_relative = 1e-3);
        // ∫₀¹ cos²(πx) dx
        let pi = std::f64::consts::PI;
        let e = dirichlet_energy(&lat.sample(|x| (pi * x).sin() / pi), &lat).unwrap();
        assert_relative_eq!(e, 0.5, max_relative = 1e-3);
    }

    #[test]
    fn adjoint_matches_finite_differences() {
        let lat = Lattice1D::uniform(0.0, 2.0, 9, Some(&[1.0, 2.0, 3.0, 1.0, 2.0, 5.0, 1.0, 1.0, 2.0])).unwrap();
        let f: Vec<f64> = (0..9).map(|i| ((i * 7 % 5) as f64).sin()).collect();
        let mut g = vec![0.0; 9];
        weighted_sq_grad_adjoint(&f, lat.weights(), lat.spacing(), &mut g);
        let step = 1e-6;
        for k in 0..9 {
            let mut up = f.clone();
            up[k] += step;
            let mut dn = f.clone();
            dn[k] -= step;
            let fd = (dirichlet_energy(&up, &lat).unwrap() - dirichlet_energy(&dn, &lat).unwrap()) / (2.0 * step);
            assert_relative_eq!(g[k], fd, epsilon = 1e-8, max_relative = 1e-6);
        }
    }

    #[test]
    fn laplacian_hand_example() {
        let lat = unit(3);
        let l = weighted_laplacian_matrix(&lat);
        assert_relative_eq!(l.quadratic_form(&[0.0, 1.0, 0.0]).unwrap(), 8.0 / 3.0, max_relative = 1e-14);
        let lc = l.matvec(&[2.5; 3]).unwrap();
        assert!(lc.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn laplacian_null_space_is_constants() {
        let lat = Lattice1D::uniform(0.0, 1.0, 12, Some(&[1., 2., 1., 3., 1., 1., 2., 4., 1., 1., 2., 1.])).unwrap();
        let l = weighted_laplacian_matrix(&lat);
        let dense = l.to_dense();
        let m = nalgebra::DMatrix::from_fn(12, 12, |i, j| dense[i][j]);
        assert_eq!(m, m.transpose());
        let eig = m.symmetric_eigen().eigenvalues;
        let scale = eig.iter().cloned().fold(0.0, f64::max);
        let zeros = eig.iter().filter(|v| v.abs() < 1e-10 * scale).count();
        assert_eq!(zeros, 1);
        assert!(eig.iter().all(|&v| v > -1e-10 * scale));
    }

    proptest! {
        #[test]
        fn quadratic_form_is_edge_sum(
            f in prop::collection::vec(-10.0f64..10.0, 6),
            w in prop::collection::vec(0.1f64..5.0, 6),
        ) {
            let lat = Lattice1D::uniform(-1.0, 2.0, 6, Some(&w)).unwrap();
            let l = weighted_laplacian_matrix(&lat);
            let q = l.quadratic_form(&f).unwrap();
            let direct = forward_dirichlet_sum(&f, &lat).unwrap();
            prop_assert!((q - direct).abs() <= 1e-12 * direct.abs().max(1.0));
        }

        #[test]
        fn energy_ignores_constant_shift(
            f in prop::collection::vec(-10.0f64..10.0, 2..20),
            c in -100.0f64..100.0,
        ) {
            let lat = unit(f.len());
            let shifted: Vec<f64> = f.iter().map(|v| v + c).collect();
            let a = dirichlet_energy(&f, &lat).unwrap();
            let b = dirichlet_energy(&shifted, &lat).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        }

        #[test]
        fn boundary_gradient_vanishes(f in prop::collection::vec(-10.0f64..10.0, 2..20)) {
            let lat = unit(f.len());
            let g = grad_centered(&f, &lat).unwrap();
            prop_assert_eq!(g[0], 0.0);
            prop_assert_eq!(g[f.len() - 1], 0.0);
        }
    }
}

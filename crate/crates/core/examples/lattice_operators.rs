//! Discrete gradient, Dirichlet energy and the weighted graph Laplacian on a
//! small lattice.

use mvr::lattice::{dirichlet_energy, forward_dirichlet_sum, grad_centered, weighted_laplacian_matrix, Lattice1D};

fn main() -> mvr::Result<()> {
    let lat = Lattice1D::uniform(0.0, 1.0, 101, None)?;
    let f = lat.sample(|x| (2.0 * x).sin());

    let g = grad_centered(f.values(), &lat)?;
    println!("d/dx sin(2x) at x = 0.5: {:.6} (exact {:.6})", g[50], 2.0 * 1f64.cos());
    println!("Dirichlet energy of sin(2x): {:.6}", dirichlet_energy(f.values(), &lat)?);

    let l = weighted_laplacian_matrix(&lat);
    let c = l.matvec(&vec![3.0; lat.size()])?;
    println!("max |L 1| = {:.1e}", c.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    println!(
        "f'Lf = {:.6}, forward-difference sum = {:.6}",
        l.quadratic_form(f.values())?,
        forward_dirichlet_sum(f.values(), &lat)?
    );
    Ok(())
}

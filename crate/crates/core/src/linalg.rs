//! Small dense helpers shared by the operator modules.

use nalgebra::{DMatrix, DVector};

use crate::grid::EnergyGrid;
use crate::C64;

/// Quadrature weight of every degree of freedom (node-major, `d` per node).
pub fn dof_weights(grid: &EnergyGrid, d: usize) -> Vec<f64> {
    grid.weights.iter().flat_map(|&w| std::iter::repeat_n(w, d)).collect()
}

/// `W^{1/2} M W^{−1/2}`.
pub fn symmetrize(m: &DMatrix<C64>, w: &[f64]) -> DMatrix<C64> {
    let mut out = m.clone();
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            out[(i, j)] *= (w[i] / w[j]).sqrt();
        }
    }
    out
}

/// `W^{−1/2} M W^{1/2}`.
pub fn desymmetrize(m: &DMatrix<C64>, w: &[f64]) -> DMatrix<C64> {
    let mut out = m.clone();
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            out[(i, j)] *= (w[j] / w[i]).sqrt();
        }
    }
    out
}

/// Adjoint with respect to the weighted inner product: `W⁻¹ Mᴴ W`.
pub fn weighted_adjoint(m: &DMatrix<C64>, w: &[f64]) -> DMatrix<C64> {
    let mut out = m.adjoint();
    for j in 0..out.ncols() {
        for i in 0..out.nrows() {
            out[(i, j)] *= w[j] / w[i];
        }
    }
    out
}

pub fn weighted_norm(v: &DVector<C64>, w: &[f64]) -> f64 {
    v.iter().zip(w).map(|(c, &wi)| wi * c.norm_sqr()).sum::<f64>().sqrt()
}

/// `⟨u, v⟩ = Σ wᵢ ūᵢ vᵢ`.
pub fn weighted_inner(u: &DVector<C64>, v: &DVector<C64>, w: &[f64]) -> C64 {
    u.iter()
        .zip(v.iter())
        .zip(w)
        .map(|((a, b), &wi)| a.conj() * b * wi)
        .sum()
}

/// Largest entry modulus.
pub fn max_abs(m: &DMatrix<C64>) -> f64 {
    m.iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// `max |M − Mᴴ|` relative to `max |M|` (or absolute when `M = 0`).
pub fn hermitian_defect(m: &DMatrix<C64>) -> f64 {
    let scale = max_abs(m).max(1.0);
    max_abs(&(m - m.adjoint())) / scale
}

/// Spectral norm of a small dense matrix.
pub fn spectral_norm(m: &DMatrix<C64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().iter().copied().fold(0.0, f64::max)
}

/// Singular values in descending order.
pub fn singular_values_desc(m: &DMatrix<C64>) -> Vec<f64> {
    let mut s: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Condition number `σ_max/σ_min` of a square matrix.
pub fn condition_number(m: &DMatrix<C64>) -> f64 {
    let s = singular_values_desc(m);
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        _ => f64::INFINITY,
    }
}

/// Block `(i, j)` of size `d × d`.
pub fn block(m: &DMatrix<C64>, i: usize, j: usize, d: usize) -> DMatrix<C64> {
    m.view((i * d, j * d), (d, d)).into_owned()
}

/// Orthonormal basis of the column span, dropping directions below `tol` relative.
pub fn orthonormal_basis(m: &DMatrix<C64>, tol: f64) -> DMatrix<C64> {
    if m.ncols() == 0 {
        return DMatrix::zeros(m.nrows(), 0);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| svd.singular_values[k] > tol * smax && smax > 0.0)
        .collect();
    let mut out = DMatrix::zeros(m.nrows(), keep.len());
    for (c, &k) in keep.iter().enumerate() {
        out.set_column(c, &u.column(k));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetrize_round_trip() {
        let m = DMatrix::from_fn(3, 3, |i, j| C64::new(i as f64 + 1.0, j as f64));
        let w = [0.5, 2.0, 1.5];
        let back = desymmetrize(&symmetrize(&m, &w), &w);
        assert!(max_abs(&(back - &m)) < 1e-15);
    }

    #[test]
    fn weighted_adjoint_satisfies_inner_product_identity() {
        let m = DMatrix::from_fn(3, 3, |i, j| C64::new((i * 3 + j) as f64, 1.0 - j as f64));
        let w = [0.5, 2.0, 1.5];
        let u = DVector::from_vec(vec![C64::new(1.0, 2.0), C64::new(0.0, -1.0), C64::new(3.0, 0.5)]);
        let v = DVector::from_vec(vec![C64::new(-1.0, 0.0), C64::new(2.0, 1.0), C64::new(0.0, 0.5)]);
        let lhs = weighted_inner(&u, &(&m * &v), &w);
        let rhs = weighted_inner(&(weighted_adjoint(&m, &w) * &u), &v, &w);
        assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn basis_drops_dependent_columns() {
        let m = DMatrix::from_column_slice(
            3,
            2,
            &[
                C64::from(1.0),
                C64::from(0.0),
                C64::from(1.0),
                C64::from(2.0),
                C64::from(0.0),
                C64::from(2.0),
            ],
        );
        assert_eq!(orthonormal_basis(&m, 1e-12).ncols(), 1);
    }
}

//! Quadrature for Cauchy-type integrals `∫_a^b φ(ν)/(ν − z) dν`.
//!
//! The subtracted rule removes `φ(μ) + φ′(μ)(ν − μ)` from the integrand and
//! adds back the analytic integrals
//! `L(z) = ∫ dν/(ν − z)` and `M(z) = ∫ (ν − μ)/(ν − z) dν`. With `z = μ ± i0`
//! this is the principal value plus `±iπφ(μ)`. The rule is exact for linear
//! `φ` and is written as one coefficient per node, so that it composes with
//! tabulated kernels as a diagonal matrix.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;

use crate::error::{Error, Result};
use crate::grid::EnergyGrid;
use crate::interp::{derivative_stencil, Stencil};
use crate::C64;

/// Relative distance below which an energy is identified with a node.
pub const NODE_SNAP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    Plus,
    Minus,
}

impl Side {
    pub fn sign(self) -> f64 {
        match self {
            Side::Plus => 1.0,
            Side::Minus => -1.0,
        }
    }

    pub fn flip(self) -> Side {
        match self {
            Side::Plus => Side::Minus,
            Side::Minus => Side::Plus,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Plus => "+i0",
            Side::Minus => "-i0",
        })
    }
}

/// A point of the cut plane: a boundary value `μ ± i0` or an off-axis `z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryPoint {
    Boundary { energy: f64, side: Side },
    OffAxis(C64),
}

impl BoundaryPoint {
    pub fn boundary(energy: f64, side: Side) -> Self {
        BoundaryPoint::Boundary { energy, side }
    }

    pub fn off_axis(z: C64) -> Result<Self> {
        if z.im == 0.0 {
            return Err(Error::Domain(format!("off-axis point needs Im z ≠ 0, got {z}")));
        }
        Ok(BoundaryPoint::OffAxis(z))
    }

    pub fn real_part(&self) -> f64 {
        match *self {
            BoundaryPoint::Boundary { energy, .. } => energy,
            BoundaryPoint::OffAxis(z) => z.re,
        }
    }

    /// Complex value, with the boundary limit represented by its real part.
    pub fn value(&self) -> C64 {
        match *self {
            BoundaryPoint::Boundary { energy, .. } => C64::from(energy),
            BoundaryPoint::OffAxis(z) => z,
        }
    }

    pub fn conj(&self) -> Self {
        match *self {
            BoundaryPoint::Boundary { energy, side } => BoundaryPoint::Boundary {
                energy,
                side: side.flip(),
            },
            BoundaryPoint::OffAxis(z) => BoundaryPoint::OffAxis(z.conj()),
        }
    }
}

impl fmt::Display for BoundaryPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundaryPoint::Boundary { energy, side } => write!(f, "{energy}{side}"),
            BoundaryPoint::OffAxis(z) => write!(f, "{z}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CauchyRule {
    /// `w_j/(ν_j − z)`, off-axis only.
    Plain,
    /// Subtraction of the local linear part with analytic correction.
    #[default]
    Subtracted,
}

/// Per-node coefficients `c_j` with `∫ φ(ν)/(ν − z) dν ≈ Σ_j c_j φ(ν_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CauchyWeights {
    pub coeffs: Vec<C64>,
    /// Node identified with `Re z`, if any.
    pub node: Option<usize>,
    /// `Re z` lies within one spacing of an interval end.
    pub near_boundary: bool,
}

/// `L(z) = ∫_a^b dν/(ν − z)`.
pub fn log_term(a: f64, b: f64, point: &BoundaryPoint) -> C64 {
    match *point {
        BoundaryPoint::Boundary { energy, side } => C64::new(((b - energy) / (energy - a)).ln(), side.sign() * PI),
        BoundaryPoint::OffAxis(z) => (C64::from(b) - z).ln() - (C64::from(a) - z).ln(),
    }
}

/// Subtraction point and node for `point`: boundary values snap to a node
/// within [`NODE_SNAP`], off-axis points always subtract at the nearest node.
fn subtraction_point(grid: &EnergyGrid, point: &BoundaryPoint) -> (f64, Option<usize>) {
    let re = point.real_part();
    let k = grid.nearest_node(re);
    match point {
        BoundaryPoint::OffAxis(_) => (grid.nodes[k], Some(k)),
        BoundaryPoint::Boundary { .. } => {
            if (grid.nodes[k] - re).abs() <= NODE_SNAP * grid.width() {
                (grid.nodes[k], Some(k))
            } else {
                (re, None)
            }
        }
    }
}

pub fn cauchy_weights(grid: &EnergyGrid, point: &BoundaryPoint, rule: CauchyRule) -> Result<CauchyWeights> {
    let re = point.real_part();
    if !(re > grid.a && re < grid.b) && matches!(point, BoundaryPoint::Boundary { .. }) {
        return Err(Error::Domain(format!(
            "boundary value at {re} outside ({}, {})",
            grid.a, grid.b
        )));
    }
    let near_boundary = {
        let edge = grid.spacing(0).max(grid.spacing(grid.len() - 1));
        re - grid.a < edge || grid.b - re < edge
    };
    match rule {
        CauchyRule::Plain => {
            let z = match point {
                BoundaryPoint::OffAxis(z) => *z,
                BoundaryPoint::Boundary { .. } => {
                    return Err(Error::Domain(
                        "the plain rule has no boundary values; use the subtracted rule".into(),
                    ))
                }
            };
            let coeffs = grid
                .nodes
                .iter()
                .zip(&grid.weights)
                .map(|(&nu, &w)| C64::from(w) / (C64::from(nu) - z))
                .collect();
            Ok(CauchyWeights {
                coeffs,
                node: None,
                near_boundary,
            })
        }
        CauchyRule::Subtracted => {
            let (mu, node) = subtraction_point(grid, point);
            let z = match point {
                BoundaryPoint::Boundary { .. } => C64::from(mu),
                BoundaryPoint::OffAxis(z) => *z,
            };
            let singular = matches!(point, BoundaryPoint::Boundary { .. });
            let value = match node {
                Some(m) => Stencil::delta(m),
                None => grid.interp_stencil(mu),
            };
            let slope = derivative_stencil(&grid.nodes, mu);
            let lz = log_term(
                grid.a,
                grid.b,
                &match point {
                    BoundaryPoint::Boundary { side, .. } => BoundaryPoint::boundary(mu, *side),
                    p => *p,
                },
            );
            let mz = C64::from(grid.width()) + (z - mu) * lz;
            let mut coeffs = vec![C64::from(0.0); grid.len()];
            let (mut s0, mut s1) = (C64::from(0.0), C64::from(0.0));
            for (j, (&nu, &w)) in grid.nodes.iter().zip(&grid.weights).enumerate() {
                if singular && node == Some(j) {
                    continue;
                }
                let inv = C64::from(w) / (C64::from(nu) - z);
                coeffs[j] = inv;
                s0 += inv;
                s1 += inv * (nu - mu);
            }
            for (j, p) in value.indices() {
                coeffs[j] += (lz - s0) * p;
            }
            for (j, q) in slope.indices() {
                coeffs[j] += (mz - s1) * q;
            }
            Ok(CauchyWeights {
                coeffs,
                node,
                near_boundary,
            })
        }
    }
}

/// Apply a rule to sampled values.
pub fn cauchy_integral(grid: &EnergyGrid, values: &[C64], point: &BoundaryPoint, rule: CauchyRule) -> Result<C64> {
    let w = cauchy_weights(grid, point, rule)?;
    Ok(w.coeffs.iter().zip(values).map(|(c, v)| c * v).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, Scheme};

    fn grid(n: usize) -> EnergyGrid {
        build_grid(0.0, 1.0, n, Scheme::GaussLegendre).unwrap()
    }

    #[test]
    fn constant_pv_is_exact() {
        let g = grid(41);
        let ones = vec![C64::from(1.0); 41];
        for &mu in &[g.nodes[7], 0.3141, g.nodes[20], 0.9] {
            let plus = cauchy_integral(
                &g,
                &ones,
                &BoundaryPoint::boundary(mu, Side::Plus),
                CauchyRule::Subtracted,
            )
            .unwrap();
            let exact = ((1.0 - mu) / mu).ln();
            assert!((plus.re - exact).abs() < 1e-12, "mu {mu}");
            assert!((plus.im - PI).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_functions_are_exact_everywhere() {
        let g = grid(33);
        let phi: Vec<C64> = g.nodes.iter().map(|&x| C64::new(2.0 - 3.0 * x, x)).collect();
        let z = C64::new(0.4, 0.05);
        let lz = (C64::from(1.0) - z).ln() - (-z).ln();
        let exact = (C64::new(2.0, 0.0) + C64::new(-3.0, 1.0) * z) * lz + C64::new(-3.0, 1.0);
        let got = cauchy_integral(&g, &phi, &BoundaryPoint::OffAxis(z), CauchyRule::Subtracted).unwrap();
        assert!((got - exact).norm() < 1e-12);
    }

    #[test]
    fn smooth_boundary_value_converges() {
        // PV ∫₀¹ ν²/(ν − μ) dν = 1/2 + μ + μ² ln((1−μ)/μ)
        let mu: f64 = 0.37;
        let exact = 0.5 + mu + mu * mu * ((1.0 - mu) / mu).ln();
        for n in [41, 81] {
            let g = grid(n);
            let phi: Vec<C64> = g.nodes.iter().map(|&x| C64::from(x * x)).collect();
            let got = cauchy_integral(
                &g,
                &phi,
                &BoundaryPoint::boundary(mu, Side::Minus),
                CauchyRule::Subtracted,
            )
            .unwrap();
            assert!((got.re - exact).abs() < 1e-6, "n {n}: {}", got.re - exact);
            assert!((got.im + PI * mu * mu).abs() < 1e-6);
        }
    }

    #[test]
    fn plain_rule_rejects_boundary_values() {
        let g = grid(16);
        assert!(cauchy_weights(&g, &BoundaryPoint::boundary(0.5, Side::Plus), CauchyRule::Plain).is_err());
        assert!(BoundaryPoint::off_axis(C64::from(0.5)).is_err());
        assert!(cauchy_weights(&g, &BoundaryPoint::boundary(1.2, Side::Plus), CauchyRule::Subtracted).is_err());
    }

    #[test]
    fn near_boundary_flag() {
        let g = grid(16);
        let w = cauchy_weights(
            &g,
            &BoundaryPoint::boundary(g.nodes[0], Side::Plus),
            CauchyRule::Subtracted,
        )
        .unwrap();
        assert!(w.near_boundary);
        assert_eq!(w.node, Some(0));
        let w = cauchy_weights(&g, &BoundaryPoint::boundary(0.5, Side::Plus), CauchyRule::Subtracted).unwrap();
        assert!(!w.near_boundary);
    }

    #[test]
    fn conjugate_sides_are_conjugate() {
        let g = grid(25);
        for mu in [g.nodes[5], 0.61] {
            let p = cauchy_weights(&g, &BoundaryPoint::boundary(mu, Side::Plus), CauchyRule::Subtracted).unwrap();
            let m = cauchy_weights(&g, &BoundaryPoint::boundary(mu, Side::Minus), CauchyRule::Subtracted).unwrap();
            for (x, y) in p.coeffs.iter().zip(&m.coeffs) {
                assert_eq!(*x, y.conj());
            }
        }
    }
}

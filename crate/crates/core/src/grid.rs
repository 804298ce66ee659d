//! Energy interval discretization, the rescaled line grid and the unitary map
//! between the two representations.
//!
//! The energy interval `[a, b]` is mapped onto the real line by
//! `x = ½ ln((λ − a)/(b − λ))`, with inverse `λ(x) = (a + b e^{2x})/(1 + e^{2x})`.
//! [`UMap`] implements `[Uf](x) = √((b−a)/2) sech(x) f(λ(x))` and its inverse,
//! using local Lagrange interpolation for off-node evaluations.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::interp::{interp_stencil, lagrange_stencil, Stencil};
use crate::C64;

/// Stencil width for off-node reads of line-grid functions.
pub const LINE_INTERP_POINTS: usize = 6;

/// Smallest admissible number of energy nodes.
pub const MIN_NODES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    CompositeMidpoint,
    #[default]
    GaussLegendre,
}

/// Quadrature nodes and weights on `[a, b]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyGrid {
    pub a: f64,
    pub b: f64,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub scheme: Scheme,
}

/// Anything carrying a positive quadrature weight per node.
pub trait Quadrature {
    fn node_count(&self) -> usize;
    fn weight(&self, i: usize) -> f64;
}

impl EnergyGrid {
    pub fn new(a: f64, b: f64, n: usize, scheme: Scheme) -> Result<Self> {
        build_grid(a, b, n, scheme)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn width(&self) -> f64 {
        self.b - self.a
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.a + self.b)
    }

    /// Index of the node closest to `lambda`.
    pub fn nearest_node(&self, lambda: f64) -> usize {
        let k = self.nodes.partition_point(|&v| v < lambda);
        if k == 0 {
            0
        } else if k == self.len() {
            k - 1
        } else if (self.nodes[k] - lambda).abs() < (lambda - self.nodes[k - 1]).abs() {
            k
        } else {
            k - 1
        }
    }

    /// Local node spacing around node `i`.
    pub fn spacing(&self, i: usize) -> f64 {
        let n = self.len();
        if i == 0 {
            self.nodes[1] - self.nodes[0]
        } else if i + 1 == n {
            self.nodes[n - 1] - self.nodes[n - 2]
        } else {
            0.5 * (self.nodes[i + 1] - self.nodes[i - 1])
        }
    }

    pub fn max_spacing(&self) -> f64 {
        self.nodes.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }

    pub fn interp_stencil(&self, lambda: f64) -> Stencil {
        interp_stencil(&self.nodes, lambda)
    }
}

impl Quadrature for EnergyGrid {
    fn node_count(&self) -> usize {
        self.len()
    }
    fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }
}

/// Build a quadrature grid on `[a, b]` with `n` nodes.
pub fn build_grid(a: f64, b: f64, n: usize, scheme: Scheme) -> Result<EnergyGrid> {
    if !(a.is_finite() && b.is_finite()) || b <= a {
        return Err(Error::Config(format!("interval requires a < b, got a = {a}, b = {b}")));
    }
    if n < MIN_NODES {
        return Err(Error::Config(format!("grid needs at least {MIN_NODES} nodes, got {n}")));
    }
    let (nodes, weights) = match scheme {
        Scheme::CompositeMidpoint => {
            let h = (b - a) / n as f64;
            ((0..n).map(|k| a + (k as f64 + 0.5) * h).collect(), vec![h; n])
        }
        Scheme::GaussLegendre => {
            let (x, w) = gauss_legendre(n);
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            (
                x.iter().map(|&t| mid + half * t).collect(),
                w.iter().map(|&v| half * v).collect(),
            )
        }
    };
    Ok(EnergyGrid {
        a,
        b,
        nodes,
        weights,
        scheme,
    })
}

/// Gauss–Legendre nodes (ascending) and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut t = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, t);
            dp = d;
            let step = p / d;
            t -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, t);
        if d != 0.0 {
            dp = d;
        }
        let wi = 2.0 / ((1.0 - t * t) * dp * dp);
        // roots come out descending from +1
        x[n - 1 - i] = t;
        x[i] = -t;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

/// `(P_n(t), P_n'(t))` by the three-term recurrence.
fn legendre(n: usize, t: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = t;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * t * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let dp = n as f64 * (t * p - p0) / (t * t - 1.0);
    (p, dp)
}

/// `x = ½ ln((λ − a)/(b − λ))`.
pub fn rescale_energy(lambda: f64, a: f64, b: f64) -> Result<f64> {
    if !(lambda > a && lambda < b) {
        return Err(Error::Domain(format!(
            "energy {lambda} outside the open interval ({a}, {b})"
        )));
    }
    Ok(0.5 * ((lambda - a) / (b - lambda)).ln())
}

/// `λ(x) = (a + b e^{2x})/(1 + e^{2x})`, written to avoid overflow.
pub fn energy_of(x: f64, a: f64, b: f64) -> f64 {
    a + (b - a) / (1.0 + (-2.0 * x).exp())
}

/// Uniform periodic grid on `[-L, L)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineGrid {
    pub half_width: f64,
    pub count: usize,
    pub h: f64,
    pub nodes: Vec<f64>,
}

impl LineGrid {
    pub fn new(half_width: f64, count: usize) -> Result<Self> {
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::Config(format!(
                "line half width must be positive, got {half_width}"
            )));
        }
        if count < 8 || !count.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "line grid count must be even and at least 8, got {count}"
            )));
        }
        let h = 2.0 * half_width / count as f64;
        let nodes = (0..count).map(|k| -half_width + k as f64 * h).collect();
        Ok(LineGrid {
            half_width,
            count,
            h,
            nodes,
        })
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Values of the conjugated energy `h̃₀(x) = λ(x)` at the nodes.
    pub fn energies(&self, a: f64, b: f64) -> Vec<f64> {
        self.nodes.iter().map(|&x| energy_of(x, a, b)).collect()
    }
}

impl Quadrature for LineGrid {
    fn node_count(&self) -> usize {
        self.count
    }
    fn weight(&self, _i: usize) -> f64 {
        self.h
    }
}

/// `ℂᵈ`-valued samples, stored node-major: component `p` of node `i` sits at `i·d + p`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub dim: usize,
    pub values: DVector<C64>,
}

impl GridFunction {
    pub fn zeros(nodes: usize, dim: usize) -> Self {
        GridFunction {
            dim,
            values: DVector::zeros(nodes * dim),
        }
    }

    pub fn from_vector(dim: usize, values: DVector<C64>) -> Result<Self> {
        if dim == 0 || !values.len().is_multiple_of(dim) {
            return Err(Error::Shape(format!(
                "vector of length {} is not a multiple of dimension {dim}",
                values.len()
            )));
        }
        Ok(GridFunction { dim, values })
    }

    /// Sample `f(x, p)` at every node `x` and component `p`.
    pub fn from_fn(points: &[f64], dim: usize, f: impl Fn(f64, usize) -> C64) -> Self {
        let values = DVector::from_iterator(
            points.len() * dim,
            points
                .iter()
                .flat_map(|&x| (0..dim).map(move |p| (x, p)))
                .map(|(x, p)| f(x, p)),
        );
        GridFunction { dim, values }
    }

    pub fn node_count(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn at(&self, i: usize) -> &[C64] {
        &self.values.as_slice()[i * self.dim..(i + 1) * self.dim]
    }

    pub fn norm_sq(&self, q: &impl Quadrature) -> f64 {
        assert_eq!(q.node_count(), self.node_count(), "grid/function mismatch");
        (0..self.node_count())
            .map(|i| q.weight(i) * self.at(i).iter().map(|c| c.norm_sqr()).sum::<f64>())
            .sum()
    }

    pub fn norm(&self, q: &impl Quadrature) -> f64 {
        self.norm_sq(q).sqrt()
    }

    /// Weighted inner product `⟨self, other⟩`, antilinear in `self`.
    pub fn inner(&self, other: &GridFunction, q: &impl Quadrature) -> C64 {
        let d = self.dim;
        (0..self.node_count())
            .map(|i| {
                let s: C64 = (0..d)
                    .map(|p| self.values[i * d + p].conj() * other.values[i * d + p])
                    .sum();
                s * q.weight(i)
            })
            .sum()
    }
}

/// Largest entry modulus.
pub fn max_abs(v: &DVector<C64>) -> f64 {
    v.iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Weighted 2-norm of a node-major vector with `dim` components per node.
pub fn weighted_norm(v: &DVector<C64>, weights: &[f64], dim: usize) -> f64 {
    v.iter()
        .enumerate()
        .map(|(k, c)| weights[k / dim] * c.norm_sqr())
        .sum::<f64>()
        .sqrt()
}

/// Precomputed interpolation stencils for `U` and `U⁻¹` between a fixed pair of grids.
#[derive(Debug, Clone)]
pub struct UMap {
    forward: Vec<(f64, Stencil)>,
    backward: Vec<(f64, Option<Stencil>)>,
    energy_nodes: usize,
    line_nodes: usize,
}

impl UMap {
    pub fn new(grid: &EnergyGrid, line: &LineGrid) -> Self {
        let (a, b) = (grid.a, grid.b);
        let scale = (0.5 * (b - a)).sqrt();
        let forward = line
            .nodes
            .iter()
            .map(|&x| {
                let lam = energy_of(x, a, b);
                (scale / x.cosh(), interp_stencil(&grid.nodes, lam))
            })
            .collect();
        let backward = grid
            .nodes
            .iter()
            .map(|&lam| {
                let x = rescale_energy(lam, a, b).expect("grid nodes are interior");
                let factor = x.cosh() * (2.0 / (b - a)).sqrt();
                if x.abs() > line.half_width {
                    (factor, None)
                } else {
                    (factor, Some(lagrange_stencil(&line.nodes, x, LINE_INTERP_POINTS)))
                }
            })
            .collect();
        UMap {
            forward,
            backward,
            energy_nodes: grid.len(),
            line_nodes: line.len(),
        }
    }

    /// `[Uf](x_k)` for a node-major vector with `dim` components per energy node.
    pub fn forward(&self, f: &DVector<C64>, dim: usize) -> DVector<C64> {
        assert_eq!(f.len(), self.energy_nodes * dim, "U: input shape mismatch");
        let mut out = DVector::zeros(self.line_nodes * dim);
        for (k, (factor, st)) in self.forward.iter().enumerate() {
            for (j, c) in st.indices() {
                for p in 0..dim {
                    out[k * dim + p] += f[j * dim + p] * (c * factor);
                }
            }
        }
        out
    }

    /// `[U⁻¹φ](λ_i)` with `φ` taken as zero outside `[-L, L]`.
    pub fn backward(&self, phi: &DVector<C64>, dim: usize) -> DVector<C64> {
        assert_eq!(phi.len(), self.line_nodes * dim, "U⁻¹: input shape mismatch");
        let mut out = DVector::zeros(self.energy_nodes * dim);
        for (i, (factor, st)) in self.backward.iter().enumerate() {
            if let Some(st) = st {
                for (k, c) in st.indices() {
                    for p in 0..dim {
                        out[i * dim + p] += phi[k * dim + p] * (c * factor);
                    }
                }
            }
        }
        out
    }
}

/// `Uf` as a function on the line grid.
pub fn apply_u(grid: &EnergyGrid, f: &GridFunction, line: &LineGrid) -> Result<GridFunction> {
    if f.node_count() != grid.len() {
        return Err(Error::Shape(format!(
            "function has {} nodes, grid has {}",
            f.node_count(),
            grid.len()
        )));
    }
    let map = UMap::new(grid, line);
    GridFunction::from_vector(f.dim, map.forward(&f.values, f.dim))
}

/// `U⁻¹φ` as a function on the energy grid.
pub fn apply_uinv(line: &LineGrid, phi: &GridFunction, grid: &EnergyGrid) -> Result<GridFunction> {
    if phi.node_count() != line.len() {
        return Err(Error::Shape(format!(
            "function has {} nodes, line grid has {}",
            phi.node_count(),
            line.len()
        )));
    }
    let map = UMap::new(grid, line);
    GridFunction::from_vector(phi.dim, map.backward(&phi.values, phi.dim))
}

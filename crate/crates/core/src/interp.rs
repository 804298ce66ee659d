//! Local Lagrange stencils on sorted node sets.
//!
//! Every off-node evaluation in the crate (the U maps, the scattering matrix
//! between nodes, subtraction terms of the Cauchy rule) goes through these
//! two stencils so that all of them share the same local order.

/// Points used for value interpolation.
pub const INTERP_POINTS: usize = 4;
/// Points used for derivative estimates.
pub const DERIV_POINTS: usize = 5;

/// Linear functional `f ↦ Σ coeffs[k] f[start + k]` over a contiguous run of nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Stencil {
    pub start: usize,
    pub coeffs: Vec<f64>,
}

impl Stencil {
    pub fn delta(index: usize) -> Self {
        Stencil {
            start: index,
            coeffs: vec![1.0],
        }
    }

    pub fn indices(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.coeffs.iter().enumerate().map(move |(k, &c)| (self.start + k, c))
    }

    pub fn apply(&self, values: &[f64]) -> f64 {
        self.indices().map(|(j, c)| c * values[j]).sum()
    }

    /// Coefficient attached to node `j` (zero outside the stencil).
    pub fn coeff(&self, j: usize) -> f64 {
        if j >= self.start && j < self.start + self.coeffs.len() {
            self.coeffs[j - self.start]
        } else {
            0.0
        }
    }
}

/// First index of a run of `npts` nodes centred on `x`, shifted inwards at the ends.
pub fn stencil_start(nodes: &[f64], x: f64, npts: usize) -> usize {
    let n = nodes.len();
    assert!(n >= npts, "need at least {npts} nodes, got {n}");
    let upper = nodes.partition_point(|&v| v <= x);
    let raw = if npts % 2 == 1 {
        // odd stencils are centred on the nearest node
        let nearest = if upper == 0 {
            0
        } else if upper < n && nodes[upper] - x < x - nodes[upper - 1] {
            upper
        } else {
            upper - 1
        };
        nearest.saturating_sub(npts / 2)
    } else {
        upper.saturating_sub(npts / 2)
    };
    raw.min(n - npts)
}

/// Lagrange interpolation weights at `x` on a 4-point stencil.
///
/// Exact on cubics. Outside the node range the end stencils extrapolate.
pub fn interp_stencil(nodes: &[f64], x: f64) -> Stencil {
    lagrange_stencil(nodes, x, INTERP_POINTS)
}

pub fn lagrange_stencil(nodes: &[f64], x: f64, npts: usize) -> Stencil {
    let start = stencil_start(nodes, x, npts);
    let pts = &nodes[start..start + npts];
    if let Some(k) = pts.iter().position(|&p| p == x) {
        let mut coeffs = vec![0.0; npts];
        coeffs[k] = 1.0;
        return Stencil { start, coeffs };
    }
    // barycentric form
    let bary: Vec<f64> = (0..npts)
        .map(|k| 1.0 / (0..npts).filter(|&j| j != k).map(|j| pts[k] - pts[j]).product::<f64>())
        .collect();
    let terms: Vec<f64> = (0..npts).map(|k| bary[k] / (x - pts[k])).collect();
    let denom: f64 = terms.iter().sum();
    Stencil {
        start,
        coeffs: terms.into_iter().map(|t| t / denom).collect(),
    }
}

/// Weights of the derivative of the 5-point Lagrange interpolant at `x`.
///
/// At an interior node this is the centred five-point difference; near the
/// ends the stencil becomes one-sided. Exact on quartics.
pub fn derivative_stencil(nodes: &[f64], x: f64) -> Stencil {
    let npts = DERIV_POINTS;
    let start = stencil_start(nodes, x, npts);
    let pts = &nodes[start..start + npts];
    let coeffs = (0..npts)
        .map(|j| {
            let mut total = 0.0;
            for m in (0..npts).filter(|&m| m != j) {
                let mut term = 1.0 / (pts[j] - pts[m]);
                for k in (0..npts).filter(|&k| k != j && k != m) {
                    term *= (x - pts[k]) / (pts[j] - pts[k]);
                }
                total += term;
            }
            total
        })
        .collect();
    Stencil { start, coeffs }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Vec<f64> {
        (0..n).map(|i| (i as f64 + 0.3 * (i as f64).sin()) / n as f64).collect()
    }

    #[test]
    fn interpolation_is_exact_on_cubics() {
        let nodes = grid(20);
        let f = |x: f64| 1.0 - 2.0 * x + 3.0 * x * x - 0.5 * x.powi(3);
        let vals: Vec<f64> = nodes.iter().map(|&x| f(x)).collect();
        for &x in &[0.0, 0.013, 0.41, 0.77, 0.999, 1.02] {
            let s = interp_stencil(&nodes, x);
            assert!((s.apply(&vals) - f(x)).abs() < 1e-12, "x = {x}");
        }
    }

    #[test]
    fn node_hit_gives_delta() {
        let nodes = grid(10);
        let s = interp_stencil(&nodes, nodes[4]);
        assert_eq!(s.coeff(4), 1.0);
        assert_eq!(s.coeffs.iter().filter(|&&c| c != 0.0).count(), 1);
    }

    #[test]
    fn derivative_is_exact_on_quartics() {
        let nodes = grid(30);
        let f = |x: f64| x.powi(4) - x * x + 0.25 * x;
        let df = |x: f64| 4.0 * x.powi(3) - 2.0 * x + 0.25;
        let vals: Vec<f64> = nodes.iter().map(|&x| f(x)).collect();
        for i in [0usize, 1, 2, 14, 28, 29] {
            let s = derivative_stencil(&nodes, nodes[i]);
            assert!((s.apply(&vals) - df(nodes[i])).abs() < 1e-9, "node {i}");
        }
        let s = derivative_stencil(&nodes, 0.5123);
        assert!((s.apply(&vals) - df(0.5123)).abs() < 1e-9);
    }

    #[test]
    fn centred_at_interior_nodes() {
        let nodes = grid(30);
        assert_eq!(derivative_stencil(&nodes, nodes[10]).start, 8);
        assert_eq!(interp_stencil(&nodes, 0.5 * (nodes[10] + nodes[11])).start, 9);
        assert_eq!(interp_stencil(&nodes, -1.0).start, 0);
        assert_eq!(interp_stencil(&nodes, 5.0).start, 26);
    }
}

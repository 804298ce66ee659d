//! On-shell scattering matrix `s(λ) = I − 2πi t(λ, λ, λ + i0)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;

use crate::cauchy::Side;
use crate::error::{Error, Result};
use crate::fredholm::TKernel;
use crate::grid::{EnergyGrid, LineGrid};
use crate::interp::interp_stencil;
use crate::kernel::{fit_power_law, HolderEstimate};
use crate::linalg::spectral_norm;
use crate::C64;

/// Width of the continuity window around an embedded eigenvalue, relative to `b − a`.
pub const CONTINUITY_WINDOW: f64 = 0.05;
const CONTINUITY_LAGS: [usize; 6] = [1, 2, 3, 4, 6, 8];

#[derive(Debug, Clone)]
pub struct ScatteringData {
    pub grid: EnergyGrid,
    pub d: usize,
    pub matrices: Vec<DMatrix<C64>>,
    /// `‖s(λᵢ)s(λᵢ)* − I‖`.
    pub unitarity_defects: Vec<f64>,
    /// `‖s(λᵢ₊₁) − s(λᵢ)‖`.
    pub continuity_moduli: Vec<f64>,
}

fn unitarity_defect(s: &DMatrix<C64>) -> f64 {
    let d = s.nrows();
    spectral_norm(&(s * s.adjoint() - DMatrix::<C64>::identity(d, d)))
}

impl ScatteringData {
    pub fn from_matrices(grid: EnergyGrid, matrices: Vec<DMatrix<C64>>) -> Result<Self> {
        if matrices.len() != grid.len() {
            return Err(Error::Shape(format!(
                "{} matrices for {} nodes",
                matrices.len(),
                grid.len()
            )));
        }
        let d = matrices.first().map_or(0, |m| m.nrows());
        let unitarity_defects = matrices.iter().map(unitarity_defect).collect();
        let continuity_moduli = matrices.windows(2).map(|p| spectral_norm(&(&p[1] - &p[0]))).collect();
        Ok(ScatteringData {
            grid,
            d,
            matrices,
            unitarity_defects,
            continuity_moduli,
        })
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    /// `s(λ)` by entrywise 4-point interpolation.
    pub fn at(&self, lambda: f64) -> DMatrix<C64> {
        let st = interp_stencil(&self.grid.nodes, lambda);
        let mut out = DMatrix::zeros(self.d, self.d);
        for (j, c) in st.indices() {
            out += &self.matrices[j] * C64::from(c);
        }
        out
    }

    /// Block-diagonal multiplication by `s(λᵢ)` on a node-major vector.
    pub fn apply(&self, f: &DVector<C64>) -> DVector<C64> {
        multiply_blocks(&self.matrices, f, self.d)
    }

    /// Multiplication by `s(λᵢ)*`.
    pub fn apply_adjoint(&self, f: &DVector<C64>) -> DVector<C64> {
        let adj: Vec<DMatrix<C64>> = self.matrices.iter().map(|m| m.adjoint()).collect();
        multiply_blocks(&adj, f, self.d)
    }

    /// CSV with columns `lambda`, `re_s_pq`, `im_s_pq` (1-based, row-major), `unitarity_defect`.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["lambda".to_string()];
        for p in 1..=self.d {
            for q in 1..=self.d {
                header.push(format!("re_s_{p}{q}"));
                header.push(format!("im_s_{p}{q}"));
            }
        }
        header.push("unitarity_defect".into());
        out.write_record(&header)?;
        for (i, s) in self.matrices.iter().enumerate() {
            let mut row = vec![format!("{:.17e}", self.grid.nodes[i])];
            for p in 0..self.d {
                for q in 0..self.d {
                    row.push(format!("{:.17e}", s[(p, q)].re));
                    row.push(format!("{:.17e}", s[(p, q)].im));
                }
            }
            row.push(format!("{:.17e}", self.unitarity_defects[i]));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

pub(crate) fn multiply_blocks(blocks: &[DMatrix<C64>], f: &DVector<C64>, d: usize) -> DVector<C64> {
    let mut out = DVector::zeros(f.len());
    for (i, m) in blocks.iter().enumerate() {
        let v = m * f.rows(i * d, d);
        out.rows_mut(i * d, d).copy_from(&v);
    }
    out
}

/// `s(λᵢ) = I − 2πi·t(λᵢ, λᵢ, λᵢ + i0)`.
pub fn scattering_matrix(tk: &TKernel) -> Result<ScatteringData> {
    if tk.side != Side::Plus {
        return Err(Error::Precondition(
            "the scattering matrix needs the +i0 T-kernel".into(),
        ));
    }
    let d = tk.d;
    let matrices = (0..tk.len())
        .map(|i| DMatrix::<C64>::identity(d, d) - tk.diagonal(i) * C64::new(0.0, 2.0 * PI))
        .collect();
    ScatteringData::from_matrices(tk.grid.clone(), matrices)
}

/// `I + 2πi·t(λᵢ, λᵢ, λᵢ − i0)`, which equals `s(λᵢ)*`.
pub fn adjoint_from_minus_side(tk: &TKernel) -> Result<Vec<DMatrix<C64>>> {
    if tk.side != Side::Minus {
        return Err(Error::Precondition("expected the −i0 T-kernel".into()));
    }
    let d = tk.d;
    Ok((0..tk.len())
        .map(|i| DMatrix::<C64>::identity(d, d) + tk.diagonal(i) * C64::new(0.0, 2.0 * PI))
        .collect())
}

/// `maxᵢ ‖s(λᵢ)s(λᵢ)* − I‖`.
pub fn check_unitarity(sd: &ScatteringData) -> f64 {
    sd.unitarity_defects.iter().copied().fold(0.0, f64::max)
}

/// Singular values of `s(λᵢ) − I`, descending, at every node.
pub fn deviation_spectrum(sd: &ScatteringData) -> Vec<Vec<f64>> {
    let d = sd.d;
    sd.matrices
        .iter()
        .map(|s| crate::linalg::singular_values_desc(&(s - DMatrix::<C64>::identity(d, d))))
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LocalContinuity {
    pub eigenvalue: f64,
    pub estimate: HolderEstimate,
    pub max_modulus: f64,
    pub nodes: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ContinuityReport {
    pub global: HolderEstimate,
    pub max_modulus: f64,
    pub local: Vec<LocalContinuity>,
}

/// Power-law fit of `max ‖s(λ_{i+k}) − s(λᵢ)‖` over lags `k` for nodes in `range`.
fn lag_fit(sd: &ScatteringData, nodes: &[usize]) -> HolderEstimate {
    let mut scales = Vec::new();
    let mut moduli = Vec::new();
    for &k in &CONTINUITY_LAGS {
        let mut offsets = Vec::new();
        let mut best: f64 = 0.0;
        for w in nodes.windows(k + 1) {
            let (i, j) = (w[0], w[k]);
            if j != i + k {
                continue;
            }
            offsets.push(sd.grid.nodes[j] - sd.grid.nodes[i]);
            best = best.max(spectral_norm(&(&sd.matrices[j] - &sd.matrices[i])));
        }
        if offsets.is_empty() {
            continue;
        }
        offsets.sort_by(f64::total_cmp);
        scales.push(offsets[offsets.len() / 2]);
        moduli.push(best);
    }
    fit_power_law(&scales, &moduli)
}

/// Hölder fits of `λ ↦ s(λ)`.
///
/// The global fit uses the central 80% of the grid outside the windows; each
/// local fit uses the nodes within `CONTINUITY_WINDOW·(b − a)/2` of `λₙ`.
pub fn check_continuity(sd: &ScatteringData, embedded: &[f64]) -> ContinuityReport {
    let g = &sd.grid;
    let w = g.width();
    let half = 0.5 * CONTINUITY_WINDOW * w;
    let central: Vec<usize> = (0..g.len())
        .filter(|&i| {
            let x = g.nodes[i];
            x > g.a + 0.1 * w && x < g.b - 0.1 * w && embedded.iter().all(|&e| (x - e).abs() > half)
        })
        .collect();
    let local = embedded
        .iter()
        .map(|&e| {
            let nodes: Vec<usize> = (0..g.len()).filter(|&i| (g.nodes[i] - e).abs() <= half).collect();
            let max_modulus = nodes.windows(2).map(|p| sd.continuity_moduli[p[0]]).fold(0.0, f64::max);
            LocalContinuity {
                eigenvalue: e,
                estimate: lag_fit(sd, &nodes),
                max_modulus,
                nodes: nodes.len(),
            }
        })
        .collect();
    ContinuityReport {
        global: lag_fit(sd, &central),
        max_modulus: sd.continuity_moduli.iter().copied().fold(0.0, f64::max),
        local,
    }
}

/// `S̃`: multiplication by `s(λ(x))` on the line grid.
#[derive(Debug, Clone)]
pub struct STilde {
    pub line: LineGrid,
    pub d: usize,
    pub energies: Vec<f64>,
    pub matrices: Vec<DMatrix<C64>>,
}

impl STilde {
    pub fn apply(&self, phi: &DVector<C64>) -> DVector<C64> {
        multiply_blocks(&self.matrices, phi, self.d)
    }

    pub fn apply_adjoint(&self, phi: &DVector<C64>) -> DVector<C64> {
        let adj: Vec<DMatrix<C64>> = self.matrices.iter().map(|m| m.adjoint()).collect();
        multiply_blocks(&adj, phi, self.d)
    }

    /// Largest unitarity defect over line nodes whose energy lies within the node range.
    pub fn unitarity_defect(&self, grid: &EnergyGrid) -> f64 {
        let (lo, hi) = (grid.nodes[0], grid.nodes[grid.len() - 1]);
        self.energies
            .iter()
            .zip(&self.matrices)
            .filter(|(&e, _)| e >= lo && e <= hi)
            .map(|(_, m)| unitarity_defect(m))
            .fold(0.0, f64::max)
    }
}

pub fn assemble_s_tilde(sd: &ScatteringData, line: &LineGrid) -> STilde {
    let energies = line.energies(sd.grid.a, sd.grid.b);
    let matrices = energies.iter().map(|&e| sd.at(e)).collect();
    STilde {
        line: line.clone(),
        d: sd.d,
        energies,
        matrices,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fredholm::build_t_kernel;
    use crate::grid::{build_grid, Scheme};
    use crate::kernel::{default_c1_kernel, default_embedded, rank_one_kernel, OperatorKernel, Shape};
    use crate::spectral::{assemble_h, eigendecompose, TOL_EMBED};

    fn grid(n: usize) -> EnergyGrid {
        build_grid(0.0, 1.0, n, Scheme::GaussLegendre).unwrap()
    }

    fn smatrix(kernel: &OperatorKernel, n: usize) -> ScatteringData {
        let tab = kernel.on_grid(&grid(n)).unwrap();
        scattering_matrix(&build_t_kernel(&tab, Side::Plus, &[]).unwrap()).unwrap()
    }

    #[test]
    fn free_case_is_identity() {
        let sd = smatrix(&OperatorKernel::zero(0.0, 1.0, 3), 21);
        assert!(sd.matrices.iter().all(|s| *s == DMatrix::identity(3, 3)));
        assert_eq!(check_unitarity(&sd), 0.0);
        let rep = check_continuity(&sd, &[]);
        assert_eq!(rep.max_modulus, 0.0);
        let st = assemble_s_tilde(&sd, &LineGrid::new(8.0, 64).unwrap());
        assert!(st
            .matrices
            .iter()
            .all(|s| (s - DMatrix::<C64>::identity(3, 3)).norm() < 1e-15));
    }

    #[test]
    fn scalar_s_is_unimodular() {
        let sd = smatrix(&rank_one_kernel(0.0, 1.0, 1, Shape::SinBump, 0.7).unwrap(), 201);
        for s in &sd.matrices {
            assert!((s[(0, 0)].norm() - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn deviation_rank_is_bounded_by_kernel_rank() {
        let sd = smatrix(&rank_one_kernel(0.0, 1.0, 3, Shape::PolyBump, -0.6).unwrap(), 61);
        for sv in deviation_spectrum(&sd) {
            assert!(sv[1] <= 1e-8, "{sv:?}");
        }
    }

    #[test]
    fn unitarity_metric_detects_known_deviation() {
        let bad = DMatrix::from_diagonal(&DVector::from_vec(vec![C64::from(1.1), C64::from(1.0)]));
        let mut mats = vec![DMatrix::identity(2, 2); 8];
        mats[3] = bad;
        let sd = ScatteringData::from_matrices(grid(8), mats).unwrap();
        assert!((check_unitarity(&sd) - 0.21).abs() < 1e-12);
    }

    #[test]
    fn node_unitarity_is_exact_for_every_resolution() {
        let k = default_c1_kernel(0.0, 1.0);
        for n in [51, 101, 201] {
            let defect = check_unitarity(&smatrix(&k, n));
            assert!(defect <= 1e-13, "N = {n}: {defect:e}");
        }
        let dense = OperatorKernel::from_fn("dense", 0.0, 1.0, 1, 1.0, |l, m| {
            let v = (PI * l).sin() * (PI * m).sin() * (1.0 + 0.5 * (l * m).cos());
            DMatrix::from_element(1, 1, C64::from(0.8 * v))
        });
        assert!(dense.separable().is_none());
        assert!(check_unitarity(&smatrix(&dense, 41)) <= 1e-13);
    }

    #[test]
    fn inverse_is_adjoint() {
        let sd = smatrix(&default_c1_kernel(0.0, 1.0), 101);
        let defect = check_unitarity(&sd);
        for s in &sd.matrices {
            let inv = s.clone().try_inverse().unwrap();
            assert!(spectral_norm(&(inv - s.adjoint())) <= 2.0 * defect.max(1e-15));
        }
    }

    #[test]
    fn minus_side_gives_the_adjoint() {
        let tab = default_c1_kernel(0.0, 1.0).on_grid(&grid(101)).unwrap();
        let sd = scattering_matrix(&build_t_kernel(&tab, Side::Plus, &[]).unwrap()).unwrap();
        let minus = adjoint_from_minus_side(&build_t_kernel(&tab, Side::Minus, &[]).unwrap()).unwrap();
        for (s, m) in sd.matrices.iter().zip(&minus) {
            assert!(spectral_norm(&(s.adjoint() - m)) <= 1e-6);
        }
    }

    #[test]
    fn smooth_kernel_gives_lipschitz_s() {
        let rep = check_continuity(&smatrix(&default_c1_kernel(0.0, 1.0), 201), &[]);
        assert!(rep.global.exponent >= 0.9, "{rep:?}");
    }

    #[test]
    fn continuity_across_embedded_eigenvalue() {
        let s = default_embedded(0.0, 1.0);
        let mut moduli = Vec::new();
        for n in [101, 201] {
            let g = grid(n);
            let tab = s.kernel.on_grid(&g).unwrap();
            let ev = eigendecompose(&assemble_h(&tab), &g, TOL_EMBED)
                .unwrap()
                .embedded_eigenvalues();
            let sd = scattering_matrix(&build_t_kernel(&tab, Side::Plus, &ev).unwrap()).unwrap();
            let rep = check_continuity(&sd, &ev);
            assert_eq!(rep.local.len(), 1);
            assert!(rep.local[0].estimate.exponent >= 0.4, "{rep:?}");
            moduli.push(rep.local[0].max_modulus);
        }
        assert!(moduli[1] < moduli[0], "{moduli:?}");
    }

    #[test]
    fn s_tilde_interpolation_keeps_fourth_order() {
        let line = LineGrid::new(8.0, 512).unwrap();
        let k = default_c1_kernel(0.0, 1.0);
        let defects: Vec<f64> = [101, 201]
            .iter()
            .map(|&n| {
                let sd = smatrix(&k, n);
                assemble_s_tilde(&sd, &line).unitarity_defect(&sd.grid)
            })
            .collect();
        assert!(defects[0] >= 8.0 * defects[1], "{defects:?}");
        let sd = smatrix(&k, 201);
        let st = assemble_s_tilde(&sd, &line);
        let mid = line.count / 2;
        assert_eq!(line.nodes[mid], 0.0);
        assert!(spectral_norm(&(&st.matrices[mid] - sd.at(0.5))) <= 1e-6);
    }

    #[test]
    fn csv_has_one_row_per_node() {
        let sd = smatrix(&default_c1_kernel(0.0, 1.0), 11);
        let mut buf = Vec::new();
        sd.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 12);
        assert!(lines[0].starts_with("lambda,re_s_11,im_s_11"));
        assert!(lines[0].ends_with("unitarity_defect"));
    }
}

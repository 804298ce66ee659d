//! Stationary wave operators and the decomposition of `W₋ − 1` in the
//! rescaled energy representation.
//!
//! All energy-grid operators are plain (non-symmetrized) `Nd × Nd` matrices
//! acting on node-major samples; adjoints are taken in the weighted inner
//! product. Line-grid functions are node-major as well.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::cauchy::{cauchy_weights, BoundaryPoint, CauchyRule, Side};
use crate::error::{Error, Result};
use crate::fredholm::{FredholmOperator, TKernel};
use crate::grid::{EnergyGrid, LineGrid, UMap};
use crate::kernel::TabulatedKernel;
use crate::linalg::{dof_weights, singular_values_desc, symmetrize, weighted_adjoint, weighted_inner, weighted_norm};
use crate::scattering::{multiply_blocks, STilde, ScatteringData};
use crate::spectral::{assemble_h, Classification, SpectralData};
use crate::C64;

/// Distance kept between test functions and the interval ends or embedded eigenvalues.
pub const PANEL_MARGIN: f64 = 0.05;
pub const PANEL_SIZE: usize = 5;
const GAUSS_WINDOW: f64 = 10.0;

// ---------------------------------------------------------------------------
// test panel

/// Smooth compactly supported test function `e·χ((λ − c)/r)`.
#[derive(Debug, Clone)]
pub struct TestFunction {
    pub center: f64,
    pub radius: f64,
    /// Gaussian window exponent; `0` gives the plain bump.
    pub window: f64,
    pub direction: DVector<C64>,
}

impl TestFunction {
    pub fn profile(&self, lambda: f64) -> f64 {
        let s = (lambda - self.center) / self.radius;
        if s.abs() >= 1.0 {
            return 0.0;
        }
        (1.0 - 1.0 / (1.0 - s * s)).exp() * (-self.window * s * s).exp()
    }

    pub fn sample(&self, grid: &EnergyGrid) -> DVector<C64> {
        let d = self.direction.len();
        DVector::from_fn(grid.len() * d, |k, _| {
            self.direction[k % d] * self.profile(grid.nodes[k / d])
        })
    }
}

/// Plain bump over the middle of `[a, b]`, leaving `PANEL_MARGIN·(b − a)` at each end.
pub fn fixed_bump(a: f64, b: f64, d: usize) -> TestFunction {
    let raw = DVector::from_fn(d, |p, _| C64::from_polar(1.0, 0.9 * p as f64));
    let n = raw.norm();
    TestFunction {
        center: 0.5 * (a + b),
        radius: (0.5 - PANEL_MARGIN) * (b - a),
        window: 0.0,
        direction: raw / C64::from(n),
    }
}

/// Five bumps of radius up to `0.2·(b − a)` supported at least
/// `PANEL_MARGIN·(b − a)` away from `a`, `b` and every `exclude` energy.
pub fn test_panel(a: f64, b: f64, d: usize, exclude: &[f64]) -> Result<Vec<TestFunction>> {
    let w = b - a;
    let gap = PANEL_MARGIN * w;
    let mut radius = 0.2 * w;
    loop {
        // admissible centers: [a + gap + r, b − gap − r] minus (λₙ ± (gap + r))
        let mut pieces = vec![(a + gap + radius, b - gap - radius)];
        for &e in exclude {
            let (lo, hi) = (e - gap - radius, e + gap + radius);
            pieces = pieces
                .into_iter()
                .flat_map(|(p, q)| {
                    let mut out = Vec::new();
                    if lo > p {
                        out.push((p, lo.min(q)));
                    }
                    if hi < q {
                        out.push((hi.max(p), q));
                    }
                    out
                })
                .filter(|(p, q)| q > p)
                .collect();
        }
        let total: f64 = pieces.iter().map(|(p, q)| q - p).sum();
        if total > 0.2 * radius {
            let centers: Vec<f64> = (0..PANEL_SIZE)
                .map(|k| {
                    let mut s = total * (k as f64 + 0.5) / PANEL_SIZE as f64;
                    for &(p, q) in &pieces {
                        if s <= q - p {
                            return p + s;
                        }
                        s -= q - p;
                    }
                    pieces.last().unwrap().1
                })
                .collect();
            return Ok(centers
                .into_iter()
                .enumerate()
                .map(|(k, center)| {
                    let raw = DVector::from_fn(d, |p, _| {
                        C64::from_polar(1.0 + 0.5 * p as f64, 0.7 * (k + 2 * p) as f64)
                    });
                    let n = raw.norm();
                    TestFunction {
                        center,
                        radius,
                        window: GAUSS_WINDOW,
                        direction: raw / C64::from(n),
                    }
                })
                .collect());
        }
        radius *= 0.5;
        if radius < 1e-3 * w {
            return Err(Error::Precondition(
                "no room for test functions away from the interval ends and embedded eigenvalues".into(),
            ));
        }
    }
}

// ---------------------------------------------------------------------------
// energy-grid operators

fn minus_weights(grid: &EnergyGrid) -> Result<Vec<Vec<C64>>> {
    grid.nodes
        .par_iter()
        .map(|&lam| {
            Ok(cauchy_weights(grid, &BoundaryPoint::boundary(lam, Side::Minus), CauchyRule::Subtracted)?.coeffs)
        })
        .collect()
}

/// Matrix with block `(i, j)` equal to `coeff(i, j)·t(λᵢ, μⱼ)`.
fn weighted_blocks(tk: &TKernel, coeff: impl Fn(usize, usize) -> C64 + Sync, diag: bool) -> DMatrix<C64> {
    let n = tk.len();
    let d = tk.d;
    let mut m = DMatrix::zeros(n * d, n * d);
    for j in 0..n {
        let tjj = tk.diagonal(j);
        for i in 0..n {
            let c = coeff(i, j);
            let mut blk = tk.block(i, j);
            if diag {
                blk -= &tjj;
            }
            m.view_mut((i * d, j * d), (d, d)).copy_from(&(blk * c));
        }
    }
    m
}

/// Stationary `W₋` from the `+i0` T-kernel:
/// `[(W₋ − 1)f](λᵢ) = Σⱼ cⱼ(λᵢ − i0)·t(λᵢ, μⱼ)·f(μⱼ)`, with `cⱼ` the subtracted Cauchy rule.
pub fn assemble_w_minus(tk: &TKernel) -> Result<DMatrix<C64>> {
    if tk.side != Side::Plus {
        return Err(Error::Precondition("W₋ needs the +i0 T-kernel".into()));
    }
    let c = minus_weights(&tk.grid)?;
    let n = tk.len() * tk.d;
    Ok(weighted_blocks(tk, |i, j| c[i][j], false) + DMatrix::identity(n, n))
}

/// Kernel operator `k(λ, μ) = −[t(λ, μ) − t(μ, μ)]/(λ − μ)` with plain quadrature
/// weights and the `λ`-derivative of `t` on the diagonal.
pub fn assemble_k(tk: &TKernel) -> DMatrix<C64> {
    let g = &tk.grid;
    let d = tk.d;
    let mut k = weighted_blocks(
        tk,
        |i, j| {
            if i == j {
                C64::from(0.0)
            } else {
                C64::from(-g.weights[j] / (g.nodes[i] - g.nodes[j]))
            }
        },
        true,
    );
    for i in 0..tk.len() {
        k.view_mut((i * d, i * d), (d, d))
            .copy_from(&(&tk.diag_derivative[i] * C64::from(-g.weights[i])));
    }
    k
}

/// The same kernel with the subtracted Cauchy coefficients: `cⱼ(λᵢ − i0)·[t(λᵢ, μⱼ) − t(μⱼ, μⱼ)]`.
pub fn assemble_k_rule(tk: &TKernel) -> Result<DMatrix<C64>> {
    let c = minus_weights(&tk.grid)?;
    Ok(weighted_blocks(tk, |i, j| c[i][j], true))
}

/// `[Tf](λ) = (1/2πi)∫ f(μ)/(λ − μ − i0) dμ`, discretized by the subtracted rule.
pub fn cauchy_t(grid: &EnergyGrid, d: usize) -> Result<DMatrix<C64>> {
    let c = minus_weights(grid)?;
    let n = grid.len();
    // −1/(2πi)
    let scale = C64::new(0.0, 0.5 / PI);
    let mut t = DMatrix::zeros(n * d, n * d);
    for i in 0..n {
        for j in 0..n {
            let v = c[i][j] * scale;
            for p in 0..d {
                t[(i * d + p, j * d + p)] = v;
            }
        }
    }
    Ok(t)
}

/// Block-diagonal `s(λᵢ) − I`.
pub fn s_minus_identity(sd: &ScatteringData) -> DMatrix<C64> {
    let d = sd.d;
    let n = sd.len();
    let mut m = DMatrix::zeros(n * d, n * d);
    for (i, s) in sd.matrices.iter().enumerate() {
        m.view_mut((i * d, i * d), (d, d))
            .copy_from(&(s - DMatrix::<C64>::identity(d, d)));
    }
    m
}

/// `W₊ = W₋ S*`.
pub fn assemble_w_plus(w_minus: &DMatrix<C64>, sd: &ScatteringData) -> DMatrix<C64> {
    let d = sd.d;
    let mut out = w_minus.clone();
    for (j, s) in sd.matrices.iter().enumerate() {
        let cols = w_minus.columns(j * d, d) * s.adjoint();
        out.columns_mut(j * d, d).copy_from(&cols);
    }
    out
}

/// Largest entry of `W₋ − I − [T(S − I) + K_rule]`.
pub fn decomposition_identity_defect(w_minus: &DMatrix<C64>, tk: &TKernel, sd: &ScatteringData) -> Result<f64> {
    let n = w_minus.nrows();
    let t = cauchy_t(&tk.grid, tk.d)?;
    let rhs = t * s_minus_identity(sd) + assemble_k_rule(tk)?;
    let lhs = w_minus - DMatrix::<C64>::identity(n, n);
    Ok(crate::linalg::max_abs(&(lhs - rhs)))
}

// ---------------------------------------------------------------------------
// regularized representation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizationSchedule {
    pub epsilons: Vec<f64>,
    pub taus: Vec<f64>,
}

/// Smallest admissible `ε` or `τ`.
pub const REGULARIZATION_FLOOR: f64 = 1e-3;

impl RegularizationSchedule {
    pub fn new(epsilons: Vec<f64>, taus: Vec<f64>) -> Result<Self> {
        let check = |name: &str, v: &[f64]| -> Result<()> {
            if v.is_empty() {
                return Err(Error::Config(format!("{name} schedule is empty")));
            }
            if v.iter().any(|&x| !(x >= REGULARIZATION_FLOOR && x.is_finite())) {
                return Err(Error::Config(format!(
                    "{name} values must be at least {REGULARIZATION_FLOOR}"
                )));
            }
            if v.windows(2).any(|p| p[1] >= p[0]) {
                return Err(Error::Config(format!("{name} schedule must be strictly descending")));
            }
            Ok(())
        };
        check("epsilon", &epsilons)?;
        check("tau", &taus)?;
        if epsilons.len() != taus.len() {
            return Err(Error::Config("epsilon and tau schedules differ in length".into()));
        }
        Ok(RegularizationSchedule { epsilons, taus })
    }

    /// `ε = τ` along `(1e−1, 3e−2, 1e−2)`.
    pub fn shared_default() -> Self {
        let v = vec![1e-1, 3e-2, 1e-2];
        RegularizationSchedule {
            epsilons: v.clone(),
            taus: v,
        }
    }
}

/// `[𝒯₋(ε, τ)f](λ) = ∫ t(λ, μ, μ + iε)(λ − μ − iτ)⁻¹ f(μ) dμ` for every schedule entry.
///
/// `W₋ − 1` is the strong limit of `−𝒯₋(ε, τ)`.
pub fn regularized_w_minus(tab: &TabulatedKernel, sched: &RegularizationSchedule) -> Result<Vec<DMatrix<C64>>> {
    let grid = &tab.grid;
    let n = grid.len();
    let d = tab.d;
    sched
        .epsilons
        .iter()
        .zip(&sched.taus)
        .map(|(&eps, &tau)| {
            let columns: Vec<DMatrix<C64>> = (0..n)
                .into_par_iter()
                .map(|j| {
                    let mu = grid.nodes[j];
                    let op =
                        FredholmOperator::new(tab, BoundaryPoint::OffAxis(C64::new(mu, eps)), CauchyRule::Subtracted)?;
                    op.column(mu)
                })
                .collect::<Result<_>>()?;
            let coeffs: Vec<Vec<C64>> = grid
                .nodes
                .par_iter()
                .map(|&lam| {
                    Ok(cauchy_weights(
                        grid,
                        &BoundaryPoint::OffAxis(C64::new(lam, -tau)),
                        CauchyRule::Subtracted,
                    )?
                    .coeffs)
                })
                .collect::<Result<_>>()?;
            let mut m = DMatrix::zeros(n * d, n * d);
            for (j, col) in columns.iter().enumerate() {
                for (i, row) in coeffs.iter().enumerate() {
                    let blk = col.view((i * d, 0), (d, d)) * (-row[j]);
                    m.view_mut((i * d, j * d), (d, d)).copy_from(&blk);
                }
            }
            Ok(m)
        })
        .collect()
}

/// Distances of `−𝒯₋(εₖ, τₖ)f` and of their extrapolated limit from `(W₋ − 1)f`, relative to `‖f‖`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RegularizationReport {
    pub errors: Vec<f64>,
    pub extrapolated: f64,
}

pub fn regularization_errors(
    tab: &TabulatedKernel,
    w_minus: &DMatrix<C64>,
    sched: &RegularizationSchedule,
    f: &DVector<C64>,
) -> Result<RegularizationReport> {
    let w = dof_weights(&tab.grid, tab.d);
    let nf = weighted_norm(f, &w);
    let target = w_minus * f - f;
    let values: Vec<DVector<C64>> = regularized_w_minus(tab, sched)?.iter().map(|m| -(m * f)).collect();
    let errors = values.iter().map(|v| weighted_norm(&(v - &target), &w) / nf).collect();
    let limit = extrapolate_to_zero(&sched.epsilons, &values);
    Ok(RegularizationReport {
        errors,
        extrapolated: weighted_norm(&(limit - &target), &w) / nf,
    })
}

/// Polynomial extrapolation of `values[k]` sampled at `params[k]` to parameter 0 (Neville).
pub fn extrapolate_to_zero(params: &[f64], values: &[DVector<C64>]) -> DVector<C64> {
    let mut p: Vec<DVector<C64>> = values.to_vec();
    let n = params.len();
    for m in 1..n {
        for i in 0..n - m {
            let (xi, xj) = (params[i], params[i + m]);
            p[i] = (&p[i + 1] * C64::from(xi) - &p[i] * C64::from(xj)) / C64::from(xi - xj);
        }
    }
    p.swap_remove(0)
}

// ---------------------------------------------------------------------------
// line-grid multipliers

fn fft_multiplier(line: &LineGrid, phi: &DVector<C64>, d: usize, symbol: impl Fn(f64) -> C64) -> DVector<C64> {
    let nx = line.count;
    assert_eq!(phi.len(), nx * d, "line function shape mismatch");
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(nx);
    let inv = planner.plan_fft_inverse(nx);
    let mut out = DVector::zeros(nx * d);
    for p in 0..d {
        let mut buf: Vec<Complex<f64>> = (0..nx).map(|k| phi[k * d + p]).collect();
        fwd.process(&mut buf);
        for (k, v) in buf.iter_mut().enumerate() {
            if k == nx / 2 {
                *v = Complex::new(0.0, 0.0);
                continue;
            }
            let kk = if k < nx / 2 { k as f64 } else { k as f64 - nx as f64 };
            *v *= symbol(PI * kk / line.half_width);
        }
        inv.process(&mut buf);
        for (k, v) in buf.into_iter().enumerate() {
            out[k * d + p] = v / nx as f64;
        }
    }
    out
}

/// `tanh(πD/2)φ` with `D = −i d/dx`, as a Fourier multiplier on the periodic line grid.
pub fn tanh_of_d(line: &LineGrid, phi: &DVector<C64>, d: usize) -> DVector<C64> {
    fft_multiplier(line, phi, d, |xi| C64::from((0.5 * PI * xi).tanh()))
}

/// `tanh(πD/2)φ` for `φ` extended by zero outside `[-L, L)`, computed on a
/// grid of twice the width so the `1/sinh` tails do not wrap around.
pub fn tanh_aperiodic(line: &LineGrid, phi: &DVector<C64>, d: usize) -> DVector<C64> {
    let wide = LineGrid::new(2.0 * line.half_width, 2 * line.count).expect("doubling a valid line grid");
    let off = line.count / 2;
    let mut ext = DVector::zeros(wide.count * d);
    ext.rows_mut(off * d, line.count * d).copy_from(phi);
    tanh_of_d(&wide, &ext, d).rows(off * d, line.count * d).into_owned()
}

/// Spectral derivative `φ′`.
pub fn line_derivative(line: &LineGrid, phi: &DVector<C64>, d: usize) -> DVector<C64> {
    fft_multiplier(line, phi, d, |xi| C64::new(0.0, xi))
}

/// `1/sinh` periodized over `2L`.
fn periodic_csch(y: f64, half_width: f64) -> f64 {
    (-3..=3).map(|m| 1.0 / (y + 2.0 * half_width * m as f64).sinh()).sum()
}

/// `tanh(πD/2)φ(x) = (i/π) PV∫ φ(x − y)/sinh(y) dy` on the periodic grid.
///
/// Trapezoid rule with the centre node omitted and the `−h·φ′(x)` correction.
pub fn tanh_by_convolution(line: &LineGrid, phi: &DVector<C64>, d: usize) -> DVector<C64> {
    let nx = line.count;
    let h = line.h;
    let half = nx / 2;
    let kernel: Vec<f64> = (0..nx)
        .map(|k| {
            if k == 0 || k == half {
                0.0
            } else {
                let kk = if k < half { k as f64 } else { k as f64 - nx as f64 };
                periodic_csch(kk * h, line.half_width)
            }
        })
        .collect();
    let dphi = line_derivative(line, phi, d);
    let pref = C64::new(0.0, 1.0 / PI);
    let mut out = DVector::zeros(nx * d);
    for i in 0..nx {
        for p in 0..d {
            let mut acc = C64::from(0.0);
            for (k, &kv) in kernel.iter().enumerate() {
                if kv != 0.0 {
                    acc += phi[((i + nx - k) % nx) * d + p] * kv;
                }
            }
            out[i * d + p] = pref * (acc * h - dphi[i * d + p] * h);
        }
    }
    out
}

/// Dense scalar matrix of `tanh(πD/2)` on the line grid.
pub fn tanh_matrix(line: &LineGrid) -> DMatrix<C64> {
    let nx = line.count;
    let mut m = DMatrix::zeros(nx, nx);
    for j in 0..nx {
        let mut e = DVector::zeros(nx);
        e[j] = C64::from(1.0);
        m.set_column(j, &tanh_of_d(line, &e, 1));
    }
    m
}

fn line_norm(line: &LineGrid, phi: &DVector<C64>) -> f64 {
    (line.h * phi.norm_squared()).sqrt()
}

// ---------------------------------------------------------------------------
// verification

/// Per-function relative residuals and their maximum.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PanelResidual {
    pub residuals: Vec<f64>,
    pub max: f64,
}

impl PanelResidual {
    fn from(residuals: Vec<f64>) -> Self {
        let max = residuals.iter().copied().fold(0.0, f64::max);
        PanelResidual { residuals, max }
    }
}

/// Shared inputs for the line-grid checks.
pub struct Representation<'a> {
    pub grid: &'a EnergyGrid,
    pub line: &'a LineGrid,
    pub d: usize,
    pub umap: UMap,
    pub s_tilde: &'a STilde,
}

impl<'a> Representation<'a> {
    pub fn new(grid: &'a EnergyGrid, line: &'a LineGrid, d: usize, s_tilde: &'a STilde) -> Self {
        Representation {
            grid,
            line,
            d,
            umap: UMap::new(grid, line),
            s_tilde,
        }
    }

    fn u(&self, f: &DVector<C64>) -> DVector<C64> {
        self.umap.forward(f, self.d)
    }
}

/// `‖U(W₋ − 1)f − [½(1 − tanh(πD/2))(S̃ − 1) + K̃]Uf‖ / ‖f‖` over the panel.
pub fn verify_main_formula(
    rep: &Representation,
    w_minus: &DMatrix<C64>,
    k: &DMatrix<C64>,
    panel: &[DVector<C64>],
) -> PanelResidual {
    let w = dof_weights(rep.grid, rep.d);
    PanelResidual::from(
        panel
            .par_iter()
            .map(|f| {
                let lhs = rep.u(&(w_minus * f - f));
                let uf = rep.u(f);
                let sf = rep.s_tilde.apply(&uf) - &uf;
                let cauchy = (&sf - tanh_aperiodic(rep.line, &sf, rep.d)) * C64::from(0.5);
                let rhs = cauchy + rep.u(&(k * f));
                line_norm(rep.line, &(lhs - rhs)) / weighted_norm(f, &w)
            })
            .collect(),
    )
}

/// `‖U(W₊ − 1)f − [½(1 + tanh(πD/2))(S̃* − 1) + K̃S̃*]Uf‖ / ‖f‖` over the panel.
pub fn verify_corollary(
    rep: &Representation,
    w_plus: &DMatrix<C64>,
    k: &DMatrix<C64>,
    sd: &ScatteringData,
    panel: &[DVector<C64>],
) -> PanelResidual {
    let w = dof_weights(rep.grid, rep.d);
    PanelResidual::from(
        panel
            .par_iter()
            .map(|f| {
                let lhs = rep.u(&(w_plus * f - f));
                let uf = rep.u(f);
                let sf = rep.s_tilde.apply_adjoint(&uf) - &uf;
                let cauchy = (&sf + tanh_aperiodic(rep.line, &sf, rep.d)) * C64::from(0.5);
                let rhs = cauchy + rep.u(&(k * sd.apply_adjoint(f)));
                line_norm(rep.line, &(lhs - rhs)) / weighted_norm(f, &w)
            })
            .collect(),
    )
}

/// `‖U T f − ½(1 − tanh(πD/2))Uf‖ / ‖f‖` over the panel.
pub fn verify_cauchy_conjugation(rep: &Representation, t: &DMatrix<C64>, panel: &[DVector<C64>]) -> PanelResidual {
    let w = dof_weights(rep.grid, rep.d);
    PanelResidual::from(
        panel
            .iter()
            .map(|f| {
                let lhs = rep.u(&(t * f));
                let uf = rep.u(f);
                let rhs = (&uf - tanh_aperiodic(rep.line, &uf, rep.d)) * C64::from(0.5);
                line_norm(rep.line, &(lhs - rhs)) / weighted_norm(f, &w)
            })
            .collect(),
    )
}

/// Largest `‖tanh_fft φ − tanh_conv φ‖ / ‖φ‖` over line functions.
pub fn multiplier_cross_check(line: &LineGrid, functions: &[DVector<C64>], d: usize) -> f64 {
    functions
        .iter()
        .map(|phi| {
            let a = tanh_of_d(line, phi, d);
            let b = tanh_by_convolution(line, phi, d);
            line_norm(line, &(a - b)) / line_norm(line, phi)
        })
        .fold(0.0, f64::max)
}

/// `‖(H W₋ − W₋ H₀) f‖ / ‖f‖` over the panel.
pub fn intertwining_residual(tab: &TabulatedKernel, w_minus: &DMatrix<C64>, panel: &[DVector<C64>]) -> PanelResidual {
    let h = assemble_h(tab);
    let w = dof_weights(&tab.grid, tab.d);
    let d = tab.d;
    PanelResidual::from(
        panel
            .iter()
            .map(|f| {
                let h0f = DVector::from_fn(f.len(), |k, _| f[k] * tab.grid.nodes[k / d]);
                let r = h.apply(&(w_minus * f)) - w_minus * h0f;
                weighted_norm(&r, &w) / weighted_norm(f, &w)
            })
            .collect(),
    )
}

/// `‖(W₊* W₋ − S) f‖ / ‖f‖` over the panel.
pub fn scattering_identity_residual(
    w_minus: &DMatrix<C64>,
    w_plus: &DMatrix<C64>,
    sd: &ScatteringData,
    panel: &[DVector<C64>],
) -> PanelResidual {
    let w = dof_weights(&sd.grid, sd.d);
    let wp_adj = weighted_adjoint(w_plus, &w);
    PanelResidual::from(
        panel
            .iter()
            .map(|f| {
                let r = &wp_adj * (w_minus * f) - sd.apply(f);
                weighted_norm(&r, &w) / weighted_norm(f, &w)
            })
            .collect(),
    )
}

/// `|‖W₋f‖/‖f‖ − 1|` over the panel.
pub fn isometry_defect(w_minus: &DMatrix<C64>, weights: &[f64], panel: &[DVector<C64>]) -> PanelResidual {
    PanelResidual::from(
        panel
            .iter()
            .map(|f| (weighted_norm(&(w_minus * f), weights) / weighted_norm(f, weights) - 1.0).abs())
            .collect(),
    )
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CompletenessReport {
    /// `‖(W₋*W₋ − 1)f‖/‖f‖` over the panel.
    pub isometry: PanelResidual,
    /// `‖(W₋W₋* − (1 − P_pp))f‖/‖f‖` over the panel, `P_pp` the certified eigenprojection.
    pub range: PanelResidual,
    /// Overlap of the top singular vector of `1 − W₋W₋*` with the certified eigenfunctions.
    pub defect_overlap: Option<f64>,
    /// `‖W₋* fₙ‖` for each certified eigenfunction.
    pub eigenfunction_images: Vec<f64>,
}

/// Isometry and range checks of `W₋` against the certified point spectrum.
pub fn verify_completeness(w_minus: &DMatrix<C64>, spec: &SpectralData, panel: &[DVector<C64>]) -> CompletenessReport {
    let w = &spec.weights;
    let n = w_minus.nrows();
    let adj = weighted_adjoint(w_minus, w);
    let point: Vec<usize> = (0..spec.eigenvalues.len())
        .filter(|&k| {
            matches!(
                spec.classification[k],
                Classification::DiscreteBelow | Classification::DiscreteAbove
            ) || spec.embedded_set.contains(&k)
        })
        .collect();
    let eigen: Vec<DVector<C64>> = point.iter().map(|&k| spec.eigenfunction(k)).collect();
    let p_pp = |x: &DVector<C64>| {
        let mut out = DVector::zeros(x.len());
        for e in &eigen {
            out += e * weighted_inner(e, x, w);
        }
        out
    };
    let isometry = PanelResidual::from(
        panel
            .iter()
            .map(|f| weighted_norm(&(&adj * (w_minus * f) - f), w) / weighted_norm(f, w))
            .collect(),
    );
    let range = PanelResidual::from(
        panel
            .iter()
            .map(|f| {
                let r = w_minus * (&adj * f) - (f - p_pp(f));
                weighted_norm(&r, w) / weighted_norm(f, w)
            })
            .collect(),
    );
    let defect_overlap = if eigen.is_empty() {
        None
    } else {
        let defect = DMatrix::<C64>::identity(n, n) - w_minus * &adj;
        let sym = symmetrize(&defect, w);
        let svd = sym.svd(true, false);
        let top = (0..svd.singular_values.len())
            .max_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]))
            .unwrap();
        let u = svd.u.unwrap().column(top).into_owned();
        // back to plain samples, unit weighted norm
        let v = DVector::from_fn(n, |i, _| u[i] / w[i].sqrt());
        let overlap_sq: f64 = eigen.iter().map(|e| weighted_inner(e, &v, w).norm_sqr()).sum();
        Some(overlap_sq.sqrt())
    };
    let eigenfunction_images = eigen.iter().map(|e| weighted_norm(&(&adj * e), w)).collect();
    CompletenessReport {
        isometry,
        range,
        defect_overlap,
        eigenfunction_images,
    }
}

/// Weighted Hilbert–Schmidt norm and descending singular values of a kernel operator.
pub fn hs_and_singular_values(k: &DMatrix<C64>, weights: &[f64]) -> (f64, Vec<f64>) {
    let sym = symmetrize(k, weights);
    (sym.norm(), singular_values_desc(&sym))
}

/// `σ₂₀/σ₁`, or `None` for fewer than 20 singular values or `σ₁ = 0`.
pub fn decay_ratio(singular_values: &[f64]) -> Option<f64> {
    match (singular_values.first(), singular_values.get(19)) {
        (Some(&s1), Some(&s20)) if s1 > 0.0 => Some(s20 / s1),
        _ => None,
    }
}

/// Everything built from one T-kernel at one resolution.
#[derive(Debug, Clone)]
pub struct WaveOperatorBundle {
    pub w_minus: DMatrix<C64>,
    pub w_plus: DMatrix<C64>,
    pub k: DMatrix<C64>,
    pub t_cauchy: DMatrix<C64>,
    pub tanh_term: DMatrix<C64>,
    pub hs_norm_k: f64,
    pub singular_values_k: Vec<f64>,
    pub decomposition_residual: f64,
}

pub fn build_bundle(
    tk: &TKernel,
    sd: &ScatteringData,
    line: &LineGrid,
    s_tilde: &STilde,
    panel: &[DVector<C64>],
) -> Result<WaveOperatorBundle> {
    let w_minus = assemble_w_minus(tk)?;
    let w_plus = assemble_w_plus(&w_minus, sd);
    let k = assemble_k(tk);
    let t_cauchy = cauchy_t(&tk.grid, tk.d)?;
    let (hs_norm_k, singular_values_k) = hs_and_singular_values(&k, &dof_weights(&tk.grid, tk.d));
    let rep = Representation::new(&tk.grid, line, tk.d, s_tilde);
    let decomposition_residual = verify_main_formula(&rep, &w_minus, &k, panel).max;
    Ok(WaveOperatorBundle {
        w_minus,
        w_plus,
        k,
        t_cauchy,
        tanh_term: tanh_matrix(line),
        hs_norm_k,
        singular_values_k,
        decomposition_residual,
    })
}

/// Line samples of the panel after `U`.
pub fn panel_on_line(grid: &EnergyGrid, line: &LineGrid, d: usize, panel: &[DVector<C64>]) -> Vec<DVector<C64>> {
    let u = UMap::new(grid, line);
    panel.iter().map(|f| u.forward(f, d)).collect()
}

pub fn apply_blocks(blocks: &[DMatrix<C64>], f: &DVector<C64>, d: usize) -> DVector<C64> {
    multiply_blocks(blocks, f, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fredholm::build_t_kernel;
    use crate::grid::{build_grid, Scheme};
    use crate::kernel::{default_c1_kernel, default_embedded, rank_one_kernel, OperatorKernel, Shape};
    use crate::linalg::max_abs;
    use crate::scattering::{assemble_s_tilde, scattering_matrix};
    use crate::spectral::{eigendecompose, TOL_EMBED};

    struct Setup {
        tab: TabulatedKernel,
        tk: TKernel,
        sd: ScatteringData,
        panel: Vec<DVector<C64>>,
        spec: SpectralData,
    }

    fn setup(kernel: &OperatorKernel, n: usize) -> Setup {
        let g = build_grid(kernel.a, kernel.b, n, Scheme::GaussLegendre).unwrap();
        let tab = kernel.on_grid(&g).unwrap();
        let spec = eigendecompose(&assemble_h(&tab), &g, TOL_EMBED).unwrap();
        let ev = spec.embedded_eigenvalues();
        let tk = build_t_kernel(&tab, Side::Plus, &ev).unwrap();
        let sd = scattering_matrix(&tk).unwrap();
        let panel = test_panel(g.a, g.b, tab.d, &ev)
            .unwrap()
            .iter()
            .map(|f| f.sample(&g))
            .collect();
        Setup {
            tab,
            tk,
            sd,
            panel,
            spec,
        }
    }

    #[test]
    fn panel_respects_margins() {
        let fs = test_panel(0.0, 1.0, 2, &[0.5]).unwrap();
        assert_eq!(fs.len(), 5);
        for f in &fs {
            assert!(f.center - f.radius >= 0.05 - 1e-12);
            assert!(f.center + f.radius <= 0.95 + 1e-12);
            assert!((f.center - 0.5).abs() >= f.radius + 0.05 - 1e-12);
            assert!((f.direction.norm() - 1.0).abs() < 1e-12);
        }
        let mut centers: Vec<f64> = fs.iter().map(|f| f.center).collect();
        centers.dedup();
        assert_eq!(centers.len(), 5);
    }

    #[test]
    fn free_case_is_exact() {
        let s = setup(&OperatorKernel::zero(0.0, 1.0, 2), 41);
        let wm = assemble_w_minus(&s.tk).unwrap();
        let id = DMatrix::<C64>::identity(82, 82);
        assert!(max_abs(&(&wm - &id)) <= 1e-12);
        assert!(max_abs(&(assemble_w_plus(&wm, &s.sd) - &id)) <= 1e-12);
        assert!(max_abs(&assemble_k(&s.tk)) <= 1e-12);
        let line = LineGrid::new(8.0, 128).unwrap();
        let st = assemble_s_tilde(&s.sd, &line);
        let rep = Representation::new(&s.tk.grid, &line, 2, &st);
        assert!(verify_main_formula(&rep, &wm, &assemble_k(&s.tk), &s.panel).max <= 1e-12);
        let c = verify_completeness(&wm, &s.spec, &s.panel);
        assert!(c.isometry.max <= 1e-12 && c.range.max <= 1e-12);
    }

    #[test]
    fn discrete_decomposition_is_exact() {
        let s = setup(&default_c1_kernel(0.0, 1.0), 61);
        let wm = assemble_w_minus(&s.tk).unwrap();
        assert!(decomposition_identity_defect(&wm, &s.tk, &s.sd).unwrap() <= 1e-12);
    }

    #[test]
    fn constant_has_zero_tanh() {
        let line = LineGrid::new(8.0, 64).unwrap();
        let ones = DVector::from_element(64, C64::from(1.0));
        assert!(tanh_of_d(&line, &ones, 1).norm() < 1e-13);
    }

    #[test]
    fn multiplier_matches_convolution() {
        let line = LineGrid::new(8.0, 512).unwrap();
        let g = build_grid(0.0, 1.0, 201, Scheme::GaussLegendre).unwrap();
        let panel: Vec<DVector<C64>> = test_panel(0.0, 1.0, 2, &[])
            .unwrap()
            .iter()
            .map(|f| f.sample(&g))
            .collect();
        let on_line = panel_on_line(&g, &line, 2, &panel);
        let err = multiplier_cross_check(&line, &on_line, 2);
        assert!(err <= 1e-6, "{err:e}");
    }

    #[test]
    fn cauchy_operator_conjugates_to_tanh() {
        let g = build_grid(0.0, 1.0, 201, Scheme::GaussLegendre).unwrap();
        let line = LineGrid::new(8.0, 512).unwrap();
        let panel: Vec<DVector<C64>> = test_panel(0.0, 1.0, 1, &[])
            .unwrap()
            .iter()
            .map(|f| f.sample(&g))
            .collect();
        let sd = ScatteringData::from_matrices(g.clone(), vec![DMatrix::identity(1, 1); 201]).unwrap();
        let st = assemble_s_tilde(&sd, &line);
        let rep = Representation::new(&g, &line, 1, &st);
        let r = verify_cauchy_conjugation(&rep, &cauchy_t(&g, 1).unwrap(), &panel);
        assert!(r.max <= 1e-3, "{r:?}");
    }

    #[test]
    fn main_formula_and_corollary() {
        let line = LineGrid::new(8.0, 512).unwrap();
        let mut main = Vec::new();
        for n in [201, 401] {
            let s = setup(&default_c1_kernel(0.0, 1.0), n);
            let st = assemble_s_tilde(&s.sd, &line);
            let rep = Representation::new(&s.tk.grid, &line, 2, &st);
            let wm = assemble_w_minus(&s.tk).unwrap();
            let k = assemble_k(&s.tk);
            let r = verify_main_formula(&rep, &wm, &k, &s.panel);
            let c = verify_corollary(&rep, &assemble_w_plus(&wm, &s.sd), &k, &s.sd, &s.panel);
            main.push(r.max);
            if n == 201 {
                assert!(r.max <= 5e-3);
                assert!(c.max <= 5e-3);
            }
        }
        assert!(main[1] < main[0], "{main:?}");
    }

    #[test]
    fn wave_operator_identities_shrink() {
        let mut inter = Vec::new();
        let mut scat = Vec::new();
        let mut iso = Vec::new();
        for n in [101, 201] {
            let s = setup(&default_c1_kernel(0.0, 1.0), n);
            let wm = assemble_w_minus(&s.tk).unwrap();
            let wp = assemble_w_plus(&wm, &s.sd);
            inter.push(intertwining_residual(&s.tab, &wm, &s.panel).max);
            scat.push(scattering_identity_residual(&wm, &wp, &s.sd, &s.panel).max);
            iso.push(isometry_defect(&wm, &dof_weights(&s.tk.grid, 2), &s.panel).max);
        }
        assert!(iso[1] < iso[0] && iso[1] <= 1e-4, "{iso:?}");
        assert!(inter[1] <= 1e-3 && inter[0] >= 3.0 * inter[1], "{inter:?}");
        assert!(scat[1] <= 1e-3 && scat[0] >= 3.0 * scat[1], "{scat:?}");
    }

    #[test]
    fn regularized_sequence_converges_to_stationary() {
        let s = setup(&default_c1_kernel(0.0, 1.0), 101);
        let wm = assemble_w_minus(&s.tk).unwrap();
        let f = fixed_bump(0.0, 1.0, 2).sample(&s.tk.grid);
        let r = regularization_errors(&s.tab, &wm, &RegularizationSchedule::shared_default(), &f).unwrap();
        assert!(r.errors.windows(2).all(|p| p[1] < p[0]), "{r:?}");
        assert!(r.extrapolated <= 1e-3, "{r:?}");
    }

    #[test]
    fn schedule_validation() {
        assert!(RegularizationSchedule::new(vec![1e-1, 1e-2], vec![1e-1, 1e-2]).is_ok());
        assert!(RegularizationSchedule::new(vec![1e-2, 1e-1], vec![1e-1, 1e-2]).is_err());
        assert!(RegularizationSchedule::new(vec![1e-4], vec![1e-1]).is_err());
        assert!(RegularizationSchedule::new(vec![1e-1], vec![]).is_err());
    }

    #[test]
    fn free_regularized_sequence_is_zero() {
        let g = build_grid(0.0, 1.0, 21, Scheme::GaussLegendre).unwrap();
        let tab = OperatorKernel::zero(0.0, 1.0, 1).on_grid(&g).unwrap();
        for m in regularized_w_minus(&tab, &RegularizationSchedule::shared_default()).unwrap() {
            assert_eq!(max_abs(&m), 0.0);
        }
    }

    #[test]
    fn neville_recovers_quadratic() {
        let xs = [0.3, 0.2, 0.1];
        let vals: Vec<DVector<C64>> = xs
            .iter()
            .map(|&x| DVector::from_element(1, C64::from(2.0 + x - 3.0 * x * x)))
            .collect();
        assert!((extrapolate_to_zero(&xs, &vals)[0] - C64::from(2.0)).norm() < 1e-12);
    }

    #[test]
    fn k_is_hilbert_schmidt_and_compact() {
        let mut hs = Vec::new();
        for n in [201, 401] {
            let s = setup(&default_c1_kernel(0.0, 1.0), n);
            let (norm, sv) = hs_and_singular_values(&assemble_k(&s.tk), &dof_weights(&s.tk.grid, 2));
            let total = sv.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - total).abs() <= 1e-10 * norm.max(1.0));
            assert!(decay_ratio(&sv).unwrap() <= 0.1);
            hs.push(norm);
        }
        assert!((hs[1] - hs[0]).abs() <= 0.05 * hs[1], "{hs:?}");
    }

    #[test]
    fn bound_state_shows_up_in_range_defect() {
        let k = rank_one_kernel(0.0, 1.0, 1, Shape::SinBump, -2.0).unwrap();
        let s = setup(&k, 101);
        assert_eq!(s.spec.indices_of(Classification::DiscreteBelow).len(), 1);
        let wm = assemble_w_minus(&s.tk).unwrap();
        let c = verify_completeness(&wm, &s.spec, &s.panel);
        assert!(c.defect_overlap.unwrap() >= 0.9, "{c:?}");
    }

    #[test]
    fn embedded_eigenfunction_is_orthogonal_to_range() {
        let s = setup(&default_embedded(0.0, 1.0).kernel, 201);
        assert_eq!(s.spec.embedded_set.len(), 1);
        let wm = assemble_w_minus(&s.tk).unwrap();
        let c = verify_completeness(&wm, &s.spec, &s.panel);
        assert!(c.eigenfunction_images[0] <= 1e-2, "{c:?}");
    }
}

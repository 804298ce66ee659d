//! Fredholm equations for the T-kernel.
//!
//! On the grid, `A(z) = −V R₀(z)` becomes `−Vtab · E(z)` with `E(z)` the
//! diagonal of Cauchy-rule coefficients at `z`, and `T(z) = (1 − A(z))⁻¹ V`
//! is found column by column. Separable kernels `Vtab = G C Gᴴ` reduce every
//! solve to an `r × r` system.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

use crate::cauchy::{cauchy_weights, BoundaryPoint, CauchyRule, CauchyWeights, Side};
use crate::error::{Error, Result};
use crate::grid::EnergyGrid;
use crate::interp::{derivative_stencil, lagrange_stencil};
use crate::kernel::{fit_power_law, HolderEstimate, TabulatedKernel};
use crate::linalg::{block, dof_weights, orthonormal_basis, singular_values_desc, weighted_norm};
use crate::spectral::{assemble_h, resolvent_direct, DenseOperator, Projection, Weighting};
use crate::C64;

/// Largest condition number accepted for an unprojected column solve.
pub const CONDITION_LIMIT: f64 = 1e8;
/// Relative distance within which a certified eigenvalue claims a node.
pub const EIGENVALUE_NODE_TOL: f64 = 1e-6;
/// Solved donor columns per side for an interpolated column.
const INTERP_DONORS: usize = 4;

/// Relative radius around certified eigenvalues where ill-conditioned columns are interpolated.
pub const EXCLUSION_RADIUS: f64 = 1e-2;

/// Expand per-node coefficients to one entry per degree of freedom.
fn expand(coeffs: &[C64], d: usize) -> Vec<C64> {
    coeffs.iter().flat_map(|&c| std::iter::repeat_n(c, d)).collect()
}

/// `A(z) = −Vtab·E(z)` as a dense operator in plain weighting.
pub fn assemble_a(
    tab: &TabulatedKernel,
    point: &BoundaryPoint,
    rule: CauchyRule,
) -> Result<(DenseOperator, CauchyWeights)> {
    let cw = cauchy_weights(&tab.grid, point, rule)?;
    let e = expand(&cw.coeffs, tab.d);
    let mut m = tab.table.clone();
    for (j, &ej) in e.iter().enumerate() {
        m.column_mut(j).scale_mut(-1.0);
        m.column_mut(j).iter_mut().for_each(|x| *x *= ej);
    }
    Ok((
        DenseOperator {
            d: tab.d,
            entries: m,
            weighting: Weighting::Plain,
            weights: dof_weights(&tab.grid, tab.d),
        },
        cw,
    ))
}

/// `A(μ ± i0)` with the subtracted rule.
pub fn assemble_a_boundary(tab: &TabulatedKernel, mu: f64, side: Side) -> Result<(DenseOperator, CauchyWeights)> {
    assemble_a(tab, &BoundaryPoint::boundary(mu, side), CauchyRule::Subtracted)
}

/// Factorized `1 − A(z)` at one point.
enum Factored {
    LowRank {
        g: DMatrix<C64>,
        c: DMatrix<C64>,
        lu: nalgebra::LU<C64, nalgebra::Dyn, nalgebra::Dyn>,
    },
    Dense {
        lu: nalgebra::LU<C64, nalgebra::Dyn, nalgebra::Dyn>,
    },
}

/// `1 − A(z)` at a point, factorized once with its weighted 2-norm condition number.
pub struct FredholmOperator<'a> {
    tab: &'a TabulatedKernel,
    pub point: BoundaryPoint,
    pub coeffs: CauchyWeights,
    pub condition: f64,
    factored: Factored,
}

impl<'a> FredholmOperator<'a> {
    pub fn new(tab: &'a TabulatedKernel, point: BoundaryPoint, rule: CauchyRule) -> Result<Self> {
        let cw = cauchy_weights(&tab.grid, &point, rule)?;
        let e = expand(&cw.coeffs, tab.d);
        let w = dof_weights(&tab.grid, tab.d);
        let (factored, condition) = match &tab.factors {
            Some((g, c)) if g.ncols() > 0 => {
                let r = g.ncols();
                let mut eg = g.clone();
                for (i, &ei) in e.iter().enumerate() {
                    eg.row_mut(i).iter_mut().for_each(|x| *x *= ei);
                }
                let m = g.adjoint() * &eg;
                let k = DMatrix::<C64>::identity(r, r) + c * m;
                let condition = lowrank_condition(g, c, &e, &w);
                (
                    Factored::LowRank {
                        g: g.clone(),
                        c: c.clone(),
                        lu: k.lu(),
                    },
                    condition,
                )
            }
            Some(_) => {
                let n = tab.dim();
                (
                    Factored::Dense {
                        lu: DMatrix::<C64>::identity(n, n).lu(),
                    },
                    1.0,
                )
            }
            None => {
                let b = system_matrix(tab, &e);
                let condition = dense_condition(&b, &w);
                (Factored::Dense { lu: b.lu() }, condition)
            }
        };
        Ok(FredholmOperator {
            tab,
            point,
            coeffs: cw,
            condition,
            factored,
        })
    }

    /// Solve `(1 − A) X = Vtab·R` where `R` selects kernel columns through `rhs_frame`.
    fn solve_kernel_rhs(&self, rhs_dense: &DMatrix<C64>, rhs_reduced: Option<&DMatrix<C64>>) -> Result<DMatrix<C64>> {
        let fail = || Error::Conditioning {
            at: self.point.to_string(),
            condition: f64::INFINITY,
        };
        match &self.factored {
            Factored::LowRank { g, c, lu } => {
                let reduced = rhs_reduced.expect("low-rank solves need the reduced right-hand side");
                let y = lu.solve(&(c * reduced)).ok_or_else(fail)?;
                Ok(g * y)
            }
            Factored::Dense { lu } => lu.solve(rhs_dense).ok_or_else(fail),
        }
    }

    /// Column `t(·, μ, z)` for the kernel column at energy `mu`, as an `Nd × d` matrix.
    pub fn column(&self, mu: f64) -> Result<DMatrix<C64>> {
        let tab = self.tab;
        match &self.factored {
            Factored::LowRank { .. } => {
                let f = tab.kernel.separable().expect("low-rank path has factors");
                let reduced = f.frame(mu, tab.d).adjoint();
                self.solve_kernel_rhs(&DMatrix::zeros(0, 0), Some(&reduced))
            }
            Factored::Dense { .. } => {
                let rhs = match tab.grid.nodes.iter().position(|&x| x == mu) {
                    Some(j) => tab.table.columns(j * tab.d, tab.d).into_owned(),
                    None => tab.kernel.column_at(&tab.grid, mu),
                };
                self.solve_kernel_rhs(&rhs, None)
            }
        }
    }

    /// Full table `t(λᵢ, μₖ, z)`.
    pub fn operator(&self) -> Result<DMatrix<C64>> {
        match &self.factored {
            Factored::LowRank { g, .. } => {
                let reduced = g.adjoint();
                self.solve_kernel_rhs(&DMatrix::zeros(0, 0), Some(&reduced))
            }
            Factored::Dense { .. } => self.solve_kernel_rhs(&self.tab.table, None),
        }
    }

    /// `1 − A(z)` as an explicit matrix.
    pub fn matrix(&self) -> DMatrix<C64> {
        system_matrix(self.tab, &expand(&self.coeffs.coeffs, self.tab.d))
    }
}

/// `I + Vtab·E`.
fn system_matrix(tab: &TabulatedKernel, e: &[C64]) -> DMatrix<C64> {
    let n = tab.dim();
    let mut b = tab.table.clone();
    for (j, &ej) in e.iter().enumerate() {
        b.column_mut(j).iter_mut().for_each(|x| *x *= ej);
    }
    b + DMatrix::<C64>::identity(n, n)
}

/// Exact weighted condition number of `I + G C Gᴴ E`.
///
/// In the weighted frame the operator is `I + U Vᴴ` with `U = W^{1/2} G C` and
/// `V = W^{−1/2} Ē G`; it is the identity on the complement of `span(U, V)`.
fn lowrank_condition(g: &DMatrix<C64>, c: &DMatrix<C64>, e: &[C64], w: &[f64]) -> f64 {
    let n = g.nrows();
    let r = g.ncols();
    let mut u = g * c;
    let mut v = g.clone();
    for i in 0..n {
        let s = w[i].sqrt();
        u.row_mut(i).scale_mut(s);
        let f = e[i].conj() / s;
        v.row_mut(i).iter_mut().for_each(|x| *x *= f);
    }
    let mut uv = DMatrix::zeros(n, 2 * r);
    uv.columns_mut(0, r).copy_from(&u);
    uv.columns_mut(r, r).copy_from(&v);
    let z = orthonormal_basis(&uv, 1e-14);
    let k = z.ncols();
    let small = DMatrix::<C64>::identity(k, k) + (z.adjoint() * &u) * (z.adjoint() * &v).adjoint();
    let s = singular_values_desc(&small);
    let (mut hi, mut lo) = (s[0], *s.last().unwrap());
    if k < n {
        hi = hi.max(1.0);
        lo = lo.min(1.0);
    }
    if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}

/// Weighted 2-norm condition number of a dense system by SVD.
fn dense_condition(b: &DMatrix<C64>, w: &[f64]) -> f64 {
    let s = singular_values_desc(&crate::linalg::symmetrize(b, w));
    match s.last() {
        Some(&lo) if lo > 0.0 => s[0] / lo,
        _ => f64::INFINITY,
    }
}

/// One column of the T-kernel.
#[derive(Debug, Clone)]
pub struct TColumn {
    /// `Nd × d`, block `i` is `t(λᵢ, μ, μ ± i0)`.
    pub values: DMatrix<C64>,
    pub condition: f64,
    pub near_boundary: bool,
}

/// Solve `(1 − A(μ ± i0)) t(·, μ) = v(·, μ)`.
pub fn solve_t_column(tab: &TabulatedKernel, mu: f64, side: Side) -> Result<TColumn> {
    let col = solve_t_column_unchecked(tab, &BoundaryPoint::boundary(mu, side), CauchyRule::Subtracted, mu)?;
    if col.condition > CONDITION_LIMIT {
        return Err(Error::ColumnConditioning {
            mu,
            condition: col.condition,
        });
    }
    Ok(col)
}

/// Column solve at an arbitrary point without the conditioning gate.
pub fn solve_t_column_unchecked(
    tab: &TabulatedKernel,
    point: &BoundaryPoint,
    rule: CauchyRule,
    mu: f64,
) -> Result<TColumn> {
    let op = FredholmOperator::new(tab, *point, rule)?;
    let mu_eff = match op.coeffs.node {
        Some(j) if matches!(point, BoundaryPoint::Boundary { .. }) => tab.grid.nodes[j],
        _ => mu,
    };
    Ok(TColumn {
        values: op.column(mu_eff)?,
        condition: op.condition,
        near_boundary: op.coeffs.near_boundary,
    })
}

/// Full table `t(λᵢ, μₖ, z)` of `T(z)` at one point.
pub fn t_operator_at(tab: &TabulatedKernel, point: &BoundaryPoint, rule: CauchyRule) -> Result<(DMatrix<C64>, f64)> {
    let op = FredholmOperator::new(tab, *point, rule)?;
    Ok((op.operator()?, op.condition))
}

/// Largest entry deviation between the Fredholm columns `t(·, μⱼ, μⱼ + iε)`
/// (plain rule) and the same blocks of `V − V R(μⱼ + iε) V` from dense resolvents.
pub fn direct_resolvent_deviation(tab: &TabulatedKernel, eps: f64) -> Result<f64> {
    let g = &tab.grid;
    let d = tab.d;
    let h = assemble_h(tab);
    let w = dof_weights(g, d);
    let devs: Vec<f64> = (0..g.len())
        .into_par_iter()
        .map(|j| {
            let z = C64::new(g.nodes[j], eps);
            let mut wr = resolvent_direct(&h, g, z, true)?.matrix;
            for (i, &wi) in w.iter().enumerate() {
                wr.row_mut(i).scale_mut(wi);
            }
            let vj = tab.table.columns(j * d, d);
            let direct = vj - &tab.table * (wr * vj);
            let col = solve_t_column_unchecked(tab, &BoundaryPoint::OffAxis(z), CauchyRule::Plain, g.nodes[j])?;
            Ok((col.values - direct).iter().map(|c| c.norm()).fold(0.0, f64::max))
        })
        .collect::<Result<_>>()?;
    Ok(devs.into_iter().fold(0.0, f64::max))
}

/// Tabulated boundary values `t(λᵢ, μⱼ, μⱼ ± i0)`.
#[derive(Debug, Clone)]
pub struct TKernel {
    pub grid: EnergyGrid,
    pub d: usize,
    pub side: Side,
    /// `Nd × Nd`, block `(i, j)` is `t(λᵢ, μⱼ, μⱼ ± i0)`.
    pub table: DMatrix<C64>,
    /// `∂_λ t(λ, μⱼ)` at `λ = μⱼ`.
    pub diag_derivative: Vec<DMatrix<C64>>,
    pub conditions: Vec<f64>,
    /// Columns filled by interpolation across a certified embedded eigenvalue.
    pub interpolated: Vec<usize>,
    /// Columns within one spacing of an interval end.
    pub near_boundary: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Serial,
    Parallel,
}

pub fn build_t_kernel(tab: &TabulatedKernel, side: Side, embedded: &[f64]) -> Result<TKernel> {
    build_t_kernel_with(tab, side, embedded, Execution::Parallel)
}

pub fn build_t_kernel_with(tab: &TabulatedKernel, side: Side, embedded: &[f64], exec: Execution) -> Result<TKernel> {
    let grid = &tab.grid;
    let d = tab.d;
    let n = grid.len();
    let solve = |j: usize| {
        solve_t_column_unchecked(
            tab,
            &BoundaryPoint::boundary(grid.nodes[j], side),
            CauchyRule::Subtracted,
            grid.nodes[j],
        )
    };
    let columns: Vec<Result<TColumn>> = match exec {
        Execution::Serial => (0..n).map(solve).collect(),
        Execution::Parallel => (0..n).into_par_iter().map(solve).collect(),
    };
    let width = grid.width();
    let claimed = |mu: f64, condition: f64| {
        embedded.iter().any(|&e| {
            let dist = (mu - e).abs();
            dist <= EIGENVALUE_NODE_TOL * width || (dist <= EXCLUSION_RADIUS * width && condition > CONDITION_LIMIT)
        })
    };
    let mut table = DMatrix::zeros(n * d, n * d);
    let mut conditions = vec![0.0; n];
    let mut interpolated = Vec::new();
    let mut near_boundary = Vec::new();
    let mut failures = Vec::new();
    for (j, col) in columns.into_iter().enumerate() {
        let col = col?;
        conditions[j] = col.condition;
        if col.near_boundary {
            near_boundary.push(j);
        }
        if claimed(grid.nodes[j], col.condition) {
            interpolated.push(j);
        } else if col.condition > CONDITION_LIMIT {
            failures.push(grid.nodes[j]);
        } else {
            table.columns_mut(j * d, d).copy_from(&col.values);
        }
    }
    if !failures.is_empty() {
        return Err(Error::TKernelColumns(failures));
    }
    fill_interpolated(&mut table, grid, d, &interpolated)?;
    let diag_derivative = (0..n)
        .map(|j| {
            let st = derivative_stencil(&grid.nodes, grid.nodes[j]);
            let mut acc = DMatrix::zeros(d, d);
            for (i, q) in st.indices() {
                acc += block(&table, i, j, d) * C64::from(q);
            }
            acc
        })
        .collect();
    Ok(TKernel {
        grid: grid.clone(),
        d,
        side,
        table,
        diag_derivative,
        conditions,
        interpolated,
        near_boundary,
    })
}

/// Replace the listed columns by cubic interpolation in `μ` from the nearest
/// solved columns, two on each side where available.
fn fill_interpolated(table: &mut DMatrix<C64>, grid: &EnergyGrid, d: usize, targets: &[usize]) -> Result<()> {
    let n = grid.len();
    for &j in targets {
        let left: Vec<usize> = (0..j).rev().filter(|k| !targets.contains(k)).collect();
        let right: Vec<usize> = (j + 1..n).filter(|k| !targets.contains(k)).collect();
        let side = INTERP_DONORS.min(left.len()).min(right.len());
        if side < 2 {
            return Err(Error::TKernelColumns(vec![grid.nodes[j]]));
        }
        let mut donors: Vec<usize> = left[..side].iter().rev().copied().collect();
        donors.extend(&right[..side]);
        let pts: Vec<f64> = donors.iter().map(|&k| grid.nodes[k]).collect();
        let st = lagrange_stencil(&pts, grid.nodes[j], donors.len());
        let mut col = DMatrix::zeros(n * d, d);
        for (k, c) in st.indices() {
            col += table.columns(donors[k] * d, d) * C64::from(c);
        }
        table.columns_mut(j * d, d).copy_from(&col);
    }
    Ok(())
}

impl TKernel {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn block(&self, i: usize, j: usize) -> DMatrix<C64> {
        block(&self.table, i, j, self.d)
    }

    pub fn diagonal(&self, i: usize) -> DMatrix<C64> {
        self.block(i, i)
    }

    pub fn max_condition(&self) -> f64 {
        self.conditions
            .iter()
            .enumerate()
            .filter(|(j, _)| !self.interpolated.contains(j))
            .map(|(_, &c)| c)
            .fold(0.0, f64::max)
    }

    /// Largest block norm in the first/last `k` rows and columns.
    pub fn edge_magnitude(&self, k: usize) -> f64 {
        let n = self.len();
        let mut m: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i < k || j < k || i + k >= n || j + k >= n {
                    m = m.max(self.block(i, j).norm());
                }
            }
        }
        m
    }

    /// Write the binary table.
    ///
    /// Layout, little-endian: `b"TKRN"`, `u32` version, `u32` N, `u32` d,
    /// `u8` side (0 for `+i0`, 1 for `−i0`), N `f64` nodes, then for every
    /// `i, j` (row-major) and `p, q` (row-major within the block) the pair
    /// `f64 re, f64 im` of `t(λᵢ, μⱼ)[p, q]`.
    pub fn write_binary(&self, mut w: impl Write) -> Result<()> {
        let n = self.len();
        w.write_all(b"TKRN")?;
        w.write_all(&TKERNEL_FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(n as u32).to_le_bytes())?;
        w.write_all(&(self.d as u32).to_le_bytes())?;
        w.write_all(&[match self.side {
            Side::Plus => 0u8,
            Side::Minus => 1u8,
        }])?;
        for x in &self.grid.nodes {
            w.write_all(&x.to_le_bytes())?;
        }
        for i in 0..n {
            for j in 0..n {
                let b = self.block(i, j);
                for p in 0..self.d {
                    for q in 0..self.d {
                        w.write_all(&b[(p, q)].re.to_le_bytes())?;
                        w.write_all(&b[(p, q)].im.to_le_bytes())?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_table(&self) -> TKernelTable {
        let n = self.len();
        let mut entries = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let b = self.block(i, j);
                entries.push(TKernelEntry {
                    i,
                    j,
                    block: (0..self.d)
                        .map(|p| (0..self.d).map(|q| [b[(p, q)].re, b[(p, q)].im]).collect())
                        .collect(),
                });
            }
        }
        TKernelTable {
            version: TKERNEL_FORMAT_VERSION,
            side: self.side,
            d: self.d,
            nodes: self.grid.nodes.clone(),
            entries,
        }
    }
}

pub const TKERNEL_FORMAT_VERSION: u32 = 1;

/// Decoded binary table: `(side, d, nodes, Nd × Nd table)`.
pub fn read_tkernel_binary(mut r: impl Read) -> Result<(Side, usize, Vec<f64>, DMatrix<C64>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != b"TKRN" {
        return Err(Error::Shape("not a T-kernel table".into()));
    }
    let mut u = [0u8; 4];
    let mut read_u32 = |r: &mut dyn Read| -> Result<u32> {
        r.read_exact(&mut u)?;
        Ok(u32::from_le_bytes(u))
    };
    let version = read_u32(&mut r)?;
    if version != TKERNEL_FORMAT_VERSION {
        return Err(Error::Shape(format!("unsupported table version {version}")));
    }
    let n = read_u32(&mut r)? as usize;
    let d = read_u32(&mut r)? as usize;
    let mut s = [0u8; 1];
    r.read_exact(&mut s)?;
    let side = if s[0] == 0 { Side::Plus } else { Side::Minus };
    let mut f = [0u8; 8];
    let mut read_f64 = |r: &mut dyn Read| -> Result<f64> {
        r.read_exact(&mut f)?;
        Ok(f64::from_le_bytes(f))
    };
    let nodes = (0..n).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
    let mut table = DMatrix::zeros(n * d, n * d);
    for i in 0..n {
        for j in 0..n {
            for p in 0..d {
                for q in 0..d {
                    let re = read_f64(&mut r)?;
                    let im = read_f64(&mut r)?;
                    table[(i * d + p, j * d + q)] = C64::new(re, im);
                }
            }
        }
    }
    Ok((side, d, nodes, table))
}

/// JSON form of a T-kernel table.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TKernelTable {
    pub version: u32,
    pub side: Side,
    pub d: usize,
    pub nodes: Vec<f64>,
    pub entries: Vec<TKernelEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TKernelEntry {
    pub i: usize,
    pub j: usize,
    /// Row-major `d × d` block of `[re, im]` pairs.
    pub block: Vec<Vec<[f64; 2]>>,
}

/// Hölder fit of the tabulated T-kernel over node lags.
///
/// Base pairs are drawn from the central 80% of the grid and away from the
/// `exclude` energies by [`EXCLUSION_RADIUS`]. For each lag `k ∈ {1, 2, 3, 4, 6, 8}`
/// the largest block increment over `|Δi| + |Δj| = k` is fitted against the
/// median energy offset.
pub fn t_kernel_holder(tk: &TKernel, samples: usize, exclude: &[f64], seed: u64) -> HolderEstimate {
    let grid = &tk.grid;
    let n = grid.len();
    let w = grid.width();
    let admissible: Vec<usize> = (0..n)
        .filter(|&i| {
            let x = grid.nodes[i];
            x > grid.a + 0.1 * w
                && x < grid.b - 0.1 * w
                && exclude.iter().all(|&e| (x - e).abs() > EXCLUSION_RADIUS * w)
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lags = [1usize, 2, 3, 4, 6, 8];
    let mut scales = Vec::new();
    let mut moduli = Vec::new();
    for &lag in &lags {
        let mut offsets = Vec::new();
        let mut best: f64 = 0.0;
        for _ in 0..samples {
            let i = admissible[rng.random_range(0..admissible.len())];
            let j = admissible[rng.random_range(0..admissible.len())];
            let di = rng.random_range(0..=lag);
            let dj = lag - di;
            let (i2, j2) = (i + di, j + dj);
            if i2 >= n || j2 >= n || !admissible.contains(&i2) || !admissible.contains(&j2) {
                continue;
            }
            let delta = (grid.nodes[i2] - grid.nodes[i]) + (grid.nodes[j2] - grid.nodes[j]);
            offsets.push(delta);
            best = best.max((tk.block(i2, j2) - tk.block(i, j)).norm());
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

/// Result of a deflated solve near embedded eigenvalues.
#[derive(Debug, Clone)]
pub struct ProjectedSolution {
    pub solution: DVector<C64>,
    /// `σ_max/σ_{M−N}` of the operator restricted to the deflated subspaces.
    pub restricted_condition: f64,
    /// `σ_max/σ_min` of `1 − A(z)` without deflation.
    pub unprojected_condition: f64,
}

/// Solve `(1 − A(z)) x = rhs` for `rhs ∈ range(P)`.
///
/// The equation is bordered by the embedded eigenfunctions `fₙ` (which span
/// the cokernel of `1 − A(λₙ ± i0)`) and by `gₙ = Vfₙ` (its kernel). The
/// returned solution is weighted-orthogonal to every `gₙ`.
pub fn solve_projected(
    tab: &TabulatedKernel,
    point: &BoundaryPoint,
    proj: &Projection,
    rhs: &DVector<C64>,
) -> Result<ProjectedSolution> {
    let w = dof_weights(&tab.grid, tab.d);
    let n = tab.dim();
    if rhs.len() != n {
        return Err(Error::Shape(format!("rhs has length {}, expected {n}", rhs.len())));
    }
    let rnorm = weighted_norm(rhs, &w);
    let off = weighted_norm(&(rhs - proj.apply(rhs)), &w);
    if off > 1e-8 * rnorm {
        return Err(Error::Precondition(format!(
            "right-hand side is not in the range of P: ‖(1−P)rhs‖ = {off:.3e}, ‖rhs‖ = {rnorm:.3e}"
        )));
    }
    let op = FredholmOperator::new(tab, *point, CauchyRule::Subtracted)?;
    let b = op.matrix();
    let k = proj.vectors.len();
    let vmat = crate::spectral::assemble_v(tab).entries;
    let gs: Vec<DVector<C64>> = proj
        .vectors
        .iter()
        .map(|f| {
            let g = &vmat * f;
            let s = weighted_norm(&g, &w);
            g / C64::from(s)
        })
        .collect();
    let mut big = DMatrix::<C64>::zeros(n + k, n + k);
    big.view_mut((0, 0), (n, n)).copy_from(&b);
    for (m, (f, g)) in proj.vectors.iter().zip(&gs).enumerate() {
        big.view_mut((0, n + m), (n, 1)).copy_from(f);
        for i in 0..n {
            big[(n + m, i)] = g[i].conj() * w[i];
        }
    }
    let mut full_rhs = DVector::zeros(n + k);
    full_rhs.rows_mut(0, n).copy_from(rhs);
    let x = big.lu().solve(&full_rhs).ok_or_else(|| Error::Conditioning {
        at: point.to_string(),
        condition: f64::INFINITY,
    })?;
    let solution = x.rows(0, n).into_owned();

    // conditioning in the weighted frame
    let bs = crate::linalg::symmetrize(&b, &w);
    let unproj = singular_values_desc(&bs);
    let unprojected_condition = unproj[0] / unproj[n - 1];
    let restricted_condition = if k == 0 {
        unprojected_condition
    } else {
        let hat = |v: &DVector<C64>| DVector::from_iterator(n, v.iter().zip(&w).map(|(c, &wi)| c * wi.sqrt()));
        let fmat = DMatrix::from_columns(&proj.vectors.iter().map(hat).collect::<Vec<_>>());
        let gmat = orthonormal_basis(&DMatrix::from_columns(&gs.iter().map(hat).collect::<Vec<_>>()), 1e-12);
        let fmat = orthonormal_basis(&fmat, 1e-12);
        let id = DMatrix::<C64>::identity(n, n);
        let pl = &id - &fmat * fmat.adjoint();
        let pr = &id - &gmat * gmat.adjoint();
        let s = singular_values_desc(&(pl * bs * pr));
        s[0] / s[n - k - 1]
    };
    Ok(ProjectedSolution {
        solution,
        restricted_condition,
        unprojected_condition,
    })
}

//! Dense discretizations of `H₀`, `V` and `H`, eigen-analysis and resolvents.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::EnergyGrid;
use crate::kernel::{EmbeddedScenario, TabulatedKernel};
use crate::linalg::{dof_weights, hermitian_defect, max_abs, symmetrize, weighted_inner, weighted_norm};
use crate::C64;

/// Smallest admissible distance of a resolvent argument from `[a, b]`.
pub const EPS_MIN: f64 = 1e-8;
/// Default residual threshold for embedded-eigenvalue certification.
pub const TOL_EMBED: f64 = 1e-6;
/// Localization ratio above which an eigenvector counts as a continuum artifact.
pub const LOCALIZATION_LIMIT: f64 = 0.5;
/// Half width, in nodes, of the localization window.
pub const LOCALIZATION_NODES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    Plain,
    Symmetrized,
}

/// An `Nd × Nd` operator on grid functions.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    pub d: usize,
    pub entries: DMatrix<C64>,
    pub weighting: Weighting,
    /// Per-dof quadrature weights.
    pub weights: Vec<f64>,
}

impl DenseOperator {
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn symmetrized(&self) -> DenseOperator {
        match self.weighting {
            Weighting::Symmetrized => self.clone(),
            Weighting::Plain => DenseOperator {
                entries: symmetrize(&self.entries, &self.weights),
                weighting: Weighting::Symmetrized,
                ..self.clone()
            },
        }
    }

    pub fn plain(&self) -> DenseOperator {
        match self.weighting {
            Weighting::Plain => self.clone(),
            Weighting::Symmetrized => DenseOperator {
                entries: crate::linalg::desymmetrize(&self.entries, &self.weights),
                weighting: Weighting::Plain,
                ..self.clone()
            },
        }
    }

    pub fn apply(&self, f: &DVector<C64>) -> DVector<C64> {
        &self.entries * f
    }

    pub fn sum(&self, other: &DenseOperator) -> Result<DenseOperator> {
        if self.weighting != other.weighting || self.dim() != other.dim() {
            return Err(Error::Shape("operators differ in shape or weighting".into()));
        }
        Ok(DenseOperator {
            entries: &self.entries + &other.entries,
            ..self.clone()
        })
    }
}

pub fn assemble_h0(grid: &EnergyGrid, d: usize) -> DenseOperator {
    let n = grid.len() * d;
    let mut m = DMatrix::zeros(n, n);
    for (i, &lam) in grid.nodes.iter().enumerate() {
        for p in 0..d {
            m[(i * d + p, i * d + p)] = C64::from(lam);
        }
    }
    DenseOperator {
        d,
        entries: m,
        weighting: Weighting::Plain,
        weights: dof_weights(grid, d),
    }
}

/// Nyström matrix `V[i][j] = v(λᵢ, λⱼ) wⱼ`.
pub fn assemble_v(tab: &TabulatedKernel) -> DenseOperator {
    let w = dof_weights(&tab.grid, tab.d);
    let mut m = tab.table.clone();
    for (j, &wj) in w.iter().enumerate() {
        m.column_mut(j).scale_mut(wj);
    }
    DenseOperator {
        d: tab.d,
        entries: m,
        weighting: Weighting::Plain,
        weights: w,
    }
}

/// `H = H₀ + V` in plain weighting.
pub fn assemble_h(tab: &TabulatedKernel) -> DenseOperator {
    assemble_h0(&tab.grid, tab.d).sum(&assemble_v(tab)).expect("same grid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    DiscreteBelow,
    DiscreteAbove,
    EmbeddedCandidate,
    ContinuumArtifact,
}

#[derive(Debug, Clone)]
pub struct SpectralData {
    pub eigenvalues: Vec<f64>,
    /// Columns are eigenfunctions, orthonormal in the weighted inner product.
    pub eigenvectors: DMatrix<C64>,
    pub classification: Vec<Classification>,
    pub residuals: Vec<f64>,
    pub localization: Vec<f64>,
    /// Indices of certified embedded eigenvalues.
    pub embedded_set: Vec<usize>,
    pub weights: Vec<f64>,
    pub d: usize,
}

/// JSON-friendly view of [`SpectralData`].
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SpectralSummary {
    pub eigenvalue_count: usize,
    pub discrete_below: Vec<f64>,
    pub discrete_above: Vec<f64>,
    pub embedded: Vec<f64>,
    pub embedded_residuals: Vec<f64>,
    pub embedded_localization: Vec<f64>,
    pub continuum_artifacts: usize,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
}

impl SpectralData {
    pub fn eigenfunction(&self, k: usize) -> DVector<C64> {
        self.eigenvectors.column(k).into_owned()
    }

    pub fn indices_of(&self, class: Classification) -> Vec<usize> {
        (0..self.eigenvalues.len())
            .filter(|&k| self.classification[k] == class)
            .collect()
    }

    pub fn embedded_eigenvalues(&self) -> Vec<f64> {
        self.embedded_set.iter().map(|&k| self.eigenvalues[k]).collect()
    }

    /// Gram matrix of the eigenvectors in the weighted inner product.
    pub fn gram(&self) -> DMatrix<C64> {
        let n = self.eigenvectors.ncols();
        let mut wv = self.eigenvectors.clone();
        for (i, &w) in self.weights.iter().enumerate() {
            wv.row_mut(i).scale_mut(w);
        }
        let g = self.eigenvectors.adjoint() * wv;
        debug_assert_eq!(g.nrows(), n);
        g
    }

    pub fn summary(&self) -> SpectralSummary {
        let pick = |c| {
            self.indices_of(c)
                .into_iter()
                .map(|k| self.eigenvalues[k])
                .collect::<Vec<_>>()
        };
        SpectralSummary {
            eigenvalue_count: self.eigenvalues.len(),
            discrete_below: pick(Classification::DiscreteBelow),
            discrete_above: pick(Classification::DiscreteAbove),
            embedded: self.embedded_eigenvalues(),
            embedded_residuals: self.embedded_set.iter().map(|&k| self.residuals[k]).collect(),
            embedded_localization: self.embedded_set.iter().map(|&k| self.localization[k]).collect(),
            continuum_artifacts: self.indices_of(Classification::ContinuumArtifact).len(),
            min_eigenvalue: self.eigenvalues.first().copied().unwrap_or(f64::NAN),
            max_eigenvalue: self.eigenvalues.last().copied().unwrap_or(f64::NAN),
        }
    }
}

/// Full Hermitian eigendecomposition and classification of the spectrum.
pub fn eigendecompose(h: &DenseOperator, grid: &EnergyGrid, tol_embed: f64) -> Result<SpectralData> {
    let hs = h.symmetrized();
    let defect = hermitian_defect(&hs.entries);
    if defect > 1e-12 {
        return Err(Error::NotHermitian { defect });
    }
    let d = h.d;
    let herm = (&hs.entries + hs.entries.adjoint()) * C64::from(0.5);
    let eig = herm.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]));
    let n = order.len();
    let mut values = Vec::with_capacity(n);
    let mut vectors = DMatrix::zeros(n, n);
    let mut classes = Vec::with_capacity(n);
    let mut residuals = Vec::with_capacity(n);
    let mut localization = Vec::with_capacity(n);
    for (col, &k) in order.iter().enumerate() {
        let lam = eig.eigenvalues[k];
        let u = eig.eigenvectors.column(k).into_owned();
        let r = (&herm * &u - &u * C64::from(lam)).norm() / u.norm();
        let near = grid.nearest_node(lam);
        let lo = near.saturating_sub(LOCALIZATION_NODES);
        let hi = (near + LOCALIZATION_NODES).min(grid.len() - 1);
        let local: f64 = (lo * d..(hi + 1) * d).map(|i| u[i].norm_sqr()).sum();
        let ratio = local / u.norm_squared();
        let class = if lam < grid.a {
            Classification::DiscreteBelow
        } else if lam > grid.b {
            Classification::DiscreteAbove
        } else if r <= tol_embed && ratio < LOCALIZATION_LIMIT {
            Classification::EmbeddedCandidate
        } else {
            Classification::ContinuumArtifact
        };
        for i in 0..n {
            vectors[(i, col)] = u[i] / h.weights[i].sqrt();
        }
        values.push(lam);
        classes.push(class);
        residuals.push(r);
        localization.push(ratio);
    }
    let embedded_set = (0..n)
        .filter(|&k| classes[k] == Classification::EmbeddedCandidate)
        .collect();
    Ok(SpectralData {
        eigenvalues: values,
        eigenvectors: vectors,
        classification: classes,
        residuals,
        localization,
        embedded_set,
        weights: h.weights.clone(),
        d,
    })
}

/// `P = I − Σₙ |fₙ⟩⟨fₙ|` over the certified embedded eigenfunctions.
#[derive(Debug, Clone)]
pub struct Projection {
    pub matrix: DMatrix<C64>,
    pub eigenvalues: Vec<f64>,
    pub vectors: Vec<DVector<C64>>,
    pub weights: Vec<f64>,
}

impl Projection {
    /// Projection killing the given weighted-orthonormal vectors.
    pub fn from_vectors(vectors: Vec<DVector<C64>>, eigenvalues: Vec<f64>, weights: Vec<f64>) -> Self {
        let n = weights.len();
        let mut m = DMatrix::identity(n, n);
        for f in &vectors {
            let wf: DVector<C64> = DVector::from_iterator(n, f.iter().zip(&weights).map(|(c, &w)| c * w));
            m -= f * wf.adjoint();
        }
        Projection {
            matrix: m,
            eigenvalues,
            vectors,
            weights,
        }
    }

    pub fn apply(&self, x: &DVector<C64>) -> DVector<C64> {
        let mut out = x.clone();
        for f in &self.vectors {
            out -= f * weighted_inner(f, x, &self.weights);
        }
        out
    }

    pub fn rank_deficit(&self) -> usize {
        self.vectors.len()
    }
}

pub fn projection_p(spec: &SpectralData) -> Projection {
    Projection::from_vectors(
        spec.embedded_set.iter().map(|&k| spec.eigenfunction(k)).collect(),
        spec.embedded_eigenvalues(),
        spec.weights.clone(),
    )
}

/// Dense resolvent of `H` at `z` in plain weighting.
#[derive(Debug, Clone)]
pub struct Resolvent {
    pub z: C64,
    pub matrix: DMatrix<C64>,
    pub condition: f64,
    pub residual: f64,
}

/// Condition number above which a resolvent solve is refused.
pub const RESOLVENT_CONDITION_LIMIT: f64 = 1e12;

/// `(H − z)⁻¹` by LU with partial pivoting.
///
/// Arguments within [`EPS_MIN`] of `[a, b]` are refused unless `allow_near_axis` is set.
pub fn resolvent_direct(h: &DenseOperator, grid: &EnergyGrid, z: C64, allow_near_axis: bool) -> Result<Resolvent> {
    let dist = if z.re < grid.a {
        C64::new(grid.a - z.re, z.im).norm()
    } else if z.re > grid.b {
        C64::new(z.re - grid.b, z.im).norm()
    } else {
        z.im.abs()
    };
    if dist < EPS_MIN && !allow_near_axis {
        return Err(Error::Domain(format!(
            "z = {z} is within {EPS_MIN:e} of the spectral interval"
        )));
    }
    let hp = h.plain();
    let n = hp.dim();
    let shifted = &hp.entries - DMatrix::<C64>::identity(n, n) * z;
    let lu = shifted.clone().lu();
    let id = DMatrix::<C64>::identity(n, n);
    let x = lu.solve(&id).ok_or_else(|| Error::Conditioning {
        at: format!("z = {z}"),
        condition: f64::INFINITY,
    })?;
    let norm1 = |m: &DMatrix<C64>| {
        (0..m.ncols())
            .map(|j| m.column(j).iter().map(|c| c.norm()).sum::<f64>())
            .fold(0.0, f64::max)
    };
    let condition = norm1(&shifted) * norm1(&x);
    if !condition.is_finite() || condition > RESOLVENT_CONDITION_LIMIT {
        return Err(Error::Conditioning {
            at: format!("z = {z}"),
            condition,
        });
    }
    let residual = max_abs(&(&shifted * &x - id));
    Ok(Resolvent {
        z,
        matrix: x,
        condition,
        residual,
    })
}

/// Relative residual `‖(H − λ)f‖/‖f‖` in the weighted norm.
pub fn eigen_residual(h: &DenseOperator, f: &DVector<C64>, lambda: f64) -> f64 {
    let hp = h.plain();
    let r = &hp.entries * f - f * C64::from(lambda);
    weighted_norm(&r, &hp.weights) / weighted_norm(f, &hp.weights)
}

/// Residuals of the eigenfunction identities at an embedded eigenvalue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    /// `‖[Vfₙ](λₙ)‖` by quadrature.
    pub vf_at_eigenvalue: f64,
    /// `‖fₙ(λₙ) + [V′fₙ](λₙ)‖`.
    pub derivative_identity: f64,
    /// `max_i ‖fₙ(λᵢ) + [R₀(λₙ ± i0)Vfₙ](λᵢ)‖`.
    pub resolvent_identity: f64,
}

pub fn check_eigenfunction_regularity(scenario: &EmbeddedScenario, grid: &EnergyGrid) -> Result<RegularityReport> {
    let k = &scenario.kernel;
    if !k.differentiable || !k.has_derivative() {
        return Err(Error::Unsupported(format!(
            "kernel '{}' is not differentiable; eigenfunction regularity needs v′",
            k.label
        )));
    }
    let d = k.d;
    let lam_n = scenario.eigenvalue;
    let f = scenario.eigenfunction(grid);
    let fj = |j: usize| DVector::from_column_slice(f.at(j));
    let apply_at = |lam: f64, deriv: bool| -> Result<DVector<C64>> {
        let mut acc = DVector::<C64>::zeros(d);
        for (j, (&mu, &w)) in grid.nodes.iter().zip(&grid.weights).enumerate() {
            let blk = if deriv {
                k.eval_dlambda(lam, mu)?
            } else {
                k.eval(lam, mu)?
            };
            acc += blk * fj(j) * C64::from(w);
        }
        Ok(acc)
    };
    let vf_n = apply_at(lam_n, false)?;
    let vpf_n = apply_at(lam_n, true)?;
    let derivative_identity = (scenario.profile.value(lam_n) + &vpf_n).norm();
    let mut resolvent_identity: f64 = 0.0;
    for (i, &lam) in grid.nodes.iter().enumerate() {
        let quotient = if (lam - lam_n).abs() <= crate::cauchy::NODE_SNAP * grid.width() {
            vpf_n.clone()
        } else {
            apply_at(lam, false)? / C64::from(lam - lam_n)
        };
        resolvent_identity = resolvent_identity.max((fj(i) + quotient).norm());
    }
    Ok(RegularityReport {
        vf_at_eigenvalue: vf_n.norm(),
        derivative_identity,
        resolvent_identity,
    })
}

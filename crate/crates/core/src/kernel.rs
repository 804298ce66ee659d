//! Operator-valued potential kernels `v(λ, μ) ∈ ℂ^{d×d}`.
//!
//! Kernels are closed forms. The separable ones also keep their factors
//! `v(λ, μ) = Σₖₗ cₖₗ |gₖ(λ)⟩⟨gₗ(μ)|`, which the Fredholm solver uses for a
//! low-rank path.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{build_grid, EnergyGrid, GridFunction, Scheme};
use crate::C64;

type VecFn = Arc<dyn Fn(f64) -> DVector<C64> + Send + Sync>;
type BlockFn = Arc<dyn Fn(f64, f64) -> DMatrix<C64> + Send + Sync>;

/// Scalar bump shapes on the unit interval, zero at both ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Shape {
    /// `sin(πs)`
    SinBump,
    /// `sin²(πs)`
    Sin2Bump,
    /// `16 s²(1−s)²`
    PolyBump,
}

impl Shape {
    pub fn value(self, s: f64) -> f64 {
        if s <= 0.0 || s >= 1.0 {
            return 0.0;
        }
        match self {
            Shape::SinBump => (PI * s).sin(),
            Shape::Sin2Bump => (PI * s).sin().powi(2),
            Shape::PolyBump => 16.0 * (s * (1.0 - s)).powi(2),
        }
    }

    pub fn deriv(self, s: f64) -> f64 {
        if !(0.0..=1.0).contains(&s) {
            return 0.0;
        }
        match self {
            Shape::SinBump => PI * (PI * s).cos(),
            Shape::Sin2Bump if s == 0.0 || s == 1.0 => 0.0,
            Shape::Sin2Bump => PI * (2.0 * PI * s).sin(),
            Shape::PolyBump => 32.0 * s * (1.0 - s) * (1.0 - 2.0 * s),
        }
    }

    /// Whether the shape and its first derivative vanish at both ends.
    pub fn flat_at_ends(self) -> bool {
        !matches!(self, Shape::SinBump)
    }
}

/// A `ℂᵈ`-valued profile `g(λ)` together with its derivative.
#[derive(Clone)]
pub struct Profile {
    pub name: String,
    value: VecFn,
    deriv: VecFn,
    flat_at_ends: bool,
}

impl fmt::Debug for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Profile").field("name", &self.name).finish()
    }
}

impl Profile {
    pub fn new(
        name: impl Into<String>,
        value: impl Fn(f64) -> DVector<C64> + Send + Sync + 'static,
        deriv: impl Fn(f64) -> DVector<C64> + Send + Sync + 'static,
        flat_at_ends: bool,
    ) -> Self {
        Profile {
            name: name.into(),
            value: Arc::new(value),
            deriv: Arc::new(deriv),
            flat_at_ends,
        }
    }

    /// `scale · shape((λ−a)/(b−a)) · direction`.
    pub fn shaped(shape: Shape, a: f64, b: f64, direction: DVector<C64>, scale: f64) -> Self {
        let w = b - a;
        let dir = direction.clone();
        let name = format!("{shape:?}");
        Profile::new(
            name,
            move |lam| &dir * C64::from(scale * shape.value((lam - a) / w)),
            move |lam| &direction * C64::from(scale * shape.deriv((lam - a) / w) / w),
            shape.flat_at_ends(),
        )
    }

    pub fn value(&self, lambda: f64) -> DVector<C64> {
        (self.value)(lambda)
    }

    pub fn deriv(&self, lambda: f64) -> DVector<C64> {
        (self.deriv)(lambda)
    }

    pub fn flat_at_ends(&self) -> bool {
        self.flat_at_ends
    }
}

/// Profiles and coupling matrix of a separable kernel.
#[derive(Debug, Clone)]
pub struct SeparableFactors {
    pub profiles: Vec<Profile>,
    pub coefficients: DMatrix<f64>,
}

impl SeparableFactors {
    pub fn rank(&self) -> usize {
        self.profiles.len()
    }

    /// `d × r` matrix whose columns are the profiles at `λ`.
    pub fn frame(&self, lambda: f64, d: usize) -> DMatrix<C64> {
        let mut m = DMatrix::zeros(d, self.rank());
        for (k, p) in self.profiles.iter().enumerate() {
            m.set_column(k, &p.value(lambda));
        }
        m
    }

    pub fn frame_deriv(&self, lambda: f64, d: usize) -> DMatrix<C64> {
        let mut m = DMatrix::zeros(d, self.rank());
        for (k, p) in self.profiles.iter().enumerate() {
            m.set_column(k, &p.deriv(lambda));
        }
        m
    }

    /// `(G, C)` with `G` the `Nd × r` stacked frame on the grid, so that the
    /// tabulated kernel equals `G C Gᴴ`.
    pub fn on_grid(&self, grid: &EnergyGrid, d: usize) -> (DMatrix<C64>, DMatrix<C64>) {
        let r = self.rank();
        let mut g = DMatrix::zeros(grid.len() * d, r);
        for (i, &lam) in grid.nodes.iter().enumerate() {
            g.view_mut((i * d, 0), (d, r)).copy_from(&self.frame(lam, d));
        }
        (g, self.coefficients.map(C64::from))
    }
}

/// Potential kernel with its regularity metadata.
#[derive(Clone)]
pub struct OperatorKernel {
    pub d: usize,
    pub a: f64,
    pub b: f64,
    pub holder_exponent: f64,
    pub differentiable: bool,
    pub label: String,
    eval: BlockFn,
    eval_dlambda: Option<BlockFn>,
    separable: Option<SeparableFactors>,
}

impl fmt::Debug for OperatorKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OperatorKernel")
            .field("label", &self.label)
            .field("d", &self.d)
            .field("interval", &(self.a, self.b))
            .field("holder_exponent", &self.holder_exponent)
            .field("differentiable", &self.differentiable)
            .field("rank", &self.separable.as_ref().map(|s| s.rank()))
            .finish()
    }
}

impl OperatorKernel {
    /// Kernel from an arbitrary closure. The caller vouches for symmetry.
    pub fn from_fn(
        label: impl Into<String>,
        a: f64,
        b: f64,
        d: usize,
        holder_exponent: f64,
        eval: impl Fn(f64, f64) -> DMatrix<C64> + Send + Sync + 'static,
    ) -> Self {
        OperatorKernel {
            d,
            a,
            b,
            holder_exponent,
            differentiable: false,
            label: label.into(),
            eval: Arc::new(eval),
            eval_dlambda: None,
            separable: None,
        }
    }

    pub fn with_derivative(mut self, dlambda: impl Fn(f64, f64) -> DMatrix<C64> + Send + Sync + 'static) -> Self {
        self.eval_dlambda = Some(Arc::new(dlambda));
        self.differentiable = true;
        self
    }

    pub fn zero(a: f64, b: f64, d: usize) -> Self {
        build_separable_kernel(a, b, d, Vec::new(), DMatrix::zeros(0, 0))
            .expect("empty factorization is valid")
            .relabel("zero")
    }

    pub fn relabel(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn separable(&self) -> Option<&SeparableFactors> {
        self.separable.as_ref()
    }

    pub fn has_derivative(&self) -> bool {
        self.eval_dlambda.is_some()
    }

    /// True when the kernel is identically zero by construction.
    pub fn is_zero(&self) -> bool {
        self.separable
            .as_ref()
            .is_some_and(|s| s.rank() == 0 || s.coefficients.iter().all(|&c| c == 0.0))
    }

    fn check_domain(&self, x: f64) -> Result<()> {
        if x >= self.a && x <= self.b {
            Ok(())
        } else {
            Err(Error::Domain(format!("argument {x} outside [{}, {}]", self.a, self.b)))
        }
    }

    /// `v(λ, μ)`, rejecting arguments outside `[a, b]`.
    pub fn eval(&self, lambda: f64, mu: f64) -> Result<DMatrix<C64>> {
        self.check_domain(lambda)?;
        self.check_domain(mu)?;
        Ok((self.eval)(lambda, mu))
    }

    pub fn eval_unchecked(&self, lambda: f64, mu: f64) -> DMatrix<C64> {
        (self.eval)(lambda, mu)
    }

    /// `∂_λ v(λ, μ)` when the kernel carries a derivative.
    pub fn eval_dlambda(&self, lambda: f64, mu: f64) -> Result<DMatrix<C64>> {
        self.check_domain(lambda)?;
        self.check_domain(mu)?;
        match &self.eval_dlambda {
            Some(f) => Ok(f(lambda, mu)),
            None => Err(Error::Unsupported(format!(
                "kernel '{}' has no λ-derivative",
                self.label
            ))),
        }
    }

    /// `Nd × Nd` table whose `(i, j)` block is `v(λᵢ, λⱼ)`.
    pub fn tabulate(&self, grid: &EnergyGrid) -> DMatrix<C64> {
        self.tabulate_with(grid, &*self.eval)
    }

    /// Table of `∂_λ v(λᵢ, λⱼ)`.
    pub fn tabulate_dlambda(&self, grid: &EnergyGrid) -> Result<DMatrix<C64>> {
        match &self.eval_dlambda {
            Some(f) => Ok(self.tabulate_with(grid, &**f)),
            None => Err(Error::Unsupported(format!(
                "kernel '{}' has no λ-derivative",
                self.label
            ))),
        }
    }

    fn tabulate_with(&self, grid: &EnergyGrid, f: &(dyn Fn(f64, f64) -> DMatrix<C64> + Send + Sync)) -> DMatrix<C64> {
        let n = grid.len();
        let d = self.d;
        let rows: Vec<Vec<DMatrix<C64>>> = grid
            .nodes
            .par_iter()
            .map(|&lam| grid.nodes.iter().map(|&mu| f(lam, mu)).collect())
            .collect();
        let mut out = DMatrix::zeros(n * d, n * d);
        for (i, row) in rows.iter().enumerate() {
            for (j, blk) in row.iter().enumerate() {
                out.view_mut((i * d, j * d), (d, d)).copy_from(blk);
            }
        }
        out
    }

    /// Column `v(·, μ)` on the grid for an arbitrary `μ`, as an `Nd × d` matrix.
    pub fn column_at(&self, grid: &EnergyGrid, mu: f64) -> DMatrix<C64> {
        let d = self.d;
        let mut out = DMatrix::zeros(grid.len() * d, d);
        for (i, &lam) in grid.nodes.iter().enumerate() {
            out.view_mut((i * d, 0), (d, d)).copy_from(&(self.eval)(lam, mu));
        }
        out
    }
}

/// A kernel tabulated once on a grid, with its low-rank factors when separable.
#[derive(Debug, Clone)]
pub struct TabulatedKernel {
    pub kernel: OperatorKernel,
    pub grid: EnergyGrid,
    pub d: usize,
    /// `Nd × Nd`, block `(i, j)` is `v(λᵢ, λⱼ)`.
    pub table: DMatrix<C64>,
    /// `(G, C)` with `table = G C Gᴴ`.
    pub factors: Option<(DMatrix<C64>, DMatrix<C64>)>,
}

impl TabulatedKernel {
    pub fn dim(&self) -> usize {
        self.grid.len() * self.d
    }
}

impl OperatorKernel {
    pub fn on_grid(&self, grid: &EnergyGrid) -> Result<TabulatedKernel> {
        let tol = 1e-12 * (self.b - self.a);
        if (grid.a - self.a).abs() > tol || (grid.b - self.b).abs() > tol {
            return Err(Error::Shape(format!(
                "kernel lives on [{}, {}] but grid spans [{}, {}]",
                self.a, self.b, grid.a, grid.b
            )));
        }
        Ok(TabulatedKernel {
            kernel: self.clone(),
            grid: grid.clone(),
            d: self.d,
            table: self.tabulate(grid),
            factors: self.separable.as_ref().map(|f| f.on_grid(grid, self.d)),
        })
    }
}

/// `v(λ, μ) = Σₖₗ cₖₗ |gₖ(λ)⟩⟨gₗ(μ)|`.
pub fn build_separable_kernel(
    a: f64,
    b: f64,
    d: usize,
    profiles: Vec<Profile>,
    coefficients: DMatrix<f64>,
) -> Result<OperatorKernel> {
    if b <= a {
        return Err(Error::Config(format!("interval requires a < b, got [{a}, {b}]")));
    }
    if d == 0 {
        return Err(Error::Config("internal dimension must be positive".into()));
    }
    let r = profiles.len();
    if coefficients.nrows() != r || coefficients.ncols() != r {
        return Err(Error::Config(format!(
            "coefficient matrix is {}x{}, expected {r}x{r}",
            coefficients.nrows(),
            coefficients.ncols()
        )));
    }
    let scale = coefficients.amax().max(1.0);
    if (&coefficients - coefficients.transpose()).amax() > 1e-14 * scale {
        return Err(Error::Config("coefficient matrix must be symmetric".into()));
    }
    for p in &profiles {
        let (ga, gb) = (p.value(a), p.value(b));
        if ga.len() != d {
            return Err(Error::Config(format!(
                "profile '{}' has dimension {}, expected {d}",
                p.name,
                ga.len()
            )));
        }
        if ga.norm() > 1e-12 || gb.norm() > 1e-12 {
            return Err(Error::Config(format!(
                "profile '{}' does not vanish at the interval ends",
                p.name
            )));
        }
    }
    let differentiable = profiles.iter().all(Profile::flat_at_ends);
    let factors = SeparableFactors { profiles, coefficients };
    let c = factors.coefficients.map(C64::from);
    let f_eval = factors.clone();
    let c_eval = c.clone();
    let eval = move |lam: f64, mu: f64| {
        if f_eval.rank() == 0 {
            return DMatrix::zeros(d, d);
        }
        let gl = f_eval.frame(lam, d);
        let gm = f_eval.frame(mu, d);
        &gl * &c_eval * gm.adjoint()
    };
    let f_der = factors.clone();
    let dlambda = move |lam: f64, mu: f64| {
        if f_der.rank() == 0 {
            return DMatrix::zeros(d, d);
        }
        let gl = f_der.frame_deriv(lam, d);
        let gm = f_der.frame(mu, d);
        &gl * &c * gm.adjoint()
    };
    let mut kernel = OperatorKernel::from_fn("separable", a, b, d, 1.0, eval).with_derivative(dlambda);
    kernel.differentiable = differentiable;
    kernel.separable = Some(factors);
    Ok(kernel)
}

/// Unit vector `e_k` in `ℂᵈ`.
pub fn unit(d: usize, k: usize) -> DVector<C64> {
    let mut v = DVector::zeros(d);
    v[k] = C64::from(1.0);
    v
}

/// Rank-one kernel `coupling · |g⟩⟨g|` with `g = shape · e₁`.
pub fn rank_one_kernel(a: f64, b: f64, d: usize, shape: Shape, coupling: f64) -> Result<OperatorKernel> {
    let p = Profile::shaped(shape, a, b, unit(d, 0), 1.0);
    Ok(build_separable_kernel(a, b, d, vec![p], DMatrix::from_element(1, 1, coupling))?.relabel(format!("{shape:?}")))
}

/// Rank-two `d = 2` kernel with a sin bump along `e₁` and a polynomial bump along `e₂`.
pub fn default_c1_kernel(a: f64, b: f64) -> OperatorKernel {
    let profiles = vec![
        Profile::shaped(Shape::SinBump, a, b, unit(2, 0), 1.0),
        Profile::shaped(Shape::PolyBump, a, b, unit(2, 1), 1.0),
    ];
    let c = DMatrix::from_row_slice(2, 2, &[0.3, 0.1, 0.1, -0.2]);
    build_separable_kernel(a, b, 2, profiles, c)
        .expect("default factors are valid")
        .relabel("default-c1")
}

/// Kernel with an eigenvalue `λₙ` embedded in `[a, b]`.
#[derive(Debug, Clone)]
pub struct EmbeddedScenario {
    pub kernel: OperatorKernel,
    pub eigenvalue: f64,
    pub coupling: f64,
    pub profile: Profile,
}

impl EmbeddedScenario {
    pub fn eigenfunction(&self, grid: &EnergyGrid) -> GridFunction {
        let d = self.kernel.d;
        let values = grid
            .nodes
            .iter()
            .flat_map(|&lam| self.profile.value(lam).iter().copied().collect::<Vec<_>>())
            .collect::<Vec<_>>();
        GridFunction {
            dim: d,
            values: DVector::from_vec(values),
        }
    }

    /// `g(λ) = (λₙ − λ) f(λ)`, which equals `[Vf](λ)`.
    pub fn g(&self, lambda: f64) -> DVector<C64> {
        self.profile.value(lambda) * C64::from(self.eigenvalue - lambda)
    }
}

/// Reference quadrature used to validate closed-form constructions.
fn reference_grid(a: f64, b: f64) -> EnergyGrid {
    build_grid(a, b, 400, Scheme::GaussLegendre).expect("valid reference grid")
}

/// Embedded-eigenvalue scenario from a normalized profile `f` flat at both ends.
///
/// The kernel is `|g⟩⟨f| + |f⟩⟨g| + c|f⟩⟨f|` with `g = (λₙ − ·) f` and
/// `c = −⟨g, f⟩`, so that `Vf = g` and `(H₀ + V) f = λₙ f`.
pub fn build_embedded_ev_kernel(a: f64, b: f64, eigenvalue: f64, f: Profile) -> Result<EmbeddedScenario> {
    if !(eigenvalue > a && eigenvalue < b) {
        return Err(Error::Config(format!(
            "embedded eigenvalue {eigenvalue} must lie inside ({a}, {b})"
        )));
    }
    let d = f.value(0.5 * (a + b)).len();
    let q = reference_grid(a, b);
    let norm_sq = q.integrate(|lam| f.value(lam).norm_squared());
    if (norm_sq.sqrt() - 1.0).abs() > 1e-10 {
        return Err(Error::Config(format!(
            "embedded profile must be normalized, got norm {}",
            norm_sq.sqrt()
        )));
    }
    let h = 1e-7 * (b - a);
    for end in [a, b] {
        let slope = (f.value(end + h).norm() + f.value(end - h).norm()) / h;
        if f.value(end).norm() > 1e-12 || !f.flat_at_ends() || slope > 1e-5 {
            return Err(Error::Config(format!(
                "embedded profile '{}' must vanish to second order at {end}",
                f.name
            )));
        }
    }
    let gf: f64 = q.integrate(|lam| (eigenvalue - lam) * f.value(lam).norm_squared());
    let coupling = -gf;
    let (fv, fd) = (f.clone(), f.clone());
    let g = Profile::new(
        "embedded-g",
        move |lam| fv.value(lam) * C64::from(eigenvalue - lam),
        move |lam| fd.deriv(lam) * C64::from(eigenvalue - lam) - fd.value(lam),
        true,
    );
    let coeffs = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, coupling]);
    let kernel = build_separable_kernel(a, b, d, vec![g, f.clone()], coeffs)?.relabel("embedded");
    let scenario = EmbeddedScenario {
        kernel,
        eigenvalue,
        coupling,
        profile: f,
    };
    // Vf = g, checked by quadrature
    let fq = scenario.eigenfunction(&q);
    let mut defect: f64 = 0.0;
    for &lam in &[a + 0.1 * (b - a), eigenvalue, a + 0.77 * (b - a)] {
        let mut acc = DVector::<C64>::zeros(d);
        for (j, (&mu, &w)) in q.nodes.iter().zip(&q.weights).enumerate() {
            let fj = DVector::from_column_slice(fq.at(j));
            acc += scenario.kernel.eval_unchecked(lam, mu) * fj * C64::from(w);
        }
        defect = defect.max((acc - scenario.g(lam)).norm());
    }
    if defect > 1e-10 {
        return Err(Error::Config(format!(
            "embedded construction failed: ‖Vf − g‖ = {defect:.3e}"
        )));
    }
    Ok(scenario)
}

/// `N · sin²(π(λ−a)/(b−a)) · e₁` normalized on `[a, b]`.
pub fn sin2_profile(a: f64, b: f64, d: usize) -> Profile {
    let norm = (8.0 / (3.0 * (b - a))).sqrt();
    Profile::shaped(Shape::Sin2Bump, a, b, unit(d, 0), norm)
}

/// Embedded scenario at the interval midpoint with the normalized `sin²` profile.
pub fn default_embedded(a: f64, b: f64) -> EmbeddedScenario {
    build_embedded_ev_kernel(a, b, 0.5 * (a + b), sin2_profile(a, b, 1))
        .expect("default embedded construction is valid")
}

/// Power-law fit of kernel increments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolderEstimate {
    pub exponent: f64,
    pub fit_residual: f64,
    /// No nonzero increments were observed.
    pub degenerate: bool,
}

/// Least-squares slope of `log m` against `log δ`, clipped to `(0, 1]`.
pub fn fit_power_law(scales: &[f64], moduli: &[f64]) -> HolderEstimate {
    let pts: Vec<(f64, f64)> = scales
        .iter()
        .zip(moduli)
        .filter(|(_, &m)| m > 0.0 && m.is_finite())
        .map(|(&s, &m)| (s.ln(), m.ln()))
        .collect();
    if pts.len() < 2 {
        return HolderEstimate {
            exponent: 1.0,
            fit_residual: 0.0,
            degenerate: true,
        };
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let resid = (pts.iter().map(|p| (p.1 - icpt - slope * p.0).powi(2)).sum::<f64>() / n).sqrt();
    HolderEstimate {
        exponent: slope.clamp(f64::MIN_POSITIVE, 1.0),
        fit_residual: resid,
        degenerate: false,
    }
}

/// Number of log-spaced scales used by [`estimate_holder`].
pub const HOLDER_SCALES: usize = 8;

/// Fitted Hölder exponent of `v` from random nearby pairs.
///
/// `sample_count` random base points are each offset at every scale
/// `δ ∈ [1e−3, 1e−1]·(b−a)` with `|λ′−λ| + |μ′−μ| = δ`. The largest Frobenius
/// increment per scale enters a log–log fit whose slope is returned.
pub fn estimate_holder(kernel: &OperatorKernel, sample_count: usize, seed: u64) -> Result<HolderEstimate> {
    if sample_count < 100 {
        return Err(Error::Precondition(format!(
            "estimate_holder needs at least 100 samples, got {sample_count}"
        )));
    }
    let (a, b) = (kernel.a, kernel.b);
    let w = b - a;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scales: Vec<f64> = (0..HOLDER_SCALES)
        .map(|k| w * 1e-3 * 100f64.powf(k as f64 / (HOLDER_SCALES - 1) as f64))
        .collect();
    let mut moduli = vec![0.0f64; HOLDER_SCALES];
    for _ in 0..sample_count {
        let lam = a + w * rng.random::<f64>();
        let mu = a + w * rng.random::<f64>();
        let base = kernel.eval_unchecked(lam, mu);
        for (k, &delta) in scales.iter().enumerate() {
            let t: f64 = rng.random();
            let dl = if rng.random_bool(0.5) { delta * t } else { -delta * t };
            let dm = if rng.random_bool(0.5) {
                delta * (1.0 - t)
            } else {
                -delta * (1.0 - t)
            };
            // reflect offsets that leave the square
            let l2 = if (a..=b).contains(&(lam + dl)) {
                lam + dl
            } else {
                lam - dl
            };
            let m2 = if (a..=b).contains(&(mu + dm)) { mu + dm } else { mu - dm };
            let diff = kernel.eval_unchecked(l2, m2) - &base;
            moduli[k] = moduli[k].max(diff.norm());
        }
    }
    Ok(fit_power_law(&scales, &moduli))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest};

    fn random_pairs(n: usize, a: f64, b: f64, seed: u64) -> Vec<(f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (a + (b - a) * rng.random::<f64>(), a + (b - a) * rng.random::<f64>()))
            .collect()
    }

    fn builtins() -> Vec<OperatorKernel> {
        let (a, b) = (-1.0, 2.0);
        vec![
            OperatorKernel::zero(a, b, 2),
            rank_one_kernel(a, b, 1, Shape::SinBump, 1.5).unwrap(),
            rank_one_kernel(a, b, 3, Shape::PolyBump, -0.7).unwrap(),
            default_c1_kernel(a, b),
            default_embedded(a, b).kernel,
            build_embedded_ev_kernel(a, b, a + 0.3 * (b - a), sin2_profile(a, b, 2))
                .unwrap()
                .kernel,
        ]
    }

    #[test]
    fn zero_coefficients_give_zero_kernel() {
        let p = Profile::shaped(Shape::SinBump, 0.0, 1.0, unit(1, 0), 1.0);
        let k = build_separable_kernel(0.0, 1.0, 1, vec![p], DMatrix::zeros(1, 1)).unwrap();
        assert!(k.is_zero());
        assert_eq!(k.eval(0.3, 0.6).unwrap().norm(), 0.0);
    }

    #[test]
    fn rank_one_sin_kernel_at_midpoint() {
        let k = rank_one_kernel(0.0, 2.0, 2, Shape::SinBump, 1.0).unwrap();
        let v = k.eval(1.0, 1.0).unwrap();
        assert!((v[(0, 0)] - C64::from(1.0)).norm() < 1e-15);
        assert_eq!(v[(0, 1)], C64::from(0.0));
        assert_eq!(v[(1, 1)], C64::from(0.0));
    }

    #[test]
    fn rejects_nonsymmetric_coefficients() {
        let ps = vec![
            Profile::shaped(Shape::SinBump, 0.0, 1.0, unit(1, 0), 1.0),
            Profile::shaped(Shape::PolyBump, 0.0, 1.0, unit(1, 0), 1.0),
        ];
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.3, 1.0]);
        assert!(matches!(
            build_separable_kernel(0.0, 1.0, 1, ps, c),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn builtins_are_hermitian_and_vanish_on_boundary() {
        for k in builtins() {
            for (l, m) in random_pairs(100, k.a, k.b, 3) {
                let d = k.eval(l, m).unwrap() - k.eval(m, l).unwrap().adjoint();
                assert!(d.norm() <= 1e-13, "{}: {}", k.label, d.norm());
            }
            for (l, _) in random_pairs(20, k.a, k.b, 4) {
                for e in [k.a, k.b] {
                    assert_eq!(k.eval(l, e).unwrap().norm(), 0.0);
                    assert_eq!(k.eval(e, l).unwrap().norm(), 0.0);
                    if k.differentiable {
                        assert_eq!(k.eval_dlambda(e, l).unwrap().norm(), 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn out_of_domain_is_rejected() {
        let k = default_c1_kernel(0.0, 1.0);
        assert!(matches!(k.eval(1.5, 0.5), Err(Error::Domain(_))));
        assert!(matches!(k.eval(0.5, -0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn derivative_consistency() {
        for k in builtins().into_iter().filter(|k| k.differentiable && !k.is_zero()) {
            let (l, m) = (k.a + 0.37 * (k.b - k.a), k.a + 0.61 * (k.b - k.a));
            let v0 = k.eval(l, m).unwrap();
            let dv = k.eval_dlambda(l, m).unwrap();
            let err = |h: f64| (k.eval(l + h, m).unwrap() - &v0 - &dv * C64::from(h)).norm();
            let halving = err(1e-3) / err(5e-4);
            assert!((3.0..=5.0).contains(&halving), "{}: {halving}", k.label);
            let order = (err(1e-3) / err(1e-4)).log10();
            assert!((1.8..=2.2).contains(&order), "{}: {order}", k.label);
        }
    }

    #[test]
    fn embedded_midpoint_has_zero_coupling() {
        let s = default_embedded(0.0, 1.0);
        assert!(s.coupling.abs() < 1e-14);
        let s = build_embedded_ev_kernel(0.0, 1.0, 0.3, sin2_profile(0.0, 1.0, 1)).unwrap();
        assert!((s.coupling - 0.2).abs() < 1e-13);
        assert_eq!(s.g(0.3).norm(), 0.0);
        // first term of v(λₙ, μ) vanishes, so v(λₙ, μ) = c f(λₙ) f(μ)*
        let v = s.kernel.eval(0.3, 0.8).unwrap();
        let f = s.profile.value(0.3);
        let expected = (&f * s.g(0.8).adjoint()) + &f * s.profile.value(0.8).adjoint() * C64::from(0.2);
        assert!((v - expected).norm() < 1e-15);
    }

    #[test]
    fn embedded_rejects_unnormalized_or_rough_profiles() {
        let p = Profile::shaped(Shape::Sin2Bump, 0.0, 1.0, unit(1, 0), 1.0);
        assert!(matches!(
            build_embedded_ev_kernel(0.0, 1.0, 0.5, p),
            Err(Error::Config(_))
        ));
        let p = Profile::shaped(Shape::SinBump, 0.0, 1.0, unit(1, 0), 2f64.sqrt());
        assert!(matches!(
            build_embedded_ev_kernel(0.0, 1.0, 0.5, p),
            Err(Error::Config(_))
        ));
        assert!(build_embedded_ev_kernel(0.0, 1.0, 1.0, sin2_profile(0.0, 1.0, 1)).is_err());
    }

    #[test]
    fn holder_of_smooth_and_zero_kernels() {
        let est = estimate_holder(&default_c1_kernel(0.0, 1.0), 800, 7).unwrap();
        assert!(est.exponent >= 0.9, "{est:?}");
        assert!(!est.degenerate);
        let z = estimate_holder(&OperatorKernel::zero(0.0, 1.0, 2), 200, 7).unwrap();
        assert!(z.degenerate && z.exponent == 1.0);
        assert!(estimate_holder(&OperatorKernel::zero(0.0, 1.0, 1), 50, 0).is_err());
    }

    #[test]
    fn holder_of_rough_kernel() {
        let lam0 = 0.43;
        let k = OperatorKernel::from_fn("rough", 0.0, 1.0, 1, 0.6, move |l, m| {
            let g = |x: f64| (PI * x).sin();
            let r = |x: f64| (x - lam0).abs().powf(0.6);
            DMatrix::from_element(1, 1, C64::from(g(l) * g(m) * (r(l) + r(m))))
        });
        let est = estimate_holder(&k, 4000, 11).unwrap();
        assert!((0.5..=0.7).contains(&est.exponent), "{est:?}");
    }

    #[test]
    fn separable_factors_reproduce_table() {
        let k = default_c1_kernel(0.0, 1.0);
        let g = build_grid(0.0, 1.0, 12, Scheme::GaussLegendre).unwrap();
        let (gm, c) = k.separable().unwrap().on_grid(&g, 2);
        let diff = &gm * c * gm.adjoint() - k.tabulate(&g);
        assert!(diff.norm() < 1e-14);
    }

    proptest! {
        #[test]
        fn separable_symmetry(c00 in -2.0f64..2.0, c01 in -2.0f64..2.0, c11 in -2.0f64..2.0,
                              l in 0.0f64..1.0, m in 0.0f64..1.0, ph in 0.0f64..6.3) {
            let dir = DVector::from_vec(vec![C64::from(1.0), C64::from_polar(0.5, ph)]);
            let ps = vec![
                Profile::shaped(Shape::Sin2Bump, 0.0, 1.0, dir, 1.0),
                Profile::shaped(Shape::PolyBump, 0.0, 1.0, unit(2, 1), 0.7),
            ];
            let c = DMatrix::from_row_slice(2, 2, &[c00, c01, c01, c11]);
            let k = build_separable_kernel(0.0, 1.0, 2, ps, c).unwrap();
            let d = k.eval(l, m).unwrap() - k.eval(m, l).unwrap().adjoint();
            prop_assert!(d.norm() <= 1e-13);
        }
    }
}

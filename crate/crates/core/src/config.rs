//! Scenario files.
//!
//! A scenario is a TOML document with the sections `[interval]`, `[grid]`,
//! `[kernel]`, `[checks]` and the optional `[tolerances]` and `[output]`.
//! Unknown keys are rejected.
//!
//! ```toml
//! [interval]
//! a = 0.0
//! b = 1.0
//!
//! [grid]
//! sizes = [101, 201]
//!
//! [kernel]
//! family = "separable"
//!
//! [checks]
//! suites = ["smatrix", "waveop"]
//! ```

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::path::{Path, PathBuf};
use toml::Spanned;

use crate::error::{ConfigIssue, Error, Result};
use crate::grid::{Scheme, MIN_NODES};

/// Named groups of checks, listed in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Spectrum,
    Tkernel,
    Smatrix,
    Waveop,
    Embedded,
    Refinement,
}

impl Suite {
    pub const ALL: [Suite; 6] = [
        Suite::Spectrum,
        Suite::Tkernel,
        Suite::Smatrix,
        Suite::Waveop,
        Suite::Embedded,
        Suite::Refinement,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Spectrum => "spectrum",
            Suite::Tkernel => "tkernel",
            Suite::Smatrix => "smatrix",
            Suite::Waveop => "waveop",
            Suite::Embedded => "embedded",
            Suite::Refinement => "refinement",
        }
    }

    pub fn parse(s: &str) -> Option<Suite> {
        Suite::ALL.into_iter().find(|x| x.name() == s)
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which potential to build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum KernelSpec {
    Zero {
        dim: usize,
    },
    /// `coupling·|g⟩⟨g|` with `g = sin(π s)·e₁`; not differentiable at the ends.
    SinBump {
        dim: usize,
        coupling: f64,
    },
    /// `coupling·|g⟩⟨g|` with `g = 16 s²(1 − s)²·e₁`.
    PolyBump {
        dim: usize,
        coupling: f64,
    },
    /// Rank-two `d = 2` kernel, sin bump on `e₁` and polynomial bump on `e₂`.
    Separable {
        coefficients: [[f64; 2]; 2],
    },
    /// Eigenvalue embedded at `eigenvalue` with the normalized `sin²` profile.
    Embedded {
        dim: usize,
        eigenvalue: f64,
    },
}

impl KernelSpec {
    pub fn family(&self) -> &'static str {
        match self {
            KernelSpec::Zero { .. } => "zero",
            KernelSpec::SinBump { .. } => "sin-bump",
            KernelSpec::PolyBump { .. } => "poly-bump",
            KernelSpec::Separable { .. } => "separable",
            KernelSpec::Embedded { .. } => "embedded",
        }
    }

    pub fn coefficient_matrix(c: &[[f64; 2]; 2]) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[c[0][0], c[0][1], c[1][0], c[1][1]])
    }
}

pub const KERNEL_FAMILIES: [&str; 5] = ["zero", "sin-bump", "poly-bump", "separable", "embedded"];
pub const DEFAULT_COEFFICIENTS: [[f64; 2]; 2] = [[0.3, 0.1], [0.1, -0.2]];

/// Pass thresholds used by the suites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub eigen_residual: f64,
    pub fredholm_direct: f64,
    pub unitarity: f64,
    pub main_formula: f64,
    pub intertwining: f64,
    pub scattering_identity: f64,
    pub multiplier: f64,
    pub regularized: f64,
    pub hs_stability: f64,
    pub singular_decay: f64,
    pub embedded_eigenvalue: f64,
    pub vf_at_eigenvalue: f64,
    pub derivative_identity: f64,
    pub restricted_condition: f64,
    pub unprojected_condition: f64,
    pub continuity_exponent: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            eigen_residual: 1e-8,
            fredholm_direct: 1e-8,
            unitarity: 1e-6,
            main_formula: 5e-3,
            intertwining: 1e-3,
            scattering_identity: 1e-3,
            multiplier: 1e-6,
            regularized: 1e-3,
            hs_stability: 0.05,
            singular_decay: 0.1,
            embedded_eigenvalue: 1e-6,
            vf_at_eigenvalue: 1e-10,
            derivative_identity: 1e-6,
            restricted_condition: 1e4,
            unprojected_condition: 1e8,
            continuity_exponent: 0.4,
        }
    }
}

impl Tolerances {
    pub const NAMES: [&'static str; 16] = [
        "eigen_residual",
        "fredholm_direct",
        "unitarity",
        "main_formula",
        "intertwining",
        "scattering_identity",
        "multiplier",
        "regularized",
        "hs_stability",
        "singular_decay",
        "embedded_eigenvalue",
        "vf_at_eigenvalue",
        "derivative_identity",
        "restricted_condition",
        "unprojected_condition",
        "continuity_exponent",
    ];

    fn slot(&mut self, name: &str) -> Option<&mut f64> {
        Some(match name {
            "eigen_residual" => &mut self.eigen_residual,
            "fredholm_direct" => &mut self.fredholm_direct,
            "unitarity" => &mut self.unitarity,
            "main_formula" => &mut self.main_formula,
            "intertwining" => &mut self.intertwining,
            "scattering_identity" => &mut self.scattering_identity,
            "multiplier" => &mut self.multiplier,
            "regularized" => &mut self.regularized,
            "hs_stability" => &mut self.hs_stability,
            "singular_decay" => &mut self.singular_decay,
            "embedded_eigenvalue" => &mut self.embedded_eigenvalue,
            "vf_at_eigenvalue" => &mut self.vf_at_eigenvalue,
            "derivative_identity" => &mut self.derivative_identity,
            "restricted_condition" => &mut self.restricted_condition,
            "unprojected_condition" => &mut self.unprojected_condition,
            "continuity_exponent" => &mut self.continuity_exponent,
            _ => return None,
        })
    }
}

/// A validated scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub a: f64,
    pub b: f64,
    pub sizes: Vec<usize>,
    pub scheme: Scheme,
    pub line_half_width: f64,
    pub line_nodes: usize,
    pub kernel: KernelSpec,
    pub checks: Vec<Suite>,
    pub tolerances: Tolerances,
    pub output_dir: PathBuf,
    pub seed: u64,
}

pub const DEFAULT_LINE_HALF_WIDTH: f64 = 8.0;
pub const DEFAULT_LINE_NODES: usize = 512;
pub const DEFAULT_OUTPUT_DIR: &str = "friedrichs-out";
pub const DEFAULT_SEED: u64 = 20240;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    interval: RawInterval,
    grid: RawGrid,
    kernel: RawKernel,
    checks: RawChecks,
    #[serde(default)]
    tolerances: BTreeMap<Spanned<String>, Spanned<f64>>,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInterval {
    a: Spanned<f64>,
    b: Spanned<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    sizes: Spanned<Vec<i64>>,
    scheme: Option<Spanned<String>>,
    line_half_width: Option<Spanned<f64>>,
    line_nodes: Option<Spanned<i64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawKernel {
    family: Spanned<String>,
    dim: Option<Spanned<i64>>,
    coupling: Option<Spanned<f64>>,
    eigenvalue: Option<Spanned<f64>>,
    coefficients: Option<Spanned<Vec<Vec<f64>>>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChecks {
    suites: Spanned<Vec<Spanned<String>>>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    directory: Option<String>,
    seed: Option<u64>,
}

fn line_of(text: &str, span: &Range<usize>) -> usize {
    text[..span.start.min(text.len())].matches('\n').count() + 1
}

struct Issues<'t> {
    text: &'t str,
    list: Vec<ConfigIssue>,
}

impl Issues<'_> {
    fn at(&mut self, span: Range<usize>, message: impl Into<String>) {
        let line = Some(line_of(self.text, &span));
        self.list.push(ConfigIssue {
            line,
            message: message.into(),
        });
    }
}

/// Reads and validates a scenario file.
pub fn parse_config(path: &Path) -> Result<ScenarioConfig> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config_str(&text)
}

/// Validates scenario text, collecting every problem found after parsing.
pub fn parse_config_str(text: &str) -> Result<ScenarioConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        Error::InvalidConfig(vec![ConfigIssue {
            line: e.span().map(|s| line_of(text, &s)),
            message: e.message().trim().to_string(),
        }])
    })?;
    let mut issues = Issues { text, list: Vec::new() };

    let (a, b) = (*raw.interval.a.get_ref(), *raw.interval.b.get_ref());
    if !(a.is_finite() && b.is_finite()) {
        issues.at(raw.interval.a.span(), "interval.a and interval.b must be finite");
    } else if b <= a {
        issues.at(
            raw.interval.b.span(),
            format!("interval.b ({b}) must be greater than interval.a ({a})"),
        );
    }

    let sizes_raw = raw.grid.sizes.get_ref();
    let mut sizes = Vec::new();
    if sizes_raw.is_empty() {
        issues.at(raw.grid.sizes.span(), "grid.sizes must list at least one size");
    }
    for &n in sizes_raw {
        if n < MIN_NODES as i64 {
            issues.at(
                raw.grid.sizes.span(),
                format!("grid.sizes entries must be at least {MIN_NODES}, got {n}"),
            );
        } else {
            sizes.push(n as usize);
        }
    }
    if sizes_raw.windows(2).any(|w| w[1] <= w[0]) {
        issues.at(raw.grid.sizes.span(), "grid.sizes must be strictly increasing");
    }
    let scheme = match raw.grid.scheme.as_ref().map(|s| (s.get_ref().as_str(), s.span())) {
        None | Some(("gauss-legendre", _)) => Scheme::GaussLegendre,
        Some(("composite-midpoint", _)) => Scheme::CompositeMidpoint,
        Some((other, span)) => {
            issues.at(
                span,
                format!("unknown grid.scheme '{other}'; valid schemes: gauss-legendre, composite-midpoint"),
            );
            Scheme::GaussLegendre
        }
    };
    let line_half_width = match &raw.grid.line_half_width {
        Some(l) if !(*l.get_ref() > 0.0 && l.get_ref().is_finite()) => {
            issues.at(l.span(), "grid.line_half_width must be positive");
            DEFAULT_LINE_HALF_WIDTH
        }
        Some(l) => *l.get_ref(),
        None => DEFAULT_LINE_HALF_WIDTH,
    };
    let line_nodes = match &raw.grid.line_nodes {
        Some(n) if *n.get_ref() < 8 || n.get_ref() % 2 != 0 => {
            issues.at(n.span(), "grid.line_nodes must be even and at least 8");
            DEFAULT_LINE_NODES
        }
        Some(n) => *n.get_ref() as usize,
        None => DEFAULT_LINE_NODES,
    };

    let kernel = parse_kernel(&raw.kernel, a, b, &mut issues);

    let mut checks = Vec::new();
    if raw.checks.suites.get_ref().is_empty() {
        issues.at(raw.checks.suites.span(), "checks.suites must name at least one suite");
    }
    for s in raw.checks.suites.get_ref() {
        match Suite::parse(s.get_ref()) {
            Some(suite) if checks.contains(&suite) => {
                issues.at(s.span(), format!("suite '{suite}' is listed twice"));
            }
            Some(suite) => checks.push(suite),
            None => {
                let valid: Vec<&str> = Suite::ALL.iter().map(|s| s.name()).collect();
                issues.at(
                    s.span(),
                    format!("unknown suite '{}'; valid suites: {}", s.get_ref(), valid.join(", ")),
                );
            }
        }
    }
    checks.sort();

    let mut tolerances = Tolerances::default();
    for (name, value) in &raw.tolerances {
        let v = *value.get_ref();
        match tolerances.slot(name.get_ref()) {
            None => issues.at(
                name.span(),
                format!(
                    "unknown tolerance '{}'; valid names: {}",
                    name.get_ref(),
                    Tolerances::NAMES.join(", ")
                ),
            ),
            Some(_) if !(v > 0.0 && v.is_finite()) => {
                issues.at(value.span(), format!("tolerance '{}' must be positive", name.get_ref()))
            }
            Some(slot) => *slot = v,
        }
    }

    if !issues.list.is_empty() {
        return Err(Error::InvalidConfig(issues.list));
    }
    Ok(ScenarioConfig {
        a,
        b,
        sizes,
        scheme,
        line_half_width,
        line_nodes,
        kernel: kernel.expect("kernel issues are reported above"),
        checks,
        tolerances,
        output_dir: PathBuf::from(raw.output.directory.unwrap_or_else(|| DEFAULT_OUTPUT_DIR.into())),
        seed: raw.output.seed.unwrap_or(DEFAULT_SEED),
    })
}

fn parse_kernel(raw: &RawKernel, a: f64, b: f64, issues: &mut Issues) -> Option<KernelSpec> {
    let family = raw.family.get_ref().as_str();
    let start = issues.list.len();
    let dim = match &raw.dim {
        Some(d) if *d.get_ref() < 1 => {
            issues.at(d.span(), "kernel.dim must be at least 1");
            1
        }
        Some(d) => *d.get_ref() as usize,
        None => 1,
    };
    let coupling = match &raw.coupling {
        Some(c) if !c.get_ref().is_finite() => {
            issues.at(c.span(), "kernel.coupling must be finite");
            0.0
        }
        Some(c) => *c.get_ref(),
        None => 0.5,
    };
    let mut unused = |key: &str, present: Option<Range<usize>>| {
        if let Some(span) = present {
            issues.at(span, format!("kernel.{key} does not apply to family '{family}'"));
        }
    };
    let spec = match family {
        "zero" => {
            unused("coupling", raw.coupling.as_ref().map(|x| x.span()));
            unused("eigenvalue", raw.eigenvalue.as_ref().map(|x| x.span()));
            unused("coefficients", raw.coefficients.as_ref().map(|x| x.span()));
            KernelSpec::Zero { dim }
        }
        "sin-bump" | "poly-bump" => {
            unused("eigenvalue", raw.eigenvalue.as_ref().map(|x| x.span()));
            unused("coefficients", raw.coefficients.as_ref().map(|x| x.span()));
            if family == "sin-bump" {
                KernelSpec::SinBump { dim, coupling }
            } else {
                KernelSpec::PolyBump { dim, coupling }
            }
        }
        "separable" => {
            unused("coupling", raw.coupling.as_ref().map(|x| x.span()));
            unused("eigenvalue", raw.eigenvalue.as_ref().map(|x| x.span()));
            if let Some(d) = &raw.dim {
                if *d.get_ref() != 2 {
                    issues.at(d.span(), "the separable family has kernel.dim = 2");
                }
            }
            let coefficients = match &raw.coefficients {
                None => DEFAULT_COEFFICIENTS,
                Some(c) => {
                    let m = c.get_ref();
                    let ok = m.len() == 2 && m.iter().all(|r| r.len() == 2 && r.iter().all(|x| x.is_finite()));
                    if !ok {
                        issues.at(c.span(), "kernel.coefficients must be a finite 2x2 array");
                        DEFAULT_COEFFICIENTS
                    } else if (m[0][1] - m[1][0]).abs() > 1e-14 * m[0][1].abs().max(1.0) {
                        issues.at(c.span(), "kernel.coefficients must be symmetric");
                        DEFAULT_COEFFICIENTS
                    } else {
                        [[m[0][0], m[0][1]], [m[1][0], m[1][1]]]
                    }
                }
            };
            KernelSpec::Separable { coefficients }
        }
        "embedded" => {
            unused("coupling", raw.coupling.as_ref().map(|x| x.span()));
            unused("coefficients", raw.coefficients.as_ref().map(|x| x.span()));
            let eigenvalue = match &raw.eigenvalue {
                None => 0.5 * (a + b),
                Some(e) => {
                    let e_val = *e.get_ref();
                    if !(e_val > a && e_val < b) {
                        issues.at(
                            e.span(),
                            format!("kernel.eigenvalue ({e_val}) must lie strictly between interval.a and interval.b"),
                        );
                    }
                    e_val
                }
            };
            KernelSpec::Embedded { dim, eigenvalue }
        }
        other => {
            issues.at(
                raw.family.span(),
                format!(
                    "unknown kernel.family '{other}'; valid families: {}",
                    KERNEL_FAMILIES.join(", ")
                ),
            );
            return None;
        }
    };
    (issues.list.len() == start).then_some(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[interval]\na = 0.0\nb = 1.0\n\n[grid]\nsizes = [101]\n\n[kernel]\nfamily = \"sin-bump\"\n\n[checks]\nsuites = [\"smatrix\"]\n";

    fn issues(text: &str) -> Vec<ConfigIssue> {
        match parse_config_str(text) {
            Err(Error::InvalidConfig(list)) => list,
            other => panic!("expected invalid config, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config_is_valid() {
        let cfg = parse_config_str(MINIMAL).unwrap();
        assert_eq!(cfg.sizes, vec![101]);
        assert_eq!(cfg.checks, vec![Suite::Smatrix]);
        assert_eq!(cfg.kernel, KernelSpec::SinBump { dim: 1, coupling: 0.5 });
        assert_eq!(cfg.line_nodes, 512);
        assert_eq!(cfg.tolerances, Tolerances::default());
    }

    #[test]
    fn reversed_interval_names_both_keys() {
        let list = issues(&MINIMAL.replace("b = 1.0", "b = -1.0"));
        assert_eq!(list.len(), 1);
        assert!(list[0].message.contains("interval.a") && list[0].message.contains("interval.b"));
        assert_eq!(list[0].line, Some(3));
    }

    #[test]
    fn unknown_suite_lists_valid_names() {
        let list = issues(&MINIMAL.replace("[\"smatrix\"]", "[\"smatrix\", \"wavop\"]"));
        assert_eq!(list.len(), 1);
        for s in Suite::ALL {
            assert!(list[0].message.contains(s.name()), "{}", list[0].message);
        }
        assert_eq!(list[0].line, Some(12));
    }

    #[test]
    fn unknown_key_is_rejected_with_its_line() {
        let list = issues(&MINIMAL.replace("sizes = [101]", "sizes = [101]\nsize = 3"));
        assert_eq!(list.len(), 1);
        assert!(list[0].message.contains("size"), "{}", list[0].message);
        assert_eq!(list[0].line, Some(7));
    }

    #[test]
    fn missing_section_is_rejected() {
        let text = MINIMAL.replace("[checks]\nsuites = [\"smatrix\"]\n", "");
        let list = issues(&text);
        assert!(list[0].message.contains("checks"), "{}", list[0].message);
    }

    #[test]
    fn problems_are_aggregated() {
        let text = MINIMAL
            .replace("sizes = [101]", "sizes = [201, 101]")
            .replace("[\"smatrix\"]", "[]")
            .replace("b = 1.0", "b = 0.0");
        let list = issues(&text);
        assert_eq!(list.len(), 3, "{list:?}");
    }

    #[test]
    fn tolerances_are_checked() {
        let ok = parse_config_str(&format!("{MINIMAL}\n[tolerances]\nunitarity = 1e-9\n")).unwrap();
        assert_eq!(ok.tolerances.unitarity, 1e-9);
        let list = issues(&format!(
            "{MINIMAL}\n[tolerances]\nunitarty = 1e-9\nmain_formula = -1.0\n"
        ));
        assert_eq!(list.len(), 2);
        assert!(list
            .iter()
            .any(|i| i.message.contains("unitarty") && i.message.contains("unitarity")));
    }

    #[test]
    fn kernel_families() {
        let embedded = parse_config_str(&MINIMAL.replace("\"sin-bump\"", "\"embedded\"\neigenvalue = 0.4")).unwrap();
        assert_eq!(
            embedded.kernel,
            KernelSpec::Embedded {
                dim: 1,
                eigenvalue: 0.4
            }
        );
        let sep = parse_config_str(&MINIMAL.replace("\"sin-bump\"", "\"separable\"")).unwrap();
        assert_eq!(
            sep.kernel,
            KernelSpec::Separable {
                coefficients: DEFAULT_COEFFICIENTS
            }
        );
        let list = issues(&MINIMAL.replace("\"sin-bump\"", "\"embedded\"\neigenvalue = 1.5"));
        assert!(list[0].message.contains("kernel.eigenvalue"));
        let list = issues(&MINIMAL.replace("\"sin-bump\"", "\"gaussian\""));
        assert!(list[0].message.contains("separable"));
        let list = issues(&MINIMAL.replace("\"sin-bump\"", "\"zero\"\ncoupling = 1.0"));
        assert!(list[0].message.contains("coupling"));
    }

    #[test]
    fn suites_are_ordered_by_dependency() {
        let cfg =
            parse_config_str(&MINIMAL.replace("[\"smatrix\"]", "[\"refinement\", \"spectrum\", \"waveop\"]")).unwrap();
        assert_eq!(cfg.checks, vec![Suite::Spectrum, Suite::Waveop, Suite::Refinement]);
        let list = issues(&MINIMAL.replace("[\"smatrix\"]", "[\"smatrix\", \"smatrix\"]"));
        assert!(list[0].message.contains("twice"));
    }
}

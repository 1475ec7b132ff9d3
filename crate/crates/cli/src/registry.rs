//! The named checks, their pipelines, anchors and default tolerances.

use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    Surface,
    Jacobi,
    Hierarchy,
    Spectral,
    VerifyAll,
}

impl Pipeline {
    pub const ALL: [Pipeline; 5] = [Self::Surface, Self::Jacobi, Self::Hierarchy, Self::Spectral, Self::VerifyAll];

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Surface => "surface",
            Self::Jacobi => "jacobi",
            Self::Hierarchy => "hierarchy",
            Self::Spectral => "spectral",
            Self::VerifyAll => "verify-all",
        }
    }

    /// The single-topic pipelines this one runs, in order.
    pub fn stages(self) -> Vec<Pipeline> {
        match self {
            Self::VerifyAll => vec![Self::Surface, Self::Jacobi, Self::Hierarchy, Self::Spectral],
            p => vec![p],
        }
    }
}

/// How a measured value is compared with the tolerance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "target")]
pub enum Relation {
    /// `measured ≤ tolerance`.
    AtMost,
    /// `measured ≥ tolerance`.
    AtLeast,
    /// `|measured − target| ≤ tolerance`.
    Near(f64),
}

impl Relation {
    pub fn holds(self, measured: f64, tol: f64) -> bool {
        match self {
            Self::AtMost => measured <= tol,
            Self::AtLeast => measured >= tol,
            Self::Near(t) => (measured - t).abs() <= tol,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct CheckSpec {
    pub name: &'static str,
    pub pipeline: Pipeline,
    pub anchor: &'static str,
    pub relation: Relation,
    pub tolerance: f64,
    pub summary: &'static str,
}

const fn spec(
    name: &'static str,
    pipeline: Pipeline,
    anchor: &'static str,
    relation: Relation,
    tolerance: f64,
    summary: &'static str,
) -> CheckSpec {
    CheckSpec { name, pipeline, anchor, relation, tolerance, summary }
}

use Pipeline::{Hierarchy as H, Jacobi as J, Spectral as S, Surface as F};
use Relation::{AtLeast, AtMost, Near};

pub const CHECKS: &[CheckSpec] = &[
    spec("sinh-gordon-residual", F, "sinh-Gordon equation", AtMost, 1e-4, "max |4∂∂̄u + sinh 2u| on the grid"),
    spec(
        "flatness",
        F,
        "Maurer–Cartan equation",
        AtMost,
        1e-5,
        "max |∂x B − ∂y A + [A, B]| over the spectral samples and Sym points",
    ),
    spec("unitarity", F, "Sym–Bobenko formula", AtMost, 1e-8, "max |ff* − 1|"),
    spec("conformality", F, "conformal immersion", AtMost, 1e-6, "max |⟨∂f, ∂f⟩|"),
    spec("hopf-identity", F, "4QQ̄(H² + 1) = 1", AtMost, 1e-14, "defect of the Hopf-differential identity"),
    spec("discrete-mean-curvature", F, "mean curvature from the Sym points", AtMost, 0.02, "|H_discrete − H|"),
    spec("frenet", F, "moving-frame equations", AtMost, 1e-5, "max residual of the frame equations of f, N"),
    spec("harmonic-map", F, "2d*ω = H[ω ∧ ω]", AtMost, 1e-4, "residual of the harmonic-map form of constant H"),
    spec("psi-residual", J, "Baker–Akhiezer system", AtMost, 1e-5, "relative stencil residual of ∂ψ = Uᵗψ, ∂̄ψ = Vᵗψ"),
    spec("pairing-constant", J, "Prop (i)", AtMost, 1e-8, "relative spread of y = ψᵗφ"),
    spec("homogeneous-jacobi", J, "Prop (ii)", AtMost, 1e-4, "residual of the Jacobi equation for ω"),
    spec("udot-routes", J, "Prop (iii)", AtMost, 1e-5, "disagreement of the two u̇ assemblies"),
    spec("identities-iv-v", J, "Prop (iv), (v)", AtMost, 1e-5, "quadratic and first-order product identities"),
    spec("killing-criterion", J, "Killing-field criterion", AtMost, 1e-6, "max |u̇| for an ambient rotation"),
    spec(
        "inhomogeneous-jacobi",
        J,
        "inhomogeneous Jacobi equation",
        AtMost,
        1e-5,
        "residual of ∂∂̄ω̂ + cosh(2u)ω̂ = Ḣe^{2u}/(2(H² + 1))",
    ),
    spec("tau-minus-period", J, "period defect of τ⁻", AtMost, 1e-5, "measured against predicted Δ_γ for τ⁻"),
    spec("sigma-plus-period", J, "period defect of σ⁺", AtMost, 1e-5, "measured against predicted Δ_γ for σ⁺"),
    spec(
        "sigma-minus-period",
        J,
        "period defect of σ⁻ = conj(τ⁺)",
        AtMost,
        1e-4,
        "σ⁻ defect with the path-integral sign of the conjugate",
    ),
    spec(
        "residues",
        J,
        "residues of P at 0 and ∞",
        AtMost,
        1e-3,
        "fitted ∂u against the stencil derivative on a strip",
    ),
    spec(
        "hierarchy-golden",
        H,
        "Pinkall–Sterling recursion",
        AtMost,
        0.0,
        "mismatching golden polynomials ω_n, φ_n, n ≤ 4",
    ),
    spec("generating-identity", H, "generating-function identity", AtMost, 0.0, "nonzero coefficients through order 4"),
    spec("symbolic-jacobi", H, "ω_n are Jacobi fields", AtMost, 0.0, "n ≤ 4 with ∂∂̄ω_n + cosh(2u)ω_n ≠ 0"),
    spec(
        "series-cross-check",
        H,
        "Puiseux expansion of P",
        AtMost,
        1e-3,
        "fitted coefficients against ω_n, τ_n, σ_n, φ_n, n ≤ 2",
    ),
    spec("killing-det", S, "isospectrality of ξ", AtMost, 1e-8, "spread of det ξ(λ) over the torus"),
    spec("killing-route", S, "path independence of ξ", AtMost, 1e-6, "ξ integrated along two routes"),
    spec("killing-reality", S, "reality of ξ", AtMost, 1e-9, "drift of the reality condition"),
    spec("eigenvector", S, "ψ is an eigenvector of ξᵗ", AtMost, 1e-7, "relative residual of ξᵗψ = νψ"),
    spec("curve-symmetry", S, "λ ↦ λ̄⁻¹ symmetry", AtMost, 1e-8, "mirror defect of the branch points"),
    spec("curve-positivity", S, "a(λ) > 0 on the unit circle", AtLeast, 1e-12, "minimum of a on the unit circle"),
    spec(
        "condition-sym-points",
        S,
        "μ = ±1 at the Sym points",
        AtMost,
        1e-6,
        "monodromy defect at the Sym points (closed surfaces only)",
    ),
    spec("condition-sigma", S, "σ-symmetry of μ", AtMost, 1e-8, "max |μ₊μ₋ − 1| over the samples"),
    spec(
        "condition-involution",
        S,
        "sheet involution",
        AtMost,
        1e-6,
        "multipliers at 1/λ̄ against conjugates at λ, and |μ| = 1 on the circle",
    ),
    spec(
        "condition-singular-part",
        S,
        "independent singular parts",
        AtLeast,
        1e-6,
        "|det| of the singular parts of d ln μ",
    ),
    spec("dp-minus", S, "dp⁻ expansion at λ = 0", AtMost, 1e-2, "fitted p⁻₁ against the closed form"),
    spec("dp-plus", S, "dp⁺ expansion at λ = 0", AtMost, 1e-2, "fitted p⁺₁ against the closed form"),
    spec("psi-variation-rank-one", S, "ψ̇ from a rank-one Q", AtMost, 1e-12, "agreement of the two ψ̇ forms"),
    spec(
        "psi-variation-slope",
        S,
        "first-order ψ variation",
        Near(1.0),
        0.1,
        "log-log slope of the finite-difference error",
    ),
    spec("isospectral-order", S, "isospectral deformation", AtLeast, 1.9, "order of det ξ change at the branch points"),
    spec(
        "nonisospectral-anchor",
        S,
        "non-isospectral deformation",
        Near(1.0),
        0.1,
        "order of the anchor branch point motion",
    ),
    spec(
        "nonisospectral-others",
        S,
        "non-isospectral deformation",
        AtLeast,
        1.9,
        "order of the other branch points' motion",
    ),
];

pub fn find(name: &str) -> Option<&'static CheckSpec> {
    CHECKS.iter().find(|c| c.name == name)
}

pub fn for_pipeline(p: Pipeline) -> impl Iterator<Item = &'static CheckSpec> {
    let stages = p.stages();
    CHECKS.iter().filter(move |c| stages.contains(&c.pipeline))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_plentiful() {
        let mut names: Vec<_> = CHECKS.iter().map(|c| c.name).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), CHECKS.len());
        assert!(CHECKS.len() >= 20);
        assert_eq!(for_pipeline(Pipeline::VerifyAll).count(), CHECKS.len());
    }

    #[test]
    fn pipelines_round_trip() {
        for p in Pipeline::ALL {
            assert_eq!(Pipeline::parse(p.name()), Some(p));
        }
        assert_eq!(Pipeline::parse("everything"), None);
    }
}

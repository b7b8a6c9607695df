//! The maximum-principle apparatus evaluated on computed hypersurfaces:
//! the logarithmic curvature test function
//!
//! ```text
//! Q = ln kappa_1 - N ln u + (alpha / 2) |X|^2,
//! ```
//!
//! its discrete first-order critical equation at the maximum point,
//!
//! ```text
//! 0 = h_{11i} / kappa_1 - N u_i / u + alpha <X, X_i>,
//! ```
//!
//! and the case split on the smallest curvature at the maximum against the
//! semi-convexity threshold `-K0`: at or above it the surface is
//! semi-convex where it matters; below it the concavity machinery applies,
//! with the direction vector `xi_i = h_{ii1}` vanishing on the top
//! curvature block.
//!
//! Pointwise second-order checks are deliberately out of scope: at a
//! maximum where the top curvature is multiple, the relevant inequalities
//! hold only in the viscosity sense and stencil evaluations of them are
//! meaningless. The critical equation is therefore only evaluated where
//! `kappa_1` is simple by a safe margin, and refused otherwise.

use crate::concavity::{self, detect_multiplicity, ConcavitySetup};
use crate::error::{Error, Result};
use crate::geometry::{covariant_h_derivative, shape_frame, ShapeData};
use crate::symfun::LambdaVec;
use serde::{Deserialize, Serialize};

/// The evaluated test function and the data measured at its maximum.
#[derive(Debug, Clone)]
pub struct TestFunctionField {
    pub n_param: f64,
    pub alpha: f64,
    /// Q value per node.
    pub q: Vec<f64>,
    pub argmax: usize,
    pub q_max: f64,
    pub kappa1_at_max: f64,
    pub multiplicity_at_max: usize,
    /// `kappa_1 - kappa_{m+1}` at the argmax (0 when the block is full).
    pub gap: f64,
    /// Set when Q is constant within tolerance and the argmax is arbitrary.
    pub degenerate_max: bool,
}

/// Evaluates `Q` at every node and locates its maximum (ties resolved to
/// the lowest node index). Errors where a logarithm is undefined.
pub fn test_function_field(shape: &ShapeData, n_param: f64, alpha: f64) -> Result<TestFunctionField> {
    let count = shape.node_count();
    let mut q = Vec::with_capacity(count);
    for node in 0..count {
        let u = shape.u_at(node);
        if !(u > 0.0) {
            return Err(Error::Domain(format!(
                "support function u = {u} <= 0 at node {node}"
            )));
        }
        let kappa1 = shape.kappa_at(node)[0];
        if !(kappa1 > 0.0) {
            return Err(Error::Domain(format!(
                "largest curvature {kappa1} <= 0 at node {node}"
            )));
        }
        let x = shape.x_at(node);
        let x_sq: f64 = x.iter().map(|v| v * v).sum();
        q.push(kappa1.ln() - n_param * u.ln() + 0.5 * alpha * x_sq);
    }
    let mut argmax = 0;
    for (node, &v) in q.iter().enumerate() {
        if v > q[argmax] {
            argmax = node;
        }
    }
    let q_max = q[argmax];
    let q_min = q.iter().cloned().fold(f64::INFINITY, f64::min);
    let degenerate_max = (q_max - q_min).abs() <= 1e-10 * q_max.abs().max(1.0);

    let kappa = shape.kappa_at(argmax);
    let m = detect_multiplicity(kappa);
    let gap = if m < kappa.len() {
        kappa[0] - kappa[m]
    } else {
        0.0
    };
    Ok(TestFunctionField {
        n_param,
        alpha,
        q,
        argmax,
        q_max,
        kappa1_at_max: kappa[0],
        multiplicity_at_max: m,
        gap,
        degenerate_max,
    })
}

/// First-order critical equation at the argmax, expressed in the principal
/// frame (`e_1` the top-curvature direction): component `i` is
/// `h_{11i}/kappa_1 - N u_i/u + alpha <X, X_i>`. Expected `O(spacing)` when
/// the located maximum is within one cell of the true one.
///
/// Refused in the viscosity regime: a degenerate maximum, a multiple top
/// curvature, or a gap below ten grouping tolerances.
pub fn critical_residual(shape: &ShapeData, field: &TestFunctionField) -> Result<Vec<f64>> {
    if field.degenerate_max {
        return Err(Error::ViscosityRegime(
            "degenerate maximum: Q is constant on the grid".into(),
        ));
    }
    if field.multiplicity_at_max > 1 {
        return Err(Error::ViscosityRegime(format!(
            "top curvature has multiplicity {} at the maximum",
            field.multiplicity_at_max
        )));
    }
    let tol = concavity::MULTIPLICITY_GAP_REL * field.kappa1_at_max.abs().max(1.0);
    if field.gap <= 10.0 * tol {
        return Err(Error::ViscosityRegime(format!(
            "top curvature gap {} within 10 grouping tolerances",
            field.gap
        )));
    }

    let node = field.argmax;
    let n = shape.n();
    let grid = shape.grid();
    let (kappa, frame) = shape_frame(shape, node);
    let e1 = &frame[0..n];
    let nabla_h = covariant_h_derivative(shape, node);
    let stride = n * n;

    let u = shape.u_at(node);
    let p0 = [0usize; 3];
    let du: Vec<f64> = (0..n).map(|a| grid.d1(&shape_u(shape), node, a, p0)).collect();
    // <X, X_a> = rho * rho_a
    let rho = shape.graph().rho();
    let x_dot: Vec<f64> = (0..n)
        .map(|a| rho[node] * grid.d1(rho, node, a, p0))
        .collect();

    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let ei = &frame[i * n..(i + 1) * n];
        let mut h11i = 0.0;
        for c in 0..n {
            for a in 0..n {
                for b in 0..n {
                    h11i += e1[a] * e1[b] * ei[c] * nabla_h[c * stride + a * n + b];
                }
            }
        }
        let u_i: f64 = (0..n).map(|a| ei[a] * du[a]).sum();
        let x_i: f64 = (0..n).map(|a| ei[a] * x_dot[a]).sum();
        out.push(h11i / kappa[0] - field.n_param * u_i / u + field.alpha * x_i);
    }
    Ok(out)
}

// the u field lives inside ShapeData; reborrow it as a slice for stencils
fn shape_u(shape: &ShapeData) -> Vec<f64> {
    (0..shape.node_count()).map(|i| shape.u_at(i)).collect()
}

/// Which side of the semi-convexity threshold a maximum point falls on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CurvatureCase {
    /// `kappa_n >= -K0`: semi-convex at the point.
    SemiConvex,
    /// `kappa_n < -K0`: the concavity inequality regime.
    StronglyNegative,
}

/// Outcome of the case split at a maximum point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseReport {
    pub case: CurvatureCase,
    pub kappa_n_at_max: f64,
    pub k0: f64,
    /// Concavity inequality value at `(kappa, xi)`, evaluated only in the
    /// strongly negative case.
    pub concavity_lhs: Option<f64>,
    /// Sum of absolute term magnitudes, the scale of `concavity_lhs`.
    pub concavity_scale: Option<f64>,
}

/// Point-level classification of a curvature vector against the threshold;
/// in the strongly negative case the concavity inequality is evaluated at
/// the given direction (zeroed on the detected top block).
///
/// The vector is canonicalized first: entries within the grouping
/// tolerance of the top one are overwritten with it bitwise, which is what
/// downstream consumers of eigensolver output must do anyway.
pub fn classify_point(kappa_sorted: &[f64], xi: &[f64], f_max: f64) -> Result<CaseReport> {
    let n = kappa_sorted.len();
    let k0 = concavity::k0_threshold(n, f_max)?;
    let kappa_n = kappa_sorted[n - 1];
    if kappa_n >= -k0 {
        return Ok(CaseReport {
            case: CurvatureCase::SemiConvex,
            kappa_n_at_max: kappa_n,
            k0,
            concavity_lhs: None,
            concavity_scale: None,
        });
    }
    let m = detect_multiplicity(kappa_sorted);
    let mut canonical = kappa_sorted.to_vec();
    for v in canonical.iter_mut().take(m).skip(1) {
        *v = kappa_sorted[0];
    }
    let mut xi = xi.to_vec();
    for v in xi.iter_mut().take(m).skip(1) {
        *v = 0.0;
    }
    let lambda = LambdaVec::new(canonical)?;
    let setup = ConcavitySetup::new(lambda, m, xi, k0)?;
    debug_assert!(setup.hypothesis_satisfied());
    let terms = concavity::lhs(&setup)?;
    Ok(CaseReport {
        case: CurvatureCase::StronglyNegative,
        kappa_n_at_max: kappa_n,
        k0,
        concavity_lhs: Some(terms.lhs),
        concavity_scale: Some(terms.term_scale()),
    })
}

/// Case split at the argmax of the test function. In the strongly negative
/// case the concavity direction is taken from the surface itself:
/// `xi_i = h_{ii1}` in the principal frame, zeroed on the top block as the
/// gradient structure at a maximum demands.
pub fn case_split(shape: &ShapeData, field: &TestFunctionField, f_max: f64) -> Result<CaseReport> {
    let node = field.argmax;
    let n = shape.n();
    let kappa = shape.kappa_at(node);
    let k0 = concavity::k0_threshold(n, f_max)?;
    if kappa[n - 1] >= -k0 {
        return Ok(CaseReport {
            case: CurvatureCase::SemiConvex,
            kappa_n_at_max: kappa[n - 1],
            k0,
            concavity_lhs: None,
            concavity_scale: None,
        });
    }
    let (kappa_f, frame) = shape_frame(shape, node);
    let nabla_h = covariant_h_derivative(shape, node);
    let stride = n * n;
    let e1 = &frame[0..n];
    let mut xi = Vec::with_capacity(n);
    for i in 0..n {
        let ei = &frame[i * n..(i + 1) * n];
        let mut h_ii1 = 0.0;
        for c in 0..n {
            for a in 0..n {
                for b in 0..n {
                    h_ii1 += ei[a] * ei[b] * e1[c] * nabla_h[c * stride + a * n + b];
                }
            }
        }
        xi.push(h_ii1);
    }
    classify_point(&kappa_f, &xi, f_max)
}

/// Machine-readable diagnostics summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub n_param: f64,
    pub alpha: f64,
    pub argmax_node: usize,
    pub q_max: f64,
    pub kappa_at_max: Vec<f64>,
    pub multiplicity_at_max: usize,
    pub degenerate_max: bool,
    pub case: Option<CurvatureCase>,
    pub k0: Option<f64>,
    pub concavity_lhs: Option<f64>,
    pub critical_residual_norm: Option<f64>,
    /// Set when the critical equation was refused instead of evaluated.
    pub refusal: Option<String>,
}

/// Full diagnostics pass: test function, critical equation (or refusal),
/// and — in dimensions where the threshold is defined — the case split.
pub fn diagnose(
    shape: &ShapeData,
    n_param: f64,
    alpha: f64,
    f_max: Option<f64>,
) -> Result<DiagnosticsReport> {
    let field = test_function_field(shape, n_param, alpha)?;
    let (norm, refusal) = match critical_residual(shape, &field) {
        Ok(res) => {
            let norm = res.iter().map(|v| v * v).sum::<f64>().sqrt();
            (Some(norm), None)
        }
        Err(Error::ViscosityRegime(msg)) => (None, Some(msg)),
        Err(e) => return Err(e),
    };
    let case = match f_max {
        Some(fm) if shape.n() >= 3 => Some(case_split(shape, &field, fm)?),
        _ => None,
    };
    Ok(DiagnosticsReport {
        n_param,
        alpha,
        argmax_node: field.argmax,
        q_max: field.q_max,
        kappa_at_max: shape.kappa_at(field.argmax).to_vec(),
        multiplicity_at_max: field.multiplicity_at_max,
        degenerate_max: field.degenerate_max,
        case: case.as_ref().map(|c| c.case),
        k0: case.as_ref().map(|c| c.k0),
        concavity_lhs: case.as_ref().and_then(|c| c.concavity_lhs),
        critical_residual_norm: norm,
        refusal,
    })
}

//! Transfer between agent spaces and the fusion space.
//!
//! H-self-adjoint operators are carried as coefficient matrices and moved to
//! orthonormal coordinates with the fusion metric, where they are ordinary
//! symmetric matrices.

use nalgebra::{DMatrix, DVector};

use crate::agent::{sample_and_refine, OperatorNormEstimate, Witness};
use crate::linalg::{self, Metric};
use crate::sampling::{self, tag, SamplingConfig};
use crate::spaces::{rkhs_norm, FusionSpace, Host, RkhsFunction, SpaceTag};
use crate::{Error, Result};

pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct TransferOperators {
    pub lbar: [DMatrix<f64>; 2],
    pub sqrt_lbar: [DMatrix<f64>; 2],
    pub proj: [DMatrix<f64>; 2],
    /// Spectrum of each L̄ⁱ as an H-operator, ascending.
    pub eigenvalues: [Vec<f64>; 2],
    pub c_d: f64,
    /// 1 + sup ⟨f, Π₁Π₂ f⟩ / ‖f‖², kept for comparison only.
    pub c_d_inner_form: f64,
    pub rank_tol: f64,
}

fn agent_of(f: &RkhsFunction) -> Result<usize> {
    match f.tag {
        SpaceTag::Agent(i @ (1 | 2)) => Ok(i),
        other => Err(Error::SpaceMismatch { expected: "agent1 or agent2".into(), got: other.to_string() }),
    }
}

/// L̂ⁱ: same function, written over the fusion basis (agent block only).
pub fn upload(fusion: &FusionSpace, f: &RkhsFunction) -> Result<RkhsFunction> {
    let i = agent_of(f)?;
    fusion.agent(i).accepts(f)?;
    let hat = fusion.change_basis(i) * &f.coefficients;
    RkhsFunction::new(SpaceTag::Fusion, fusion.lift(i, &hat))
}

/// Exact ‖L̂ⁱ‖ from the generalized eigenproblem (MᵀK̃M, Kⁱ).
pub fn upload_norm(fusion: &FusionSpace, i: usize) -> f64 {
    let mi = fusion.change_basis(i);
    let out = mi.transpose() * fusion.kt(i) * mi;
    let inp = fusion.agent(i).metric();
    linalg::lambda_max(&inp.quadratic_coords(&out)).max(0.0).sqrt()
}

/// L̄ⁱ as a coefficient map: β ↦ K⁺ Gⁱ β, where Gⁱ is Kⁱ on all 2m points.
pub fn build_lbar(fusion: &FusionSpace, i: usize) -> Result<DMatrix<f64>> {
    let g = &fusion.agent_full[i - 1];
    let l = &fusion.metric.pinv * g;
    // K L̄ⁱ must reproduce Gⁱ: every Kⁱ-section at a basis point lies in H.
    let resid = (&fusion.gram_full * &l - g).amax();
    if resid > 1e-8 * g.amax().max(1.0) {
        return Err(Error::Singular { what: format!("fusion Gram cannot represent agent {i} sections (residual {resid:.3e})"), cond: f64::INFINITY });
    }
    Ok(l)
}

/// Multiple of ε·cond(K|range) below which an H-eigenvalue counts as zero.
pub const NOISE_FACTOR: f64 = 1e4;

fn range_condition(metric: &Metric) -> f64 {
    let v: Vec<f64> = metric.eig.retained(linalg::CLAMP).into_iter().map(|i| metric.eig.values[i]).collect();
    match (v.iter().copied().reduce(f64::max), v.iter().copied().reduce(f64::min)) {
        (Some(hi), Some(lo)) => hi / lo,
        _ => 1.0,
    }
}

/// √L̄ and the projection onto 𝒩(√L̄)^⊥, both as coefficient maps.
/// Returns them with the operator's H-spectrum.
pub fn sqrt_and_projection(lbar: &DMatrix<f64>, metric: &Metric, rank_tol: f64) -> Result<(DMatrix<f64>, DMatrix<f64>, Vec<f64>)> {
    let a = linalg::symmetrize(&metric.op_coords(lbar));
    let e = linalg::sym_eig(&a);
    let top = e.max().max(0.0);
    // Round-off in the coordinates grows with the conditioning of the metric
    // on its range; eigenvalues below that level are treated as zero.
    let rel = rank_tol.max(NOISE_FACTOR * f64::EPSILON * range_condition(metric));
    if let Some(&bad) = e.values.iter().find(|&&v| v < -rel.max(1e-8) * top.max(1.0)) {
        return Err(Error::NegativeEigenvalue { value: bad });
    }
    let floor = rel * top;
    let r = a.nrows();
    let mut s = DMatrix::zeros(r, r);
    let mut p = DMatrix::zeros(r, r);
    for k in 0..r {
        let lam = e.values[k];
        if top > 0.0 && lam > floor {
            let u = e.vectors.column(k);
            let uu = u * u.transpose();
            s += &uu * lam.sqrt();
            p += uu;
        }
    }
    Ok((metric.op_from_coords(&s), metric.op_from_coords(&p), e.values.iter().copied().collect()))
}

/// c_d = √λ_max(Π₁ + Π₂).
pub fn compute_c_d(metric: &Metric, proj: &[DMatrix<f64>; 2]) -> f64 {
    let sum = metric.op_coords(&proj[0]) + metric.op_coords(&proj[1]);
    linalg::lambda_max(&linalg::symmetrize(&sum)).max(0.0).sqrt()
}

fn c_d_inner(metric: &Metric, proj: &[DMatrix<f64>; 2]) -> f64 {
    let p1 = metric.op_coords(&proj[0]);
    let p2 = metric.op_coords(&proj[1]);
    1.0 + linalg::lambda_max(&linalg::symmetrize(&(p1 * p2)))
}

pub fn build_transfer(fusion: &FusionSpace, rank_tol: f64) -> Result<TransferOperators> {
    let l1 = build_lbar(fusion, 1)?;
    let l2 = build_lbar(fusion, 2)?;
    let (s1, p1, e1) = sqrt_and_projection(&l1, &fusion.metric, rank_tol)?;
    let (s2, p2, e2) = sqrt_and_projection(&l2, &fusion.metric, rank_tol)?;
    let proj = [p1, p2];
    let c_d = compute_c_d(&fusion.metric, &proj);
    let c_d_inner_form = c_d_inner(&fusion.metric, &proj);
    Ok(TransferOperators { lbar: [l1, l2], sqrt_lbar: [s1, s2], proj, eigenvalues: [e1, e2], c_d, c_d_inner_form, rank_tol })
}

/// Writes a fusion-space function that lies in Hⁱ over agent i's basis.
/// The canonical (minimum-norm) coefficients are returned.
pub fn to_agent(fusion: &FusionSpace, i: usize, gamma: &DVector<f64>) -> Result<RkhsFunction> {
    let values = &fusion.gram_full * gamma;
    let block = fusion.block(i, &values);
    let space = fusion.agent(i);
    let alpha = linalg::pinv_sym(&space.gram_local, linalg::CLAMP) * block;
    let m = fusion.m();
    let cols = fusion.agent_full[i - 1].columns((i - 1) * m, m).into_owned();
    let resid = (cols * &alpha - &values).amax();
    if resid > 1e-6 * values.amax().max(1.0) {
        return Err(Error::NotRepresentable { agent: i, residual: resid });
    }
    RkhsFunction::new(SpaceTag::Agent(i), alpha)
}

/// T̂(f) = (1/c_d)(√L̄¹Π₁f, √L̄²Π₂f), each written in the agent basis.
pub fn download(fusion: &FusionSpace, ops: &TransferOperators, f: &RkhsFunction) -> Result<[RkhsFunction; 2]> {
    fusion.accepts(f)?;
    let part = |i: usize| -> Result<RkhsFunction> {
        let g = &ops.sqrt_lbar[i - 1] * (&ops.proj[i - 1] * &f.coefficients) / ops.c_d;
        to_agent(fusion, i, &g)
    };
    Ok([part(1)?, part(2)?])
}

/// Linear map β ↦ agent-i coefficients of the i-th download component.
pub fn download_matrix(fusion: &FusionSpace, ops: &TransferOperators, i: usize) -> DMatrix<f64> {
    let g = &ops.sqrt_lbar[i - 1] * &ops.proj[i - 1] / ops.c_d;
    let values = fusion.block_rows(i, &(&fusion.gram_full * g));
    linalg::pinv_sym(&fusion.agent(i).gram_local, linalg::CLAMP) * values
}

/// Exact ‖T̂‖ with outputs measured in the agent norms.
pub fn download_norm_exact(fusion: &FusionSpace, ops: &TransferOperators) -> f64 {
    let mut q = DMatrix::zeros(2 * fusion.m(), 2 * fusion.m());
    for i in 1..=2 {
        let d = download_matrix(fusion, ops, i);
        q += d.transpose() * &fusion.agent(i).gram_local * d;
    }
    linalg::lambda_max(&linalg::symmetrize(&fusion.metric.quadratic_coords(&q))).max(0.0).sqrt()
}

/// Sampled ‖T̂‖ over the unit sphere of H.
pub fn estimate_download_norm(fusion: &FusionSpace, ops: &TransferOperators, cfg: &SamplingConfig) -> Result<OperatorNormEstimate> {
    let r = fusion.metric.rank;
    let ratio = |u: &[f64]| -> f64 {
        let beta = fusion.metric.from_coords(&DVector::from_column_slice(u));
        let den = fusion.metric.norm(&beta).powi(2);
        let f = match RkhsFunction::new(SpaceTag::Fusion, beta) {
            Ok(f) => f,
            Err(_) => return 0.0,
        };
        match download(fusion, ops, &f) {
            Ok([a, b]) if den > 0.0 => {
                (rkhs_norm(fusion.agent(1), &a).unwrap_or(0.0).powi(2) + rkhs_norm(fusion.agent(2), &b).unwrap_or(0.0).powi(2)) / den
            }
            _ => 0.0,
        }
    };
    let (best, u, iters) = sample_and_refine(
        cfg,
        tag::DOWNLOAD_NORM,
        |rng| sampling::unit_sphere(rng, r).iter().copied().collect(),
        &vec![0.2; r],
        ratio,
    );
    Ok(OperatorNormEstimate {
        value: best.max(0.0).sqrt(),
        sup_ratio: best,
        samples: cfg.samples.max(1),
        refinement_iters: iters,
        argmax_witness: Witness::Function { beta: fusion.metric.from_coords(&DVector::from_column_slice(&u)) },
        seed: cfg.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pd_metric() -> Metric {
        let g = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.5, 0.2, 0.1, 0.2, 1.0]);
        Metric::new(&g, linalg::CLAMP)
    }

    #[test]
    fn identity_and_zero_operators() {
        let m = pd_metric();
        let id = DMatrix::identity(3, 3);
        let (s, p, _) = sqrt_and_projection(&id, &m, RANK_TOL).unwrap();
        assert_relative_eq!(s, id, epsilon = 1e-12);
        assert_relative_eq!(p, id, epsilon = 1e-12);
        let z = DMatrix::zeros(3, 3);
        let (s, p, _) = sqrt_and_projection(&z, &m, RANK_TOL).unwrap();
        assert_eq!(s, z);
        assert_eq!(p, z);
    }

    #[test]
    fn negative_operator_is_rejected() {
        let m = pd_metric();
        let neg = -DMatrix::<f64>::identity(3, 3);
        assert!(matches!(sqrt_and_projection(&neg, &m, RANK_TOL), Err(Error::NegativeEigenvalue { .. })));
    }

    #[test]
    fn c_d_extremes() {
        let m = pd_metric();
        let id = DMatrix::identity(3, 3);
        assert_relative_eq!(compute_c_d(&m, &[id.clone(), id.clone()]), 2f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(compute_c_d(&m, &[id, DMatrix::zeros(3, 3)]), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn sqrt_of_diagonal_operator() {
        // metric = I, so coefficient and coordinate pictures coincide
        let m = Metric::new(&DMatrix::identity(2, 2), linalg::CLAMP);
        let l = DMatrix::from_diagonal(&DVector::from_vec(vec![0.25, 0.0]));
        let (s, p, ev) = sqrt_and_projection(&l, &m, RANK_TOL).unwrap();
        assert_relative_eq!(s[(0, 0)], 0.5, epsilon = 1e-14);
        assert_relative_eq!(p, DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0])), epsilon = 1e-14);
        assert_eq!(ev.len(), 2);
    }
}

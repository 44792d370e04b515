//! Fusion-center step: virtual targets, fused ridge regression, the fusion
//! operator's norm, and the block spectral report.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::agent::{sample_and_refine, OperatorNormEstimate, Witness};
use crate::linalg::{self, Metric};
use crate::sampling::{self, tag, SamplingConfig, Slice};
use crate::spaces::{FusionSpace, Host, KnowledgeSpace, RkhsFunction, SpaceTag};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct VirtualTargets {
    pub y_hat_1: DVector<f64>,
    pub y_hat_2: DVector<f64>,
    pub rho_used: [f64; 2],
}

impl VirtualTargets {
    pub fn stacked(&self) -> DVector<f64> {
        linalg::stack(&self.y_hat_1, &self.y_hat_2)
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if rho > 0.0 && rho.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("rho must be positive and finite, got {rho}")))
    }
}

/// Ŷ = (G + ρI)α: targets at the basis points whose ridge fit is α.
pub fn targets_for(gram: &DMatrix<f64>, alpha: &DVector<f64>, rho: f64) -> DVector<f64> {
    gram * alpha + alpha * rho
}

/// Kernel ridge fit over the basis points: (G + ρI)⁻¹ y.
pub fn ridge_fit(gram: &DMatrix<f64>, y: &DVector<f64>, rho: f64) -> Result<DVector<f64>> {
    check_rho(rho)?;
    let n = gram.nrows();
    Ok(linalg::inverse_spd(&(gram + DMatrix::identity(n, n) * rho), "ridge system")? * y)
}

/// Targets for a function hosted in an agent space (agent Gram, agent coefficients).
pub fn reconstruct_targets(space: &KnowledgeSpace, f: &RkhsFunction, rho: f64) -> Result<DVector<f64>> {
    check_rho(rho)?;
    space.accepts(f)?;
    Ok(targets_for(&space.gram_local, &f.coefficients, rho))
}

/// Agent block α̂ⁱ of an uploaded function; the other block must be empty.
pub fn uploaded_block(fusion: &FusionSpace, i: usize, f: &RkhsFunction) -> Result<DVector<f64>> {
    fusion.accepts(f)?;
    let other = fusion.block(3 - i, &f.coefficients);
    if other.amax() != 0.0 {
        return Err(Error::InvalidArgument(format!("function is not supported on agent {i}'s basis block")));
    }
    Ok(fusion.block(i, &f.coefficients))
}

/// Targets at x̄ⁱ for an uploaded function: (K̃ⁱ + ρI)α̂ⁱ.
pub fn reconstruct_uploaded(fusion: &FusionSpace, i: usize, uploaded: &RkhsFunction, rho: f64) -> Result<DVector<f64>> {
    check_rho(rho)?;
    let hat = uploaded_block(fusion, i, uploaded)?;
    Ok(targets_for(&fusion.kt(i), &hat, rho))
}

pub fn build_targets(fusion: &FusionSpace, uploaded: [&RkhsFunction; 2], rho: [f64; 2]) -> Result<VirtualTargets> {
    Ok(VirtualTargets {
        y_hat_1: reconstruct_uploaded(fusion, 1, uploaded[0], rho[0])?,
        y_hat_2: reconstruct_uploaded(fusion, 2, uploaded[1], rho[1])?,
        rho_used: rho,
    })
}

/// Ridge regression over all 2m basis points: β = (K + ρI)⁻¹Ŷ.
pub fn fuse(fusion: &FusionSpace, targets: &VirtualTargets, rho: f64) -> Result<RkhsFunction> {
    check_rho(rho)?;
    let y = targets.stacked();
    if y.len() != fusion.basis_count() {
        return Err(Error::Length { expected: fusion.basis_count(), got: y.len() });
    }
    let e = &fusion.metric.eig;
    let mut beta = DVector::zeros(y.len());
    for k in 0..y.len() {
        let u = e.vectors.column(k);
        beta += u * (u.dot(&y) / (e.values[k].max(0.0) + rho));
    }
    RkhsFunction::new(SpaceTag::Fusion, beta)
}

/// T(ρ) on a pair of agent coefficient vectors: upload, targets, fuse.
pub fn apply_t(fusion: &FusionSpace, rho: f64, alpha1: &DVector<f64>, alpha2: &DVector<f64>) -> Result<RkhsFunction> {
    let t = VirtualTargets {
        y_hat_1: targets_for(&fusion.kt(1), &(fusion.change_basis(1) * alpha1), rho),
        y_hat_2: targets_for(&fusion.kt(2), &(fusion.change_basis(2) * alpha2), rho),
        rho_used: [rho, rho],
    };
    fuse(fusion, &t, rho)
}

/// Block-diagonal form MⁱᵀK̃ⁱMⁱ on (α¹, α²): the squared H-norm of the uploads.
pub fn upload_form(fusion: &FusionSpace, slice: Slice) -> DMatrix<f64> {
    let q = |i: usize| {
        let mi = fusion.change_basis(i);
        linalg::symmetrize(&(mi.transpose() * fusion.kt(i) * mi))
    };
    let q2 = if slice == Slice::FirstAgentOnly { DMatrix::zeros(fusion.m(), fusion.m()) } else { q(2) };
    linalg::block_diag(&q(1), &q2)
}

/// Parametrization of E by the unit sphere of the upload form's range.
pub(crate) struct FusionSet<'a> {
    pub fusion: &'a FusionSpace,
    pub metric: Metric,
}

impl<'a> FusionSet<'a> {
    pub fn new(fusion: &'a FusionSpace, slice: Slice) -> Result<Self> {
        let metric = Metric::new(&upload_form(fusion, slice), linalg::CLAMP);
        if metric.rank == 0 {
            return Err(Error::EmptyFeasibleSet("degenerate ellipsoid (zero quadratic form)".into()));
        }
        Ok(FusionSet { fusion, metric })
    }

    pub fn point(&self, u: &[f64]) -> (DVector<f64>, DVector<f64>) {
        let mut u = DVector::from_column_slice(u);
        let n = u.norm();
        if n > 0.0 {
            u /= n;
        } else {
            u[0] = 1.0;
        }
        let a = self.metric.from_coords(&u);
        let m = self.fusion.m();
        (a.rows(0, m).into_owned(), a.rows(m, m).into_owned())
    }

    pub fn ratio(&self, rho: f64, u: &[f64]) -> f64 {
        let (a1, a2) = self.point(u);
        let den = self.metric.norm(&linalg::stack(&a1, &a2)).powi(2);
        match apply_t(self.fusion, rho, &a1, &a2) {
            Ok(f) if den > 0.0 => self.fusion.metric.norm(&f.coefficients).powi(2) / den,
            _ => 0.0,
        }
    }
}

pub fn estimate_t_norm(fusion: &FusionSpace, rho: f64, cfg: &SamplingConfig) -> Result<OperatorNormEstimate> {
    check_rho(rho)?;
    let set = FusionSet::new(fusion, cfg.slice)?;
    let r = set.metric.rank;
    let (ratio, u, iters) = sample_and_refine(
        cfg,
        tag::FUSION_NORM,
        |rng| sampling::unit_sphere(rng, r).iter().copied().collect(),
        &vec![0.2; r],
        |u| set.ratio(rho, u),
    );
    let (alpha1, alpha2) = set.point(&u);
    Ok(OperatorNormEstimate {
        value: ratio.max(0.0).sqrt(),
        sup_ratio: ratio,
        samples: cfg.samples.max(1),
        refinement_iters: iters,
        argmax_witness: Witness::Fusion { alpha1, alpha2 },
        seed: cfg.seed,
    })
}

/// ‖T(ρ)‖ from the generalized eigenproblem; T is linear, so this is exact.
pub fn t_norm_exact(fusion: &FusionSpace, rho: f64, slice: Slice) -> Result<f64> {
    check_rho(rho)?;
    let m = fusion.m();
    let id = DMatrix::<f64>::identity(m, m);
    let lift = |i: usize| (fusion.kt(i) + &id * rho) * fusion.change_basis(i);
    let b = linalg::block_diag(&lift(1), &lift(2));
    let n = 2 * m;
    let f = linalg::inverse_spd(&(&fusion.gram_full + DMatrix::identity(n, n) * rho), "fusion ridge system")? * b;
    let out = f.transpose() * &fusion.gram_full * &f;
    let form = Metric::new(&upload_form(fusion, slice), linalg::CLAMP);
    Ok(linalg::lambda_max(&linalg::symmetrize(&form.quadratic_coords(&out))).max(0.0).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralReport {
    pub lambda_max_k: f64,
    pub lambda_max_kt1: f64,
    pub lambda_max_kt2: f64,
    /// Eigenvalues of the block-diagonal middle factor D = diag(S, K̃²).
    pub d_eigenvalues: Vec<f64>,
    /// ‖PᵀDP − K‖ / ‖K‖ (max-abs).
    pub schur_residual: f64,
    /// Whether λ_max(K) ≤ max(λ_max(K̃¹), λ_max(K̃²)) + 1e−8.
    pub inequality_holds: bool,
    pub normalization_applied: bool,
    pub kernel_scale: f64,
    /// Kernel scale that would bring the larger block maximum down to 1.
    pub required_scale: Option<f64>,
}

/// K = PᵀDP with P = [[I, 0], [(K̃²)⁻¹K¹²ᵀ, I]], D = diag(K̃¹ − K¹²(K̃²)⁻¹K¹²ᵀ, K̃²)
/// for a symmetric 2m×2m matrix split into m×m blocks.
pub fn schur_factors(k: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let m = k.nrows() / 2;
    let kt1 = k.view((0, 0), (m, m)).into_owned();
    let kt2 = k.view((m, m), (m, m)).into_owned();
    let k12 = k.view((0, m), (m, m)).into_owned();
    let inv2 = linalg::inverse_spd(&kt2, "K̃² (increase jitter or change basis points)")?;
    let c = &inv2 * k12.transpose();
    let schur = &kt1 - &k12 * &c;
    let mut p = DMatrix::identity(2 * m, 2 * m);
    p.view_mut((m, 0), (m, m)).copy_from(&c);
    Ok((p, linalg::block_diag(&schur, &kt2)))
}

/// Spectral report for any symmetric 2m×2m block matrix.
pub fn spectral_report(k: &DMatrix<f64>, kernel_scale: f64) -> Result<SpectralReport> {
    if !k.nrows().is_multiple_of(2) || k.nrows() != k.ncols() || k.nrows() == 0 {
        return Err(Error::InvalidArgument(format!("expected a square matrix of even order, got {:?}", k.shape())));
    }
    let m = k.nrows() / 2;
    let (p, d) = schur_factors(k)?;
    let schur_residual = (p.transpose() * &d * &p - k).amax() / k.amax().max(f64::MIN_POSITIVE);
    let lambda_max_k = linalg::lambda_max(k);
    let lambda_max_kt1 = linalg::lambda_max(&k.view((0, 0), (m, m)).into_owned());
    let lambda_max_kt2 = linalg::lambda_max(&k.view((m, m), (m, m)).into_owned());
    let block_max = lambda_max_kt1.max(lambda_max_kt2);
    let d_eigenvalues = linalg::sym_eig(&d).values.iter().copied().collect();
    Ok(SpectralReport {
        lambda_max_k,
        lambda_max_kt1,
        lambda_max_kt2,
        d_eigenvalues,
        schur_residual,
        inequality_holds: lambda_max_k <= block_max + 1e-8,
        normalization_applied: kernel_scale != 1.0,
        kernel_scale,
        required_scale: (block_max > 1.0 + 1e-12).then(|| kernel_scale / block_max),
    })
}

pub fn spectral_check(fusion: &FusionSpace) -> Result<SpectralReport> {
    spectral_report(&fusion.gram_full, fusion.kernel_scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn scalar_round_trip() {
        let g = DMatrix::from_element(1, 1, 1.0);
        let alpha = DVector::from_element(1, 2.4);
        let y = targets_for(&g, &alpha, 1.0);
        assert_relative_eq!(y[0], 4.8, epsilon = 1e-15);
        assert_relative_eq!(ridge_fit(&g, &y, 1.0).unwrap()[0], 2.4, epsilon = 1e-15);
        assert_eq!(targets_for(&g, &DVector::zeros(1), 1.0)[0], 0.0);
        assert_eq!(targets_for(&g, &(&alpha * 2.0), 1.0), y * 2.0);
    }

    #[test]
    fn identity_report() {
        let r = spectral_report(&DMatrix::identity(4, 4), 1.0).unwrap();
        assert_eq!((r.lambda_max_k, r.lambda_max_kt1, r.lambda_max_kt2), (1.0, 1.0, 1.0));
        assert_eq!(r.schur_residual, 0.0);
        assert!(r.inequality_holds);
        assert_eq!(r.required_scale, None);
    }

    #[test]
    fn block_diagonal_attains_block_max() {
        let mut k = DMatrix::zeros(4, 4);
        k.view_mut((0, 0), (2, 2)).copy_from(&DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]));
        k.view_mut((2, 2), (2, 2)).copy_from(&DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 0.5]));
        let r = spectral_report(&k, 1.0).unwrap();
        assert_eq!(r.lambda_max_k, r.lambda_max_kt1.max(r.lambda_max_kt2));
        assert!(r.inequality_holds);
        assert_relative_eq!(r.required_scale.unwrap(), 1.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn coupled_blocks_exceed_block_max() {
        // [[1, c], [c, 1]] in 1×1 blocks: λ_max = 1 + c > 1
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let r = spectral_report(&k, 1.0).unwrap();
        assert_relative_eq!(r.lambda_max_k, 1.5, epsilon = 1e-14);
        assert!(!r.inequality_holds);
        assert!(r.schur_residual < 1e-15);
    }
}

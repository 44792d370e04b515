//! The per-agent proximal ridge step and its operator norm.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{self, Metric};
use crate::sampling::{self, tag, SamplingConfig, Slice};
use crate::spaces::{Host, KnowledgeSpace, Point, RkhsFunction};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum RhoSchedule {
    /// ρₙ = ρ₀ nᵖ
    Power { rho0: f64, p: f64 },
    /// ρₙ = ρ₀ rⁿ⁻¹
    Geometric { rho0: f64, r: f64 },
    /// Listed values; the last one is held past the end.
    Explicit { values: Vec<f64> },
}

impl RhoSchedule {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("rho schedule: {m}")));
        match self {
            RhoSchedule::Power { rho0, p } => {
                if !(*rho0 > 0.0 && rho0.is_finite()) || !(*p >= 0.0) {
                    return bad("power needs rho0 > 0 and p >= 0");
                }
            }
            RhoSchedule::Geometric { rho0, r } => {
                if !(*rho0 > 0.0 && rho0.is_finite()) || !(*r >= 1.0) {
                    return bad("geometric needs rho0 > 0 and r >= 1");
                }
            }
            RhoSchedule::Explicit { values } => {
                if values.is_empty() || values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                    return bad("explicit values must be positive and finite");
                }
                if values.windows(2).any(|w| w[1] < w[0]) {
                    return bad("explicit values must be nondecreasing");
                }
            }
        }
        Ok(())
    }

    /// ρₙ for n ≥ 1.
    pub fn value(&self, n: usize) -> f64 {
        let n = n.max(1);
        match self {
            RhoSchedule::Power { rho0, p } => rho0 * (n as f64).powf(*p),
            RhoSchedule::Geometric { rho0, r } => rho0 * r.powi(n as i32 - 1),
            RhoSchedule::Explicit { values } => values[(n - 1).min(values.len() - 1)],
        }
    }

    pub fn diverges(&self) -> bool {
        match self {
            RhoSchedule::Power { p, .. } => *p > 0.0,
            RhoSchedule::Geometric { r, .. } => *r > 1.0,
            RhoSchedule::Explicit { .. } => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub x: Point,
    pub y: f64,
}

/// ψ together with the datum that generated it.
#[derive(Debug, Clone, PartialEq)]
pub struct Psi {
    pub function: RkhsFunction,
    pub provenance: Option<DataPoint>,
}

impl Psi {
    pub fn from_function(function: RkhsFunction) -> Self {
        Psi { function, provenance: None }
    }
}

pub fn psi_embed(space: &KnowledgeSpace, x: &[f64], y: f64) -> Result<Psi> {
    let k = space.section(x)?;
    Ok(Psi { function: RkhsFunction::new(space.tag(), k * y)?, provenance: Some(DataPoint { x: x.to_vec(), y }) })
}

/// ‖ψ_(x;y)‖ = |y|·√(kᵀKk), without building ψ.
pub fn psi_norm(space: &KnowledgeSpace, x: &[f64], y: f64) -> Result<f64> {
    let k = space.section(x)?;
    Ok(y.abs() * k.dot(&(&space.gram_local * &k)).max(0.0).sqrt())
}

/// Eigenbasis of Kⁱ split into range and null parts.  The jittered system
/// keeps both invariant, and on the null part it is c₃ρI against c₃ρ·prior,
/// so solving on the range alone avoids the jitter's conditioning.
struct RangeSplit {
    u: DMatrix<f64>,
    lambda: DVector<f64>,
}

impl RangeSplit {
    fn new(space: &KnowledgeSpace) -> Self {
        let e = linalg::sym_eig(&space.gram_local);
        let keep = e.retained(linalg::CLAMP);
        let u = DMatrix::from_columns(&keep.iter().map(|&i| e.vectors.column(i)).collect::<Vec<_>>());
        let lambda = DVector::from_iterator(keep.len(), keep.iter().map(|&i| e.values[i]));
        RangeSplit { u, lambda }
    }

    /// Whether `k` lies in range(Kⁱ) to working precision.
    fn holds(&self, k: &DVector<f64>) -> bool {
        let kr = self.u.transpose() * k;
        (k - &self.u * kr).norm() <= 1e-10 * k.norm().max(1e-300)
    }

    /// ρ(Λ + c₃) + k_r k_rᵀ on the range.
    fn system(&self, k: &DVector<f64>, jitter: f64, rho: f64) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
        let kr = self.u.transpose() * k;
        let d = self.lambda.map(|l| rho * (l + jitter));
        let a = DMatrix::from_diagonal(&d) + &kr * kr.transpose();
        (a, d, kr)
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if rho > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("rho must be positive, got {rho}")))
    }
}

fn solve_local(space: &KnowledgeSpace, prev: &DVector<f64>, k: &DVector<f64>, y: f64, rho: f64) -> Result<DVector<f64>> {
    check_rho(rho)?;
    let split = RangeSplit::new(space);
    if split.lambda.is_empty() || !split.holds(k) {
        let kj = space.gram_jittered();
        let a = &kj * rho + k * k.transpose();
        let rhs = k * y + &kj * prev * rho;
        return Ok(linalg::inverse_spd(&a, "local update system")? * rhs);
    }
    let (a, d, kr) = split.system(k, space.jitter, rho);
    let pr = split.u.transpose() * prev;
    let rhs = &kr * y + d.component_mul(&pr);
    let sol = linalg::inverse_spd(&a, "local update system")? * rhs;
    Ok(&split.u * sol + (prev - &split.u * pr))
}

/// α* = (ρKⁱ + kkᵀ)⁻¹(ky + ρKⁱᾱ) with the jittered Gram.
pub fn local_update(space: &KnowledgeSpace, f_prev: &RkhsFunction, x: &[f64], y: f64, rho: f64) -> Result<RkhsFunction> {
    space.accepts(f_prev)?;
    let k = space.section(x)?;
    RkhsFunction::new(space.tag(), solve_local(space, &f_prev.coefficients, &k, y, rho)?)
}

/// T̄ⁱ(ρ)[f; ψ]; the same map as `local_update`, keyed by ψ's datum.
pub fn apply_tbar(space: &KnowledgeSpace, rho: f64, f: &RkhsFunction, psi: &Psi) -> Result<RkhsFunction> {
    let d = psi.provenance.as_ref().ok_or(Error::MissingProvenance)?;
    space.accepts(&psi.function)?;
    local_update(space, f, &d.x, d.y, rho)
}

/// ‖T̄ⁱ(ρ)[f; ψ]‖² for f = αᵀK̄(·), ψ = ψ_(x;y).
pub fn phi(space: &KnowledgeSpace, rho: f64, alpha: &DVector<f64>, x: &[f64], y: f64) -> Result<f64> {
    let k = space.section(x)?;
    let out = solve_local(space, alpha, &k, y, rho)?;
    Ok(out.dot(&(&space.gram_local * &out)).max(0.0))
}

/// Exact ‖T̄ⁱ(ρ)‖ with x held fixed, where the operator is linear in (α, y).
/// Inputs are taken in orthonormal coordinates: Λ^{-1/2} on the range of Kⁱ
/// and y in units of ‖ψ‖, so a small section cannot fall under the clamp.
pub fn tbar_norm_at(space: &KnowledgeSpace, rho: f64, x: &[f64]) -> Result<f64> {
    check_rho(rho)?;
    let k = space.section(x)?;
    let split = RangeSplit::new(space);
    if split.lambda.is_empty() {
        return Err(Error::EmptyFeasibleSet(format!("agent {} Gram vanishes", space.agent_id)));
    }
    if !split.holds(&k) {
        return Err(Error::NotRepresentable { agent: space.agent_id, residual: (&k - &split.u * (split.u.transpose() * &k)).norm() });
    }
    let (a, d, kr) = split.system(&k, space.jitter, rho);
    let r = split.lambda.len();
    let q = kr.dot(&kr.component_mul(&split.lambda));
    let cols = if q > 1e-300 { r + 1 } else { r };
    let mut rhs = DMatrix::zeros(r, cols);
    for j in 0..r {
        rhs[(j, j)] = d[j] / split.lambda[j].sqrt();
    }
    if cols > r {
        rhs.set_column(r, &(&kr / q.sqrt()));
    }
    let b = linalg::inverse_spd(&a, "local update system")? * rhs;
    let out = b.transpose() * DMatrix::from_diagonal(&split.lambda) * &b;
    Ok(linalg::lambda_max(&linalg::symmetrize(&out)).max(0.0).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Witness {
    Agent { alpha: DVector<f64>, x: Point, y: f64 },
    Fusion { alpha1: DVector<f64>, alpha2: DVector<f64> },
    Multi { alpha: [DVector<f64>; 2], x: [Point; 2], y: [f64; 2] },
    Function { beta: DVector<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorNormEstimate {
    /// Estimated operator norm (square root of the best ratio).
    pub value: f64,
    /// Best sampled ratio of squared norms.
    pub sup_ratio: f64,
    pub samples: usize,
    pub refinement_iters: usize,
    pub argmax_witness: Witness,
    pub seed: u64,
}

/// Parametrization of Eⁱ: u on the unit sphere of range(Kⁱ), x, mixing
/// weight t, sign of y.  α = √t·R⁺u and y = ±√((1−t)/kᵀKk).
pub(crate) struct AgentSet<'a> {
    pub space: &'a KnowledgeSpace,
    pub metric: Metric,
    pub slice: Slice,
}

impl<'a> AgentSet<'a> {
    pub fn new(space: &'a KnowledgeSpace, slice: Slice) -> Result<Self> {
        let metric = space.metric();
        if metric.rank == 0 {
            return Err(Error::EmptyFeasibleSet(format!("agent {} Gram vanishes", space.agent_id)));
        }
        Ok(AgentSet { space, metric, slice })
    }

    pub fn rank(&self) -> usize {
        self.metric.rank
    }

    /// Parameter vector layout: [u (rank), x (dim), t, sign].
    pub fn draw(&self, rng: &mut impl Rng) -> Vec<f64> {
        let u = sampling::unit_sphere(rng, self.rank());
        let x = sampling::uniform_in(rng, &self.space.domain);
        let t = if self.slice == Slice::PsiZero { 1.0 } else { rng.random::<f64>() };
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        u.iter().copied().chain(x).chain([t, sign]).collect()
    }

    pub fn steps(&self) -> Vec<f64> {
        let d = &self.space.domain;
        let mut s = vec![0.2; self.rank()];
        s.extend(d.lower.iter().zip(&d.upper).map(|(a, b)| 0.1 * (b - a)));
        s.push(if self.slice == Slice::PsiZero { 0.0 } else { 0.1 });
        s.push(0.0);
        s
    }

    /// Maps parameters onto Eⁱ, clamping into range.
    pub fn point(&self, p: &[f64]) -> Result<(DVector<f64>, Point, f64)> {
        let r = self.rank();
        let dim = self.space.domain.dim();
        let mut u = DVector::from_column_slice(&p[..r]);
        let n = u.norm();
        if n > 0.0 {
            u /= n;
        } else {
            u[0] = 1.0;
        }
        let d = &self.space.domain;
        let x: Point = (0..dim).map(|k| p[r + k].clamp(d.lower[k], d.upper[k])).collect();
        let mut t = if self.slice == Slice::PsiZero { 1.0 } else { p[r + dim].clamp(0.0, 1.0) };
        let k = self.space.section(&x)?;
        let q = k.dot(&(&self.space.gram_local * &k));
        if !(q > 1e-300) {
            t = 1.0;
        }
        let alpha = self.metric.from_coords(&u) * t.sqrt();
        let y = if t < 1.0 { p[r + dim + 1].signum() * ((1.0 - t) / q).sqrt() } else { 0.0 };
        Ok((alpha, x, y))
    }

    /// ‖T̄[f; ψ]‖² / (‖f‖² + ‖ψ‖²) at a parameter vector.
    pub fn ratio(&self, rho: f64, p: &[f64]) -> f64 {
        match self.point(p) {
            Ok((alpha, x, y)) => {
                let num = phi(self.space, rho, &alpha, &x, y).unwrap_or(0.0);
                let den = self.metric.norm(&alpha).powi(2) + psi_norm(self.space, &x, y).unwrap_or(0.0).powi(2);
                if den > 0.0 {
                    num / den
                } else {
                    0.0
                }
            }
            Err(_) => 0.0,
        }
    }
}

/// Best-of-samples search followed by coordinate ascent on the top
/// candidates.  Shared by every sampled norm estimator.
pub(crate) fn sample_and_refine(
    cfg: &SamplingConfig,
    purpose: u64,
    draw: impl Fn(&mut rand_chacha::ChaCha8Rng) -> Vec<f64>,
    steps: &[f64],
    eval: impl Fn(&[f64]) -> f64,
) -> (f64, Vec<f64>, usize) {
    let mut scored: Vec<(f64, Vec<f64>)> = (0..cfg.samples.max(1))
        .map(|j| {
            let mut rng = sampling::stream(cfg.seed, purpose, j as u64);
            let p = draw(&mut rng);
            (eval(&p), p)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut best = scored[0].clone();
    let mut iters = 0;
    for (v0, p0) in scored.into_iter().take(cfg.refine_top) {
        let mut p = p0;
        let (v, n) = sampling::coordinate_ascent(&mut p, steps, cfg.refine_iters, &eval);
        iters += n;
        if v.max(v0) > best.0 {
            best = (v.max(v0), p);
        }
    }
    (best.0, best.1, iters)
}

pub fn estimate_tbar_norm(space: &KnowledgeSpace, rho: f64, cfg: &SamplingConfig) -> Result<OperatorNormEstimate> {
    let set = AgentSet::new(space, cfg.slice)?;
    let (ratio, p, iters) = sample_and_refine(cfg, tag::AGENT_NORM, |rng| set.draw(rng), &set.steps(), |p| set.ratio(rho, p));
    let (alpha, x, y) = set.point(&p)?;
    Ok(OperatorNormEstimate {
        value: ratio.max(0.0).sqrt(),
        sup_ratio: ratio,
        samples: cfg.samples.max(1),
        refinement_iters: iters,
        argmax_witness: Witness::Agent { alpha, x, y },
        seed: cfg.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spaces::{build_knowledge_space, DomainBox, FeatureDescriptor};
    use approx::assert_relative_eq;

    fn scalar_space() -> KnowledgeSpace {
        // K(x, y) = xy, x̄ = 1, Gram [1]
        build_knowledge_space(1, vec![FeatureDescriptor::monomial(1)], DomainBox::interval(0.0, 3.0), Some(vec![vec![1.0]])).unwrap()
    }

    #[test]
    fn schedules() {
        assert_eq!(RhoSchedule::Power { rho0: 1.0, p: 2.0 }.value(3), 9.0);
        assert_eq!(RhoSchedule::Geometric { rho0: 2.0, r: 3.0 }.value(3), 18.0);
        let e = RhoSchedule::Explicit { values: vec![1.0, 2.0] };
        assert_eq!(e.value(5), 2.0);
        assert!(!e.diverges());
        assert!(RhoSchedule::Explicit { values: vec![2.0, 1.0] }.validate().is_err());
        assert!(RhoSchedule::Power { rho0: 0.0, p: 1.0 }.validate().is_err());
    }

    #[test]
    fn psi_hand_values() {
        let s = scalar_space();
        // y·K(2, 1) = 6·2
        let psi = psi_embed(&s, &[2.0], 6.0).unwrap();
        assert_eq!(psi.function.coefficients[0], 12.0);
        assert_eq!(psi_embed(&s, &[2.0], 0.0).unwrap().function.coefficients[0], 0.0);
        let doubled = psi_embed(&s, &[2.0], 12.0).unwrap();
        assert_eq!(doubled.function.coefficients, psi.function.coefficients * 2.0);
    }

    #[test]
    fn local_update_scalar_hand_solve() {
        let s = scalar_space();
        let f0 = RkhsFunction::zero(&s);
        // (1 + 4)⁻¹ · 12; the jitter 1e−10 moves it by ~1e−11
        let f = local_update(&s, &f0, &[2.0], 6.0, 1.0).unwrap();
        assert_relative_eq!(f.coefficients[0], 2.4, epsilon = 1e-9);
        let via_op = apply_tbar(&s, 1.0, &f0, &psi_embed(&s, &[2.0], 6.0).unwrap()).unwrap();
        assert_eq!(via_op, f);
    }

    #[test]
    fn huge_rho_keeps_prior() {
        let s = scalar_space();
        let prev = RkhsFunction::new(s.tag(), DVector::from_element(1, 0.7)).unwrap();
        let f = local_update(&s, &prev, &[2.0], 6.0, 1e12).unwrap();
        assert_relative_eq!(f.coefficients[0], 0.7, max_relative = 1e-6);
    }

    #[test]
    fn zero_in_zero_out() {
        let s = scalar_space();
        let f0 = RkhsFunction::zero(&s);
        assert_eq!(local_update(&s, &f0, &[1.5], 0.0, 3.0).unwrap(), f0);
        let psi0 = psi_embed(&s, &[1.5], 0.0).unwrap();
        assert_eq!(apply_tbar(&s, 3.0, &f0, &psi0).unwrap(), f0);
    }

    #[test]
    fn missing_provenance_is_an_error() {
        let s = scalar_space();
        let f0 = RkhsFunction::zero(&s);
        let psi = Psi::from_function(RkhsFunction::zero(&s));
        assert!(matches!(apply_tbar(&s, 1.0, &f0, &psi), Err(Error::MissingProvenance)));
    }

    #[test]
    fn nonpositive_rho_rejected() {
        let s = scalar_space();
        assert!(local_update(&s, &RkhsFunction::zero(&s), &[1.0], 1.0, 0.0).is_err());
    }

    #[test]
    fn estimate_is_deterministic_and_bounded_by_exact() {
        let s = scalar_space();
        let cfg = SamplingConfig { samples: 200, seed: 11, ..Default::default() };
        let a = estimate_tbar_norm(&s, 2.0, &cfg).unwrap();
        let b = estimate_tbar_norm(&s, 2.0, &cfg).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        let exact = (0..=30_000).map(|j| tbar_norm_at(&s, 2.0, &[3.0 * j as f64 / 30_000.0]).unwrap()).fold(0.0, f64::max);
        assert!(a.value <= exact + 1e-7, "{} vs {exact}", a.value);
        assert!(a.value >= exact - 1e-3, "{} vs {exact}", a.value);
    }
}

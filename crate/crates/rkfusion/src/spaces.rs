//! Knowledge spaces, the fusion space, and the coordinate plumbing between
//! them.  Functions are coefficient vectors over kernel sections at basis
//! points; the Gram matrices are the metric.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::{self, Metric, CLAMP};
use crate::sampling;
use crate::{Error, Result};

pub type Point = Vec<f64>;

/// One feature φ: X → ℝ.  Monomials and sinusoids act on a single
/// coordinate (`axis`, default 0); gaussians use the full Euclidean distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum FeatureDescriptor {
    Monomial {
        degree: u32,
        #[serde(default)]
        axis: usize,
    },
    Gaussian {
        center: Vec<f64>,
        width: f64,
    },
    Sinusoid {
        frequency: f64,
        phase: f64,
        #[serde(default)]
        axis: usize,
    },
}

impl FeatureDescriptor {
    pub fn monomial(degree: u32) -> Self {
        FeatureDescriptor::Monomial { degree, axis: 0 }
    }

    pub fn gaussian(center: Vec<f64>, width: f64) -> Self {
        FeatureDescriptor::Gaussian { center, width }
    }

    pub fn sinusoid(frequency: f64, phase: f64) -> Self {
        FeatureDescriptor::Sinusoid { frequency, phase, axis: 0 }
    }

    fn check(&self, dim: usize) -> Result<()> {
        match self {
            FeatureDescriptor::Monomial { axis, .. } | FeatureDescriptor::Sinusoid { axis, .. } if *axis >= dim => {
                Err(Error::InvalidFeature(format!("axis {axis} out of range for dimension {dim}")))
            }
            FeatureDescriptor::Gaussian { width, .. } if !(*width > 0.0) => {
                Err(Error::InvalidFeature(format!("gaussian width must be positive, got {width}")))
            }
            FeatureDescriptor::Gaussian { center, .. } if center.len() != dim => {
                Err(Error::InvalidFeature(format!("gaussian center has dimension {}, domain has {dim}", center.len())))
            }
            FeatureDescriptor::Sinusoid { frequency, phase, .. } if !frequency.is_finite() || !phase.is_finite() => {
                Err(Error::InvalidFeature("sinusoid parameters must be finite".into()))
            }
            _ => Ok(()),
        }
    }
}

pub fn eval_feature(desc: &FeatureDescriptor, x: &[f64]) -> Result<f64> {
    let v = match desc {
        FeatureDescriptor::Monomial { degree, axis } => x[*axis].powi(*degree as i32),
        FeatureDescriptor::Gaussian { center, width } => {
            let d2: f64 = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
            (-d2 / (2.0 * width * width)).exp()
        }
        FeatureDescriptor::Sinusoid { frequency, phase, axis } => (frequency * x[*axis] + phase).sin(),
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Domain { x: x.to_vec() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl DomainBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let b = DomainBox { lower, upper };
        b.validate()?;
        Ok(b)
    }

    pub fn interval(a: f64, b: f64) -> Self {
        DomainBox { lower: vec![a], upper: vec![b] }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = !self.lower.is_empty()
            && self.lower.len() == self.upper.len()
            && self.lower.iter().zip(&self.upper).all(|(a, b)| a.is_finite() && b.is_finite() && a < b);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("domain box needs lower < upper componentwise: {self:?}")))
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (a, b))| *a <= *v && *v <= *b)
    }

    pub fn require(&self, x: &[f64]) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::OutsideDomain { x: x.to_vec() })
        }
    }

    pub fn diameter(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(a, b)| (b - a) * (b - a)).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpaceTag {
    Agent(usize),
    Fusion,
}

impl fmt::Display for SpaceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpaceTag::Agent(i) => write!(f, "agent{i}"),
            SpaceTag::Fusion => write!(f, "fusion"),
        }
    }
}

/// A function α ↦ Σ α_j K(·, x̄_j) in some hosting space.
#[derive(Debug, Clone, PartialEq)]
pub struct RkhsFunction {
    pub tag: SpaceTag,
    pub coefficients: DVector<f64>,
}

impl RkhsFunction {
    pub fn new(tag: SpaceTag, coefficients: DVector<f64>) -> Result<Self> {
        if coefficients.iter().all(|v| v.is_finite()) {
            Ok(RkhsFunction { tag, coefficients })
        } else {
            Err(Error::NonFinite)
        }
    }

    pub fn zero(host: &impl Host) -> Self {
        RkhsFunction { tag: host.tag(), coefficients: DVector::zeros(host.basis_count()) }
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }
}

/// Anything that hosts functions: a kernel, basis points and their Gram.
pub trait Host {
    fn tag(&self) -> SpaceTag;
    fn domain(&self) -> &DomainBox;
    fn basis(&self) -> &[Point];
    fn gram(&self) -> &DMatrix<f64>;
    fn kernel_unchecked(&self, x: &[f64], y: &[f64]) -> Result<f64>;

    fn basis_count(&self) -> usize {
        self.basis().len()
    }

    fn accepts(&self, f: &RkhsFunction) -> Result<()> {
        if f.tag != self.tag() {
            return Err(Error::SpaceMismatch { expected: self.tag().to_string(), got: f.tag.to_string() });
        }
        if f.len() != self.basis_count() {
            return Err(Error::Length { expected: self.basis_count(), got: f.len() });
        }
        Ok(())
    }

    /// [K(x, x̄_1), …, K(x, x̄_m)].
    fn section(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.domain().require(x)?;
        let b = self.basis();
        let mut v = DVector::zeros(b.len());
        for (j, p) in b.iter().enumerate() {
            v[j] = self.kernel_unchecked(x, p)?;
        }
        Ok(v)
    }
}

pub fn kernel_eval(host: &impl Host, x: &[f64], y: &[f64]) -> Result<f64> {
    host.domain().require(x)?;
    host.domain().require(y)?;
    host.kernel_unchecked(x, y)
}

pub fn rkhs_inner(host: &impl Host, f: &RkhsFunction, g: &RkhsFunction) -> Result<f64> {
    host.accepts(f)?;
    host.accepts(g)?;
    Ok(f.coefficients.dot(&(host.gram() * &g.coefficients)))
}

pub fn rkhs_norm(host: &impl Host, f: &RkhsFunction) -> Result<f64> {
    Ok(rkhs_inner(host, f, f)?.max(0.0).sqrt())
}

pub fn evaluate(host: &impl Host, f: &RkhsFunction, x: &[f64]) -> Result<f64> {
    host.accepts(f)?;
    Ok(host.section(x)?.dot(&f.coefficients))
}

/// The kernel section K(·, x) written in the host's basis (minimum-norm
/// coefficients; exact whenever the basis spans the space).
pub fn section_function(host: &impl Host, x: &[f64]) -> Result<RkhsFunction> {
    let k = host.section(x)?;
    let c = linalg::pinv_sym(host.gram(), CLAMP) * k;
    RkhsFunction::new(host.tag(), c)
}

/// Gram matrix of a feature dictionary's kernel between two point lists.
fn feature_matrix(features: &[FeatureDescriptor], points: &[Point]) -> Result<DMatrix<f64>> {
    let mut phi = DMatrix::zeros(features.len(), points.len());
    for (j, p) in points.iter().enumerate() {
        for (l, f) in features.iter().enumerate() {
            phi[(l, j)] = eval_feature(f, p)?;
        }
    }
    Ok(phi)
}

/// Default relative threshold σ_min/σ_max for dictionary independence.
pub const INDEPENDENCE_TOL: f64 = 1e-8;

/// Checks linear independence on a Halton design of ≥ 3·|𝓘| points.  On
/// failure reports the first index whose prefix becomes dependent.
pub fn check_independent(features: &[FeatureDescriptor], domain: &DomainBox, tol: f64) -> Result<()> {
    let n = (3 * features.len()).max(8) + 8;
    let pts: Vec<Point> = (1..=n as u64).map(|i| sampling::halton(i, domain)).collect();
    let phi = feature_matrix(features, &pts)?;
    let ratio = |rows: usize| {
        let sv = phi.rows(0, rows).into_owned().singular_values();
        let hi = sv.max();
        if hi > 0.0 {
            sv.min() / hi
        } else {
            0.0
        }
    };
    if ratio(features.len()) > tol {
        return Ok(());
    }
    let index = (1..=features.len()).find(|&r| ratio(r) <= tol).unwrap_or(features.len()) - 1;
    Err(Error::DependentFeatures { index, ratio: ratio(index + 1) })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeSpace {
    pub agent_id: usize,
    pub features: Vec<FeatureDescriptor>,
    pub domain: DomainBox,
    pub basis_points: Vec<Point>,
    pub gram_local: DMatrix<f64>,
    pub jitter: f64,
    pub kernel_scale: f64,
}

fn check_distinct(points: &[Point], label: &str) -> Result<()> {
    for i in 0..points.len() {
        for j in 0..i {
            if points[i] == points[j] {
                return Err(Error::BasisPoints(format!("{label}: repeated point {:?}", points[i])));
            }
        }
    }
    Ok(())
}

impl KnowledgeSpace {
    pub fn feature_count(&self) -> usize {
        self.features.len()
    }

    /// Scaled feature map: K(x, y) = ⟨Φ(x), Φ(y)⟩ with the global scale folded in.
    pub fn feature_values(&self, x: &[f64]) -> Result<DVector<f64>> {
        let s = self.kernel_scale.sqrt();
        let mut v = DVector::zeros(self.features.len());
        for (l, f) in self.features.iter().enumerate() {
            v[l] = s * eval_feature(f, x)?;
        }
        Ok(v)
    }

    /// Gram with the jitter added; this is the matrix every local solve uses.
    pub fn gram_jittered(&self) -> DMatrix<f64> {
        let m = self.gram_local.nrows();
        &self.gram_local + DMatrix::identity(m, m) * self.jitter
    }

    pub fn with_basis(&self, basis: Vec<Point>) -> Result<Self> {
        build_space_raw(self.agent_id, self.features.clone(), self.domain.clone(), basis, self.kernel_scale)
    }

    pub fn with_kernel_scale(&self, scale: f64) -> Result<Self> {
        build_space_raw(self.agent_id, self.features.clone(), self.domain.clone(), self.basis_points.clone(), scale)
    }

    pub fn metric(&self) -> Metric {
        Metric::new(&self.gram_local, CLAMP)
    }
}

impl Host for KnowledgeSpace {
    fn tag(&self) -> SpaceTag {
        SpaceTag::Agent(self.agent_id)
    }
    fn domain(&self) -> &DomainBox {
        &self.domain
    }
    fn basis(&self) -> &[Point] {
        &self.basis_points
    }
    fn gram(&self) -> &DMatrix<f64> {
        &self.gram_local
    }
    fn kernel_unchecked(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let mut acc = 0.0;
        for f in &self.features {
            acc += eval_feature(f, x)? * eval_feature(f, y)?;
        }
        Ok(self.kernel_scale * acc)
    }
}

fn build_space_raw(
    agent_id: usize,
    features: Vec<FeatureDescriptor>,
    domain: DomainBox,
    basis_points: Vec<Point>,
    kernel_scale: f64,
) -> Result<KnowledgeSpace> {
    for p in &basis_points {
        domain.require(p)?;
    }
    check_distinct(&basis_points, "basis")?;
    let mut ks = KnowledgeSpace {
        agent_id,
        features,
        domain,
        basis_points,
        gram_local: DMatrix::zeros(0, 0),
        jitter: 0.0,
        kernel_scale,
    };
    let m = ks.basis_points.len();
    let mut g = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..=i {
            let v = ks.kernel_unchecked(&ks.basis_points[i], &ks.basis_points[j])?;
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    let trace = g.trace();
    if m > 0 && !(trace > 0.0) {
        return Err(Error::Singular { what: format!("agent {agent_id} Gram (all features vanish on the basis)"), cond: f64::INFINITY });
    }
    ks.jitter = if m > 0 { 1e-10 * trace / m as f64 } else { 0.0 };
    ks.gram_local = g;
    Ok(ks)
}

/// Builds an agent space.  Without explicit basis points, |𝓘| points are
/// chosen greedily for the agent's own kernel; the fusion construction
/// replaces them with a joint m-point selection.
pub fn build_knowledge_space(
    agent_id: usize,
    features: Vec<FeatureDescriptor>,
    domain: DomainBox,
    basis_points: Option<Vec<Point>>,
) -> Result<KnowledgeSpace> {
    if features.is_empty() {
        return Err(Error::InvalidFeature("at least one feature is required".into()));
    }
    domain.validate()?;
    for f in &features {
        f.check(domain.dim())?;
    }
    check_independent(&features, &domain, INDEPENDENCE_TOL)?;
    let basis = match basis_points {
        Some(b) => b,
        None => {
            let probe = build_space_raw(agent_id, features.clone(), domain.clone(), vec![], 1.0)?;
            let kern = |a: &[f64], b: &[f64]| probe.kernel_unchecked(a, b);
            let pool: Vec<Point> = (1..=256).map(|i| sampling::halton(i, &domain)).collect();
            greedy_select(&kern, &pool, &mut vec![false; pool.len()], features.len())?
        }
    };
    build_space_raw(agent_id, features, domain, basis, 1.0)
}

type KernelFn<'a> = dyn Fn(&[f64], &[f64]) -> Result<f64> + 'a;

/// Picks `count` pool points, each time maximizing λ_min of the Gram of the
/// points chosen so far.  `used` marks points unavailable to this call.
fn greedy_select(
    kern: &KernelFn,
    pool: &[Point],
    used: &mut [bool],
    count: usize,
) -> Result<Vec<Point>> {
    let mut chosen: Vec<usize> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut best: Option<(usize, f64)> = None;
        for c in 0..pool.len() {
            if used[c] {
                continue;
            }
            let idx: Vec<usize> = chosen.iter().copied().chain(std::iter::once(c)).collect();
            let g = gram_of(kern, pool, &idx)?;
            let lmin = linalg::lambda_min(&g);
            if best.is_none_or(|(_, b)| lmin > b) {
                best = Some((c, lmin));
            }
        }
        let (c, _) = best.ok_or_else(|| Error::BasisPoints("candidate pool exhausted".into()))?;
        used[c] = true;
        chosen.push(c);
    }
    Ok(chosen.into_iter().map(|i| pool[i].clone()).collect())
}

fn gram_of(kern: &KernelFn, pool: &[Point], idx: &[usize]) -> Result<DMatrix<f64>> {
    let n = idx.len();
    let mut g = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in 0..=a {
            let v = kern(&pool[idx[a]], &pool[idx[b]])?;
            g[(a, b)] = v;
            g[(b, a)] = v;
        }
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionConfig {
    /// Candidate points per attempt.
    pub pool: usize,
    pub max_attempts: usize,
    /// Largest admissible condition number of each block K̃ⁱ.
    pub cond_cap: f64,
    /// Rescale the kernel so max(λ_max(K̃¹), λ_max(K̃²)) = 1.
    pub normalize: bool,
    /// Fixed basis point sets (x̄¹, x̄²) instead of selection.
    pub basis: Option<(Vec<Point>, Vec<Point>)>,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig { pool: 256, max_attempts: 8, cond_cap: 1e8, normalize: true, basis: None }
    }
}

#[derive(Debug, Clone)]
pub struct FusionSpace {
    pub space1: KnowledgeSpace,
    pub space2: KnowledgeSpace,
    pub basis_points: Vec<Point>,
    pub gram_full: DMatrix<f64>,
    pub change_basis_1: DMatrix<f64>,
    pub change_basis_2: DMatrix<f64>,
    pub kernel_scale: f64,
    /// Kⁱ evaluated on all 2m basis points.
    pub agent_full: [DMatrix<f64>; 2],
    pub metric: Metric,
    pub cond_cap: f64,
}

impl Host for FusionSpace {
    fn tag(&self) -> SpaceTag {
        SpaceTag::Fusion
    }
    fn domain(&self) -> &DomainBox {
        &self.space1.domain
    }
    fn basis(&self) -> &[Point] {
        &self.basis_points
    }
    fn gram(&self) -> &DMatrix<f64> {
        &self.gram_full
    }
    fn kernel_unchecked(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        Ok(self.space1.kernel_unchecked(x, y)? + self.space2.kernel_unchecked(x, y)?)
    }
}

impl FusionSpace {
    /// dim H = |𝓘¹| + |𝓘²|, also the per-agent basis count.
    pub fn m(&self) -> usize {
        self.space1.basis_points.len()
    }

    pub fn agent(&self, i: usize) -> &KnowledgeSpace {
        match i {
            1 => &self.space1,
            2 => &self.space2,
            _ => panic!("agent index must be 1 or 2, got {i}"),
        }
    }

    pub fn change_basis(&self, i: usize) -> &DMatrix<f64> {
        match i {
            1 => &self.change_basis_1,
            2 => &self.change_basis_2,
            _ => panic!("agent index must be 1 or 2, got {i}"),
        }
    }

    fn offset(&self, i: usize) -> usize {
        (i - 1) * self.m()
    }

    /// Block K̃ⁱ of the full Gram (fusion kernel on x̄ⁱ).
    pub fn kt(&self, i: usize) -> DMatrix<f64> {
        let (o, m) = (self.offset(i), self.m());
        self.gram_full.view((o, o), (m, m)).into_owned()
    }

    /// Off-diagonal block K¹².
    pub fn k12(&self) -> DMatrix<f64> {
        let m = self.m();
        self.gram_full.view((0, m), (m, m)).into_owned()
    }

    /// Places α̂ into agent i's block of a 2m vector.
    pub fn lift(&self, i: usize, block: &DVector<f64>) -> DVector<f64> {
        let mut v = DVector::zeros(2 * self.m());
        v.rows_mut(self.offset(i), self.m()).copy_from(block);
        v
    }

    pub fn block(&self, i: usize, v: &DVector<f64>) -> DVector<f64> {
        v.rows(self.offset(i), self.m()).into_owned()
    }

    /// Rows of agent i's block of a 2m-row matrix.
    pub fn block_rows(&self, i: usize, a: &DMatrix<f64>) -> DMatrix<f64> {
        a.rows(self.offset(i), self.m()).into_owned()
    }
}

fn union_features(s1: &KnowledgeSpace, s2: &KnowledgeSpace) -> Vec<FeatureDescriptor> {
    s1.features.iter().chain(&s2.features).cloned().collect()
}

/// Solves K̃ Mⁱ = Gⁱ.
pub fn basis_change(kt: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(linalg::inverse_spd(kt, "fusion block K̃ⁱ")? * g)
}

pub fn build_fusion_space(s1: &KnowledgeSpace, s2: &KnowledgeSpace, cfg: &SelectionConfig) -> Result<FusionSpace> {
    if s1.domain != s2.domain {
        return Err(Error::InvalidArgument("agent spaces must share the domain box".into()));
    }
    if s1.agent_id != 1 || s2.agent_id != 2 {
        return Err(Error::InvalidArgument("expected agent ids 1 and 2".into()));
    }
    let domain = s1.domain.clone();
    check_independent(&union_features(s1, s2), &domain, INDEPENDENCE_TOL)?;
    let m = s1.feature_count() + s2.feature_count();
    let raw1 = s1.with_basis(vec![])?.with_kernel_scale(1.0)?;
    let raw2 = s2.with_basis(vec![])?.with_kernel_scale(1.0)?;
    let kern = |a: &[f64], b: &[f64]| Ok(raw1.kernel_unchecked(a, b)? + raw2.kernel_unchecked(a, b)?);

    let block_cond = |pts: &[Point]| -> Result<(f64, f64)> {
        let idx: Vec<usize> = (0..pts.len()).collect();
        let g = gram_of(&kern, pts, &idx)?;
        Ok((linalg::condition(&g), linalg::lambda_max(&g)))
    };

    let (x1, x2) = match &cfg.basis {
        Some((a, b)) => {
            if a.len() != m || b.len() != m {
                return Err(Error::BasisPoints(format!("each basis set needs m = {m} points")));
            }
            for p in a.iter().chain(b) {
                domain.require(p)?;
            }
            check_distinct(a, "x̄¹")?;
            check_distinct(b, "x̄²")?;
            if a.iter().any(|p| b.contains(p)) {
                return Err(Error::BasisPoints("x̄¹ and x̄² must be disjoint".into()));
            }
            let worst = block_cond(a)?.0.max(block_cond(b)?.0);
            if !(worst <= cfg.cond_cap) {
                return Err(Error::SelectionFailed { attempts: 1, best_cond: worst });
            }
            (a.clone(), b.clone())
        }
        None => {
            let mut best = f64::INFINITY;
            let mut found = None;
            for attempt in 0..cfg.max_attempts.max(1) {
                let start = 1 + (attempt * cfg.pool) as u64;
                let pool: Vec<Point> = (start..start + cfg.pool as u64).map(|i| sampling::halton(i, &domain)).collect();
                let mut used = vec![false; pool.len()];
                let a = greedy_select(&kern, &pool, &mut used, m)?;
                let b = greedy_select(&kern, &pool, &mut used, m)?;
                let worst = block_cond(&a)?.0.max(block_cond(&b)?.0);
                if worst <= cfg.cond_cap {
                    found = Some((a, b));
                    break;
                }
                best = best.min(worst);
            }
            found.ok_or(Error::SelectionFailed { attempts: cfg.max_attempts.max(1), best_cond: best })?
        }
    };

    let scale = if cfg.normalize { 1.0 / block_cond(&x1)?.1.max(block_cond(&x2)?.1) } else { 1.0 };
    let space1 = s1.with_kernel_scale(scale)?.with_basis(x1.clone())?;
    let space2 = s2.with_kernel_scale(scale)?.with_basis(x2.clone())?;
    let z: Vec<Point> = x1.iter().chain(&x2).cloned().collect();

    let n = z.len();
    let mut agent_full = [DMatrix::zeros(n, n), DMatrix::zeros(n, n)];
    for p in 0..n {
        for q in 0..=p {
            for (i, sp) in [&space1, &space2].into_iter().enumerate() {
                let v = sp.kernel_unchecked(&z[p], &z[q])?;
                agent_full[i][(p, q)] = v;
                agent_full[i][(q, p)] = v;
            }
        }
    }
    let gram_full = &agent_full[0] + &agent_full[1];
    let metric = Metric::new(&gram_full, CLAMP);
    if metric.rank != m {
        return Err(Error::Singular { what: format!("fusion Gram has rank {} instead of {m}", metric.rank), cond: f64::INFINITY });
    }

    let mut fs = FusionSpace {
        space1,
        space2,
        basis_points: z,
        gram_full,
        change_basis_1: DMatrix::zeros(m, m),
        change_basis_2: DMatrix::zeros(m, m),
        kernel_scale: scale,
        agent_full,
        metric,
        cond_cap: cfg.cond_cap,
    };
    for i in 1..=2 {
        let kt = fs.kt(i);
        let g = &fs.agent(i).gram_local;
        let mi = basis_change(&kt, g)?;
        let resid = (&kt * &mi - g).amax();
        if resid > 1e-8 {
            return Err(Error::Singular { what: format!("change of basis {i} (residual {resid:.3e})"), cond: linalg::condition(&kt) });
        }
        if i == 1 {
            fs.change_basis_1 = mi;
        } else {
            fs.change_basis_2 = mi;
        }
    }
    Ok(fs)
}

/// Mⁱ together with the coefficient map α ↦ α̂ = Mⁱα.
pub fn change_of_basis(fusion: &FusionSpace, agent_id: usize, alpha: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let mi = fusion.change_basis(agent_id).clone();
    let hat = &mi * alpha;
    (mi, hat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn mono(ds: &[u32]) -> Vec<FeatureDescriptor> {
        ds.iter().map(|&d| FeatureDescriptor::monomial(d)).collect()
    }

    #[test]
    fn feature_values() {
        assert_eq!(eval_feature(&FeatureDescriptor::monomial(1), &[2.0]).unwrap(), 2.0);
        assert_eq!(eval_feature(&FeatureDescriptor::monomial(0), &[7.0]).unwrap(), 1.0);
        assert_eq!(eval_feature(&FeatureDescriptor::gaussian(vec![0.0], 1.0), &[0.0]).unwrap(), 1.0);
        // sin(π/2 + 0) by hand
        let s = eval_feature(&FeatureDescriptor::sinusoid(std::f64::consts::PI, 0.0), &[0.5]).unwrap();
        assert_relative_eq!(s, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn overflow_is_domain_error() {
        let r = eval_feature(&FeatureDescriptor::monomial(400), &[10.0]);
        assert!(matches!(r, Err(Error::Domain { .. })));
    }

    #[test]
    fn kernel_hand_values() {
        let d = DomainBox::interval(0.0, 2.0);
        let s = build_knowledge_space(1, mono(&[0, 1]), d.clone(), Some(vec![vec![0.5]])).unwrap();
        assert_eq!(kernel_eval(&s, &[1.0], &[2.0]).unwrap(), 3.0);
        let s = build_knowledge_space(1, mono(&[1]), d.clone(), Some(vec![vec![0.5]])).unwrap();
        assert_eq!(kernel_eval(&s, &[0.0], &[0.0]).unwrap(), 0.0);
        let s = build_knowledge_space(2, mono(&[2]), d, Some(vec![vec![0.5]])).unwrap();
        assert_eq!(kernel_eval(&s, &[1.0], &[2.0]).unwrap(), 4.0);
    }

    #[test]
    fn gram_of_quadratic_dictionary() {
        let d = DomainBox::interval(0.0, 2.0);
        let s = build_knowledge_space(1, mono(&[0, 1, 2]), d, Some(vec![vec![0.0], vec![1.0], vec![2.0]])).unwrap();
        let expect = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 1.0, 1.0, 3.0, 7.0, 1.0, 7.0, 21.0]);
        assert_eq!(s.gram_local, expect);
        assert_eq!(s.feature_count(), 3);
    }

    #[test]
    fn dependent_dictionary_names_index() {
        let d = DomainBox::interval(0.0, 2.0);
        let feats = vec![
            FeatureDescriptor::monomial(1),
            FeatureDescriptor::Sinusoid { frequency: 0.0, phase: 0.5, axis: 0 },
            FeatureDescriptor::monomial(1),
        ];
        let err = build_knowledge_space(1, feats, d, None).unwrap_err();
        assert!(matches!(err, Error::DependentFeatures { index: 2, .. }), "{err}");
        assert!(err.to_string().contains("linearly dependent"));
    }

    #[test]
    fn invalid_gaussian_width() {
        let d = DomainBox::interval(0.0, 2.0);
        let err = build_knowledge_space(1, vec![FeatureDescriptor::gaussian(vec![0.0], 0.0)], d, None).unwrap_err();
        assert!(matches!(err, Error::InvalidFeature(_)));
    }

    #[test]
    fn inner_and_evaluate_scalar_case() {
        let d = DomainBox::interval(0.0, 2.0);
        let s = build_knowledge_space(1, mono(&[1]), d, Some(vec![vec![1.0]])).unwrap();
        let f = RkhsFunction::new(s.tag(), DVector::from_element(1, 2.4)).unwrap();
        assert_relative_eq!(rkhs_inner(&s, &f, &f).unwrap(), 5.76, epsilon = 1e-14);
        assert_relative_eq!(evaluate(&s, &f, &[2.0]).unwrap(), 4.8, epsilon = 1e-14);
        let z = RkhsFunction::zero(&s);
        assert_eq!(rkhs_inner(&s, &z, &f).unwrap(), 0.0);
        assert_eq!(evaluate(&s, &z, &[1.3]).unwrap(), 0.0);
    }

    #[test]
    fn basis_pairing_reads_gram_entry() {
        let d = DomainBox::interval(0.0, 2.0);
        let s = build_knowledge_space(1, mono(&[0, 1, 2]), d, Some(vec![vec![0.0], vec![1.0], vec![2.0]])).unwrap();
        let e = |k: usize| {
            let mut v = DVector::zeros(3);
            v[k] = 1.0;
            RkhsFunction::new(s.tag(), v).unwrap()
        };
        assert_eq!(rkhs_inner(&s, &e(0), &e(1)).unwrap(), s.gram_local[(0, 1)]);
        // unit coefficient at x̄_j evaluated at x̄_k
        assert_eq!(evaluate(&s, &e(1), &[2.0]).unwrap(), s.gram_local[(2, 1)]);
    }

    #[test]
    fn space_mismatch_rejected() {
        let d = DomainBox::interval(0.0, 2.0);
        let s = build_knowledge_space(1, mono(&[1]), d, Some(vec![vec![1.0]])).unwrap();
        let f = RkhsFunction::new(SpaceTag::Agent(2), DVector::from_element(1, 1.0)).unwrap();
        assert!(matches!(rkhs_inner(&s, &f, &f), Err(Error::SpaceMismatch { .. })));
    }

    #[test]
    fn non_finite_coefficients_rejected() {
        assert!(RkhsFunction::new(SpaceTag::Fusion, DVector::from_element(2, f64::NAN)).is_err());
    }

    #[test]
    fn identical_kernels_give_identity_change_of_basis() {
        let g = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let m = basis_change(&g, &g).unwrap();
        assert_relative_eq!(m, DMatrix::identity(2, 2), epsilon = 1e-14);
    }

    fn fixture() -> FusionSpace {
        let d = DomainBox::interval(0.0, 2.0);
        let s1 = build_knowledge_space(1, mono(&[0, 1]), d.clone(), None).unwrap();
        let s2 = build_knowledge_space(2, mono(&[2]), d, None).unwrap();
        build_fusion_space(&s1, &s2, &SelectionConfig::default()).unwrap()
    }

    #[test]
    fn fusion_dimensions_and_normalization() {
        let fs = fixture();
        assert_eq!(fs.m(), 3);
        assert_eq!(fs.gram_full.shape(), (6, 6));
        let top = linalg::lambda_max(&fs.kt(1)).max(linalg::lambda_max(&fs.kt(2)));
        assert_relative_eq!(top, 1.0, epsilon = 1e-12);
        for i in 1..=2 {
            assert!(linalg::condition(&fs.kt(i)) <= 1e8);
        }
        for p in &fs.space1.basis_points {
            assert!(!fs.space2.basis_points.contains(p));
        }
    }

    #[test]
    fn explicit_basis_with_repeat_is_rejected() {
        let d = DomainBox::interval(0.0, 2.0);
        let s1 = build_knowledge_space(1, mono(&[0, 1]), d.clone(), None).unwrap();
        let s2 = build_knowledge_space(2, mono(&[2]), d, None).unwrap();
        let cfg = SelectionConfig {
            basis: Some((vec![vec![0.0], vec![0.0], vec![2.0]], vec![vec![0.5], vec![1.5], vec![0.25]])),
            ..Default::default()
        };
        assert!(matches!(build_fusion_space(&s1, &s2, &cfg), Err(Error::BasisPoints(_))));
    }

    #[test]
    fn overlapping_dictionaries_rejected() {
        let d = DomainBox::interval(0.0, 2.0);
        let s1 = build_knowledge_space(1, mono(&[0, 1]), d.clone(), None).unwrap();
        let s2 = build_knowledge_space(2, mono(&[1]), d, None).unwrap();
        let err = build_fusion_space(&s1, &s2, &SelectionConfig::default()).unwrap_err();
        assert!(matches!(err, Error::DependentFeatures { index: 2, .. }));
    }

    #[test]
    fn change_of_basis_maps_zero_to_zero() {
        let fs = fixture();
        let (_, hat) = change_of_basis(&fs, 2, &DVector::zeros(3));
        assert_eq!(hat, DVector::zeros(3));
    }

    #[test]
    fn sum_rule_is_exact() {
        let fs = fixture();
        for (x, y) in [(0.1, 1.9), (0.7, 0.7), (2.0, 0.0)] {
            let k = kernel_eval(&fs, &[x], &[y]).unwrap();
            let k1 = kernel_eval(&fs.space1, &[x], &[y]).unwrap();
            let k2 = kernel_eval(&fs.space2, &[x], &[y]).unwrap();
            assert_eq!(k, k1 + k2);
        }
    }
}

//! The iteration driver and the checks that run on its traces: stopping
//! rule, input-sequence validity, bounded-product subsequences, the
//! uniform trace bound, and the Cauchy probe.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::agent::{self, DataPoint, RhoSchedule};
use crate::fusion::{self, VirtualTargets};
use crate::sampling::SamplingConfig;
use crate::spaces::{rkhs_norm, FusionSpace, Host, KnowledgeSpace, RkhsFunction};
use crate::transfer::{self, TransferOperators, RANK_TOL};
use crate::{Error, Result};

/// A fusion space with its transfer operators and the stage norms that do
/// not depend on ρ.
#[derive(Debug, Clone)]
pub struct Model {
    pub fusion: FusionSpace,
    pub ops: TransferOperators,
    pub upload_norms: [f64; 2],
    pub download_norm: f64,
}

impl Model {
    pub fn new(fusion: FusionSpace) -> Result<Self> {
        let ops = transfer::build_transfer(&fusion, RANK_TOL)?;
        let upload_norms = [transfer::upload_norm(&fusion, 1), transfer::upload_norm(&fusion, 2)];
        let download_norm = transfer::download_norm_exact(&fusion, &ops);
        Ok(Model { fusion, ops, upload_norms, download_norm })
    }

    pub fn agent(&self, i: usize) -> &KnowledgeSpace {
        self.fusion.agent(i)
    }

    pub fn zero_pair(&self) -> [RkhsFunction; 2] {
        [RkhsFunction::zero(self.agent(1)), RkhsFunction::zero(self.agent(2))]
    }

    /// ‖(f¹; f²)‖ in H¹ × H².
    pub fn pair_norm(&self, pair: &[RkhsFunction; 2]) -> Result<f64> {
        Ok((rkhs_norm(self.agent(1), &pair[0])?.powi(2) + rkhs_norm(self.agent(2), &pair[1])?.powi(2)).sqrt())
    }

    pub fn pair_distance(&self, a: &[RkhsFunction; 2], b: &[RkhsFunction; 2]) -> Result<f64> {
        let d = |i: usize| -> Result<f64> {
            let diff = RkhsFunction::new(a[i].tag, &a[i].coefficients - &b[i].coefficients)?;
            rkhs_norm(self.agent(i + 1), &diff)
        };
        Ok((d(0)?.powi(2) + d(1)?.powi(2)).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmConfig {
    pub rho1: RhoSchedule,
    pub rho2: RhoSchedule,
    pub rho_fused: RhoSchedule,
    pub k_max: usize,
    pub epsilon: f64,
    pub max_iterations: usize,
    #[serde(default)]
    pub seed: u64,
    /// Estimate per-iteration stage norms and evaluate the trace bound.
    #[serde(default)]
    pub bound_check: bool,
    /// Sampling used for per-iteration norm estimates.
    #[serde(default = "default_step_sampling")]
    pub step_sampling: SamplingConfig,
    /// Keep every `snapshot_stride`-th iterate for export (0 disables).
    #[serde(default)]
    pub snapshot_stride: usize,
}

fn default_step_sampling() -> SamplingConfig {
    SamplingConfig { samples: 300, refine_top: 2, refine_iters: 40, ..Default::default() }
}

impl AlgorithmConfig {
    pub fn validate(&self) -> Result<()> {
        for s in [&self.rho1, &self.rho2, &self.rho_fused] {
            s.validate()?;
        }
        if self.k_max < 1 {
            return Err(Error::InvalidArgument("k_max must be at least 1".into()));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::InvalidArgument("epsilon must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn rho_triple(&self, n: usize) -> [f64; 3] {
        [self.rho1.value(n), self.rho2.value(n), self.rho_fused.value(n)]
    }
}

/// One (x, y) per agent per iteration.
pub trait DataSource {
    fn next_pair(&mut self, n: usize) -> Option<[DataPoint; 2]>;
}

/// A finite, pre-generated stream.
pub struct VecSource {
    pub data: Vec<[DataPoint; 2]>,
}

impl DataSource for VecSource {
    fn next_pair(&mut self, n: usize) -> Option<[DataPoint; 2]> {
        self.data.get(n - 1).cloned()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationOutput {
    pub local: [RkhsFunction; 2],
    pub uploaded: [RkhsFunction; 2],
    pub targets: VirtualTargets,
    pub fused: RkhsFunction,
    pub down: [RkhsFunction; 2],
}

/// local update ×2, upload ×2, virtual targets ×2, fuse, download.
pub fn run_iteration(model: &Model, state: &[RkhsFunction; 2], data: &[DataPoint; 2], rho: [f64; 3]) -> Result<IterationOutput> {
    let fs = &model.fusion;
    let local = [
        agent::local_update(fs.agent(1), &state[0], &data[0].x, data[0].y, rho[0])?,
        agent::local_update(fs.agent(2), &state[1], &data[1].x, data[1].y, rho[1])?,
    ];
    let uploaded = [transfer::upload(fs, &local[0])?, transfer::upload(fs, &local[1])?];
    let targets = fusion::build_targets(fs, [&uploaded[0], &uploaded[1]], [rho[2], rho[2]])?;
    let fused = fusion::fuse(fs, &targets, rho[2])?;
    let down = transfer::download(fs, &model.ops, &fused)?;
    Ok(IterationOutput { local, uploaded, targets, fused, down })
}

/// Stage norm estimates for one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepNorms {
    pub tbar: [f64; 2],
    pub t: f64,
    pub t_hat: f64,
    /// Upper bound on ‖𝕋ₙ‖: ‖T̂‖·‖T‖·maxᵢ ‖L̂ⁱ‖‖T̄ⁱ‖.
    pub step: f64,
}

pub fn estimate_step_norms(model: &Model, rho: [f64; 3], sampling: &SamplingConfig, n: usize) -> Result<StepNorms> {
    let seed_for = |k: u64| sampling.seed.wrapping_mul(0x100_0000_01B3) ^ ((n as u64) << 8 | k);
    let est = |i: usize| agent::estimate_tbar_norm(model.agent(i), rho[i - 1], &sampling.clone().with_seed(seed_for(i as u64)));
    let tbar = [est(1)?.value, est(2)?.value];
    let t = fusion::estimate_t_norm(&model.fusion, rho[2], &sampling.clone().with_seed(seed_for(3)))?.value;
    let multi = (model.upload_norms[0] * tbar[0]).max(model.upload_norms[1] * tbar[1]);
    Ok(StepNorms { tbar, t, t_hat: model.download_norm, step: model.download_norm * t * multi })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub n: usize,
    pub rho: [f64; 3],
    pub data: [DataPoint; 2],
    pub local: [RkhsFunction; 2],
    pub fused: RkhsFunction,
    pub down: [RkhsFunction; 2],
    pub norm_local: [f64; 2],
    pub norm_fused: f64,
    pub norm_down: [f64; 2],
    pub psi: [f64; 2],
    pub step: Option<StepNorms>,
    pub bound_rhs: Option<f64>,
    pub stop_metric: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Criterion,
    Budget,
    DataExhausted,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StopReason::Criterion => "criterion",
            StopReason::Budget => "budget",
            StopReason::DataExhausted => "data-exhausted",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    pub f0: [RkhsFunction; 2],
    pub records: Vec<IterationRecord>,
    pub stop: StopReason,
    pub k_max: usize,
    pub snapshot_stride: usize,
}

impl IterationTrace {
    /// f̄ pairs indexed from n = 0 (the initial pair).
    pub fn downloads(&self) -> Vec<&[RkhsFunction; 2]> {
        std::iter::once(&self.f0).chain(self.records.iter().map(|r| &r.down)).collect()
    }

    pub fn final_stop_metric(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.stop_metric)
    }

    pub fn step_norms(&self) -> Option<Vec<f64>> {
        self.records.iter().map(|r| r.step.map(|s| s.step)).collect()
    }

    pub fn snapshots(&self) -> impl Iterator<Item = &IterationRecord> {
        let stride = self.snapshot_stride;
        self.records.iter().filter(move |r| stride > 0 && r.n % stride == 0)
    }
}

/// Σ_{j=0..k} ‖f̄¹_{j} − f̄¹_{0}‖ + ‖f̄²_{j} − f̄²_{0}‖ over a window of k + 1 pairs.
pub fn window_metric(model: &Model, window: &[&[RkhsFunction; 2]]) -> Result<f64> {
    let base = window[0];
    let mut s = 0.0;
    for w in window {
        for i in 0..2 {
            let diff = RkhsFunction::new(w[i].tag, &w[i].coefficients - &base[i].coefficients)?;
            s += rkhs_norm(model.agent(i + 1), &diff)?;
        }
    }
    Ok(s)
}

pub fn run(model: &Model, cfg: &AlgorithmConfig, source: &mut dyn DataSource, f0: [RkhsFunction; 2]) -> Result<IterationTrace> {
    cfg.validate()?;
    model.agent(1).accepts(&f0[0])?;
    model.agent(2).accepts(&f0[1])?;
    let mut history: Vec<[RkhsFunction; 2]> = vec![f0.clone()];
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut stop = StopReason::Budget;
    let mut rhs_prev = 0.0;
    let f0_norm = model.pair_norm(&f0)?;
    let sampling = SamplingConfig { seed: cfg.seed ^ cfg.step_sampling.seed, ..cfg.step_sampling.clone() };

    for n in 1..=cfg.max_iterations {
        let Some(data) = source.next_pair(n) else {
            stop = StopReason::DataExhausted;
            break;
        };
        let wrap = |e: Error| Error::Iteration { n, source: Box::new(e) };
        let rho = cfg.rho_triple(n);
        let state = history.last().expect("history starts with f0");
        let out = run_iteration(model, state, &data, rho).map_err(wrap)?;
        let psi = [
            agent::psi_norm(model.agent(1), &data[0].x, data[0].y).map_err(wrap)?,
            agent::psi_norm(model.agent(2), &data[1].x, data[1].y).map_err(wrap)?,
        ];
        let step = if cfg.bound_check { Some(estimate_step_norms(model, rho, &sampling, n).map_err(wrap)?) } else { None };
        let bound_rhs = step.map(|s| {
            let incoming = (psi[0] * psi[0] + psi[1] * psi[1]).sqrt();
            let v = if n == 1 { s.step * (f0_norm * f0_norm + incoming * incoming).sqrt() } else { s.step * (rhs_prev + incoming) };
            rhs_prev = v;
            v
        });
        let record = IterationRecord {
            n,
            rho,
            norm_local: [rkhs_norm(model.agent(1), &out.local[0])?, rkhs_norm(model.agent(2), &out.local[1])?],
            norm_fused: rkhs_norm(&model.fusion, &out.fused)?,
            norm_down: [rkhs_norm(model.agent(1), &out.down[0])?, rkhs_norm(model.agent(2), &out.down[1])?],
            data,
            local: out.local,
            fused: out.fused,
            down: out.down.clone(),
            psi,
            step,
            bound_rhs,
            stop_metric: None,
        };
        history.push(out.down);
        records.push(record);
        if n >= cfg.k_max {
            let window: Vec<&[RkhsFunction; 2]> = history[n - cfg.k_max..=n].iter().collect();
            let metric = window_metric(model, &window).map_err(wrap)?;
            records.last_mut().expect("just pushed").stop_metric = Some(metric);
            if metric < cfg.epsilon {
                stop = StopReason::Criterion;
                break;
            }
        }
    }
    Ok(IterationTrace { f0, records, stop, k_max: cfg.k_max, snapshot_stride: cfg.snapshot_stride })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Validity {
    ValidBounded,
    Inconclusive,
    Diverging,
}

impl std::fmt::Display for Validity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Validity::ValidBounded => "valid-bounded",
            Validity::Inconclusive => "inconclusive",
            Validity::Diverging => "diverging",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValiditySequenceReport {
    /// Σ_{k=2..n} (‖ψ¹_k‖² + ‖ψ²_k‖²) / denominator, for n = 2..horizon.
    pub partial_sums: Vec<f64>,
    pub terms: Vec<f64>,
    pub denominator: f64,
    /// Per-term geometric ratio estimated from the last two windows.
    pub tail_ratio: f64,
    pub verdict: Validity,
    pub c_estimate: Option<f64>,
}

/// Per-term ratios at or below this count as geometric decay; at or above
/// `DIVERGING_RATIO` the terms are taken as persistent.
pub const VALID_RATIO: f64 = 0.98;
pub const DIVERGING_RATIO: f64 = 0.99;

/// Per-term ratio implied by the sums of the last two windows of `w` terms.
/// Window sums average out the scatter that random inputs put into single
/// terms; `None` when both windows vanish.
fn window_ratio(terms: &[f64], w: usize) -> Option<(f64, f64)> {
    let n = terms.len();
    let last: f64 = terms[n - w..].iter().sum();
    let prev: f64 = terms[n - 2 * w..n - w].iter().sum();
    match (prev > 0.0, last > 0.0) {
        (_, false) => None,
        (false, true) => Some((f64::INFINITY, last)),
        (true, true) => Some(((last / prev).powf(1.0 / w as f64), last)),
    }
}

pub fn validate_sequence(
    spaces: [&KnowledgeSpace; 2],
    f0: &[RkhsFunction; 2],
    data: &[[DataPoint; 2]],
    horizon: usize,
) -> Result<ValiditySequenceReport> {
    if horizon < 10 {
        return Err(Error::HorizonTooShort(horizon));
    }
    if data.len() < horizon {
        return Err(Error::InvalidArgument(format!("data prefix has {} points, horizon is {horizon}", data.len())));
    }
    let psi_sq = |n: usize| -> Result<f64> {
        let d = &data[n - 1];
        Ok(agent::psi_norm(spaces[0], &d[0].x, d[0].y)?.powi(2) + agent::psi_norm(spaces[1], &d[1].x, d[1].y)?.powi(2))
    };
    let denominator = rkhs_norm(spaces[0], &f0[0])?.powi(2) + rkhs_norm(spaces[1], &f0[1])?.powi(2) + psi_sq(1)?;
    if !(denominator > 0.0) {
        return Err(Error::DenominatorVanishes);
    }
    let mut terms = Vec::with_capacity(horizon - 1);
    let mut partial_sums = Vec::with_capacity(horizon - 1);
    let mut acc = 0.0;
    for n in 2..=horizon {
        let t = psi_sq(n)? / denominator;
        acc += t;
        terms.push(t);
        partial_sums.push(acc);
    }
    let w = (terms.len() / 4).max(4);
    let (verdict, tail_ratio, c_estimate) = match window_ratio(&terms, w) {
        None => (Validity::ValidBounded, 0.0, Some(acc)),
        Some((r, last)) if r <= VALID_RATIO => {
            // remaining windows shrink by rʷ each
            let block = r.powi(w as i32);
            (Validity::ValidBounded, r, Some(acc + last * block / (1.0 - block)))
        }
        Some((r, _)) if r >= DIVERGING_RATIO => (Validity::Diverging, r, None),
        Some((r, _)) => (Validity::Inconclusive, r, None),
    };
    Ok(ValiditySequenceReport { partial_sums, terms, denominator, tail_ratio, verdict, c_estimate })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionVerdict {
    Selected,
    Empty,
    Pathological,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Subsequence {
    /// Positions in the input list (0-based).
    pub indices: Vec<usize>,
    pub c5: f64,
    pub c_m1: f64,
    pub c_m2: f64,
    pub verdict: SelectionVerdict,
    pub diagnostic: String,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// Greedy scan for aₙ with |aₙ/c₅ − 1| ≤ 2^{−l}, l = 1, 2, …
pub fn select_bounded_subsequence(norms: &[f64]) -> Result<Subsequence> {
    if norms.is_empty() || norms.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument("norms must be a nonempty list of finite nonnegative values".into()));
    }
    let q = norms.len().div_ceil(4);
    let c5 = median(norms[norms.len() - q..].to_vec());
    if c5 <= 1e-9 {
        return Ok(Subsequence {
            indices: vec![],
            c5,
            c_m1: 0.0,
            c_m2: 0.0,
            verdict: SelectionVerdict::Pathological,
            diagnostic: "limit estimate vanishes; degenerate case".into(),
        });
    }
    let mut indices = Vec::new();
    for (n, &a) in norms.iter().enumerate() {
        let l = indices.len() as i32 + 1;
        if (a / c5 - 1.0).abs() <= 2f64.powi(-l) {
            indices.push(n);
        }
    }
    if indices.is_empty() {
        return Ok(Subsequence {
            indices,
            c5,
            c_m1: 0.0,
            c_m2: 0.0,
            verdict: SelectionVerdict::Empty,
            diagnostic: format!("no norm within 1/2 of c5 = {c5:.6}"),
        });
    }
    let sel: Vec<f64> = indices.iter().map(|&i| norms[i]).collect();
    let (c_m1, c_m2) = product_constants(&sel);
    Ok(Subsequence { indices, c5, c_m1, c_m2, verdict: SelectionVerdict::Selected, diagnostic: String::new() })
}

/// (max prefix product, max window product) of a sequence.
pub fn product_constants(a: &[f64]) -> (f64, f64) {
    let mut c_m1 = 0.0_f64;
    let mut prefix = 1.0;
    for &v in a {
        prefix *= v;
        c_m1 = c_m1.max(prefix);
    }
    // best product ending at each position: max(a_l, a_l · best_{l−1})
    let mut c_m2 = 0.0_f64;
    let mut ending = 0.0_f64;
    for &v in a {
        ending = v.max(v * ending);
        c_m2 = c_m2.max(ending);
    }
    (c_m1, c_m2)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub rhs: Vec<f64>,
    pub realized: Vec<f64>,
    pub passed: Vec<bool>,
    /// √(‖f¹₀‖² + ‖ψ¹₁‖² + ‖f²₀‖² + ‖ψ²₁‖²)
    pub initial: f64,
    pub c_m1: f64,
    pub c_m2: f64,
    pub c_f0: f64,
    /// c_M1·initial + c_M2·Σₙ≥₂‖ψₙ‖, a bound for every iteration at once.
    pub uniform_constant: f64,
    pub uniform_holds: bool,
}

impl BoundReport {
    pub fn all_passed(&self) -> bool {
        self.passed.iter().all(|&p| p)
    }
}

/// Recomputes the per-iteration bound from the trace's stage estimates and
/// flags iterations where the realized pair norm exceeds it by more than
/// `tolerance` (relative).
pub fn bound_check(model: &Model, trace: &IterationTrace, tolerance: f64) -> Result<BoundReport> {
    let a: Vec<f64> = trace.step_norms().ok_or(Error::MissingEstimates)?;
    if a.is_empty() {
        return Err(Error::MissingEstimates);
    }
    let psi: Vec<f64> = trace.records.iter().map(|r| (r.psi[0].powi(2) + r.psi[1].powi(2)).sqrt()).collect();
    let f0 = model.pair_norm(&trace.f0)?;
    let initial = (f0 * f0 + psi[0] * psi[0]).sqrt();
    let mut rhs = Vec::with_capacity(a.len());
    let mut prev = 0.0;
    for n in 0..a.len() {
        let v = if n == 0 { a[0] * initial } else { a[n] * (prev + psi[n]) };
        rhs.push(v);
        prev = v;
    }
    let realized = trace.records.iter().map(|r| model.pair_norm(&r.down)).collect::<Result<Vec<f64>>>()?;
    let passed = realized.iter().zip(&rhs).map(|(g, b)| *g <= b * (1.0 + tolerance) + 1e-300).collect();
    // c_M2 ranges over products starting at j ≥ 2
    let (c_m1, _) = product_constants(&a);
    let (c_m2, _) = if a.len() > 1 { let (_, w) = product_constants(&a[1..]); (w, ()) } else { (0.0, ()) };
    let tail: f64 = psi.iter().skip(1).sum();
    let c_f0 = if initial > 0.0 { tail / initial } else if tail == 0.0 { 0.0 } else { f64::INFINITY };
    let uniform_constant = c_m1 * initial + c_m2 * tail;
    let uniform_holds = realized.iter().all(|g| *g <= uniform_constant * (1.0 + tolerance) + 1e-300);
    Ok(BoundReport { rhs, realized, passed, initial, c_m1, c_m2, c_f0, uniform_constant, uniform_holds })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeVerdict {
    Cauchy,
    NotYet,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeResult {
    pub verdict: ProbeVerdict,
    pub diameter: f64,
    /// Iteration numbers n of the window examined.
    pub window_iterations: Vec<usize>,
}

/// Every `stride`-th iteration starting at `offset` (iteration numbers,
/// 1-based, returned as 0-based record positions).
pub fn uniform_stride(len: usize, stride: usize, offset: usize) -> Vec<usize> {
    (offset..len).step_by(stride.max(1)).collect()
}

/// Bounded-subsequence selection on the trace's step norms, or a unit stride when
/// the trace carries none.
pub fn probe_subsequence(trace: &IterationTrace) -> Result<Vec<usize>> {
    match trace.step_norms() {
        Some(a) if !a.is_empty() => {
            let s = select_bounded_subsequence(&a)?;
            if s.verdict == SelectionVerdict::Selected {
                return Ok(s.indices);
            }
            Ok(uniform_stride(trace.records.len(), 1, 0))
        }
        _ => Ok(uniform_stride(trace.records.len(), 1, 0)),
    }
}

/// Largest pairwise distance among the last `window` subsequence iterates.
pub fn consistency_probe(model: &Model, trace: &IterationTrace, subsequence: &[usize], window: usize, epsilon: f64) -> Result<ProbeResult> {
    if window > subsequence.len() || window == 0 {
        return Err(Error::WindowTooLong { window, len: subsequence.len() });
    }
    let tail = &subsequence[subsequence.len() - window..];
    let mut diameter = 0.0_f64;
    for (a, &p) in tail.iter().enumerate() {
        for &q in &tail[..a] {
            diameter = diameter.max(model.pair_distance(&trace.records[p].down, &trace.records[q].down)?);
        }
    }
    Ok(ProbeResult {
        verdict: if diameter <= epsilon { ProbeVerdict::Cauchy } else { ProbeVerdict::NotYet },
        diameter,
        window_iterations: tail.iter().map(|&p| trace.records[p].n).collect(),
    })
}

/// Coefficients of the concatenated pair, for snapshots and comparisons.
pub fn pair_coefficients(pair: &[RkhsFunction; 2]) -> DVector<f64> {
    crate::linalg::stack(&pair[0].coefficients, &pair[1].coefficients)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn all_ones_select_everything() {
        let s = select_bounded_subsequence(&[1.0; 12]).unwrap();
        assert_eq!(s.indices, (0..12).collect::<Vec<_>>());
        assert_eq!((s.c_m1, s.c_m2), (1.0, 1.0));
    }

    #[test]
    fn zeros_are_pathological() {
        let s = select_bounded_subsequence(&[0.0; 8]).unwrap();
        assert_eq!(s.verdict, SelectionVerdict::Pathological);
    }

    #[test]
    fn nothing_near_c5_gives_empty_selection() {
        // c5 = 1 from the tail; earlier values are far away
        let mut v = vec![10.0; 9];
        v.extend([1.0, 1.0, 1.0]);
        let s = select_bounded_subsequence(&v).unwrap();
        assert_eq!(s.indices[0], 9);
        let s = select_bounded_subsequence(&[5.0, 5.0, 5.0, 0.001, 0.001, 0.001, 0.001, 0.001]).unwrap();
        assert!(s.indices.iter().all(|&i| i >= 3));
    }

    #[test]
    fn invalid_norms_rejected() {
        assert!(select_bounded_subsequence(&[]).is_err());
        assert!(select_bounded_subsequence(&[1.0, -0.5]).is_err());
    }

    #[test]
    fn product_constants_by_hand() {
        let (m1, m2) = product_constants(&[2.0, 0.5, 3.0, 0.1]);
        // prefixes 2, 1, 3, 0.3 ; best window 3 (or 2·0.5·3 = 3)
        assert_relative_eq!(m1, 3.0);
        assert_relative_eq!(m2, 3.0);
        let (m1, m2) = product_constants(&[0.5, 4.0]);
        assert_relative_eq!(m1, 2.0);
        assert_relative_eq!(m2, 4.0);
    }

    #[test]
    fn stride_positions() {
        assert_eq!(uniform_stride(7, 2, 1), vec![1, 3, 5]);
        assert_eq!(uniform_stride(3, 0, 0), vec![0, 1, 2]);
    }
}

//! Numerical checks of the asymptotic claims: operator-norm sweeps over ρ,
//! the inverse-perturbation inequality, uniform convergence of the fusion
//! and agent maps, and an equicontinuity probe.

use std::cell::Cell;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::agent::{self, sample_and_refine, AgentSet, OperatorNormEstimate, Witness};
use crate::fusion::{self, FusionSet, SpectralReport};
use crate::linalg;
use crate::maea3::Model;
use crate::sampling::{self, tag, SamplingConfig, Slice};
use crate::spaces::{Host, RkhsFunction};
use crate::transfer;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Operator {
    Agent1,
    Agent2,
    Multiagent,
    Fusion,
}

impl FromStr for Operator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "agent1" => Ok(Operator::Agent1),
            "agent2" => Ok(Operator::Agent2),
            "multiagent" => Ok(Operator::Multiagent),
            "fusion" => Ok(Operator::Fusion),
            _ => Err(Error::InvalidArgument(format!("unknown operator '{s}' (expected agent1, agent2, multiagent or fusion)"))),
        }
    }
}

impl std::fmt::Display for Operator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Operator::Agent1 => "agent1",
            Operator::Agent2 => "agent2",
            Operator::Multiagent => "multiagent",
            Operator::Fusion => "fusion",
        })
    }
}

/// How the final estimate is compared with the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Limit {
    Equal,
    AtMost,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub operator: Operator,
    pub rho_values: Vec<f64>,
    pub norm_estimates: Vec<OperatorNormEstimate>,
    pub target: f64,
    pub limit: Limit,
    /// |last estimate − target|.
    pub limit_gap: f64,
    /// Samples at which the multi-agent chain bound failed (multiagent only).
    pub chain_violations: Option<usize>,
}

impl SweepResult {
    pub fn last(&self) -> f64 {
        self.norm_estimates.last().map_or(f64::NAN, |e| e.value)
    }

    pub fn passes(&self, tol: f64) -> bool {
        match self.limit {
            Limit::Equal => self.limit_gap <= tol,
            Limit::AtMost => self.last() <= self.target + tol,
        }
    }
}

/// ρ = 10^k for k = 0..=decades.
pub fn rho_grid(decades: usize) -> Vec<f64> {
    (0..=decades).map(|k| 10f64.powi(k as i32)).collect()
}

fn check_grid(grid: &[f64], min_decades: f64) -> Result<()> {
    if grid.is_empty() || grid.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
        return Err(Error::InvalidArgument("rho grid must be nonempty, positive and finite".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("rho grid must be strictly increasing".into()));
    }
    if (grid[grid.len() - 1] / grid[0]).log10() < min_decades - 1e-9 {
        return Err(Error::InvalidArgument(format!("rho grid must span at least {min_decades} decades")));
    }
    Ok(())
}

fn point_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_add((k as u64 + 1).wrapping_mul(0xA24B_AED4_963E_E407))
}

/// Estimated operator norm along a ρ grid; the sets and seeds follow the
/// agent, multi-agent and fusion estimators.
pub fn norm_sweep(model: &Model, operator: Operator, grid: &[f64], cfg: &SamplingConfig) -> Result<SweepResult> {
    check_grid(grid, 4.0)?;
    let mut estimates = Vec::with_capacity(grid.len());
    let mut violations = 0;
    for (k, &rho) in grid.iter().enumerate() {
        let c = cfg.clone().with_seed(point_seed(cfg.seed, k));
        let e = match operator {
            Operator::Agent1 => agent::estimate_tbar_norm(model.agent(1), rho, &c)?,
            Operator::Agent2 => agent::estimate_tbar_norm(model.agent(2), rho, &c)?,
            Operator::Fusion => fusion::estimate_t_norm(&model.fusion, rho, &c)?,
            Operator::Multiagent => {
                let r = estimate_multi_norm(model, [rho, rho], &c)?;
                violations += r.chain_violations;
                r.estimate
            }
        };
        estimates.push(e);
    }
    let (target, limit) = match operator {
        Operator::Agent1 | Operator::Agent2 => (1.0, Limit::Equal),
        Operator::Multiagent | Operator::Fusion => (1.0, Limit::AtMost),
    };
    let last = estimates.last().map_or(f64::NAN, |e| e.value);
    Ok(SweepResult {
        operator,
        rho_values: grid.to_vec(),
        norm_estimates: estimates,
        target,
        limit,
        limit_gap: (last - target).abs(),
        chain_violations: (operator == Operator::Multiagent).then_some(violations),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiNormReport {
    pub estimate: OperatorNormEstimate,
    /// Points evaluated (samples and refinement steps).
    pub evaluations: usize,
    pub chain_violations: usize,
    /// Worst ratio sampled/bound over all evaluated points.
    pub worst_chain_ratio: f64,
}

/// Sampled ‖T̄(ρ¹, ρ²)‖ over pairs (fⁱ, ψⁱ) of total unit mass, checking at
/// every evaluated point that ‖L̂ⁱT̄ⁱ[fⁱ; ψⁱ]‖² ≤ ‖L̂ⁱ‖²‖T̄ⁱ‖²·massᵢ, with
/// ‖T̄ⁱ‖ the exact norm at the sampled xⁱ.
pub fn estimate_multi_norm(model: &Model, rho: [f64; 2], cfg: &SamplingConfig) -> Result<MultiNormReport> {
    let sets = [AgentSet::new(model.agent(1), Slice::Full)?, AgentSet::new(model.agent(2), Slice::Full)?];
    let len = [sets[0].steps().len(), sets[1].steps().len()];
    let evaluations = Cell::new(0usize);
    let violations = Cell::new(0usize);
    let worst = Cell::new(0.0f64);

    let split = |p: &[f64]| -> (f64, Vec<f64>, Vec<f64>) {
        (p[0].clamp(0.0, 1.0), p[1..1 + len[0]].to_vec(), p[1 + len[0]..].to_vec())
    };
    // squared uploaded output norm and its chain bound, at unit agent mass
    let component = |i: usize, p: &[f64]| -> Result<(f64, f64)> {
        let space = model.agent(i);
        let (alpha, x, y) = sets[i - 1].point(p)?;
        let prev = RkhsFunction::new(space.tag(), alpha)?;
        let out = agent::local_update(space, &prev, &x, y, rho[i - 1])?;
        let up = transfer::upload(&model.fusion, &out)?;
        let sq = model.fusion.metric.norm(&up.coefficients).powi(2);
        let bound = (model.upload_norms[i - 1] * agent::tbar_norm_at(space, rho[i - 1], &x)?).powi(2);
        Ok((sq, bound))
    };
    let eval = |p: &[f64]| -> f64 {
        let (w, p1, p2) = split(p);
        let (Ok((s1, b1)), Ok((s2, b2))) = (component(1, &p1), component(2, &p2)) else {
            return 0.0;
        };
        evaluations.set(evaluations.get() + 1);
        let slack = 1e-10;
        for (s, b) in [(s1, b1), (s2, b2)] {
            if s > b * (1.0 + slack) + 1e-300 {
                violations.set(violations.get() + 1);
            }
            if b > 0.0 {
                worst.set(worst.get().max(s / b));
            }
        }
        w * s1 + (1.0 - w) * s2
    };
    let draw = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        let w: f64 = rng.random();
        let mut p = vec![w];
        p.extend(sets[0].draw(rng));
        p.extend(sets[1].draw(rng));
        p
    };
    let mut steps = vec![0.1];
    steps.extend(sets[0].steps());
    steps.extend(sets[1].steps());
    let (ratio, best, iters) = sample_and_refine(cfg, tag::MULTI_NORM, draw, &steps, eval);
    let (w, p1, p2) = split(&best);
    let (a1, x1, y1) = sets[0].point(&p1)?;
    let (a2, x2, y2) = sets[1].point(&p2)?;
    let witness = Witness::Multi { alpha: [a1 * w.sqrt(), a2 * (1.0 - w).sqrt()], x: [x1, x2], y: [y1 * w.sqrt(), y2 * (1.0 - w).sqrt()] };
    Ok(MultiNormReport {
        estimate: OperatorNormEstimate {
            value: ratio.max(0.0).sqrt(),
            sup_ratio: ratio,
            samples: cfg.samples.max(1),
            refinement_iters: iters,
            argmax_witness: witness,
            seed: cfg.seed,
        },
        evaluations: evaluations.get(),
        chain_violations: violations.get(),
        worst_chain_ratio: worst.get(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbationReport {
    pub trials: usize,
    pub dimension: usize,
    pub violations: usize,
    /// Largest ‖N⁻¹ − M⁻¹‖ / (2‖M⁻¹‖²‖M − N‖) seen.
    pub worst_ratio: f64,
}

/// ‖N⁻¹ − M⁻¹‖ ≤ 2‖M⁻¹‖²‖M − N‖ for random M and N inside the ball
/// ‖M − N‖ < 1/(2‖M⁻¹‖), spectral norms throughout.
pub fn inverse_perturbation_test(trials: usize, dimension: usize, seed: u64) -> Result<PerturbationReport> {
    if dimension == 0 || dimension > 8 {
        return Err(Error::InvalidArgument(format!("dimension must be in 1..=8, got {dimension}")));
    }
    let mut violations = 0;
    let mut worst = 0.0_f64;
    let mut done = 0;
    let mut t = 0u64;
    while done < trials {
        let mut rng = sampling::stream(seed, tag::PERTURBATION, t);
        t += 1;
        let d = dimension;
        let m = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let Some(minv) = m.clone().try_inverse() else { continue };
        let minv_norm = linalg::spectral_norm(&minv);
        if !(minv_norm.is_finite() && minv_norm < 1e8) {
            continue;
        }
        let dir = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let radius = rng.random::<f64>() * 0.999 / (2.0 * minv_norm);
        let e = &dir * (radius / linalg::spectral_norm(&dir));
        let n = &m + &e;
        let ninv = n.try_inverse().ok_or_else(|| Error::Singular { what: "perturbed matrix".into(), cond: f64::INFINITY })?;
        let lhs = linalg::spectral_norm(&(&ninv - &minv));
        let rhs = 2.0 * minv_norm * minv_norm * linalg::spectral_norm(&e);
        if lhs > rhs + 1e-10 {
            violations += 1;
        }
        if rhs > 0.0 {
            worst = worst.max(lhs / rhs);
        }
        done += 1;
    }
    Ok(PerturbationReport { trials, dimension, violations, worst_ratio: worst })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Convergence {
    /// ‖Kα̂ − φ_{n,1}‖ with φ_{n,1} = K(D/ρ + I)α̂.
    Phi1,
    /// ‖φ_{n,2}φ_{n,1} − α̂‖, realized as (I + K/ρ)⁻¹(I + D/ρ)α̂.
    Phi2Phi1,
    /// |φⁱ_ρ(α; x; y) − αᵀKⁱα| over both agents.
    AgentPhi,
}

impl FromStr for Convergence {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "phi1" => Ok(Convergence::Phi1),
            "phi2phi1" => Ok(Convergence::Phi2Phi1),
            "agent-phi" | "agent_phi" => Ok(Convergence::AgentPhi),
            _ => Err(Error::InvalidArgument(format!("unknown map '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniformReport {
    pub which: Convergence,
    pub rho_values: Vec<f64>,
    pub sup_deviation: Vec<f64>,
    pub samples: usize,
    /// Sample/grid-step pairs where the deviation grew.
    pub pointwise_violations: usize,
    /// Phi1: no pointwise increase.  Others: sup nonincreasing up to noise.
    pub monotone: bool,
}

/// Tolerance for "nonincreasing within noise" on sup deviations.
const SUP_NOISE: f64 = 1e-9;

pub fn uniform_convergence_test(model: &Model, which: Convergence, grid: &[f64], samples: usize, seed: u64) -> Result<UniformReport> {
    check_grid(grid, 0.0)?;
    let fs = &model.fusion;
    let rows: Vec<Vec<f64>> = match which {
        Convergence::Phi1 | Convergence::Phi2Phi1 => {
            if which == Convergence::Phi2Phi1 {
                for i in 1..=2 {
                    let c = linalg::condition(&fs.kt(i));
                    if !(c <= fs.cond_cap) {
                        return Err(Error::Refused(format!("block {i} has condition {c:.3e} above the cap {:.1e}", fs.cond_cap)));
                    }
                }
            }
            let set = FusionSet::new(fs, Slice::Full)?;
            let d = linalg::block_diag(&fs.kt(1), &fs.kt(2));
            let k = &fs.gram_full;
            let eig = &fs.metric.eig;
            (0..samples)
                .map(|j| {
                    let mut rng = sampling::stream(seed, tag::UNIFORM, j as u64);
                    let u = sampling::unit_sphere(&mut rng, set.metric.rank);
                    let (a1, a2) = set.point(u.as_slice());
                    let hat = linalg::stack(&(fs.change_basis(1) * a1), &(fs.change_basis(2) * a2));
                    let dh = &d * &hat;
                    let limit = k * &hat;
                    grid.iter()
                        .map(|&rho| match which {
                            Convergence::Phi1 => (&limit - k * (&dh / rho + &hat)).norm(),
                            _ => {
                                let rhs = &hat + &dh / rho;
                                let mut beta = DVector::zeros(hat.len());
                                for c in 0..hat.len() {
                                    let v = eig.vectors.column(c);
                                    beta += v * (v.dot(&rhs) / (1.0 + eig.values[c].max(0.0) / rho));
                                }
                                (beta - &hat).norm()
                            }
                        })
                        .collect()
                })
                .collect()
        }
        Convergence::AgentPhi => {
            let sets = [AgentSet::new(model.agent(1), Slice::Full)?, AgentSet::new(model.agent(2), Slice::Full)?];
            let mut rows = Vec::with_capacity(samples);
            for j in 0..samples {
                let i = j % 2;
                let mut rng = sampling::stream(seed, tag::UNIFORM, j as u64);
                let (alpha, x, y) = sets[i].point(&sets[i].draw(&mut rng))?;
                let limit = sets[i].metric.norm(&alpha).powi(2);
                let row = grid
                    .iter()
                    .map(|&rho| agent::phi(model.agent(i + 1), rho, &alpha, &x, y).map(|v| (v - limit).abs()))
                    .collect::<Result<Vec<f64>>>()?;
                rows.push(row);
            }
            rows
        }
    };
    let sup_deviation: Vec<f64> = (0..grid.len()).map(|k| rows.iter().map(|r| r[k]).fold(0.0, f64::max)).collect();
    let pointwise_violations = rows.iter().map(|r| r.windows(2).filter(|w| w[1] > w[0]).count()).sum();
    let monotone = match which {
        Convergence::Phi1 => pointwise_violations == 0,
        _ => sup_deviation.windows(2).all(|w| w[1] <= w[0] * (1.0 + SUP_NOISE) + SUP_NOISE),
    };
    Ok(UniformReport { which, rho_values: grid.to_vec(), sup_deviation, samples, pointwise_violations, monotone })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquicontinuityReport {
    pub rho_values: Vec<f64>,
    /// Largest |φⁱ(p) − φⁱ(q)| / ‖p − q‖ over sampled nearby pairs, per ρ.
    pub modulus: Vec<f64>,
    pub delta: f64,
    pub samples: usize,
}

impl EquicontinuityReport {
    /// Largest modulus beyond the first index over the largest before it.
    pub fn growth(&self, split: usize) -> f64 {
        let early = self.modulus[..split].iter().copied().fold(0.0, f64::max);
        let late = self.modulus[split..].iter().copied().fold(0.0, f64::max);
        if early > 0.0 {
            late / early
        } else if late == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    }
}

/// Empirical modulus of continuity of the agent maps φⁱ_ρ on Eⁱ: pairs of
/// points a parameter step `delta` apart, the same pairs at every ρ.
pub fn equicontinuity_probe(model: &Model, grid: &[f64], samples: usize, delta: f64, seed: u64) -> Result<EquicontinuityReport> {
    check_grid(grid, 0.0)?;
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument("delta must be positive".into()));
    }
    let sets = [AgentSet::new(model.agent(1), Slice::Full)?, AgentSet::new(model.agent(2), Slice::Full)?];
    let mut modulus = vec![0.0_f64; grid.len()];
    for j in 0..samples {
        let i = j % 2;
        let mut rng = sampling::stream(seed, tag::EQUICONTINUITY, j as u64);
        let p = sets[i].draw(&mut rng);
        let dir = sampling::unit_sphere(&mut rng, p.len());
        let q: Vec<f64> = p.iter().zip(dir.iter()).map(|(a, d)| a + delta * d).collect();
        let (ap, xp, yp) = sets[i].point(&p)?;
        let (aq, xq, yq) = sets[i].point(&q)?;
        let dist = ((&ap - &aq).norm_squared()
            + xp.iter().zip(&xq).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            + (yp - yq).powi(2))
        .sqrt();
        if !(dist > 0.0) {
            continue;
        }
        for (k, &rho) in grid.iter().enumerate() {
            let space = model.agent(i + 1);
            let d = (agent::phi(space, rho, &ap, &xp, yp)? - agent::phi(space, rho, &aq, &xq, yq)?).abs();
            modulus[k] = modulus[k].max(d / dist);
        }
    }
    Ok(EquicontinuityReport { rho_values: grid.to_vec(), modulus, delta, samples })
}

/// `rho,estimate,samples,limit_gap`, one row per grid point.
pub fn write_sweep_csv(path: &Path, sweep: &SweepResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["rho", "estimate", "samples", "limit_gap"])?;
    for (rho, e) in sweep.rho_values.iter().zip(&sweep.norm_estimates) {
        w.write_record([
            format!("{rho:.16e}"),
            format!("{:.16e}", e.value),
            e.samples.to_string(),
            format!("{:.16e}", (e.value - sweep.target).abs()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Two whitespace-separated columns: log10 ρ and the estimate.
pub fn write_sweep_plot(path: &Path, sweep: &SweepResult) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "# log10_rho estimate ({})", sweep.operator)?;
    for (rho, e) in sweep.rho_values.iter().zip(&sweep.norm_estimates) {
        writeln!(f, "{:.16e} {:.16e}", rho.log10(), e.value)?;
    }
    f.flush()?;
    Ok(())
}

pub fn write_matrix_csv(path: &Path, a: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for r in 0..a.nrows() {
        w.write_record(a.row(r).iter().map(|v| format!("{v:.16e}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Transfer-operator matrices and their spectra, one CSV each.
pub fn write_operator_dump(dir: &Path, model: &Model) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let ops = &model.ops;
    for i in 0..2 {
        write_matrix_csv(&dir.join(format!("lbar{}.csv", i + 1)), &ops.lbar[i])?;
        write_matrix_csv(&dir.join(format!("sqrt_lbar{}.csv", i + 1)), &ops.sqrt_lbar[i])?;
        write_matrix_csv(&dir.join(format!("proj{}.csv", i + 1)), &ops.proj[i])?;
        let ev = DMatrix::from_row_slice(1, ops.eigenvalues[i].len(), &ops.eigenvalues[i]);
        write_matrix_csv(&dir.join(format!("lbar{}_eigenvalues.csv", i + 1)), &ev)?;
    }
    write_matrix_csv(&dir.join("gram_full.csv"), &model.fusion.gram_full)
}

/// The spectral report as a `key = value` record.
pub fn spectral_report_text(report: &SpectralReport) -> Result<String> {
    toml::to_string(report).map_err(|e| Error::Format(e.to_string()))
}

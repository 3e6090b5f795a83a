//! Pathwise gradients under fixed noise, finite-difference checks, Adam and
//! the temperature schedule.

use std::fmt;
use std::io::Write;

use rand::Rng;

use crate::autodiff::{Real, Tape};
use crate::ddouble::DoubleF64;
use crate::error::{check_tau, DrpmError, Result};
use crate::learn::{kl_terms_generic, pl_log_prob_from_logs, supervised_loss_generic, SupervisedTarget};
use crate::mvhg::{conditional_log_weights_generic, log_pmf_generic, suffix_log_normalizers, MvhgParams};
use crate::noise::{stream_rng, FixedNoise};
use crate::partition::{
    relaxed_forward, AssignmentMatrix, DrpmParams, Estimator, ModelShape, DEFAULT_EPS,
};
use crate::permutation::PlScores;

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// A gradient check passes when the largest relative error is below this.
pub const GRADCHECK_TOL: f64 = 1e-4;
/// Noise whose hard decisions sit closer than this to a tie is redrawn.
pub const TIE_MARGIN: f64 = 1e-6;

/// Log-domain parameters `(log ω, log s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamPoint {
    pub log_omega: Vec<f64>,
    pub log_scores: Vec<f64>,
}

impl ParamPoint {
    pub fn zeros(n: usize, k: usize) -> Self {
        Self {
            log_omega: vec![0.0; k],
            log_scores: vec![0.0; n],
        }
    }

    pub fn from_params(params: &DrpmParams) -> Self {
        Self {
            log_omega: params.mvhg.log_omega().to_vec(),
            log_scores: params.scores.log_scores(),
        }
    }

    pub fn to_params(&self, shape: &ModelShape) -> Result<DrpmParams> {
        if let Some(bad) = self.flat().iter().find(|x| !x.is_finite()) {
            return Err(DrpmError::param("point", format!("non-finite coordinate {bad}")));
        }
        let omega = self.log_omega.iter().map(|x| x.exp()).collect();
        let scores = self.log_scores.iter().map(|x| x.exp()).collect();
        DrpmParams::new(
            MvhgParams::new(shape.capacities.clone(), shape.n, omega)?,
            PlScores::with_beta(scores, shape.beta)?,
        )
    }

    pub fn len(&self) -> usize {
        self.log_omega.len() + self.log_scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `log ω` followed by `log s`.
    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.log_omega.clone();
        v.extend(&self.log_scores);
        v
    }

    pub fn from_flat(flat: &[f64], k: usize) -> Self {
        Self {
            log_omega: flat[..k].to_vec(),
            log_scores: flat[k..].to_vec(),
        }
    }

    pub fn coordinate_names(&self) -> Vec<String> {
        (0..self.log_omega.len())
            .map(|k| format!("log_omega[{k}]"))
            .chain((0..self.log_scores.len()).map(|i| format!("log_scores[{i}]")))
            .collect()
    }

    /// Coordinates uniform in `[-spread, spread]`.
    pub fn random<G: Rng + ?Sized>(n: usize, k: usize, spread: f64, rng: &mut G) -> Self {
        let mut draw = |len| (0..len).map(|_| rng.gen_range(-spread..=spread)).collect();
        let log_omega = draw(k);
        let log_scores = draw(n);
        Self {
            log_omega,
            log_scores,
        }
    }
}

/// A scalar function of `(log ω, log s)` for fixed noise and temperature.
#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    /// Entry `(k, i)` of the relaxed assignment.
    PartitionEntry { k: usize, i: usize, estimator: Estimator },
    /// Supervised loss of the relaxed assignment against a target.
    SupervisedLoss { target: SupervisedTarget, estimator: Estimator },
    /// Count term of the KL surrogate against a prior, one draw.
    KlCounts { prior: ParamPoint },
    /// Permutation term of the KL surrogate against a prior, one draw.
    KlPerm { prior: ParamPoint },
    /// `log p(π; s)` of a fixed ordering.
    PlLogPmf { order: Vec<usize> },
    /// `log p(n; ω)` of fixed counts.
    MvhgLogPmf { counts: Vec<usize> },
}

impl Objective {
    pub const NAMES: [&'static str; 6] = [
        "partition-entry",
        "supervised-loss",
        "kl-counts",
        "kl-perm",
        "pl-log-pmf",
        "mvhg-log-pmf",
    ];

    /// The registered objective `name` with its default configuration for `shape`:
    ///
    /// * `partition-entry`: relaxed `Y[0][0]`.
    /// * `supervised-loss`: target labels `i mod K`, `α = 1`.
    /// * `kl-counts`, `kl-perm`: prior with all weights and scores equal to one.
    /// * `pl-log-pmf`: the identity ordering.
    /// * `mvhg-log-pmf`: counts as balanced as the capacities allow.
    ///
    /// Every default is fully relaxed, so finite differences see the same
    /// function the tape differentiates.
    pub fn from_name(name: &str, shape: &ModelShape) -> Result<Self> {
        let (n, k) = (shape.n, shape.k());
        let prior = ParamPoint::zeros(n, k);
        match name {
            "partition-entry" => Ok(Self::PartitionEntry {
                k: 0,
                i: 0,
                estimator: Estimator::Relaxed,
            }),
            "supervised-loss" => {
                let labels = (0..n).map(|i| i % k).collect();
                Ok(Self::SupervisedLoss {
                    target: SupervisedTarget::new(AssignmentMatrix::from_labels(labels, k)?, 1.0)?,
                    estimator: Estimator::Relaxed,
                })
            }
            "kl-counts" => Ok(Self::KlCounts { prior }),
            "kl-perm" => Ok(Self::KlPerm { prior }),
            "pl-log-pmf" => Ok(Self::PlLogPmf {
                order: (0..n).collect(),
            }),
            "mvhg-log-pmf" => Ok(Self::MvhgLogPmf {
                counts: balanced_counts(&shape.capacities, n),
            }),
            other => Err(DrpmError::Validation(format!(
                "unknown objective {other:?}; registered: {}",
                Self::NAMES.join(", ")
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::PartitionEntry { .. } => "partition-entry",
            Self::SupervisedLoss { .. } => "supervised-loss",
            Self::KlCounts { .. } => "kl-counts",
            Self::KlPerm { .. } => "kl-perm",
            Self::PlLogPmf { .. } => "pl-log-pmf",
            Self::MvhgLogPmf { .. } => "mvhg-log-pmf",
        }
    }

    /// Whether the value depends on the noise through hard argmax decisions.
    fn uses_hard_decisions(&self) -> bool {
        match self {
            Self::KlCounts { .. } | Self::KlPerm { .. } => true,
            Self::PartitionEntry { estimator, .. } | Self::SupervisedLoss { estimator, .. } => {
                *estimator != Estimator::Relaxed
            }
            _ => false,
        }
    }

    pub fn evaluate<R: Real>(
        &self,
        shape: &ModelShape,
        log_omega: &[R],
        log_scores: &[R],
        noise: &FixedNoise,
        tau: f64,
    ) -> R {
        match self {
            Self::PartitionEntry { k, i, estimator } => {
                let fwd = relaxed_forward(shape, log_omega, log_scores, noise, tau, DEFAULT_EPS, *estimator);
                fwd.values[*k][*i]
            }
            Self::SupervisedLoss { target, estimator } => {
                let fwd = relaxed_forward(shape, log_omega, log_scores, noise, tau, DEFAULT_EPS, *estimator);
                let expected: Vec<R> = fwd
                    .count_simplex
                    .iter()
                    .map(|p| {
                        p.iter()
                            .enumerate()
                            .skip(1)
                            .fold(p[0] * 0.0, |a, (j, &q)| a + q * j as f64)
                    })
                    .collect();
                supervised_loss_generic(&fwd.values, &expected, target).total
            }
            Self::KlCounts { prior } => {
                kl_terms_generic(shape, log_omega, log_scores, prior, noise, tau).0
            }
            Self::KlPerm { prior } => {
                kl_terms_generic(shape, log_omega, log_scores, prior, noise, tau).1
            }
            Self::PlLogPmf { order } => pl_log_prob_from_logs(log_scores, order),
            Self::MvhgLogPmf { counts } => {
                log_pmf_generic(&shape.capacities, shape.n, log_omega, shape.ln_fact(), counts)
            }
        }
    }

    fn validate(&self, shape: &ModelShape) -> Result<()> {
        let (n, k) = (shape.n, shape.k());
        let ok = match self {
            Self::PartitionEntry { k: row, i, .. } => *row < k && *i < n,
            Self::SupervisedLoss { target, .. } => target.target.n() == n && target.target.k() == k,
            Self::KlCounts { prior } | Self::KlPerm { prior } => {
                prior.log_omega.len() == k && prior.log_scores.len() == n
            }
            Self::PlLogPmf { order } => {
                let mut seen = vec![false; n];
                order.len() == n && order.iter().all(|&j| j < n && !std::mem::replace(&mut seen[j], true))
            }
            Self::MvhgLogPmf { counts } => {
                counts.len() == k
                    && counts.iter().sum::<usize>() == n
                    && counts.iter().zip(&shape.capacities).all(|(c, m)| c <= m)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(DrpmError::Validation(format!(
                "objective {} does not fit a model with n = {n}, K = {k}",
                self.name()
            )))
        }
    }
}

fn balanced_counts(capacities: &[usize], n: usize) -> Vec<usize> {
    let mut counts = vec![0; capacities.len()];
    let mut left = n;
    while left > 0 {
        let mut placed = false;
        for (c, &m) in counts.iter_mut().zip(capacities) {
            if left > 0 && *c < m {
                *c += 1;
                left -= 1;
                placed = true;
            }
        }
        assert!(placed, "capacities cannot hold n");
    }
    counts
}

fn check_point(shape: &ModelShape, point: &ParamPoint) -> Result<()> {
    if point.log_omega.len() != shape.k() || point.log_scores.len() != shape.n {
        return Err(DrpmError::Validation(format!(
            "point has {} weights and {} scores, model needs {} and {}",
            point.log_omega.len(),
            point.log_scores.len(),
            shape.k(),
            shape.n
        )));
    }
    Ok(())
}

/// Objective value and its exact gradient over `(log ω, log s)`.
pub fn eval_scalar_with_gradient(
    objective: &Objective,
    shape: &ModelShape,
    point: &ParamPoint,
    noise: &FixedNoise,
    tau: f64,
) -> Result<(f64, Vec<f64>)> {
    check_tau(tau)?;
    check_point(shape, point)?;
    objective.validate(shape)?;
    let tape = Tape::new();
    let lo = tape.vars(&point.log_omega);
    let ls = tape.vars(&point.log_scores);
    let y = objective.evaluate(shape, &lo, &ls, noise, tau);
    let grads = tape.gradient(y);
    let mut g = grads.wrt_all(&lo);
    g.extend(grads.wrt_all(&ls));
    Ok((y.value(), g))
}

/// Plain evaluation.
pub fn eval_scalar(
    objective: &Objective,
    shape: &ModelShape,
    point: &ParamPoint,
    noise: &FixedNoise,
    tau: f64,
) -> Result<f64> {
    check_tau(tau)?;
    check_point(shape, point)?;
    objective.validate(shape)?;
    Ok(objective.evaluate(shape, &point.log_omega, &point.log_scores, noise, tau))
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn central_differences<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|j| {
            probe[j] = x[j] + step;
            let up = f(&probe);
            probe[j] = x[j] - step;
            let down = f(&probe);
            probe[j] = x[j];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Central differences with the same noise on both sides.
///
/// The objective is evaluated in double-double precision so that the quotient
/// resolves gradients far below `ulp(f) / 2h`.
pub fn finite_diff_gradient(
    objective: &Objective,
    shape: &ModelShape,
    point: &ParamPoint,
    noise: &FixedNoise,
    tau: f64,
    step: f64,
) -> Result<Vec<f64>> {
    check_tau(tau)?;
    check_point(shape, point)?;
    objective.validate(shape)?;
    if !(step > 0.0 && step.is_finite()) {
        return Err(DrpmError::Domain {
            name: "step",
            value: step,
            expected: "step > 0",
        });
    }
    let k = shape.k();
    let x: Vec<DoubleF64> = point.flat().into_iter().map(DoubleF64::from_f64).collect();
    let mut probe = x.clone();
    let eval = |p: &[DoubleF64]| objective.evaluate(shape, &p[..k], &p[k..], noise, tau);
    Ok((0..x.len())
        .map(|j| {
            probe[j] = x[j] + step;
            let up = eval(&probe);
            probe[j] = x[j] - step;
            let down = eval(&probe);
            probe[j] = x[j];
            ((up - down) / (2.0 * step)).to_f64()
        })
        .collect())
}

/// `|a − b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub objective: String,
    pub coordinates: Vec<String>,
    pub analytic: Vec<f64>,
    pub fd: Vec<f64>,
    pub rel_err: Vec<f64>,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

impl GradientReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < GRADCHECK_TOL
    }

    pub const CSV_HEADER: &'static str = "objective,coordinate,analytic,fd,rel_err";

    /// One CSV row per coordinate, no header.
    pub fn write_csv_rows<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for j in 0..self.coordinates.len() {
            writeln!(
                out,
                "{},{},{:.16e},{:.16e},{:.16e}",
                self.objective, self.coordinates[j], self.analytic[j], self.fd[j], self.rel_err[j]
            )?;
        }
        Ok(())
    }
}

impl fmt::Display for GradientReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: max rel err {:.3e}, max abs err {:.3e} ({})",
            self.objective,
            self.max_rel_err,
            self.max_abs_err,
            if self.passed() { "pass" } else { "FAIL" }
        )
    }
}

/// Compares the tape gradient with central differences.
pub fn gradcheck(
    objective: &Objective,
    shape: &ModelShape,
    point: &ParamPoint,
    noise: &FixedNoise,
    tau: f64,
    step: f64,
) -> Result<GradientReport> {
    let (_, analytic) = eval_scalar_with_gradient(objective, shape, point, noise, tau)?;
    let fd = finite_diff_gradient(objective, shape, point, noise, tau, step)?;
    let rel_err: Vec<f64> = analytic.iter().zip(&fd).map(|(&a, &b)| relative_error(a, b)).collect();
    let max_abs_err = analytic
        .iter()
        .zip(&fd)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(GradientReport {
        objective: objective.name().to_string(),
        coordinates: point.coordinate_names(),
        analytic,
        fd,
        max_rel_err: rel_err.iter().cloned().fold(0.0, f64::max),
        rel_err,
        max_abs_err,
    })
}

/// Smallest gap between the winner and runner-up of any hard decision the
/// noise induces at `point`: every count-stage argmax and every adjacent pair
/// in the perturbed score order. Ties in the point itself are reported by
/// [`point_tie_margin`], since no redraw can move them.
pub fn tie_margin(shape: &ModelShape, point: &ParamPoint, noise: &FixedNoise) -> f64 {
    fn top_two_gap(values: &[f64]) -> f64 {
        let mut sorted: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        sorted.sort_by(|a, b| b.total_cmp(a));
        if sorted.len() < 2 {
            f64::INFINITY
        } else {
            sorted[0] - sorted[1]
        }
    }
    fn min_adjacent_gap(values: &[f64]) -> f64 {
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| b.total_cmp(a));
        sorted.windows(2).map(|w| w[0] - w[1]).fold(f64::INFINITY, f64::min)
    }
    let suffix = suffix_log_normalizers(&shape.capacities, shape.n, &point.log_omega, shape.ln_fact());
    let mut margin = f64::INFINITY;
    let mut remaining = shape.n;
    let layout = shape.noise_layout();
    for k in 0..shape.k() {
        let weights = conditional_log_weights_generic(
            shape.capacities[k],
            point.log_omega[k],
            &suffix[k + 1],
            remaining,
            shape.ln_fact(),
        );
        let offset = layout.group_offsets[k];
        let perturbed: Vec<f64> = weights
            .iter()
            .enumerate()
            .map(|(j, w)| w.map_or(f64::NEG_INFINITY, |w| w + noise.count_gumbels[offset + j]))
            .collect();
        margin = margin.min(top_two_gap(&perturbed));
        let pick = crate::mvhg::perturbed_argmax(&weights, &noise.count_gumbels[offset..]);
        remaining -= pick;
    }
    let perturbed: Vec<f64> = point
        .log_scores
        .iter()
        .zip(&noise.score_gumbels)
        .map(|(ls, g)| shape.beta * (ls + g))
        .collect();
    margin.min(min_adjacent_gap(&perturbed))
}

/// Smallest adjacent gap of the unperturbed `log s`. The most likely
/// ordering is built from this order, so `kl-perm` has a kink where it is zero.
pub fn point_tie_margin(point: &ParamPoint) -> f64 {
    let mut sorted = point.log_scores.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted.windows(2).map(|w| w[0] - w[1]).fold(f64::INFINITY, f64::min)
}

/// Noise for trial `trial` of `seed`, redrawn while it sits within `min_margin`
/// of a tie. Returns the noise and how many draws were rejected.
pub fn draw_untied_noise(
    shape: &ModelShape,
    point: &ParamPoint,
    seed: u64,
    trial: u64,
    min_margin: f64,
) -> (FixedNoise, usize) {
    let layout = shape.noise_layout();
    let mut rng = stream_rng(seed, trial);
    let mut rejected = 0;
    loop {
        let noise = FixedNoise::draw(&mut rng, &layout);
        if tie_margin(shape, point, &noise) >= min_margin || rejected >= 10_000 {
            return (noise, rejected);
        }
        rejected += 1;
    }
}

/// Margin used when checking `objective`: hard decisions must not flip
/// inside the finite-difference stencil.
pub fn required_margin(objective: &Objective, shape: &ModelShape, step: f64) -> f64 {
    if objective.uses_hard_decisions() {
        TIE_MARGIN.max(4.0 * step * shape.beta.max(1.0))
    } else {
        TIE_MARGIN
    }
}

/// `τ(t) = max(τ_final, τ_init · exp(−r t))` with `r = (ln τ_init − ln τ_final) / horizon`.
pub fn anneal_tau(t: usize, tau_init: f64, tau_final: f64, horizon: usize) -> Result<f64> {
    if !(tau_final > 0.0 && tau_final <= tau_init && tau_init.is_finite()) {
        return Err(DrpmError::Domain {
            name: "tau_final",
            value: tau_final,
            expected: "0 < tau_final <= tau_init",
        });
    }
    if horizon == 0 {
        return Err(DrpmError::param("horizon", "must be at least one step"));
    }
    let r = (tau_init.ln() - tau_final.ln()) / horizon as f64;
    Ok((tau_init * (-r * t as f64).exp()).max(tau_final))
}

/// Adaptive-moment optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    /// Descends along `grad` in place.
    pub fn step(&mut self, grad: &[f64], point: &mut [f64]) {
        assert_eq!(grad.len(), self.m.len(), "gradient length");
        assert_eq!(point.len(), self.m.len(), "point length");
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for j in 0..grad.len() {
            self.m[j] = self.beta1 * self.m[j] + (1.0 - self.beta1) * grad[j];
            self.v[j] = self.beta2 * self.v[j] + (1.0 - self.beta2) * grad[j] * grad[j];
            let m_hat = self.m[j] / c1;
            let v_hat = self.v[j] / c2;
            point[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Functional form of [`Adam::step`].
pub fn optimizer_step(state: &Adam, gradient: &[f64], point: &[f64]) -> (Adam, Vec<f64>) {
    let mut next = state.clone();
    let mut p = point.to_vec();
    next.step(gradient, &mut p);
    (next, p)
}

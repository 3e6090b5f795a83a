//! Supervised partition learning and the KL surrogate terms.

use rand::Rng;

use crate::autodiff::{log_sum_exp, Real, Tape};
use crate::error::{check_tau, DrpmError, Result};
use crate::grad::{anneal_tau, Adam, ParamPoint};
use crate::mvhg::{log_pmf_generic, relaxed_counts_generic, RelaxedCounts};
use crate::noise::{stream_rng, FixedNoise};
use crate::partition::{
    log_num_orderings, partition_from_noise, relaxed_forward, AssignmentMatrix, DrpmParams,
    Estimator, ModelShape, RelaxedAssignment, DEFAULT_EPS,
};
use crate::permutation::{argsort_descending, pl_sample_from_noise};

const COLUMN_FLOOR: f64 = 1e-12;

/// Labels to recover plus the weight of the count-matching term.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedTarget {
    pub target: AssignmentMatrix,
    pub alpha: f64,
}

impl SupervisedTarget {
    pub fn new(target: AssignmentMatrix, alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(DrpmError::param("alpha", "must be finite and non-negative"));
        }
        Ok(Self { target, alpha })
    }

    fn row_sums(&self) -> Vec<f64> {
        self.target.counts().0.iter().map(|&c| c as f64).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts<R> {
    pub total: R,
    /// Mean per-element cross-entropy.
    pub l1: R,
    /// `(1/K) ||n̂ − target row sums||²`.
    pub l2: R,
}

fn floor_at<R: Real>(x: R, floor: f64) -> R {
    if x.value() < floor {
        x.lift(floor)
    } else {
        x
    }
}

/// `L1 + α L2` over a `K × n` relaxed assignment and relaxed counts `n̂`.
pub(crate) fn supervised_loss_generic<R: Real>(
    values: &[Vec<R>],
    counts: &[R],
    target: &SupervisedTarget,
) -> LossParts<R> {
    let k = values.len();
    let n = values[0].len();
    let labels = target.target.labels();
    let mut l1 = None;
    for col in 0..n {
        let colsum = (1..k).fold(values[0][col], |a, r| a + values[r][col]);
        let share = values[labels[col]][col] / floor_at(colsum, COLUMN_FLOOR);
        let ce = -floor_at(share, COLUMN_FLOOR).ln();
        l1 = Some(match l1 {
            None => ce,
            Some(acc) => acc + ce,
        });
    }
    let l1 = l1.expect("n >= 1") / n as f64;
    let sums = target.row_sums();
    let l2 = counts
        .iter()
        .zip(&sums)
        .map(|(&c, &t)| (c - t) * (c - t))
        .reduce(|a, b| a + b)
        .expect("K >= 1")
        / k as f64;
    LossParts {
        total: l1 + l2 * target.alpha,
        l1,
        l2,
    }
}

/// Supervised loss of a relaxed draw; `n̂` is the expectation of each relaxed count.
pub fn supervised_loss(
    relaxed: &RelaxedAssignment,
    target: &SupervisedTarget,
    counts_relaxed: &RelaxedCounts,
) -> Result<LossParts<f64>> {
    let (k, n) = (target.target.k(), target.target.n());
    let shape_ok = relaxed.values.len() == k
        && relaxed.values.iter().all(|r| r.len() == n)
        && counts_relaxed.simplex.len() == k;
    if !shape_ok {
        return Err(DrpmError::Validation(format!(
            "relaxed sample and target disagree on shape (target is {k}x{n})"
        )));
    }
    Ok(supervised_loss_generic(
        &relaxed.values,
        &counts_relaxed.expected_counts(),
        target,
    ))
}

/// `log p(π; s)` from log-scores, with tail log-sum-exp denominators.
pub(crate) fn pl_log_prob_from_logs<R: Real>(log_scores: &[R], order: &[usize]) -> R {
    let mut acc: Option<R> = None;
    for (pos, &j) in order.iter().enumerate() {
        let tail: Vec<R> = order[pos..].iter().map(|&i| log_scores[i]).collect();
        let term = log_scores[j] - log_sum_exp(&tail).expect("non-empty tail");
        acc = Some(match acc {
            None => term,
            Some(a) => a + term,
        });
    }
    acc.unwrap_or_else(|| log_scores[0].lift(0.0))
}

/// Single-draw surrogate terms with `q` at the given point and a fixed prior `p`.
pub(crate) fn kl_terms_generic<R: Real>(
    shape: &ModelShape,
    q_log_omega: &[R],
    q_log_scores: &[R],
    prior: &ParamPoint,
    noise: &FixedNoise,
    tau: f64,
) -> (R, R) {
    let counts = relaxed_counts_generic(
        &shape.capacities,
        shape.n,
        q_log_omega,
        shape.ln_fact(),
        &noise.count_gumbels,
        tau,
    )
    .hard;
    let log_q = log_pmf_generic(&shape.capacities, shape.n, q_log_omega, shape.ln_fact(), &counts);
    let log_p = log_pmf_generic(
        &shape.capacities,
        shape.n,
        &prior.log_omega,
        shape.ln_fact(),
        &counts,
    );
    let term_counts = log_q - log_p + log_num_orderings(&crate::mvhg::SubsetSizes(counts));

    let q_scores: Vec<f64> = q_log_scores.iter().map(|x| x.value()).collect();
    let best = argsort_descending(&q_scores);
    let log_q_max = pl_log_prob_from_logs(q_log_scores, &best);
    let perturbed: Vec<f64> = q_scores
        .iter()
        .zip(&noise.score_gumbels)
        .map(|(&ls, &g)| shape.beta * (ls + g))
        .collect();
    let drawn = argsort_descending(&perturbed);
    let log_p_perm = pl_log_prob_from_logs(&prior.log_scores, &drawn);
    (term_counts, log_q_max - log_p_perm)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlTerms {
    pub term_counts: f64,
    pub term_perm: f64,
    /// Monte-Carlo standard errors of the two means.
    pub stderr_counts: f64,
    pub stderr_perm: f64,
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let m = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / m;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

/// Monte-Carlo surrogate terms over `samples` relaxed draws from `q`.
pub fn kl_surrogate<G: Rng + ?Sized>(
    q: &DrpmParams,
    p: &DrpmParams,
    samples: usize,
    tau: f64,
    rng: &mut G,
) -> Result<KlTerms> {
    check_tau(tau)?;
    if samples == 0 {
        return Err(DrpmError::param("L", "at least one sample is required"));
    }
    if q.n() != p.n() || q.k() != p.k() || q.mvhg.capacities() != p.mvhg.capacities() {
        return Err(DrpmError::Validation("q and p have different shapes".into()));
    }
    let q_max = crate::permutation::pl_max_perm(&q.scores);
    let log_q_max = crate::permutation::pl_log_pmf(&q.scores, &q_max)?;
    let layout = q.noise_layout();
    let mut counts_terms = Vec::with_capacity(samples);
    let mut perm_terms = Vec::with_capacity(samples);
    for _ in 0..samples {
        let noise = FixedNoise::draw(rng, &layout);
        let counts = q.mvhg.relaxed_from_noise(&noise.count_gumbels, tau).hard;
        let perm = pl_sample_from_noise(&q.scores, &noise.score_gumbels);
        counts_terms
            .push(log_num_orderings(&counts) + q.mvhg.log_pmf(&counts) - p.mvhg.log_pmf(&counts));
        perm_terms.push(log_q_max - crate::permutation::pl_log_pmf(&p.scores, &perm)?);
    }
    let (term_counts, stderr_counts) = mean_and_stderr(&counts_terms);
    let (term_perm, stderr_perm) = mean_and_stderr(&perm_terms);
    Ok(KlTerms {
        term_counts,
        term_perm,
        stderr_counts,
        stderr_perm,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub steps: usize,
    pub seed: u64,
    pub tau_init: f64,
    pub tau_final: f64,
    /// Steps over which τ decays; defaults to `steps`.
    pub horizon: Option<usize>,
    pub lr: f64,
    /// Noise draws averaged per step.
    pub draws_per_step: usize,
    pub estimator: Estimator,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            seed: 0,
            tau_init: 1.0,
            tau_final: 0.5,
            horizon: None,
            lr: 0.01,
            draws_per_step: 1,
            estimator: Estimator::HardCounts,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub tau: f64,
    pub loss: f64,
    pub l1: f64,
    pub l2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub point: ParamPoint,
    /// `steps + 1` rows: the loss before every update and at the final point.
    pub trace: Vec<TraceRow>,
    /// Zero-noise partition at the final point.
    pub partition: AssignmentMatrix,
    pub matched: bool,
}

/// Loss and gradient of the averaged supervised loss at `point`.
pub(crate) fn supervised_step(
    shape: &ModelShape,
    point: &ParamPoint,
    target: &SupervisedTarget,
    noises: &[FixedNoise],
    tau: f64,
    estimator: Estimator,
) -> (LossParts<f64>, Vec<f64>) {
    let tape = Tape::new();
    let lo = tape.vars(&point.log_omega);
    let ls = tape.vars(&point.log_scores);
    let mut sum: Option<LossParts<_>> = None;
    for noise in noises {
        let fwd = relaxed_forward(shape, &lo, &ls, noise, tau, DEFAULT_EPS, estimator);
        let expected: Vec<_> = fwd
            .count_simplex
            .iter()
            .map(|p| {
                p.iter()
                    .enumerate()
                    .skip(1)
                    .fold(p[0] * 0.0, |a, (j, &q)| a + q * j as f64)
            })
            .collect();
        let parts = supervised_loss_generic(&fwd.values, &expected, target);
        sum = Some(match sum {
            None => parts,
            Some(s) => LossParts {
                total: s.total + parts.total,
                l1: s.l1 + parts.l1,
                l2: s.l2 + parts.l2,
            },
        });
    }
    let s = sum.expect("at least one draw");
    let d = noises.len() as f64;
    let total = s.total / d;
    let grads = tape.gradient(total);
    let mut grad = grads.wrt_all(&lo);
    grad.extend(grads.wrt_all(&ls));
    (
        LossParts {
            total: total.value(),
            l1: s.l1.value() / d,
            l2: s.l2.value() / d,
        },
        grad,
    )
}

/// Fit `(log ω, log s)` from zero so the zero-noise partition recovers `target`.
///
/// Step `t` draws fresh noise from stream `t` of `config.seed`.
pub fn fit_supervised(
    target: &SupervisedTarget,
    n: usize,
    k: usize,
    config: &FitConfig,
) -> Result<FitResult> {
    if config.steps == 0 {
        return Err(DrpmError::param("steps", "at least one step is required"));
    }
    if config.draws_per_step == 0 {
        return Err(DrpmError::param("draws_per_step", "at least one draw is required"));
    }
    if target.target.n() != n || target.target.k() != k {
        return Err(DrpmError::Validation(format!(
            "target is {}x{} but the model is {k}x{n}",
            target.target.k(),
            target.target.n()
        )));
    }
    let shape = ModelShape::new(vec![n; k], n, 1.0)?;
    let layout = shape.noise_layout();
    let horizon = config.horizon.unwrap_or(config.steps);
    let mut point = ParamPoint::zeros(n, k);
    let mut adam = Adam::new(point.len(), config.lr);
    let mut trace = Vec::with_capacity(config.steps + 1);
    for t in 0..=config.steps {
        let tau = anneal_tau(t, config.tau_init, config.tau_final, horizon)?;
        let mut rng = stream_rng(config.seed, t as u64);
        let noises: Vec<FixedNoise> = (0..config.draws_per_step)
            .map(|_| FixedNoise::draw(&mut rng, &layout))
            .collect();
        let (loss, grad) = supervised_step(&shape, &point, target, &noises, tau, config.estimator);
        trace.push(TraceRow {
            step: t,
            tau,
            loss: loss.total,
            l1: loss.l1,
            l2: loss.l2,
        });
        if t < config.steps {
            let mut flat = point.flat();
            adam.step(&grad, &mut flat);
            point = ParamPoint::from_flat(&flat, k);
        }
    }
    let params = point.to_params(&shape)?;
    let partition = partition_from_noise(&params, &FixedNoise::zeros(&layout));
    let matched = partition == target.target;
    Ok(FitResult {
        point,
        trace,
        partition,
        matched,
    })
}

/// Mean loss over the first and the last `window` trace rows.
pub fn window_means(trace: &[TraceRow], window: usize) -> (f64, f64) {
    let w = window.clamp(1, trace.len());
    let mean = |rows: &[TraceRow]| rows.iter().map(|r| r.loss).sum::<f64>() / rows.len() as f64;
    (mean(&trace[..w]), mean(&trace[trace.len() - w..]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mvhg::SubsetSizes;
    use crate::noise::rng_from_seed;

    fn target(s: &str, alpha: f64) -> SupervisedTarget {
        SupervisedTarget::new(s.parse().unwrap(), alpha).unwrap()
    }

    #[test]
    fn loss_vanishes_on_exact_target() {
        let t = target("110,001", 1.0);
        let values = vec![vec![1.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        let parts = supervised_loss_generic(&values, &[2.0, 1.0], &t);
        assert_eq!((parts.l1, parts.l2, parts.total), (0.0, 0.0, 0.0));
    }

    #[test]
    fn uniform_columns_cost_log_k() {
        let t = target("1100,0010,0001", 0.0);
        let values = vec![vec![0.2; 4]; 3];
        let parts = supervised_loss_generic(&values, &[1.0, 1.0, 2.0], &t);
        assert!((parts.l1 - 3f64.ln()).abs() < 1e-15);
        assert_eq!(parts.total, parts.l1);
    }

    #[test]
    fn count_term_off_by_one() {
        let t = target("110,001", 1.0);
        let values = vec![vec![1.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        let parts = supervised_loss_generic(&values, &[3.0, 0.0], &t);
        assert_eq!(parts.l2, 1.0);
        assert_eq!(parts.total, 1.0);
    }

    #[test]
    fn supervised_loss_checks_shape() {
        let t = target("110,001", 1.0);
        let params = DrpmParams::uniform(4, 2).unwrap();
        let mut rng = rng_from_seed(1);
        let noise = FixedNoise::draw(&mut rng, &params.noise_layout());
        let r = crate::partition::relaxed_partition_from_noise(&params, &noise, 0.5).unwrap();
        let c = params.mvhg.relaxed_from_noise(&noise.count_gumbels, 0.5);
        assert!(supervised_loss(&r, &t, &c).is_err());
    }

    #[test]
    fn pl_from_logs_matches_direct() {
        let scores = crate::permutation::PlScores::new(vec![2.0, 1.0, 1.0]).unwrap();
        let logs = scores.log_scores();
        let lp = pl_log_prob_from_logs(&logs, &[0, 1, 2]);
        assert!((lp - 0.25f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn kl_with_equal_models() {
        let p = DrpmParams::uniform(3, 2).unwrap();
        let mut rng = rng_from_seed(17);
        let kl = kl_surrogate(&p, &p, 100_000, 0.5, &mut rng).unwrap();
        assert!(kl.term_perm.abs() < 1e-12);
        // exact expectation over the four count vectors with weights 1, 9, 9, 1
        let exact: f64 = [(0, 1.0), (1, 9.0), (2, 9.0), (3, 1.0)]
            .iter()
            .map(|&(a, w)| w / 20.0 * log_num_orderings(&SubsetSizes(vec![a, 3 - a])))
            .sum();
        assert!((exact - (0.9 * 2f64.ln() + 0.1 * 6f64.ln())).abs() < 1e-14);
        assert!(
            (kl.term_counts - exact).abs() < 3.0 * kl.stderr_counts,
            "{} vs {exact} ± {}",
            kl.term_counts,
            kl.stderr_counts
        );
        assert!(kl.term_counts >= 0.0);
    }

    #[test]
    fn fit_trace_has_steps_plus_one_rows() {
        let t = target("11100000,00011000,00000111", 1.0);
        let config = FitConfig {
            steps: 5,
            ..FitConfig::default()
        };
        let r = fit_supervised(&t, 8, 3, &config).unwrap();
        assert_eq!(r.trace.len(), 6);
        let again = fit_supervised(&t, 8, 3, &config).unwrap();
        assert_eq!(r, again);
    }
}

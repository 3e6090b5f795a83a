//! The two-stage random partition model.
//!
//! Subset sizes `n ~ MVHG(ω)` and an ordering `π ~ PL(s)` are drawn
//! independently; subset `k` receives the elements in positions
//! `ν_k + 1 ..= ν_k + n_k` of the ordering, i.e. `y_k = Σ π_i` over those rows.
//!
//! The exact PMF is `p(n; ω) Σ_{π ∈ Π_Y} p(π; s)`. The inner sum factorizes
//! over subsets, each factor being a sum over the `n_k!` orderings of `S_k`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::autodiff::{log_sum_exp, Real};
use crate::error::{check_tau, DrpmError, Result};
use crate::mvhg::{expected_index, relaxed_counts_generic, MvhgParams, RelaxedCounts, SubsetSizes};
use crate::noise::{FixedNoise, NoiseLayout};
use crate::permutation::{
    all_permutations, argsort_descending, neuralsort_relaxed, neuralsort_relaxed_generic,
    pl_log_pmf, pl_max_perm, pl_sample, sequential_log_prob, PermutationMatrix, PlScores,
    RelaxedPermutation,
};

/// Largest total number of subset orderings `Σ_k n_k!` that exact evaluation enumerates.
pub const ORDERING_GUARD: u128 = 1_000_000;

/// Default sigmoid offset for the relaxed subset gates.
pub const DEFAULT_EPS: f64 = 0.5;

/// A labeled partition of `n` elements into `K` possibly empty subsets.
///
/// Stored as the subset label of every element; equivalently a `K × n`
/// 0/1 matrix with one-hot columns.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AssignmentMatrix {
    k: usize,
    labels: Vec<usize>,
}

impl AssignmentMatrix {
    pub fn from_labels(labels: Vec<usize>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(DrpmError::param("K", "at least one subset is required"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(DrpmError::Validation(format!(
                "label {bad} is out of range for K = {k}"
            )));
        }
        Ok(Self { k, labels })
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let k = rows.len();
        if k == 0 {
            return Err(DrpmError::Validation("assignment matrix has no rows".into()));
        }
        let n = rows[0].len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(DrpmError::Validation("rows have different lengths".into()));
        }
        let mut labels = Vec::with_capacity(n);
        for col in 0..n {
            let ones: Vec<usize> = (0..k).filter(|&r| rows[r][col] == 1).collect();
            let valid = ones.len() == 1 && (0..k).all(|r| rows[r][col] <= 1);
            if !valid {
                return Err(DrpmError::Validation(format!(
                    "column {col} is not one-hot: every element must belong to exactly one subset"
                )));
            }
            labels.push(ones[0]);
        }
        Ok(Self { k, labels })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn rows(&self) -> Vec<Vec<u8>> {
        let mut rows = vec![vec![0u8; self.n()]; self.k];
        for (i, &l) in self.labels.iter().enumerate() {
            rows[l][i] = 1;
        }
        rows
    }

    pub fn counts(&self) -> SubsetSizes {
        let mut c = vec![0; self.k];
        for &l in &self.labels {
            c[l] += 1;
        }
        SubsetSizes(c)
    }

    /// Elements of every subset, ascending.
    pub fn subsets(&self) -> Vec<Vec<usize>> {
        let mut s = vec![Vec::new(); self.k];
        for (i, &l) in self.labels.iter().enumerate() {
            s[l].push(i);
        }
        s
    }
}

/// Comma-separated row bitstrings, e.g. `110,001`.
impl fmt::Display for AssignmentMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (r, row) in self.rows().iter().enumerate() {
            if r > 0 {
                f.write_str(",")?;
            }
            for &b in row {
                f.write_str(if b == 1 { "1" } else { "0" })?;
            }
        }
        Ok(())
    }
}

impl FromStr for AssignmentMatrix {
    type Err = DrpmError;

    fn from_str(s: &str) -> Result<Self> {
        let rows = s
            .trim()
            .split(',')
            .map(|row| {
                row.trim()
                    .chars()
                    .map(|c| match c {
                        '0' => Ok(0u8),
                        '1' => Ok(1u8),
                        other => Err(DrpmError::Validation(format!(
                            "unexpected character {other:?} in partition string"
                        ))),
                    })
                    .collect::<Result<Vec<u8>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_rows(&rows)
    }
}

/// The pair `(ω, s)` with capacities; `n + K` free parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DrpmParams {
    pub mvhg: MvhgParams,
    pub scores: PlScores,
}

impl DrpmParams {
    pub fn new(mvhg: MvhgParams, scores: PlScores) -> Result<Self> {
        if scores.len() != mvhg.n() {
            return Err(DrpmError::param(
                "scores",
                format!("expected {} scores (one per element), got {}", mvhg.n(), scores.len()),
            ));
        }
        Ok(Self { mvhg, scores })
    }

    /// Capacities `m_k = n`, scale `β = 1`.
    pub fn with_defaults(omega: Vec<f64>, scores: Vec<f64>) -> Result<Self> {
        let n = scores.len();
        Self::new(
            MvhgParams::with_uniform_capacity(n, omega)?,
            PlScores::new(scores)?,
        )
    }

    /// All weights and scores equal to one.
    pub fn uniform(n: usize, k: usize) -> Result<Self> {
        Self::with_defaults(vec![1.0; k], vec![1.0; n])
    }

    pub fn n(&self) -> usize {
        self.mvhg.n()
    }

    pub fn k(&self) -> usize {
        self.mvhg.k()
    }

    pub fn num_parameters(&self) -> usize {
        self.n() + self.k()
    }

    pub fn noise_layout(&self) -> NoiseLayout {
        self.mvhg.noise_layout()
    }

    fn check_shape(&self, y: &AssignmentMatrix) -> Result<()> {
        if y.n() != self.n() || y.k() != self.k() {
            return Err(DrpmError::Validation(format!(
                "partition is {}x{} but the model is {}x{}",
                y.k(),
                y.n(),
                self.k(),
                self.n()
            )));
        }
        Ok(())
    }
}

/// `y_k = Σ_{i=ν_k+1}^{ν_k+n_k} π_i`.
pub fn build_partition(perm: &PermutationMatrix, counts: &SubsetSizes) -> Result<AssignmentMatrix> {
    if counts.total() != perm.n() {
        return Err(DrpmError::Validation(format!(
            "counts sum to {} but the permutation has {} rows",
            counts.total(),
            perm.n()
        )));
    }
    let mut labels = vec![0; perm.n()];
    let mut pos = 0;
    for (k, &c) in counts.0.iter().enumerate() {
        for &element in &perm.order()[pos..pos + c] {
            labels[element] = k;
        }
        pos += c;
    }
    AssignmentMatrix::from_labels(labels, counts.k())
}

/// `log |Π_Y| = Σ_k log n_k!`.
pub fn log_num_orderings(counts: &SubsetSizes) -> f64 {
    counts
        .0
        .iter()
        .map(|&c| (1..=c).map(|i| (i as f64).ln()).sum::<f64>())
        .sum()
}

fn total_orderings(counts: &SubsetSizes) -> u128 {
    counts
        .0
        .iter()
        .map(|&c| (1..=c as u128).fold(1u128, |a, b| a.saturating_mul(b)))
        .fold(0u128, |a, b| a.saturating_add(b))
}

/// Score mass of the subsets after `k`.
fn mass_after(scores: &[f64], subsets: &[Vec<usize>], k: usize) -> f64 {
    subsets[k + 1..]
        .iter()
        .flatten()
        .map(|&i| scores[i])
        .sum()
}

/// Exact `log p(Y; ω, s)`.
pub fn partition_log_pmf_exact(params: &DrpmParams, y: &AssignmentMatrix) -> Result<f64> {
    params.check_shape(y)?;
    let counts = y.counts();
    let required = total_orderings(&counts);
    if required > ORDERING_GUARD {
        return Err(DrpmError::Capacity {
            what: "exact PMF subset orderings",
            required,
            bound: ORDERING_GUARD,
            hint: "use partition_pmf_bounds (`--method bounds`) instead",
        });
    }
    let log_counts = params.mvhg.log_pmf(&counts);
    if log_counts == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    let s = params.scores.scores();
    let subsets = y.subsets();
    let mut total = log_counts;
    for (k, subset) in subsets.iter().enumerate() {
        if subset.is_empty() {
            continue;
        }
        let rest = mass_after(s, &subsets, k);
        let terms: Vec<f64> = all_permutations(subset.len())
            .iter()
            .map(|p| {
                let order: Vec<usize> = p.iter().map(|&i| subset[i]).collect();
                sequential_log_prob(s, &order, rest)
            })
            .collect();
        total += log_sum_exp(&terms).expect("non-empty subset");
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundsMode {
    /// Lower bound from the descending-score order inside every subset.
    Heuristic,
    /// Lower bound maximized over all orderings in `Π_Y`.
    Enumerate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PmfBounds {
    pub log_lower: f64,
    pub log_upper: f64,
}

/// `p(n) max_{π∈Π_Y} p(π) ≤ p(Y) ≤ |Π_Y| p(n) max_π p(π)`, in log space.
pub fn partition_pmf_bounds(
    params: &DrpmParams,
    y: &AssignmentMatrix,
    mode: BoundsMode,
) -> Result<PmfBounds> {
    params.check_shape(y)?;
    let counts = y.counts();
    let log_counts = params.mvhg.log_pmf(&counts);
    let log_max = pl_log_pmf(&params.scores, &pl_max_perm(&params.scores))?;
    let log_upper = log_num_orderings(&counts) + log_counts + log_max;
    if log_counts == f64::NEG_INFINITY {
        return Ok(PmfBounds {
            log_lower: f64::NEG_INFINITY,
            log_upper: f64::NEG_INFINITY,
        });
    }
    let s = params.scores.scores();
    let subsets = y.subsets();
    let mut log_lower = log_counts;
    match mode {
        BoundsMode::Heuristic => {
            for (k, subset) in subsets.iter().enumerate() {
                if subset.is_empty() {
                    continue;
                }
                let local: Vec<f64> = subset.iter().map(|&i| s[i]).collect();
                let order: Vec<usize> = argsort_descending(&local)
                    .into_iter()
                    .map(|i| subset[i])
                    .collect();
                log_lower += sequential_log_prob(s, &order, mass_after(s, &subsets, k));
            }
        }
        BoundsMode::Enumerate => {
            let required = total_orderings(&counts);
            if required > ORDERING_GUARD {
                return Err(DrpmError::Capacity {
                    what: "lower-bound ordering enumeration",
                    required,
                    bound: ORDERING_GUARD,
                    hint: "use the heuristic bounds mode",
                });
            }
            for (k, subset) in subsets.iter().enumerate() {
                if subset.is_empty() {
                    continue;
                }
                let rest = mass_after(s, &subsets, k);
                log_lower += all_permutations(subset.len())
                    .iter()
                    .map(|p| {
                        let order: Vec<usize> = p.iter().map(|&i| subset[i]).collect();
                        sequential_log_prob(s, &order, rest)
                    })
                    .fold(f64::NEG_INFINITY, f64::max);
            }
        }
    }
    Ok(PmfBounds {
        log_lower,
        log_upper,
    })
}

/// Draw `n ~ MVHG(ω)`, then `π ~ PL(s)`, and combine them.
pub fn sample_partition_hard<G: Rng + ?Sized>(params: &DrpmParams, rng: &mut G) -> AssignmentMatrix {
    let counts = params.mvhg.sample_hard(rng);
    let perm = pl_sample(&params.scores, rng);
    build_partition(&perm, &counts).expect("sampled counts sum to n")
}

/// Hard draw from stored noise.
pub fn partition_from_noise(params: &DrpmParams, noise: &FixedNoise) -> AssignmentMatrix {
    let counts = params.mvhg.hard_from_noise(&noise.count_gumbels);
    let perm = crate::permutation::pl_sample_from_noise(&params.scores, &noise.score_gumbels);
    build_partition(&perm, &counts).expect("sampled counts sum to n")
}

/// Relaxed assignment matrix with its hard twin.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedAssignment {
    /// `K × n`, non-negative.
    pub values: Vec<Vec<f64>>,
    pub tau: f64,
    pub hard: AssignmentMatrix,
    /// `K × n` gates `α̃_k`: weight of ordering position `i` in subset `k`.
    pub alpha: Vec<Vec<f64>>,
}

/// `f_i(x; τ) = σ((x − i + ε) / τ)` for 1-based position `i`.
pub fn boundary_gate(x: f64, i: usize, tau: f64, eps: f64) -> f64 {
    crate::autodiff::sigmoid((x - i as f64 + eps) / tau)
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps < 1.0 {
        Ok(())
    } else {
        Err(DrpmError::Domain {
            name: "eps",
            value: eps,
            expected: "0 < eps < 1",
        })
    }
}

/// Gates and rows of the relaxed assignment from relaxed permutation rows and
/// the `K − 1` interior subset boundaries `ν_2, …, ν_K`.
///
/// The outer boundaries `ν_1 = 0` and `ν_{K+1} = n` are exact, so the gates of
/// every position sum to one.
pub(crate) fn assemble_partition<R: Real>(
    perm_rows: &[Vec<R>],
    interior: &[R],
    anchor: R,
    tau: f64,
    eps: f64,
) -> (Vec<Vec<R>>, Vec<Vec<R>>) {
    let n = perm_rows.len();
    let k_groups = interior.len() + 1;
    let zero = anchor.lift(0.0);
    let one = anchor.lift(1.0);
    let cumulative = |b: usize| -> Vec<R> {
        if b == 0 {
            vec![zero; n]
        } else if b == k_groups {
            vec![one; n]
        } else {
            (1..=n)
                .map(|i| ((interior[b - 1] - i as f64 + eps) / tau).sigmoid())
                .collect()
        }
    };
    let mut gates = Vec::with_capacity(k_groups);
    let mut lower = cumulative(0);
    for b in 1..=k_groups {
        let upper = cumulative(b);
        gates.push(upper.iter().zip(&lower).map(|(&u, &l)| u - l).collect::<Vec<R>>());
        lower = upper;
    }
    let values = gates
        .iter()
        .map(|gate| {
            (0..n)
                .map(|col| {
                    (0..n)
                        .map(|i| gate[i] * perm_rows[i][col])
                        .reduce(|a, b| a + b)
                        .unwrap_or(zero)
                })
                .collect()
        })
        .collect();
    (gates, values)
}

/// Relaxed counterpart of [`build_partition`].
///
/// Boundaries come from the hard twin of `rcounts`, so the gates are sharp
/// sigmoids at the realized subset sizes; the rows come from `rperm`.
pub fn build_partition_relaxed(
    rperm: &RelaxedPermutation,
    rcounts: &RelaxedCounts,
    tau: f64,
    eps: f64,
) -> Result<RelaxedAssignment> {
    check_tau(tau)?;
    check_eps(eps)?;
    let hard = build_partition(&rperm.hard, &rcounts.hard)?;
    let ends = rcounts.hard.prefix_sums();
    let interior: Vec<f64> = ends[1..ends.len() - 1].iter().map(|&e| e as f64).collect();
    let (alpha, values) = assemble_partition(&rperm.values, &interior, 0.0, tau, eps);
    Ok(RelaxedAssignment {
        values,
        tau,
        hard,
        alpha,
    })
}

/// Relaxed two-stage draw; with the same RNG state its hard twin equals
/// [`sample_partition_hard`].
pub fn sample_partition_relaxed<G: Rng + ?Sized>(
    params: &DrpmParams,
    tau: f64,
    rng: &mut G,
) -> Result<RelaxedAssignment> {
    check_tau(tau)?;
    let noise = FixedNoise::draw(rng, &params.noise_layout());
    relaxed_partition_from_noise(params, &noise, tau)
}

pub fn relaxed_partition_from_noise(
    params: &DrpmParams,
    noise: &FixedNoise,
    tau: f64,
) -> Result<RelaxedAssignment> {
    let rcounts = params.mvhg.relaxed_from_noise(&noise.count_gumbels, tau);
    let rperm = neuralsort_relaxed(&params.scores.perturbed(&noise.score_gumbels), tau)?;
    build_partition_relaxed(&rperm, &rcounts, tau, DEFAULT_EPS)
}

/// How discrete quantities enter a differentiable forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    /// Everything continuous: relaxed counts `Σ_j j p_kj`, soft gates, soft rows.
    Relaxed,
    /// Boundaries carry the hard counts forward and the relaxed counts backward;
    /// rows stay soft.
    HardCounts,
    /// Every entry forward is the hard twin; derivatives are those of `HardCounts`.
    StraightThrough,
}

/// Shape of a model independent of its parameter values.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelShape {
    pub capacities: Vec<usize>,
    pub n: usize,
    pub beta: f64,
    ln_fact: Vec<f64>,
}

impl ModelShape {
    pub fn new(capacities: Vec<usize>, n: usize, beta: f64) -> Result<Self> {
        if capacities.is_empty() {
            return Err(DrpmError::param("K", "at least one group is required"));
        }
        if capacities.iter().sum::<usize>() < n {
            return Err(DrpmError::param("m", "total capacity is below n"));
        }
        let max = capacities.iter().copied().max().unwrap_or(0).max(n);
        Ok(Self {
            capacities,
            n,
            beta,
            ln_fact: crate::mvhg::ln_factorials(max),
        })
    }

    pub fn of(params: &DrpmParams) -> Self {
        Self {
            capacities: params.mvhg.capacities().to_vec(),
            n: params.n(),
            beta: params.scores.beta(),
            ln_fact: params.mvhg.ln_fact().to_vec(),
        }
    }

    pub fn k(&self) -> usize {
        self.capacities.len()
    }

    pub fn noise_layout(&self) -> NoiseLayout {
        NoiseLayout::new(&self.capacities, self.n)
    }

    pub(crate) fn ln_fact(&self) -> &[f64] {
        &self.ln_fact
    }
}

/// Output of the generic relaxed forward pass.
pub struct RelaxedForward<R> {
    /// Per group, relaxed one-hot over `0..=m_k`.
    pub count_simplex: Vec<Vec<R>>,
    /// Count value that entered the boundaries.
    pub count_values: Vec<R>,
    pub hard_counts: SubsetSizes,
    pub perm_rows: Vec<Vec<R>>,
    pub hard_perm: PermutationMatrix,
    pub gates: Vec<Vec<R>>,
    /// `K × n` relaxed assignment.
    pub values: Vec<Vec<R>>,
    pub hard: AssignmentMatrix,
}

/// Relaxed two-stage sample as a function of `(log ω, log s)` for fixed noise.
pub fn relaxed_forward<R: Real>(
    shape: &ModelShape,
    log_omega: &[R],
    log_scores: &[R],
    noise: &FixedNoise,
    tau: f64,
    eps: f64,
    estimator: Estimator,
) -> RelaxedForward<R> {
    let counts = relaxed_counts_generic(
        &shape.capacities,
        shape.n,
        log_omega,
        shape.ln_fact(),
        &noise.count_gumbels,
        tau,
    );
    let count_values: Vec<R> = counts
        .simplex
        .iter()
        .zip(&counts.hard)
        .map(|(p, &hard)| {
            let expected = p
                .iter()
                .enumerate()
                .skip(1)
                .map(|(j, &q)| q * j as f64)
                .fold(p[0] * 0.0, |a, b| a + b);
            match estimator {
                Estimator::Relaxed => expected,
                _ => expected.straight_through(hard as f64),
            }
        })
        .collect();
    let mut interior = Vec::with_capacity(shape.k().saturating_sub(1));
    let mut acc: Option<R> = None;
    for c in &count_values[..count_values.len() - 1] {
        let next = match acc {
            None => *c,
            Some(a) => a + *c,
        };
        interior.push(next);
        acc = Some(next);
    }
    let perturbed: Vec<R> = log_scores
        .iter()
        .zip(&noise.score_gumbels)
        .map(|(&ls, &g)| (ls + g) * shape.beta)
        .collect();
    let (perm_rows, hard_perm) = neuralsort_relaxed_generic(&perturbed, tau);
    let anchor = log_omega[0];
    let (gates, mut values) = assemble_partition(&perm_rows, &interior, anchor, tau, eps);
    let hard_counts = SubsetSizes(counts.hard);
    let hard = build_partition(&hard_perm, &hard_counts).expect("sampled counts sum to n");
    if estimator == Estimator::StraightThrough {
        for (k, row) in values.iter_mut().enumerate() {
            for (i, v) in row.iter_mut().enumerate() {
                let target = if hard.labels()[i] == k { 1.0 } else { 0.0 };
                *v = v.straight_through(target);
            }
        }
    }
    RelaxedForward {
        count_simplex: counts.simplex,
        count_values,
        hard_counts,
        perm_rows,
        hard_perm,
        gates,
        values,
        hard,
    }
}

impl RelaxedForward<f64> {
    pub fn expected_counts(&self) -> Vec<f64> {
        self.count_simplex.iter().map(|p| expected_index(p)).collect()
    }
}

//! Enumeration oracles, Monte-Carlo PMF estimates and the bounds-quality report.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{DrpmError, Result};
use crate::noise::{rng_from_seed, stream_rng};
use crate::partition::{
    partition_log_pmf_exact, partition_pmf_bounds, sample_partition_hard, AssignmentMatrix,
    BoundsMode, DrpmParams,
};

/// Largest `K^n` that [`enumerate_partitions`] lists.
pub const ENUMERATION_GUARD: u128 = 10_000_000;

/// Samples per parallel work item.
const CHUNK: usize = 4096;

/// Floor applied to uniform parameter draws in the random report configs.
pub const UNIFORM_FLOOR: f64 = 0.05;

/// Every labeled partition of `n` elements into `k` subsets, in lexicographic
/// order of the label vector (element 0 most significant).
pub fn enumerate_partitions(n: usize, k: usize) -> Result<Vec<AssignmentMatrix>> {
    if k == 0 {
        return Err(DrpmError::param("K", "at least one subset is required"));
    }
    let total = (k as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
    if total > ENUMERATION_GUARD {
        return Err(DrpmError::Capacity {
            what: "partition enumeration",
            required: total,
            bound: ENUMERATION_GUARD,
            hint: "reduce n or K",
        });
    }
    let mut out = Vec::with_capacity(total as usize);
    let mut labels = vec![0usize; n];
    loop {
        out.push(AssignmentMatrix::from_labels(labels.clone(), k)?);
        let mut pos = n;
        loop {
            if pos == 0 {
                return Ok(out);
            }
            pos -= 1;
            labels[pos] += 1;
            if labels[pos] < k {
                break;
            }
            labels[pos] = 0;
        }
    }
}

/// `exp(partition_log_pmf_exact)` for every partition, keyed by canonical string.
pub fn exact_pmf_table(params: &DrpmParams) -> Result<BTreeMap<String, f64>> {
    enumerate_partitions(params.n(), params.k())?
        .into_iter()
        .map(|y| Ok((y.to_string(), partition_log_pmf_exact(params, &y)?.exp())))
        .collect()
}

/// Sample counts per canonical partition string.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PartitionHistogram {
    pub counts: BTreeMap<String, u64>,
    pub total: u64,
}

impl PartitionHistogram {
    pub fn frequency(&self, key: &str) -> f64 {
        self.counts.get(key).copied().unwrap_or(0) as f64 / self.total as f64
    }

    pub fn frequencies(&self) -> BTreeMap<String, f64> {
        self.counts
            .iter()
            .map(|(k, &c)| (k.clone(), c as f64 / self.total as f64))
            .collect()
    }

    /// Adds another histogram; merge order does not matter.
    pub fn merge(&mut self, other: &PartitionHistogram) {
        for (k, c) in &other.counts {
            *self.counts.entry(k.clone()).or_insert(0) += c;
        }
        self.total += other.total;
    }
}

/// Worker count from `DRPM_THREADS`, if set to a positive integer.
pub fn env_workers() -> Option<usize> {
    std::env::var("DRPM_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&w| w > 0)
}

/// Runs `f` on a pool of `workers` threads, or the global pool when `None`.
pub(crate) fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .expect("thread pool")
            .install(f),
        None => f(),
    }
}

/// Hard draw `i` of the stream family keyed by `seed`.
pub fn sample_at(params: &DrpmParams, seed: u64, index: u64) -> AssignmentMatrix {
    sample_partition_hard(params, &mut stream_rng(seed, index))
}

/// `m` hard samples, sample `i` drawn from stream `i` of `seed`.
pub fn mc_pmf_estimate(params: &DrpmParams, m: u64, seed: u64) -> Result<PartitionHistogram> {
    mc_pmf_estimate_with_workers(params, m, seed, env_workers())
}

/// [`mc_pmf_estimate`] on an explicit number of workers; the result does not depend on it.
pub fn mc_pmf_estimate_with_workers(
    params: &DrpmParams,
    m: u64,
    seed: u64,
    workers: Option<usize>,
) -> Result<PartitionHistogram> {
    if m == 0 {
        return Err(DrpmError::param("M", "at least one sample is required"));
    }
    let chunks = m.div_ceil(CHUNK as u64);
    let merged: HashMap<Vec<usize>, u64> = with_workers(workers, || {
        (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut local: HashMap<Vec<usize>, u64> = HashMap::new();
                let end = ((c + 1) * CHUNK as u64).min(m);
                for i in c * CHUNK as u64..end {
                    let y = sample_at(params, seed, i);
                    *local.entry(y.labels().to_vec()).or_insert(0) += 1;
                }
                local
            })
            .reduce(HashMap::new, |mut a, b| {
                for (k, c) in b {
                    *a.entry(k).or_insert(0) += c;
                }
                a
            })
    });
    let mut counts = BTreeMap::new();
    for (labels, c) in merged {
        counts.insert(AssignmentMatrix::from_labels(labels, params.k())?.to_string(), c);
    }
    Ok(PartitionHistogram { counts, total: m })
}

/// Fraction of `m` stream samples equal to `y`.
pub fn mc_hit_rate(params: &DrpmParams, y: &AssignmentMatrix, m: u64, seed: u64) -> f64 {
    let hits: u64 = with_workers(env_workers(), || {
        (0..m)
            .into_par_iter()
            .filter(|&i| sample_at(params, seed, i) == *y)
            .count() as u64
    });
    hits as f64 / m as f64
}

fn check_support(h: &PartitionHistogram, exact: &BTreeMap<String, f64>) -> Result<()> {
    if let Some(key) = h.counts.keys().find(|k| !exact.contains_key(*k)) {
        return Err(DrpmError::Validation(format!(
            "histogram cell {key} is not in the exact table"
        )));
    }
    if h.total == 0 {
        return Err(DrpmError::Validation("empty histogram".into()));
    }
    Ok(())
}

/// `½ Σ |p̂ − p|` over the exact table's support.
pub fn tv_distance(h: &PartitionHistogram, exact: &BTreeMap<String, f64>) -> Result<f64> {
    check_support(h, exact)?;
    Ok(0.5
        * exact
            .iter()
            .map(|(k, &p)| (h.frequency(k) - p).abs())
            .sum::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSquare {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson statistic over cells with expected count at least 5.
pub fn chi_square_stat(h: &PartitionHistogram, exact: &BTreeMap<String, f64>) -> Result<ChiSquare> {
    check_support(h, exact)?;
    let m = h.total as f64;
    let mut statistic = 0.0;
    let mut cells = 0usize;
    for (k, &p) in exact {
        let expected = p * m;
        if expected >= 5.0 {
            let observed = h.counts.get(k).copied().unwrap_or(0) as f64;
            statistic += (observed - expected).powi(2) / expected;
            cells += 1;
        }
    }
    if cells < 2 {
        return Err(DrpmError::Validation(
            "fewer than two cells have an expected count of 5".into(),
        ));
    }
    let dof = cells - 1;
    let dist = ChiSquared::new(dof as f64).expect("positive degrees of freedom");
    Ok(ChiSquare {
        statistic,
        dof,
        p_value: dist.sf(statistic),
    })
}

/// The four parameter settings of the bounds report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum BoundsConfig {
    Equal,
    RandOmega,
    RandS,
    RandBoth,
}

impl BoundsConfig {
    pub const ALL: [BoundsConfig; 4] = [
        BoundsConfig::Equal,
        BoundsConfig::RandOmega,
        BoundsConfig::RandS,
        BoundsConfig::RandBoth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BoundsConfig::Equal => "equal",
            BoundsConfig::RandOmega => "rand-omega",
            BoundsConfig::RandS => "rand-s",
            BoundsConfig::RandBoth => "rand-both",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| {
                DrpmError::Validation(format!(
                    "unknown config {s:?}; expected equal, rand-omega, rand-s or rand-both"
                ))
            })
    }

    /// Whether scores vary, which is when the upper bound loosens.
    pub fn varies_scores(self) -> bool {
        matches!(self, BoundsConfig::RandS | BoundsConfig::RandBoth)
    }

    /// Parameters for this config; random entries are `max(U(0,1), 0.05)`.
    pub fn params(self, n: usize, k: usize, seed: u64) -> Result<DrpmParams> {
        let mut rng = rng_from_seed(seed);
        let mut uniform = |len: usize| -> Vec<f64> {
            (0..len).map(|_| rng.gen::<f64>().max(UNIFORM_FLOOR)).collect()
        };
        let omega = match self {
            BoundsConfig::RandOmega | BoundsConfig::RandBoth => uniform(k),
            _ => vec![1.0; k],
        };
        let scores = match self {
            BoundsConfig::RandS | BoundsConfig::RandBoth => uniform(n),
            _ => vec![1.0; n],
        };
        DrpmParams::with_defaults(omega, scores)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundsRow {
    pub partition: String,
    pub count: u64,
    pub freq: f64,
    pub exact: Option<f64>,
    pub log_exact: Option<f64>,
    pub log_lower: f64,
    pub log_upper: f64,
}

/// Slack allowed when comparing log-probabilities that agree mathematically.
pub const LOG_SLACK: f64 = 1e-12;

impl BoundsRow {
    /// `log p_L ≤ log p ≤ log p_U` up to [`LOG_SLACK`].
    pub fn sandwiched(&self) -> bool {
        match self.log_exact {
            Some(lp) => self.log_lower <= lp + LOG_SLACK && lp <= self.log_upper + LOG_SLACK,
            None => self.log_lower <= self.log_upper,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundsReport {
    pub rows: Vec<BoundsRow>,
    pub total: u64,
}

/// One row per partition: MC estimate from `m` samples, exact PMF when
/// computable, and both bounds.
pub fn bounds_report(params: &DrpmParams, m: u64, seed: u64) -> Result<BoundsReport> {
    let hist = mc_pmf_estimate(params, m, seed)?;
    let rows = enumerate_partitions(params.n(), params.k())?
        .into_iter()
        .map(|y| {
            let key = y.to_string();
            let log_exact = match partition_log_pmf_exact(params, &y) {
                Ok(lp) => Some(lp),
                Err(DrpmError::Capacity { .. }) => None,
                Err(e) => return Err(e),
            };
            let b = partition_pmf_bounds(params, &y, BoundsMode::Heuristic)?;
            let count = hist.counts.get(&key).copied().unwrap_or(0);
            Ok(BoundsRow {
                freq: count as f64 / m as f64,
                partition: key,
                count,
                exact: log_exact.map(f64::exp),
                log_exact,
                log_lower: b.log_lower,
                log_upper: b.log_upper,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundsReport { rows, total: m })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecileSummary {
    /// Median `p_U / p` per decile, lowest-probability decile first.
    pub median_ratio: Vec<f64>,
}

impl DecileSummary {
    pub fn bottom(&self) -> f64 {
        self.median_ratio[0]
    }

    pub fn top(&self) -> f64 {
        *self.median_ratio.last().expect("ten deciles")
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

impl BoundsReport {
    pub const CSV_HEADER: &'static str = "partition,count,freq,exact,log_lower,log_upper";

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for r in &self.rows {
            let exact = r.exact.map_or_else(|| "NA".to_string(), |p| format!("{p:.16e}"));
            writeln!(
                out,
                "\"{}\",{},{:.16e},{},{:.16e},{:.16e}",
                r.partition, r.count, r.freq, exact, r.log_lower, r.log_upper
            )?;
        }
        Ok(())
    }

    pub fn sandwich_fraction(&self) -> f64 {
        self.rows.iter().filter(|r| r.sandwiched()).count() as f64 / self.rows.len() as f64
    }

    /// Largest `|p_U − p| / p` over rows with an exact value.
    pub fn max_upper_gap(&self) -> f64 {
        self.rows
            .iter()
            .filter_map(|r| r.log_exact.map(|lp| (r.log_upper - lp).exp_m1().abs()))
            .fold(0.0, f64::max)
    }

    /// Rows sorted by probability (exact when known, MC otherwise) and cut
    /// into ten equal-count deciles; each decile reports its median `p_U / p`.
    /// Rows with zero reference probability are skipped.
    pub fn deciles(&self) -> DecileSummary {
        let mut pairs: Vec<(f64, f64)> = self
            .rows
            .iter()
            .filter_map(|r| match r.log_exact {
                Some(lp) => Some((lp.exp(), (r.log_upper - lp).exp())),
                None => (r.freq > 0.0).then(|| (r.freq, r.log_upper.exp() / r.freq)),
            })
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let len = pairs.len();
        let median_ratio = (0..10)
            .map(|d| {
                let lo = d * len / 10;
                let hi = ((d + 1) * len / 10).max(lo + 1).min(len);
                let mut ratios: Vec<f64> = pairs[lo..hi].iter().map(|p| p.1).collect();
                median(&mut ratios)
            })
            .collect();
        DecileSummary { median_ratio }
    }

    /// Histogram view of the MC column.
    pub fn histogram(&self) -> PartitionHistogram {
        PartitionHistogram {
            counts: self
                .rows
                .iter()
                .filter(|r| r.count > 0)
                .map(|r| (r.partition.clone(), r.count))
                .collect(),
            total: self.total,
        }
    }

    pub fn exact_table(&self) -> Option<BTreeMap<String, f64>> {
        self.rows
            .iter()
            .map(|r| r.exact.map(|p| (r.partition.clone(), p)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumeration_sizes_and_order() {
        assert_eq!(enumerate_partitions(1, 2).unwrap().len(), 2);
        assert_eq!(enumerate_partitions(5, 5).unwrap().len(), 3125);
        let keys: Vec<String> = enumerate_partitions(2, 2)
            .unwrap()
            .iter()
            .map(|y| y.to_string())
            .collect();
        assert_eq!(keys, ["11,00", "10,01", "01,10", "00,11"]);
        assert!(matches!(
            enumerate_partitions(24, 2),
            Err(DrpmError::Capacity { .. })
        ));
    }

    #[test]
    fn tv_examples() {
        let exact: BTreeMap<String, f64> = [("1,0".to_string(), 0.5), ("0,1".to_string(), 0.5)].into();
        let mut h = PartitionHistogram::default();
        h.counts.insert("1,0".into(), 10);
        h.total = 10;
        assert_eq!(tv_distance(&h, &exact).unwrap(), 0.5);
        h.counts.insert("0,1".into(), 10);
        h.total = 20;
        assert_eq!(tv_distance(&h, &exact).unwrap(), 0.0);
        h.counts.insert("11".into(), 1);
        assert!(tv_distance(&h, &exact).is_err());
    }

    #[test]
    fn single_subset_histogram() {
        let params = DrpmParams::with_defaults(vec![1.0], vec![1.0, 2.0, 3.0]).unwrap();
        let h = mc_pmf_estimate(&params, 1000, 3).unwrap();
        assert_eq!(h.counts.len(), 1);
        assert_eq!(h.counts["111"], 1000);
    }

    #[test]
    fn worker_count_does_not_change_histogram() {
        let params = DrpmParams::with_defaults(vec![0.5, 2.0], vec![1.0, 0.3, 2.0]).unwrap();
        let a = mc_pmf_estimate_with_workers(&params, 20_000, 9, Some(1)).unwrap();
        let b = mc_pmf_estimate_with_workers(&params, 20_000, 9, Some(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn config_names_round_trip() {
        for c in BoundsConfig::ALL {
            assert_eq!(BoundsConfig::parse(c.name()).unwrap(), c);
        }
        assert!(BoundsConfig::parse("other").is_err());
        let p = BoundsConfig::RandBoth.params(5, 5, 1).unwrap();
        assert!(p.scores.scores().iter().all(|&s| (0.05..1.0).contains(&s)));
    }
}

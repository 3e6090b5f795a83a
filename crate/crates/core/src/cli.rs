//! The `drpm` command-line tool.
//!
//! Exit codes: 0 success, 1 I/O, 2 validation, 3 capacity, 4 check failure.

use std::ffi::OsString;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{DrpmError, Result};
use crate::estimate::{
    bounds_report, env_workers, mc_hit_rate, sample_at, tv_distance, with_workers, BoundsConfig,
};
use crate::grad::{draw_untied_noise, gradcheck, point_tie_margin, required_margin, GradientReport, Objective, ParamPoint, FD_STEP};
use crate::learn::{fit_supervised, FitConfig, SupervisedTarget};
use crate::mvhg::MvhgParams;
use crate::noise::stream_rng;
use crate::partition::{
    partition_log_pmf_exact, partition_pmf_bounds, sample_partition_relaxed, AssignmentMatrix,
    BoundsMode, DrpmParams, ModelShape,
};
use crate::permutation::PlScores;

pub const EXIT_CHECK_FAILED: i32 = 4;

/// Model parameters as read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsFile {
    #[serde(rename = "K")]
    pub k: usize,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<Vec<usize>>,
    pub omega: Vec<f64>,
    pub scores: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
}

impl ParamsFile {
    pub fn into_params(self) -> Result<DrpmParams> {
        if self.omega.len() != self.k {
            return Err(DrpmError::param(
                "omega",
                format!("expected K = {} weights, got {}", self.k, self.omega.len()),
            ));
        }
        if self.scores.len() != self.n {
            return Err(DrpmError::param(
                "scores",
                format!("expected n = {} scores, got {}", self.n, self.scores.len()),
            ));
        }
        let m = self.m.unwrap_or_else(|| vec![self.n; self.k]);
        if m.len() != self.k {
            return Err(DrpmError::param(
                "m",
                format!("expected K = {} capacities, got {}", self.k, m.len()),
            ));
        }
        DrpmParams::new(
            MvhgParams::new(m, self.n, self.omega)?,
            PlScores::with_beta(self.scores, self.beta.unwrap_or(1.0))?,
        )
    }

    pub fn from_params(params: &DrpmParams) -> Self {
        let m = params.mvhg.capacities().to_vec();
        let beta = params.scores.beta();
        Self {
            k: params.k(),
            n: params.n(),
            m: (m.iter().any(|&c| c != params.n())).then_some(m),
            omega: params.mvhg.omega().to_vec(),
            scores: params.scores.scores().to_vec(),
            beta: (beta != 1.0).then_some(beta),
        }
    }

    pub fn read(path: &Path) -> Result<DrpmParams> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str::<ParamsFile>(&text)?.into_params()
    }
}

/// Supervised fit target as read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetFile {
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub partition: String,
    #[serde(default)]
    pub alpha: Option<f64>,
}

impl TargetFile {
    pub fn into_target(self) -> Result<SupervisedTarget> {
        let y: AssignmentMatrix = self.partition.parse()?;
        if y.n() != self.n || y.k() != self.k {
            return Err(DrpmError::param(
                "partition",
                format!("is {}x{} but n = {}, K = {}", y.k(), y.n(), self.n, self.k),
            ));
        }
        SupervisedTarget::new(y, self.alpha.unwrap_or(1.0))
    }
}

#[derive(Debug, Parser)]
#[command(name = "drpm", version, about = "Two-stage differentiable random partition model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SampleMode {
    Hard,
    Relaxed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PmfMethod {
    Exact,
    Bounds,
    Mc,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw partitions; one CSV row per sample.
    Sample {
        #[arg(long)]
        params: PathBuf,
        #[arg(long, default_value_t = 1)]
        num: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = SampleMode::Hard)]
        mode: SampleMode,
        /// Temperature, required in relaxed mode.
        #[arg(long)]
        tau: Option<f64>,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the PMF of one partition.
    Pmf {
        #[arg(long)]
        params: PathBuf,
        /// Canonical form, e.g. `110,001`.
        #[arg(long)]
        partition: String,
        #[arg(long, value_enum, default_value_t = PmfMethod::Exact)]
        method: PmfMethod,
        #[arg(long, default_value_t = 1_000_000)]
        samples: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Bounds-quality report over every partition.
    BoundsAblation {
        #[arg(long, default_value_t = 5)]
        n: usize,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long = "M", default_value_t = 1_000_000)]
        m: u64,
        /// equal, rand-omega, rand-s, rand-both, or all.
        #[arg(long, default_value = "all")]
        config: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare tape gradients with central differences.
    Gradcheck {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        objective: String,
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
        #[arg(long, default_value_t = 20)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fit parameters to a supervised target partition.
    Fit {
        #[arg(long)]
        target: PathBuf,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses `args` (program name first) and runs the command; returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(stderr, "{e}");
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command, stdout, stderr) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn execute(command: Command, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Sample {
            params,
            num,
            seed,
            mode,
            tau,
            out,
        } => {
            let params = ParamsFile::read(&params)?;
            let text = sample_csv(&params, num, seed, mode, tau)?;
            match out {
                Some(path) => fs::write(path, text)?,
                None => stdout.write_all(text.as_bytes())?,
            }
            Ok(0)
        }
        Command::Pmf {
            params,
            partition,
            method,
            samples,
            seed,
        } => {
            let params = ParamsFile::read(&params)?;
            let y: AssignmentMatrix = partition.parse()?;
            let value = match method {
                PmfMethod::Exact => {
                    let lp = partition_log_pmf_exact(&params, &y)?;
                    json!({"method": "exact", "partition": partition, "log_p": lp, "p": lp.exp()})
                }
                PmfMethod::Bounds => {
                    let b = partition_pmf_bounds(&params, &y, BoundsMode::Heuristic)?;
                    json!({"method": "bounds", "partition": partition,
                           "log_lower": b.log_lower, "log_upper": b.log_upper})
                }
                PmfMethod::Mc => {
                    if samples == 0 {
                        return Err(DrpmError::param("samples", "must be at least 1"));
                    }
                    if y.n() != params.n() || y.k() != params.k() {
                        return Err(DrpmError::Validation(format!(
                            "partition is {}x{} but the model is {}x{}",
                            y.k(),
                            y.n(),
                            params.k(),
                            params.n()
                        )));
                    }
                    let p = mc_hit_rate(&params, &y, samples, seed);
                    let stderr_p = (p * (1.0 - p) / samples as f64).sqrt();
                    json!({"method": "mc", "partition": partition, "samples": samples,
                           "estimate": p, "stderr": stderr_p})
                }
            };
            writeln!(stdout, "{}", serde_json::to_string(&value)?)?;
            Ok(0)
        }
        Command::BoundsAblation {
            n,
            k,
            m,
            config,
            seed,
            out,
        } => {
            let configs = if config == "all" {
                BoundsConfig::ALL.to_vec()
            } else {
                vec![BoundsConfig::parse(&config)?]
            };
            fs::create_dir_all(&out)?;
            let mut all_sandwiched = true;
            for c in configs {
                let params = c.params(n, k, seed)?;
                let report = bounds_report(&params, m, seed)?;
                let path = out.join(format!("bounds_{}.csv", c.name()));
                let mut file = BufWriter::new(fs::File::create(&path)?);
                report.write_csv(&mut file)?;
                file.flush()?;
                let sandwich = report.sandwich_fraction();
                all_sandwiched &= sandwich == 1.0;
                let deciles = report.deciles();
                let tv = report
                    .exact_table()
                    .map(|t| tv_distance(&report.histogram(), &t))
                    .transpose()?;
                writeln!(
                    stdout,
                    "config={} partitions={} sandwich={:.3} max_upper_gap={:.3e} tv={}",
                    c.name(),
                    report.rows.len(),
                    sandwich,
                    report.max_upper_gap(),
                    tv.map_or_else(|| "NA".into(), |t| format!("{t:.4}"))
                )?;
                let ratios: Vec<String> =
                    deciles.median_ratio.iter().map(|r| format!("{r:.4}")).collect();
                writeln!(
                    stdout,
                    "config={} median_upper_ratio_by_decile(low->high)={}",
                    c.name(),
                    ratios.join(",")
                )?;
            }
            Ok(if all_sandwiched { 0 } else { EXIT_CHECK_FAILED })
        }
        Command::Gradcheck {
            params,
            objective,
            tau,
            trials,
            seed,
        } => {
            let params = ParamsFile::read(&params)?;
            let shape = ModelShape::of(&params);
            let obj = Objective::from_name(&objective, &shape)?;
            let point = ParamPoint::from_params(&params);
            let margin = required_margin(&obj, &shape, FD_STEP);
            if matches!(obj, Objective::KlPerm { .. }) && point_tie_margin(&point) < margin {
                writeln!(
                    stderr,
                    "warning: tied log scores; {} is not differentiable at these parameters",
                    obj.name()
                )?;
            }
            writeln!(stdout, "trial,{}", GradientReport::CSV_HEADER)?;
            let mut failed = 0;
            for trial in 0..trials {
                let (noise, redrawn) = draw_untied_noise(&shape, &point, seed, trial, margin);
                let report = gradcheck(&obj, &shape, &point, &noise, tau, FD_STEP)?;
                let mut rows = Vec::new();
                report.write_csv_rows(&mut rows)?;
                for line in String::from_utf8_lossy(&rows).lines() {
                    writeln!(stdout, "{trial},{line}")?;
                }
                writeln!(stderr, "trial {trial}: {report} (redrawn {redrawn})")?;
                if !report.passed() {
                    failed += 1;
                }
            }
            writeln!(stderr, "{failed} of {trials} trials failed")?;
            Ok(if failed == 0 { 0 } else { EXIT_CHECK_FAILED })
        }
        Command::Fit {
            target,
            steps,
            seed,
            out,
        } => {
            let text = fs::read_to_string(&target)?;
            let file: TargetFile = serde_json::from_str(&text)?;
            let (n, k) = (file.n, file.k);
            let target = file.into_target()?;
            let config = FitConfig {
                steps,
                seed,
                ..FitConfig::default()
            };
            let result = fit_supervised(&target, n, k, &config)?;
            fs::create_dir_all(&out)?;
            let mut trace = BufWriter::new(fs::File::create(out.join("trace.csv"))?);
            writeln!(trace, "step,tau,loss,l1,l2")?;
            for r in &result.trace {
                writeln!(trace, "{},{},{},{},{}", r.step, fmt(r.tau), fmt(r.loss), fmt(r.l1), fmt(r.l2))?;
            }
            trace.flush()?;
            let shape = ModelShape::new(vec![n; k], n, 1.0)?;
            let learned = ParamsFile::from_params(&result.point.to_params(&shape)?);
            fs::write(out.join("params.json"), serde_json::to_string_pretty(&learned)? + "\n")?;
            writeln!(stdout, "target:    {}", target.target)?;
            writeln!(stdout, "predicted: {}", result.partition)?;
            writeln!(stdout, "match: {}", result.matched)?;
            Ok(0)
        }
    }
}

fn sample_csv(
    params: &DrpmParams,
    num: u64,
    seed: u64,
    mode: SampleMode,
    tau: Option<f64>,
) -> Result<String> {
    let lines: Vec<String> = match mode {
        SampleMode::Hard => with_workers(env_workers(), || {
            (0..num)
                .into_par_iter()
                .map(|i| format!("\"{}\"", sample_at(params, seed, i)))
                .collect()
        }),
        SampleMode::Relaxed => {
            let tau = tau.ok_or_else(|| DrpmError::param("tau", "required in relaxed mode"))?;
            with_workers(env_workers(), || {
                (0..num)
                    .into_par_iter()
                    .map(|i| {
                        let r = sample_partition_relaxed(params, tau, &mut stream_rng(seed, i))?;
                        let mut cells: Vec<String> = r.values.iter().flatten().map(|&v| fmt(v)).collect();
                        cells.push(format!("\"{}\"", r.hard));
                        Ok(cells.join(","))
                    })
                    .collect::<Result<Vec<String>>>()
            })?
        }
    };
    let header = match mode {
        SampleMode::Hard => "partition".to_string(),
        SampleMode::Relaxed => {
            let mut cols: Vec<String> = (0..params.k())
                .flat_map(|k| (0..params.n()).map(move |i| format!("y_{k}_{i}")))
                .collect();
            cols.push("hard".into());
            cols.join(",")
        }
    };
    let mut text = String::with_capacity(lines.iter().map(|l| l.len() + 1).sum::<usize>() + 64);
    text.push_str(&header);
    text.push('\n');
    for l in lines {
        text.push_str(&l);
        text.push('\n');
    }
    Ok(text)
}

/// Entry point of the binary.
pub fn main() -> i32 {
    let stdout = io::stdout();
    let stderr = io::stderr();
    run(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}

//! Experiment drivers behind the command-line verbs. Each returns a
//! [`RunRecord`] that serializes to JSON, or to CSV for its series.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::als::{decompose, AlsOptions, Preprocess, Solver};
use crate::dense::khatri_rao_chain;
use crate::error::{Error, Result};
use crate::io::{parse_tns, save_model, TnsOptions};
use crate::krp::{KrpSampler, RowOrder};
use crate::lstsq::{
    distortion, leverage_scores, product_lev_sample, residual_epsilon, sketched_design, solve_sampled,
    spiked_gaussian_factors, KroneckerRhs, SketchConfig,
};
use crate::tensor::Tensor;

/// Largest Khatri-Rao height the distribution check will enumerate.
pub const ENUMERATION_LIMIT: u128 = 1 << 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    /// Wall time per phase, seconds.
    pub timings: BTreeMap<String, f64>,
    pub series: BTreeMap<String, Vec<f64>>,
    pub summary: BTreeMap<String, f64>,
    pub format: String,
}

impl RunRecord {
    fn new(command: &str, config: serde_json::Value, seed: u64) -> Self {
        RunRecord {
            command: command.into(),
            config,
            seed,
            timings: BTreeMap::new(),
            series: BTreeMap::new(),
            summary: BTreeMap::new(),
            format: "json".into(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Series as CSV columns; shorter series leave trailing cells empty.
    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let to_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(self.series.keys()).map_err(to_err)?;
        let height = self.series.values().map(Vec::len).max().unwrap_or(0);
        for i in 0..height {
            let row = self
                .series
                .values()
                .map(|s| s.get(i).map_or(String::new(), |v| v.to_string()));
            w.write_record(row).map_err(to_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(reader: impl std::io::Read) -> Result<BTreeMap<String, Vec<f64>>> {
        let mut r = csv::Reader::from_reader(reader);
        let to_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
        let names: Vec<String> = r.headers().map_err(to_err)?.iter().map(String::from).collect();
        let mut out: BTreeMap<String, Vec<f64>> = names.iter().map(|n| (n.clone(), Vec::new())).collect();
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(to_err)?;
            for (name, cell) in names.iter().zip(rec.iter()) {
                if cell.is_empty() {
                    continue;
                }
                let v = cell.parse().map_err(|_| Error::Parse {
                    line: line + 2,
                    msg: format!("bad number {cell:?}"),
                })?;
                out.get_mut(name).expect("known column").push(v);
            }
        }
        Ok(out)
    }
}

/// Median, quartiles, 1.5 IQR whiskers and outlier count.
pub fn box_stats(values: &[f64]) -> BTreeMap<&'static str, f64> {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let q = |p: f64| {
        if v.is_empty() {
            return f64::NAN;
        }
        let x = p * (v.len() - 1) as f64;
        let (lo, hi) = (x.floor() as usize, x.ceil() as usize);
        v[lo] + (x - lo as f64) * (v[hi] - v[lo])
    };
    let (q1, med, q3) = (q(0.25), q(0.5), q(0.75));
    let iqr = q3 - q1;
    let (fence_lo, fence_hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside: Vec<f64> = v.iter().copied().filter(|x| *x >= fence_lo && *x <= fence_hi).collect();
    BTreeMap::from([
        ("median", med),
        ("q1", q1),
        ("q3", q3),
        ("whisker_lo", inside.first().copied().unwrap_or(f64::NAN)),
        ("whisker_hi", inside.last().copied().unwrap_or(f64::NAN)),
        ("outliers", (v.len() - inside.len()) as f64),
    ])
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Least-squares slope of `y` on `x`.
pub fn slope(x: &[f64], y: &[f64]) -> f64 {
    let (mx, _) = mean_std(x);
    let (my, _) = mean_std(y);
    let num: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    num / den
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DistCheckConfig {
    pub modes: usize,
    pub rows: usize,
    pub rank: usize,
    pub samples: usize,
    pub spike_fraction: f64,
    pub seed: u64,
}

impl Default for DistCheckConfig {
    fn default() -> Self {
        DistCheckConfig {
            modes: 3,
            rows: 8,
            rank: 8,
            samples: 50_000,
            spike_fraction: 0.01,
            seed: 0,
        }
    }
}

/// Draws from the sampler and compares the histogram against the exact
/// leverage distribution of the materialized Khatri-Rao product.
pub fn cmd_dist_check(cfg: &DistCheckConfig) -> Result<RunRecord> {
    let size = (cfg.rows as u128).checked_pow(cfg.modes as u32).unwrap_or(u128::MAX);
    if size > ENUMERATION_LIMIT {
        return Err(Error::TooLarge {
            what: "Khatri-Rao height",
            size,
            limit: ENUMERATION_LIMIT,
        });
    }
    let mut rec = RunRecord::new("dist-check", serde_json::to_value(cfg)?, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let factors = spiked_gaussian_factors(cfg.modes, cfg.rows, cfg.rank, cfg.spike_fraction, &mut rng);

    let t = Instant::now();
    let a = khatri_rao_chain(&factors.iter().collect::<Vec<_>>())?;
    let lev = leverage_scores(&a)?;
    let total: f64 = lev.iter().sum();
    let rank = crate::dense::eigh_psd(&crate::dense::gram(&a))?.rank() as f64;
    if (total - rank).abs() > 1e-8 * rank.max(1.0) {
        return Err(Error::InvalidInput(format!(
            "leverage scores sum to {total}, rank is {rank}"
        )));
    }
    let exact: Vec<f64> = lev.iter().map(|l| l / total).collect();
    rec.timings.insert("oracle".into(), t.elapsed().as_secs_f64());

    let t = Instant::now();
    let sampler = KrpSampler::new(&factors)?;
    rec.timings.insert("construct".into(), t.elapsed().as_secs_f64());
    let t = Instant::now();
    let batch = sampler.sample(None, cfg.samples, &mut rng)?;
    rec.timings.insert("sample".into(), t.elapsed().as_secs_f64());

    let mut counts = vec![0usize; exact.len()];
    for f in batch.flat_indices(RowOrder::FirstSlowest) {
        counts[f] += 1;
    }
    let hist: Vec<f64> = counts.iter().map(|&c| c as f64 / cfg.samples as f64).collect();
    let tv = 0.5 * hist.iter().zip(&exact).map(|(h, e)| (h - e).abs()).sum::<f64>();
    rec.summary.insert("tv_distance".into(), tv);
    rec.summary.insert("leverage_sum".into(), total);
    rec.summary.insert("rank".into(), rank);
    rec.series.insert("exact".into(), exact);
    rec.series.insert("empirical".into(), hist);
    Ok(rec)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RuntimeBenchConfig {
    pub modes: Vec<usize>,
    pub ranks: Vec<usize>,
    pub rows: Vec<usize>,
    pub samples: usize,
    pub trials: usize,
    pub seed: u64,
}

/// Construction and sampling times over a grid of `N`, `R` and `I`.
pub fn cmd_runtime_bench(cfg: &RuntimeBenchConfig) -> Result<RunRecord> {
    if cfg.trials == 0 || cfg.samples == 0 {
        return Err(Error::InvalidInput("trials and samples must be positive".into()));
    }
    let mut rec = RunRecord::new("runtime-bench", serde_json::to_value(cfg)?, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let cols = ["modes", "rank", "rows", "construct_mean", "construct_std", "sample_mean", "sample_std"];
    let mut table: Vec<Vec<f64>> = vec![Vec::new(); cols.len()];
    let start = Instant::now();
    for &n in &cfg.modes {
        for &r in &cfg.ranks {
            let mut log_i = Vec::new();
            let mut log_build = Vec::new();
            let mut log_draw = Vec::new();
            for &i in &cfg.rows {
                let mut build = Vec::with_capacity(cfg.trials);
                let mut draw = Vec::with_capacity(cfg.trials);
                for _ in 0..cfg.trials {
                    let factors = spiked_gaussian_factors(n, i, r, 0.0, &mut rng);
                    let t = Instant::now();
                    let s = KrpSampler::new(&factors)?;
                    build.push(t.elapsed().as_secs_f64());
                    let t = Instant::now();
                    s.sample(None, cfg.samples, &mut rng)?;
                    draw.push(t.elapsed().as_secs_f64() / cfg.samples as f64);
                }
                let (bm, bs) = mean_std(&build);
                let (dm, ds) = mean_std(&draw);
                for (col, v) in table.iter_mut().zip([n as f64, r as f64, i as f64, bm, bs, dm, ds]) {
                    col.push(v);
                }
                log_i.push((i as f64).ln());
                log_build.push(bm.ln());
                log_draw.push(dm.ln());
            }
            if cfg.rows.len() > 1 {
                rec.summary.insert(format!("construct_loglog_slope_n{n}_r{r}"), slope(&log_i, &log_build));
                rec.summary.insert(format!("sample_loglog_slope_n{n}_r{r}"), slope(&log_i, &log_draw));
            }
        }
    }
    rec.timings.insert("total".into(), start.elapsed().as_secs_f64());
    for (name, col) in cols.iter().zip(table) {
        rec.series.insert((*name).into(), col);
    }
    Ok(rec)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    /// Exact Khatri-Rao leverage scores.
    Exact,
    /// Product of per-factor leverage scores.
    Product,
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(SamplerKind::Exact),
            "product" => Ok(SamplerKind::Product),
            other => Err(Error::InvalidInput(format!("unknown sampler {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LstsqBenchConfig {
    pub modes: usize,
    pub rows: usize,
    pub rank: usize,
    pub samples: usize,
    pub trials: usize,
    pub sampler: SamplerKind,
    pub spike_fraction: f64,
    pub seed: u64,
}

/// Per-trial distortion and residual inflation on fresh spiked Gaussian
/// factors with a Kronecker right-hand side.
pub fn cmd_lstsq_bench(cfg: &LstsqBenchConfig) -> Result<RunRecord> {
    if cfg.trials == 0 {
        return Err(Error::InvalidInput("trials must be positive".into()));
    }
    let mut rec = RunRecord::new("lstsq-bench", serde_json::to_value(cfg)?, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let modes: Vec<usize> = (0..cfg.modes).collect();
    let mut ds = Vec::with_capacity(cfg.trials);
    let mut eps = Vec::with_capacity(cfg.trials);
    let start = Instant::now();
    for _ in 0..cfg.trials {
        let factors = spiked_gaussian_factors(cfg.modes, cfg.rows, cfg.rank, cfg.spike_fraction, &mut rng);
        let rhs = KroneckerRhs::random(&vec![cfg.rows; cfg.modes], &mut rng);
        let sampler = KrpSampler::new(&factors)?;
        let batch = match cfg.sampler {
            SamplerKind::Exact => sampler.sample(None, cfg.samples, &mut rng)?,
            SamplerKind::Product => product_lev_sample(&factors, None, cfg.samples, &mut rng)?,
        };
        ds.push(distortion(&sketched_design(&batch)?, &sampler.product_gram(None)?)?);
        let x = solve_sampled(&batch, &rhs.rows(&batch)?)?;
        let (_, best) = rhs.exact_solve(&factors, &modes)?;
        let got = rhs.residual(&factors, &modes, &x.column(0))?;
        eps.push(residual_epsilon(best, got, rhs.norm_sq(&modes).sqrt()));
    }
    rec.timings.insert("total".into(), start.elapsed().as_secs_f64());
    for (name, vals) in [("distortion", &ds), ("epsilon", &eps)] {
        for (k, v) in box_stats(vals) {
            rec.summary.insert(format!("{name}_{k}"), v);
        }
    }
    rec.series.insert("distortion".into(), ds);
    rec.series.insert("epsilon".into(), eps);
    Ok(rec)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum TensorSource {
    File { path: PathBuf, dims: Option<Vec<usize>> },
    Synthetic { dims: Vec<usize>, rank: usize, noise: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecomposeConfig {
    pub source: TensorSource,
    pub rank: usize,
    pub solver: Solver,
    pub samples: usize,
    pub max_rounds: usize,
    pub epoch_length: usize,
    pub stop_tolerance: f64,
    pub preprocess: Preprocess,
    pub epsilon_oracle: bool,
    pub seed: u64,
    pub model_output: Option<PathBuf>,
}

impl Default for DecomposeConfig {
    fn default() -> Self {
        let als = AlsOptions::default();
        DecomposeConfig {
            source: TensorSource::Synthetic {
                dims: vec![16, 16, 16],
                rank: 4,
                noise: 1e-3,
            },
            rank: 4,
            solver: Solver::StsCp,
            samples: 4096,
            max_rounds: als.max_rounds,
            epoch_length: als.epoch_length,
            stop_tolerance: als.stop_tolerance,
            preprocess: Preprocess::None,
            epsilon_oracle: false,
            seed: 0,
            model_output: None,
        }
    }
}

/// Runs one decomposition and optionally writes the model file.
pub fn cmd_decompose(cfg: &DecomposeConfig) -> Result<RunRecord> {
    let mut rec = RunRecord::new("decompose", serde_json::to_value(cfg)?, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let t = Instant::now();
    let tensor = match &cfg.source {
        TensorSource::File { path, dims } => Tensor::Sparse(parse_tns(
            path,
            &TnsOptions {
                dims: dims.clone(),
                log1p: false,
            },
        )?),
        TensorSource::Synthetic { dims, rank, noise } => {
            crate::als::synthetic_tensor(dims, *rank, *noise, &mut rng)?
        }
    };
    rec.timings.insert("load".into(), t.elapsed().as_secs_f64());

    let opts = AlsOptions {
        max_rounds: cfg.max_rounds,
        epoch_length: cfg.epoch_length,
        stop_tolerance: cfg.stop_tolerance,
        solver: cfg.solver,
        sketch: SketchConfig {
            samples: cfg.samples,
            seed: cfg.seed,
            ..SketchConfig::default()
        },
        preprocess: cfg.preprocess,
        fit_every_round: false,
        epsilon_oracle: cfg.epsilon_oracle,
    };
    let t = Instant::now();
    let res = decompose(&tensor, cfg.rank, &opts, &mut rng)?;
    rec.timings.insert("decompose".into(), t.elapsed().as_secs_f64());

    rec.series.insert("epoch_fit".into(), res.epoch_fits.clone());
    rec.series.insert("round_seconds".into(), res.rounds.iter().map(|r| r.seconds).collect());
    if cfg.epsilon_oracle {
        let eps = res
            .rounds
            .iter()
            .flat_map(|r| &r.solves)
            .filter_map(|s| s.epsilon)
            .collect();
        rec.series.insert("solve_epsilon".into(), eps);
    }
    rec.summary.insert("final_fit".into(), res.final_fit);
    rec.summary.insert("rounds".into(), res.rounds.len() as f64);
    rec.summary.insert("converged".into(), f64::from(u8::from(res.converged)));
    if let Some(path) = &cfg.model_output {
        save_model(&res.model, path)?;
    }
    Ok(rec)
}

/// Short JSON description of a failure, for stderr.
pub fn error_json(err: &Error) -> String {
    json!({ "error": err.to_string() }).to_string()
}

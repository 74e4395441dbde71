use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, ExperimentKind};
use crate::apps::{
    flatten, pathology_demo, sir_sample, weighted_erm, PathologyConfig, RatioSpace, SirConfig, WeightVector,
};
use crate::data::{
    biased_subsample, correlated_gaussian_mi, gen_correlated_gaussians, gen_gaussian_pair, gen_mixture_da, load_csv,
    standardize, DataMatrix, GaussianPairSpec, LabeledData,
};
use crate::dre::{ClassifierConfig, LogRatio};
use crate::error::{Error, Result};
use crate::featurize::FittedRatio;
use crate::par;
use crate::stats;
use crate::train;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub metric: String,
    pub value: f64,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub metric: String,
    pub mean: f64,
    /// Sample standard deviation over seeds.
    pub std: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub error: String,
}

/// Grid-level diagnostics; every row starts with the seed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub experiment: ExperimentKind,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub records: Vec<MetricRecord>,
    pub aggregates: Vec<Aggregate>,
    pub failures: Vec<SeedFailure>,
    pub wall_clock_seconds: f64,
    #[serde(skip)]
    pub grid: Table,
}

impl ExperimentResult {
    /// Values of `metric` in seed order.
    pub fn values(&self, metric: &str) -> Vec<f64> {
        self.records.iter().filter(|r| r.metric == metric).map(|r| r.value).collect()
    }

    pub fn aggregate(&self, metric: &str) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.metric == metric)
    }

    /// Writes the JSON result to `output_path` and the grid CSV next to it.
    /// Returns the two paths.
    pub fn write(&self) -> Result<(PathBuf, PathBuf)> {
        let json = self
            .config
            .output_path
            .clone()
            .ok_or_else(|| Error::config("output_path is not set"))?;
        if let Some(dir) = json.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(&json, serde_json::to_string_pretty(self)?)?;
        let csv = json.with_extension("csv");
        self.grid.write_csv(&csv)?;
        Ok((json, csv))
    }
}

/// Hex SHA-256 of the canonical JSON form of `cfg`.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let json = serde_json::to_string(cfg).expect("config serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

struct SeedOutput {
    metrics: Vec<(String, f64)>,
    header: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl SeedOutput {
    fn new(header: &[&str]) -> Self {
        Self {
            metrics: Vec::new(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn metric(&mut self, name: impl Into<String>, value: f64) {
        self.metrics.push((name.into(), value));
    }
}

/// Execute every seed of a validated config. Per-seed errors are collected
/// in `failures`. Only `model_dir` is written to; see [`ExperimentResult::write`].
pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let issues = cfg.validate();
    if !issues.is_empty() {
        let text: Vec<String> = issues.iter().map(|i| i.to_string()).collect();
        return Err(Error::config(text.join("; ")));
    }
    let kind = cfg.experiment.expect("validated");
    let start = Instant::now();
    let hash = config_hash(cfg);
    let outputs = par::map_slice(&cfg.seeds, |&seed| run_seed(cfg, kind, seed));

    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut grid = Table::default();
    for (&seed, out) in cfg.seeds.iter().zip(outputs) {
        match out {
            Ok(o) => {
                if grid.header.is_empty() {
                    grid.header = std::iter::once("seed".to_string()).chain(o.header).collect();
                }
                grid.rows.extend(o.rows.into_iter().map(|r| std::iter::once(seed as f64).chain(r).collect()));
                records.extend(o.metrics.into_iter().map(|(metric, value)| MetricRecord {
                    metric,
                    value,
                    seed,
                    config_hash: hash.clone(),
                }));
            }
            Err(e) => failures.push(SeedFailure {
                seed,
                error: e.to_string(),
            }),
        }
    }
    Ok(ExperimentResult {
        experiment: kind,
        aggregates: aggregate(&records),
        config_hash: hash,
        config: cfg.clone(),
        records,
        failures,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        grid,
    })
}

fn aggregate(records: &[MetricRecord]) -> Vec<Aggregate> {
    let mut names: Vec<&str> = Vec::new();
    for r in records {
        if !names.contains(&r.metric.as_str()) {
            names.push(&r.metric);
        }
    }
    names
        .into_iter()
        .map(|name| {
            let v: Vec<f64> = records.iter().filter(|r| r.metric == name).map(|r| r.value).collect();
            Aggregate {
                metric: name.to_string(),
                mean: stats::mean(&v),
                std: stats::std_dev(&v),
                n: v.len(),
            }
        })
        .collect()
}

fn run_seed(cfg: &ExperimentConfig, kind: ExperimentKind, seed: u64) -> Result<SeedOutput> {
    match kind {
        ExperimentKind::Toy2d => toy2d(cfg, seed),
        ExperimentKind::Pathology => pathology(cfg, seed),
        ExperimentKind::Mi => mi(cfg, seed),
        ExperimentKind::DaSynthetic => {
            let (src, tgt) = gen_mixture_da(cfg.data.n, cfg.data.weight_source, seed)?;
            domain_adaptation(cfg, seed, &src, &tgt)
        }
        ExperimentKind::DaCsv => {
            let path = cfg.data.csv_path.as_ref().expect("validated");
            let data = load_csv(path, cfg.data.label_column.as_deref())?;
            let (features, _) = standardize(&data.features)?;
            let data = LabeledData::new(features, data.labels)?;
            let (train_rows, test_rows) = train::split(data.rows(), cfg.data.test_fraction, seed);
            let bias = cfg.bias.as_ref().expect("validated");
            let src = biased_subsample(&data.select(&train_rows)?, bias, seed)?;
            domain_adaptation(cfg, seed, &src, &data.select(&test_rows)?)
        }
        ExperimentKind::SirDemo => sir_demo(cfg, seed),
    }
}

fn save_model(cfg: &ExperimentConfig, seed: u64, fitted: &FittedRatio) -> Result<()> {
    if let (Some(dir), FittedRatio::Featurized(f)) = (&cfg.model_dir, fitted) {
        f.save(dir.join(format!("seed-{seed}")))?;
    }
    Ok(())
}

fn pair_spec(cfg: &ExperimentConfig, kind: ExperimentKind, seed: u64) -> GaussianPairSpec {
    let (mean_p, mean_q) = cfg.data.means(kind);
    GaussianPairSpec {
        dim: mean_p.len(),
        mean_p,
        mean_q,
        n_per_side: cfg.data.n,
        seed,
    }
}

/// Product grid over the box spanned by both means, padded by 2.5.
fn box_grid(a: &[f64], b: &[f64], points: usize) -> Result<DataMatrix> {
    let axes: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let (lo, hi) = (x.min(*y) - 2.5, x.max(*y) + 2.5);
            (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect()
        })
        .collect();
    let total = points.pow(axes.len() as u32);
    let mut values = Vec::with_capacity(total * axes.len());
    for mut k in 0..total {
        let mut row = vec![0.0; axes.len()];
        for d in (0..axes.len()).rev() {
            row[d] = axes[d][k % points];
            k /= points;
        }
        values.extend(row);
    }
    DataMatrix::new(total, axes.len(), values)
}

fn toy2d(cfg: &ExperimentConfig, seed: u64) -> Result<SeedOutput> {
    let spec = pair_spec(cfg, ExperimentKind::Toy2d, seed);
    let (dp, dq) = gen_gaussian_pair(&spec)?;
    let fitted = cfg.recipe(seed).fit(&dp, &dq)?;
    save_model(cfg, seed, &fitted)?;
    let grid = box_grid(&spec.mean_p, &spec.mean_q, cfg.data.grid_points)?;
    let est = fitted.log_ratio(&grid)?;
    let truth = spec.true_log_ratio(&grid);
    let pooled = dp.concat(&dq)?;
    let mut header: Vec<String> = (1..=spec.dim).map(|j| format!("x{j}")).collect();
    header.extend(["true_log_ratio".into(), "est_log_ratio".into()]);
    let mut out = SeedOutput {
        metrics: Vec::new(),
        header,
        rows: Vec::new(),
    };
    out.metric("mse", stats::mse(&est, &truth));
    out.metric("sample_mse", stats::mse(&fitted.log_ratio(&pooled)?, &spec.true_log_ratio(&pooled)));
    if let FittedRatio::Featurized(f) = &fitted {
        out.metric("mean_encoding_norm", stats::mean(&f.encoding_norms(&pooled)?));
    }
    out.rows = grid
        .iter_rows()
        .zip(truth.iter().zip(&est))
        .map(|(x, (t, e))| x.iter().copied().chain([*t, *e]).collect())
        .collect();
    Ok(out)
}

fn pathology(cfg: &ExperimentConfig, seed: u64) -> Result<SeedOutput> {
    let pcfg = PathologyConfig {
        classifier: ClassifierConfig {
            seed,
            ..cfg.pathology.classifier.clone()
        },
        ..cfg.pathology.clone()
    };
    let report = pathology_demo(cfg.data.m, cfg.data.n, &[seed], &pcfg)?;
    let run = &report.runs[0];
    let mut out = SeedOutput::new(&["x", "true_log_ratio", "raw_log_ratio", "featurized_log_ratio"]);
    out.metric("raw_slope", run.raw_slope);
    out.metric("featurized_slope", run.featurized_slope);
    out.metric("raw_mse", run.raw_mse);
    out.metric("featurized_mse", run.featurized_mse);
    out.rows = report
        .grid
        .iter()
        .zip(run.raw_log_ratio.iter().zip(&run.featurized_log_ratio))
        .map(|(x, (r, f))| vec![*x, report.true_slope * x, *r, *f])
        .collect();
    Ok(out)
}

fn mi(cfg: &ExperimentConfig, seed: u64) -> Result<SeedOutput> {
    let (joint, marginals) = gen_correlated_gaussians(cfg.data.dim, cfg.data.rho, cfg.data.n, seed)?;
    let est = crate::apps::estimate_mi(&joint, &marginals, &cfg.recipe(seed), seed)?;
    let truth = correlated_gaussian_mi(cfg.data.dim, cfg.data.rho);
    let mut out = SeedOutput::new(&["estimate", "true_mi"]);
    out.metric("mi", est.value);
    out.metric("true_mi", truth);
    out.metric("abs_error", (est.value - truth).abs());
    out.rows.push(vec![est.value, truth]);
    Ok(out)
}

fn domain_adaptation(cfg: &ExperimentConfig, seed: u64, src: &LabeledData, tgt: &LabeledData) -> Result<SeedOutput> {
    let fitted = cfg.recipe(seed).fit(&tgt.features, &src.features)?;
    save_model(cfg, seed, &fitted)?;
    let r: Vec<f64> = fitted.log_ratio(&src.features)?.into_iter().map(f64::exp).collect();
    let weights = WeightVector::new(flatten(&r, cfg.erm.gamma))?;
    let sum: f64 = weights.weights.iter().sum();
    let sq: f64 = weights.weights.iter().map(|w| w * w).sum();
    let mut out = SeedOutput::new(&["penalty", "unweighted_error", "weighted_error"]);
    out.metric("effective_sample_size", sum * sum / sq);
    for &penalty in &cfg.erm.penalties {
        let lr = ClassifierConfig {
            weight_decay: penalty,
            ..ClassifierConfig::logistic()
        };
        let plain = weighted_erm(src, &WeightVector::uniform(src.rows()), tgt, &lr)?.test_error;
        let weighted = weighted_erm(src, &weights, tgt, &lr)?.test_error;
        let tag = if cfg.erm.penalties.len() == 1 {
            String::new()
        } else {
            format!("@{penalty}")
        };
        out.metric(format!("unweighted_error{tag}"), plain);
        out.metric(format!("weighted_error{tag}"), weighted);
        out.rows.push(vec![penalty, plain, weighted]);
    }
    Ok(out)
}

fn sir_demo(cfg: &ExperimentConfig, seed: u64) -> Result<SeedOutput> {
    let spec = pair_spec(cfg, ExperimentKind::SirDemo, seed);
    let (dp, dq) = gen_gaussian_pair(&spec)?;
    let fitted = cfg.recipe(seed).fit(&dp, &dq)?;
    save_model(cfg, seed, &fitted)?;
    let FittedRatio::Featurized(f) = fitted else {
        return Err(Error::config("sir-demo needs a featurized training mode"));
    };
    let scfg = SirConfig { seed, ..cfg.sir.clone() };
    let samples = match scfg.space {
        RatioSpace::Latent => sir_sample(&f.flow, &f.base, &scfg)?,
        RatioSpace::Data => sir_sample(&f.flow, &f, &scfg)?,
    };
    let plain = f.flow.sample(scfg.n_out, seed)?;
    let closer = |x: &DataMatrix| {
        let hits = x
            .iter_rows()
            .filter(|r| stats::isotropic_normal_log_pdf(r, &spec.mean_p) > stats::isotropic_normal_log_pdf(r, &spec.mean_q))
            .count();
        hits as f64 / x.rows() as f64
    };
    let header: Vec<String> = (1..=spec.dim).map(|j| format!("x{j}")).collect();
    let mut out = SeedOutput {
        metrics: Vec::new(),
        header,
        rows: samples.iter_rows().map(|r| r.to_vec()).collect(),
    };
    out.metric("target_fraction", closer(&samples));
    out.metric("flow_target_fraction", closer(&plain));
    Ok(out)
}

//! Composition of a flow encoder with a base ratio estimator.
//!
//! Three ways to obtain the pair:
//! * separate: maximum likelihood on `dp ∪ dq`, then the base estimator on
//!   the encodings ([`fit_featurized`])
//! * joint: one loss `alpha * BCE + (1 - alpha) * NLL` over flow and a
//!   logistic head ([`fit_joint`])
//! * discriminative: the `alpha = 1` case ([`fit_discriminative`])

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{DataMatrix, GaussianPairSpec};
use crate::dre::{self, DreConfig, LogRatio, RatioEstimator};
use crate::error::{Error, Result};
use crate::flow::{fit_hybrid, FlowArch, FlowModel, FlowTrainConfig, Hybrid};
use crate::nn::Mlp;
use crate::rng;
use crate::train::TrainReport;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum Training {
    Separate,
    Joint { alpha: f64 },
}

/// Dataset fingerprints and training mode recorded with a fitted estimator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dim: usize,
    pub n_p: usize,
    pub n_q: usize,
    pub dp_sha256: String,
    pub dq_sha256: String,
    pub training: Training,
}

impl Manifest {
    fn new(dp: &DataMatrix, dq: &DataMatrix, training: Training) -> Self {
        Self {
            dim: dp.dim(),
            n_p: dp.rows(),
            n_q: dq.rows(),
            dp_sha256: dp.digest(),
            dq_sha256: dq.digest(),
            training,
        }
    }
}

/// `log r(x) = base.log_ratio(flow(x))`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturizedEstimator {
    pub flow: FlowModel,
    pub base: RatioEstimator,
    pub manifest: Manifest,
}

impl LogRatio for FeaturizedEstimator {
    fn log_ratio(&self, x: &DataMatrix) -> Result<Vec<f64>> {
        self.base.log_ratio(&self.flow.encode(x)?)
    }
}

impl FeaturizedEstimator {
    /// Euclidean norms of the encodings; a diagnostic only.
    pub fn encoding_norms(&self, x: &DataMatrix) -> Result<Vec<f64>> {
        let z = self.flow.encode(x)?;
        Ok(z.iter_rows().map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect())
    }

    /// Writes `flow.json`, `estimator.json` and `manifest.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        self.flow.save(dir.join("flow.json"))?;
        fs::write(dir.join("estimator.json"), self.base.to_json()?)?;
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&self.manifest)?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let flow = FlowModel::load(dir.join("flow.json"))?;
        let base = RatioEstimator::from_json(&fs::read_to_string(dir.join("estimator.json"))?)?;
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        if manifest.dim != flow.dim {
            return Err(Error::Dimension {
                expected: manifest.dim,
                got: flow.dim,
            });
        }
        Ok(Self { flow, base, manifest })
    }
}

/// Fit a flow to `dp ∪ dq` (no labels), encode both and fit the base
/// estimator on the encodings. Zero epochs keeps the identity flow.
pub fn fit_featurized(
    dp: &DataMatrix,
    dq: &DataMatrix,
    dre_cfg: &DreConfig,
    arch: &FlowArch,
    flow_cfg: &FlowTrainConfig,
) -> Result<(FeaturizedEstimator, TrainReport)> {
    dre_cfg.validate()?;
    if dp.dim() != dq.dim() {
        return Err(Error::Dimension {
            expected: dp.dim(),
            got: dq.dim(),
        });
    }
    let mut flow = FlowModel::new(dp.dim(), arch, flow_cfg.seed)?;
    let report = if flow_cfg.epochs > 0 {
        flow.fit(&dp.concat(dq)?, flow_cfg)?
    } else {
        flow_cfg.validate()?;
        TrainReport::default()
    };
    let base = dre::fit_ratio(&flow.encode(dp)?, &flow.encode(dq)?, dre_cfg)?;
    Ok((
        FeaturizedEstimator {
            flow,
            base,
            manifest: Manifest::new(dp, dq, Training::Separate),
        },
        report,
    ))
}

/// Joint flow + logistic-head training schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JointConfig {
    pub alpha: f64,
    pub flow: FlowTrainConfig,
    /// Hidden layers of the head on top of the flow output; empty is logistic.
    pub head_hidden_sizes: Vec<usize>,
}

impl Default for JointConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            flow: FlowTrainConfig::default(),
            head_hidden_sizes: vec![100, 100, 100],
        }
    }
}

impl JointConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if self.head_hidden_sizes.contains(&0) {
            return Err(Error::config("head hidden sizes must be >= 1"));
        }
        self.flow.validate()
    }
}

pub(crate) fn joint_objective<'a>(
    x: &'a DataMatrix,
    y: &'a [f64],
    arch: &FlowArch,
    cfg: &JointConfig,
) -> Result<Hybrid<'a>> {
    let flow = FlowModel::new(x.dim(), arch, cfg.flow.seed)?;
    let head = Mlp::new(x.dim(), &cfg.head_hidden_sizes, 1, &mut rng::stream(cfg.flow.seed, rng::TAG_HEAD_INIT));
    Ok(Hybrid {
        flow,
        head: Some(head),
        data: x,
        labels: Some(y),
        alpha: cfg.alpha,
    })
}

/// Train flow and head together on `alpha * BCE + (1 - alpha) * NLL` over
/// the pooled, labelled samples (1 for `dp`, 0 for `dq`).
pub fn fit_joint(
    dp: &DataMatrix,
    dq: &DataMatrix,
    arch: &FlowArch,
    cfg: &JointConfig,
) -> Result<(FeaturizedEstimator, TrainReport)> {
    cfg.validate()?;
    let (x, y) = dre::pooled(dp, dq)?;
    let mut h = joint_objective(&x, &y, arch, cfg)?;
    let report = fit_hybrid(&mut h, &cfg.flow)?;
    let head = h.head.take().expect("joint objective always carries a head");
    Ok((
        FeaturizedEstimator {
            flow: h.flow,
            base: RatioEstimator::from_classifier(head, dp.rows(), dq.rows()),
            manifest: Manifest::new(dp, dq, Training::Joint { alpha: cfg.alpha }),
        },
        report,
    ))
}

/// Flow-shaped encoder and head trained by the logistic loss alone.
pub fn fit_discriminative(
    dp: &DataMatrix,
    dq: &DataMatrix,
    arch: &FlowArch,
    cfg: &JointConfig,
) -> Result<(FeaturizedEstimator, TrainReport)> {
    fit_joint(dp, dq, arch, &JointConfig { alpha: 1.0, ..cfg.clone() })
}

/// How a ratio estimator is obtained from two samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainingMode {
    /// Base estimator on the raw inputs.
    Raw,
    /// Flow by maximum likelihood, then the base estimator on encodings.
    Separate,
    /// Flow and logistic head on the hybrid loss.
    Joint,
    /// Flow-shaped encoder and head on the logistic loss only.
    Discriminative,
}

/// Everything needed to fit a ratio estimator between two samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recipe {
    pub mode: TrainingMode,
    /// Used by `Joint` only.
    pub alpha: f64,
    pub dre: DreConfig,
    pub arch: FlowArch,
    pub flow: FlowTrainConfig,
}

impl Recipe {
    pub fn validate(&self) -> Result<()> {
        match self.mode {
            TrainingMode::Raw => self.dre.validate(),
            TrainingMode::Separate => {
                self.dre.validate()?;
                self.flow.validate()
            }
            TrainingMode::Joint | TrainingMode::Discriminative => {
                if self.dre.kind != crate::dre::DreKind::Classifier {
                    return Err(Error::config("joint and discriminative training require the classifier estimator"));
                }
                self.joint_config().validate()
            }
        }
    }

    fn joint_config(&self) -> JointConfig {
        JointConfig {
            alpha: match self.mode {
                TrainingMode::Discriminative => 1.0,
                _ => self.alpha,
            },
            flow: self.flow.clone(),
            head_hidden_sizes: self.dre.classifier.hidden_sizes.clone(),
        }
    }

    pub fn fit(&self, dp: &DataMatrix, dq: &DataMatrix) -> Result<FittedRatio> {
        self.validate()?;
        Ok(match self.mode {
            TrainingMode::Raw => FittedRatio::Raw(dre::fit_ratio(dp, dq, &self.dre)?),
            TrainingMode::Separate => FittedRatio::Featurized(fit_featurized(dp, dq, &self.dre, &self.arch, &self.flow)?.0),
            TrainingMode::Joint | TrainingMode::Discriminative => {
                FittedRatio::Featurized(fit_joint(dp, dq, &self.arch, &self.joint_config())?.0)
            }
        })
    }
}

/// Output of [`Recipe::fit`].
#[derive(Clone, Debug, PartialEq)]
pub enum FittedRatio {
    Raw(RatioEstimator),
    Featurized(FeaturizedEstimator),
}

impl FittedRatio {
    pub fn flow(&self) -> Option<&FlowModel> {
        match self {
            FittedRatio::Raw(_) => None,
            FittedRatio::Featurized(f) => Some(&f.flow),
        }
    }

    pub fn base(&self) -> &RatioEstimator {
        match self {
            FittedRatio::Raw(e) => e,
            FittedRatio::Featurized(f) => &f.base,
        }
    }
}

impl LogRatio for FittedRatio {
    fn log_ratio(&self, x: &DataMatrix) -> Result<Vec<f64>> {
        match self {
            FittedRatio::Raw(e) => e.log_ratio(x),
            FittedRatio::Featurized(f) => f.log_ratio(x),
        }
    }
}

/// Largest deviation over `grid` between `log p(x) - log q(x)` and the same
/// difference of the pushed-forward densities at `f(x)`, each evaluated as
/// `log p(x) - log|det df/dx|`.
pub fn ratio_invariance_check(flow: &FlowModel, spec: &GaussianPairSpec, grid: &DataMatrix) -> Result<f64> {
    let (_, logdet) = flow.forward(grid)?;
    Ok(grid
        .iter_rows()
        .zip(&logdet)
        .map(|(x, ld)| {
            let direct = spec.log_p(x) - spec.log_q(x);
            let pushed_p = spec.log_p(x) - ld;
            let pushed_q = spec.log_q(x) - ld;
            (direct - (pushed_p - pushed_q)).abs()
        })
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_gaussian_pair;
    use crate::dre::{ClassifierConfig, DreKind, KernelConfig};
    use crate::nn::Parameters;
    use crate::train::Objective;

    fn toy(n: usize, seed: u64) -> (GaussianPairSpec, DataMatrix, DataMatrix) {
        let spec = GaussianPairSpec {
            mean_p: vec![0.0, 0.0],
            mean_q: vec![3.0, 3.0],
            dim: 2,
            n_per_side: n,
            seed,
        };
        let (p, q) = gen_gaussian_pair(&spec).unwrap();
        (spec, p, q)
    }

    fn small_arch() -> FlowArch {
        FlowArch {
            n_blocks: 2,
            hidden_sizes: vec![8],
        }
    }

    fn quick_flow(epochs: usize) -> FlowTrainConfig {
        FlowTrainConfig {
            epochs,
            batch_size: 50,
            learning_rate: 1e-3,
            seed: 3,
            ..FlowTrainConfig::default()
        }
    }

    fn quick_classifier() -> DreConfig {
        DreConfig {
            classifier: ClassifierConfig {
                hidden_sizes: vec![8],
                epochs: 5,
                ..ClassifierConfig::default()
            },
            ..DreConfig::default()
        }
    }

    #[test]
    fn identity_flow_reproduces_raw_classifier() {
        let (_, p, q) = toy(200, 1);
        let cfg = quick_classifier();
        let (fe, _) = fit_featurized(&p, &q, &cfg, &FlowArch::default(), &quick_flow(0)).unwrap();
        let raw = dre::fit_ratio(&p, &q, &cfg).unwrap();
        let grid = p.concat(&q).unwrap();
        assert_eq!(fe.log_ratio(&grid).unwrap(), raw.log_ratio(&grid).unwrap());
    }

    #[test]
    fn composition_is_base_on_encodings() {
        let (_, p, q) = toy(200, 2);
        let (fe, rep) = fit_featurized(&p, &q, &quick_classifier(), &small_arch(), &quick_flow(3)).unwrap();
        assert_eq!(rep.monitor_loss.len(), 4);
        let z = fe.flow.encode(&p).unwrap();
        assert_eq!(fe.log_ratio(&p).unwrap(), fe.base.log_ratio(&z).unwrap());
        assert_eq!(fe.manifest.dp_sha256, p.digest());
    }

    #[test]
    fn featurized_kliep_stays_normalized() {
        let (_, p, q) = toy(150, 3);
        let cfg = DreConfig {
            kind: DreKind::Kliep,
            kernel: KernelConfig::default(),
            kliep_iters: 300,
            ..DreConfig::default()
        };
        let (fe, _) = fit_featurized(&p, &q, &cfg, &small_arch(), &quick_flow(3)).unwrap();
        let r = fe.ratio(&q).unwrap();
        let m = r.iter().sum::<f64>() / r.len() as f64;
        assert!((m - 1.0).abs() < 1e-6, "{m}");
    }

    #[test]
    fn featurized_kmm_weights_source_rows() {
        let (_, p, q) = toy(60, 4);
        let cfg = DreConfig {
            kind: DreKind::Kmm,
            ..DreConfig::default()
        };
        let (fe, _) = fit_featurized(&p, &q, &cfg, &small_arch(), &quick_flow(2)).unwrap();
        let beta = fe.base.weights().unwrap();
        assert_eq!(beta.len(), q.rows());
        assert!(beta.iter().all(|b| *b >= 0.0 && *b <= 1000.0));
        // transductive lookups go through the same encoder
        assert_eq!(fe.ratio(&q).unwrap().len(), q.rows());
        assert!(fe.log_ratio(&p.select(&[0]).unwrap()).is_err());
    }

    #[test]
    fn joint_alpha_zero_matches_separate_flow() {
        let (_, p, q) = toy(150, 5);
        let flow_cfg = quick_flow(3);
        let (sep, _) = fit_featurized(&p, &q, &quick_classifier(), &small_arch(), &flow_cfg).unwrap();
        let jcfg = JointConfig {
            alpha: 0.0,
            flow: flow_cfg,
            head_hidden_sizes: vec![4],
        };
        let (joint, _) = fit_joint(&p, &q, &small_arch(), &jcfg).unwrap();
        assert_eq!(joint.flow.params(), sep.flow.params());
    }

    #[test]
    fn discriminative_is_joint_at_alpha_one() {
        let (_, p, q) = toy(150, 6);
        let jcfg = JointConfig {
            alpha: 1.0,
            flow: quick_flow(3),
            head_hidden_sizes: vec![4],
        };
        let (a, rep) = fit_joint(&p, &q, &small_arch(), &jcfg).unwrap();
        let (b, _) = fit_discriminative(&p, &q, &small_arch(), &JointConfig { alpha: 0.3, ..jcfg }).unwrap();
        assert_eq!(a.flow, b.flow);
        assert_eq!(a.base, b.base);
        assert!(rep.best_loss() <= rep.monitor_loss[0]);
    }

    #[test]
    fn joint_gradient_is_affine_in_alpha() {
        let (_, p, q) = toy(100, 7);
        let (x, y) = dre::pooled(&p, &q).unwrap();
        let rows: Vec<usize> = (0..x.rows()).collect();
        let grad_at = |alpha: f64| {
            let mut h = joint_objective(&x, &y, &small_arch(), &JointConfig { alpha, ..JointConfig::default() }).unwrap();
            h.flow.initialize_normalizers(&x).unwrap();
            h.loss_grad(&rows).1
        };
        let (g0, g1) = (grad_at(0.4), grad_at(0.4 + 1e-6));
        let scale = g0.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let worst = g0.iter().zip(&g1).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst <= 1e-4 * scale, "{worst} vs {scale}");
    }

    #[test]
    fn lemma_identity_holds_for_random_flows() {
        let (spec, p, _) = toy(100, 8);
        for seed in 0..3 {
            let flow = FlowModel::new(2, &FlowArch::default(), seed).unwrap().perturbed(0.1, seed);
            assert!(ratio_invariance_check(&flow, &spec, &p).unwrap() < 1e-9);
        }
        assert_eq!(ratio_invariance_check(&FlowModel::identity(2), &spec, &p).unwrap(), 0.0);
    }

    #[test]
    fn persistence_round_trip() {
        let (_, p, q) = toy(120, 9);
        let (fe, _) = fit_featurized(&p, &q, &quick_classifier(), &small_arch(), &quick_flow(2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        fe.save(dir.path()).unwrap();
        let back = FeaturizedEstimator::load(dir.path()).unwrap();
        assert_eq!(back.log_ratio(&p).unwrap(), fe.log_ratio(&p).unwrap());
        assert_eq!(back.manifest, fe.manifest);
    }

    #[test]
    fn rejects_bad_alpha() {
        let (_, p, q) = toy(120, 9);
        let cfg = JointConfig {
            alpha: 1.5,
            ..JointConfig::default()
        };
        assert!(matches!(fit_joint(&p, &q, &small_arch(), &cfg), Err(Error::Config(_))));
    }
}

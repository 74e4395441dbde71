use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::apps::{PathologyConfig, SirConfig};
use crate::data::BiasSpec;
use crate::dre::{ClassifierConfig, DreConfig, DreKind, KernelConfig};
use crate::featurize::{Recipe, TrainingMode};
use crate::flow::{FlowArch, FlowTrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Toy2d,
    Pathology,
    Mi,
    DaSynthetic,
    DaCsv,
    SirDemo,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::Toy2d,
        ExperimentKind::Pathology,
        ExperimentKind::Mi,
        ExperimentKind::DaSynthetic,
        ExperimentKind::DaCsv,
        ExperimentKind::SirDemo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Toy2d => "toy2d",
            ExperimentKind::Pathology => "pathology",
            ExperimentKind::Mi => "mi",
            ExperimentKind::DaSynthetic => "da-synthetic",
            ExperimentKind::DaCsv => "da-csv",
            ExperimentKind::SirDemo => "sir-demo",
        }
    }
}

/// Sample sizes and generator parameters. Each experiment reads the fields
/// it needs and ignores the rest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Rows per sample (per side for two-sample generators).
    pub n: usize,
    /// Means for toy2d and sir-demo; unset uses `[0, 0]`/`[3, 3]` and `[2]`/`[-2]`.
    pub mean_p: Option<Vec<f64>>,
    pub mean_q: Option<Vec<f64>>,
    /// Pathology half-separation.
    pub m: f64,
    /// MI: width of each variable.
    pub dim: usize,
    pub rho: f64,
    /// da-synthetic: weight of the `N(0, I)` component in the source.
    pub weight_source: f64,
    pub csv_path: Option<PathBuf>,
    pub label_column: Option<String>,
    /// da-csv: share of rows held out as the target domain.
    pub test_fraction: f64,
    /// toy2d: grid points per axis.
    pub grid_points: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            mean_p: None,
            mean_q: None,
            m: 5.0,
            dim: 1,
            rho: 0.9,
            weight_source: 0.01,
            csv_path: None,
            label_column: None,
            test_fraction: 0.3,
            grid_points: 41,
        }
    }
}

impl DataConfig {
    pub(crate) fn means(&self, kind: ExperimentKind) -> (Vec<f64>, Vec<f64>) {
        let (p, q) = match kind {
            ExperimentKind::SirDemo => (vec![2.0], vec![-2.0]),
            _ => (vec![0.0, 0.0], vec![3.0, 3.0]),
        };
        (self.mean_p.clone().unwrap_or(p), self.mean_q.clone().unwrap_or(q))
    }
}

/// Importance-weighted logistic regression downstream of the ratio estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErmConfig {
    /// L2 penalties to sweep.
    pub penalties: Vec<f64>,
    /// Flattening exponent applied to the weights.
    pub gamma: f64,
}

impl Default for ErmConfig {
    fn default() -> Self {
        Self {
            penalties: vec![1e-3],
            gamma: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Option<ExperimentKind>,
    pub dre_kind: DreKind,
    pub training_mode: TrainingMode,
    /// Hybrid loss weight; required for `joint`, rejected otherwise.
    pub alpha: Option<f64>,
    pub seeds: Vec<u64>,
    pub output_path: Option<PathBuf>,
    /// When set, featurized estimators are saved to `<model_dir>/seed-<seed>`.
    pub model_dir: Option<PathBuf>,
    pub arch: FlowArch,
    pub flow: FlowTrainConfig,
    pub classifier: ClassifierConfig,
    pub kernel: KernelConfig,
    pub kliep_iters: usize,
    pub data: DataConfig,
    pub bias: Option<BiasSpec>,
    pub erm: ErmConfig,
    pub sir: SirConfig,
    pub pathology: PathologyConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            dre_kind: DreKind::Classifier,
            training_mode: TrainingMode::Separate,
            alpha: None,
            seeds: vec![0],
            output_path: None,
            model_dir: None,
            arch: FlowArch::default(),
            flow: FlowTrainConfig::default(),
            classifier: ClassifierConfig::default(),
            kernel: KernelConfig::default(),
            kliep_iters: DreConfig::default().kliep_iters,
            data: DataConfig::default(),
            bias: None,
            erm: ErmConfig::default(),
            sir: SirConfig::default(),
            pathology: PathologyConfig::default(),
        }
    }
}

/// A problem with a config, located by dotted field path.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigIssue {
    pub field: String,
    pub message: String,
}

impl ConfigIssue {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Parsed but not yet validated config text, so overrides can be applied.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawConfig {
    table: toml::Table,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigIssue> {
        text.parse::<toml::Table>()
            .map(|table| Self { table })
            .map_err(|e| ConfigIssue::new("<file>", e.to_string().trim_end()))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, ConfigIssue> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| ConfigIssue::new("<file>", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Apply `dotted.key=value`; the value is read as a TOML literal and
    /// falls back to a bare string.
    pub fn set(&mut self, assignment: &str) -> Result<(), ConfigIssue> {
        let Some((key, raw)) = assignment.split_once('=') else {
            return Err(ConfigIssue::new(assignment, "override must have the form key=value"));
        };
        let key = key.trim();
        let raw = raw.trim();
        let value = format!("v = {raw}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        let parts: Vec<&str> = key.split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(ConfigIssue::new(key, "empty key segment"));
        }
        let mut table = &mut self.table;
        for (i, part) in parts[..parts.len() - 1].iter().enumerate() {
            let entry = table
                .entry(part.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            table = match entry {
                toml::Value::Table(t) => t,
                _ => return Err(ConfigIssue::new(parts[..=i].join("."), "is not a table")),
            };
        }
        table.insert(parts[parts.len() - 1].to_string(), value);
        Ok(())
    }

    pub fn set_seeds(&mut self, seeds: &[u64]) {
        let list = seeds.iter().map(|&s| toml::Value::Integer(s as i64)).collect();
        self.table.insert("seeds".into(), toml::Value::Array(list));
    }

    /// Deserialize and run semantic validation.
    pub fn resolve(self) -> Result<ExperimentConfig, Vec<ConfigIssue>> {
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(toml::Value::Table(self.table)).map_err(|e| {
            let path = e.path().to_string();
            vec![ConfigIssue::new(if path == "." { "<root>".into() } else { path }, e.into_inner().to_string())]
        })?;
        let issues = cfg.validate();
        if issues.is_empty() {
            Ok(cfg)
        } else {
            Err(issues)
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, Vec<ConfigIssue>> {
        RawConfig::parse(text).map_err(|e| vec![e])?.resolve()
    }

    pub fn kind(&self) -> Option<ExperimentKind> {
        self.experiment
    }

    /// Every structural and semantic problem; empty means valid.
    pub fn validate(&self) -> Vec<ConfigIssue> {
        let mut out = Vec::new();
        let mut err = |f: &str, m: String| out.push(ConfigIssue::new(f, m));
        let names: Vec<&str> = ExperimentKind::ALL.iter().map(|k| k.name()).collect();
        if self.experiment.is_none() {
            err("experiment", format!("is required (one of {})", names.join(", ")));
        }
        if self.output_path.is_none() {
            err("output_path", "is required".into());
        }
        if self.seeds.is_empty() {
            err("seeds", "must list at least one seed".into());
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            err("seeds", "contains duplicates".into());
        }
        match (self.training_mode, self.alpha) {
            (TrainingMode::Joint, None) => err("alpha", "is required when training_mode = joint".into()),
            (TrainingMode::Joint, Some(a)) if !(0.0..=1.0).contains(&a) => err("alpha", format!("must lie in [0, 1], got {a}")),
            (TrainingMode::Joint, Some(_)) => {}
            (m, Some(_)) => err("alpha", format!("is only allowed when training_mode = joint, not {}", mode_name(m))),
            _ => {}
        }
        if matches!(self.training_mode, TrainingMode::Joint | TrainingMode::Discriminative) && self.dre_kind != DreKind::Classifier {
            err("dre_kind", format!("{} training requires dre_kind = classifier", mode_name(self.training_mode)));
        }
        if self.arch.hidden_sizes.contains(&0) {
            err("arch.hidden_sizes", "hidden sizes must be >= 1".into());
        }
        for (field, r) in [
            ("flow", self.flow.validate()),
            ("classifier", self.classifier.validate()),
            ("kernel", self.kernel.validate()),
        ] {
            if let Err(e) = r {
                err(field, e.to_string());
            }
        }
        if self.data.n < 2 {
            err("data.n", "must be >= 2".into());
        }
        if self.erm.penalties.is_empty() || self.erm.penalties.iter().any(|p| !(*p >= 0.0)) {
            err("erm.penalties", "must be a non-empty list of values >= 0".into());
        }
        if !(self.erm.gamma >= 0.0) {
            err("erm.gamma", "must be >= 0".into());
        }
        let Some(kind) = self.experiment else { return out };
        let transductive = self.dre_kind == DreKind::Kmm;
        match kind {
            ExperimentKind::Toy2d | ExperimentKind::SirDemo => {
                let (p, q) = self.data.means(kind);
                if p.is_empty() || p.len() != q.len() {
                    err("data.mean_q", "mean_p and mean_q must be non-empty and of equal length".into());
                }
                if transductive {
                    err("dre_kind", format!("kmm only weights its source rows and cannot be used for {}", kind.name()));
                }
                if kind == ExperimentKind::Toy2d {
                    if self.data.grid_points < 2 {
                        err("data.grid_points", "must be >= 2".into());
                    } else if (self.data.grid_points as f64).powi(p.len() as i32) > 1e6 {
                        err("data.grid_points", format!("grid of {}^{} points is too large", self.data.grid_points, p.len()));
                    }
                } else {
                    if self.training_mode == TrainingMode::Raw {
                        err("training_mode", "sir-demo samples from the flow and needs a featurized mode".into());
                    }
                    if self.sir.n_proposals == 0 || self.sir.n_out == 0 {
                        err("sir", "n_proposals and n_out must be >= 1".into());
                    }
                    if !(self.sir.gamma >= 0.0) {
                        err("sir.gamma", "must be >= 0".into());
                    }
                }
            }
            ExperimentKind::Pathology => {
                if !(self.data.m > 0.0) {
                    err("data.m", "must be > 0".into());
                }
                if self.pathology.grid_points < 2 {
                    err("pathology.grid_points", "must be >= 2".into());
                }
                if let Err(e) = self.pathology.classifier.validate() {
                    err("pathology.classifier", e.to_string());
                }
                if let Err(e) = self.pathology.flow.validate() {
                    err("pathology.flow", e.to_string());
                }
            }
            ExperimentKind::Mi => {
                if self.data.dim == 0 {
                    err("data.dim", "must be >= 1".into());
                }
                if !(self.data.rho.abs() < 1.0) {
                    err("data.rho", "must lie in (-1, 1)".into());
                }
                if transductive {
                    err("dre_kind", "kmm only weights its source rows and cannot score held-out samples".into());
                }
            }
            ExperimentKind::DaSynthetic => {
                if !(self.data.weight_source > 0.0 && self.data.weight_source < 1.0) {
                    err("data.weight_source", "must lie in (0, 1)".into());
                }
            }
            ExperimentKind::DaCsv => {
                match &self.data.csv_path {
                    None => err("data.csv_path", "is required for da-csv".into()),
                    Some(p) if !p.is_file() => err("data.csv_path", format!("{} does not exist", p.display())),
                    _ => {}
                }
                if self.data.label_column.is_none() {
                    err("data.label_column", "is required for da-csv".into());
                }
                match &self.bias {
                    None => err("bias", "is required for da-csv".into()),
                    Some(b) => {
                        if let Err(e) = b.validate() {
                            err("bias", e.to_string());
                        }
                    }
                }
                if !(self.data.test_fraction > 0.0 && self.data.test_fraction < 1.0) {
                    err("data.test_fraction", "must lie in (0, 1)".into());
                }
            }
        }
        out
    }

    /// Ratio-fitting recipe with every seed field set to `seed`.
    pub fn recipe(&self, seed: u64) -> Recipe {
        Recipe {
            mode: self.training_mode,
            alpha: self.alpha.unwrap_or(0.5),
            dre: DreConfig {
                kind: self.dre_kind,
                classifier: ClassifierConfig {
                    seed,
                    ..self.classifier.clone()
                },
                kernel: KernelConfig {
                    seed,
                    ..self.kernel.clone()
                },
                kliep_iters: self.kliep_iters,
            },
            arch: self.arch.clone(),
            flow: FlowTrainConfig {
                seed,
                ..self.flow.clone()
            },
        }
    }
}

fn mode_name(m: TrainingMode) -> &'static str {
    match m {
        TrainingMode::Raw => "raw",
        TrainingMode::Separate => "separate",
        TrainingMode::Joint => "joint",
        TrainingMode::Discriminative => "discriminative",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const VALID: &str = r#"
experiment = "toy2d"
training_mode = "separate"
seeds = [0, 1]
output_path = "out/toy.json"

[flow]
epochs = 5
"#;

    #[test]
    fn valid_config_passes() {
        let cfg = ExperimentConfig::from_toml(VALID).unwrap();
        assert_eq!(cfg.experiment, Some(ExperimentKind::Toy2d));
        assert_eq!(cfg.flow.epochs, 5);
        assert_eq!(cfg.seeds, vec![0, 1]);
    }

    #[test]
    fn missing_output_path_is_one_issue() {
        let text = VALID.replace("output_path = \"out/toy.json\"", "");
        let issues = ExperimentConfig::from_toml(&text).unwrap_err();
        assert_eq!(issues.len(), 1);
        assert_eq!(issues[0].field, "output_path");
    }

    #[test]
    fn alpha_only_with_joint() {
        let issues = ExperimentConfig::from_toml(&format!("alpha = 0.5\n{VALID}")).unwrap_err();
        assert_eq!(issues[0].field, "alpha");
        let joint = VALID.replace("\"separate\"", "\"joint\"");
        assert_eq!(ExperimentConfig::from_toml(&joint).unwrap_err()[0].field, "alpha");
        assert!(ExperimentConfig::from_toml(&format!("alpha = 0.3\n{joint}")).is_ok());
        assert!(ExperimentConfig::from_toml(&format!("alpha = 1.3\n{joint}")).is_err());
    }

    #[test]
    fn type_errors_name_the_field() {
        let text = VALID.replace("epochs = 5", "epochs = \"many\"");
        let issues = ExperimentConfig::from_toml(&text).unwrap_err();
        assert_eq!(issues[0].field, "flow.epochs");
        let text = VALID.replace("epochs = 5", "epoch = 5");
        assert!(ExperimentConfig::from_toml(&text).unwrap_err()[0].message.contains("epoch"));
    }

    #[test]
    fn overrides_take_precedence() {
        let mut raw = RawConfig::parse(VALID).unwrap();
        raw.set("flow.epochs=7").unwrap();
        raw.set("classifier.hidden_sizes=[4, 4]").unwrap();
        raw.set("data.csv_path=some/file.csv").unwrap();
        raw.set_seeds(&[9]);
        let cfg = raw.resolve().unwrap();
        assert_eq!(cfg.flow.epochs, 7);
        assert_eq!(cfg.classifier.hidden_sizes, vec![4, 4]);
        assert_eq!(cfg.data.csv_path, Some(PathBuf::from("some/file.csv")));
        assert_eq!(cfg.seeds, vec![9]);
        assert!(RawConfig::parse(VALID).unwrap().set("noequals").is_err());
        assert!(RawConfig::parse(VALID).unwrap().set("seeds.x=1").is_err());
    }

    #[test]
    fn csv_experiment_needs_existing_file() {
        let text = VALID.replace("\"toy2d\"", "\"da-csv\"") + "\n[data]\ncsv_path = \"/no/such/file.csv\"\n";
        let fields: Vec<String> = ExperimentConfig::from_toml(&text).unwrap_err().into_iter().map(|i| i.field).collect();
        assert!(fields.contains(&"data.csv_path".to_string()));
        assert!(fields.contains(&"data.label_column".to_string()));
        assert!(fields.contains(&"bias".to_string()));
    }

    #[test]
    fn kmm_needs_transductive_experiment() {
        let text = VALID.replace("training_mode", "dre_kind = \"kmm\"\ntraining_mode");
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap_err()[0].field, "dre_kind");
        let da = text.replace("\"toy2d\"", "\"da-synthetic\"");
        assert!(ExperimentConfig::from_toml(&da).is_ok());
    }
}

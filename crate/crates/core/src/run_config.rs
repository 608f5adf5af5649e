//! Flat key/value run configuration (TOML syntax).
//!
//! Every [`IterationConfig`] field is a top-level key, next to the data
//! paths, the model size, pretraining and toy-generation settings.
//! `preset = "desk"` (the default) or `"reference"` picks the base values the
//! file then overrides. `LOCCO_SEED` and `LOCCO_ARTIFACT_DIR` override the
//! file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{read_pairs, read_texts, Corpus, DataError, Pair};
use crate::models::ModelConfig;
use crate::toy_domain::DomainSpec;
use crate::training::{IterationConfig, PretrainConfig};

pub const SEED_ENV: &str = "LOCCO_SEED";
pub const ARTIFACT_DIR_ENV: &str = "LOCCO_ARTIFACT_DIR";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Desk,
    Reference,
}

impl Preset {
    pub fn base(self) -> IterationConfig {
        match self {
            Preset::Desk => IterationConfig::desk(),
            Preset::Reference => IterationConfig::default(),
        }
    }
}

/// The keys that are not [`IterationConfig`] fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunKeys {
    supervised: Option<PathBuf>,
    unlabeled: Option<PathBuf>,
    validation: Option<PathBuf>,
    test: Option<PathBuf>,
    artifact_dir: Option<PathBuf>,
    preset: Preset,
    embed: usize,
    hidden: usize,
    max_len: usize,
    pretrain_epochs: usize,
    pretrain_lr: f64,
    toy_entities: usize,
    toy_relations: usize,
    toy_min_triples: usize,
    toy_max_triples: usize,
    toy_templates: usize,
    toy_noise: f64,
    n_supervised: usize,
    n_unlabeled: usize,
    n_validation: usize,
    n_test: usize,
}

const RUN_KEYS: [&str; 21] = [
    "supervised",
    "unlabeled",
    "validation",
    "test",
    "artifact_dir",
    "preset",
    "embed",
    "hidden",
    "max_len",
    "pretrain_epochs",
    "pretrain_lr",
    "toy_entities",
    "toy_relations",
    "toy_min_triples",
    "toy_max_triples",
    "toy_templates",
    "toy_noise",
    "n_supervised",
    "n_unlabeled",
    "n_validation",
    "n_test",
];

impl Default for RunKeys {
    fn default() -> Self {
        let model = ModelConfig::default();
        let pretrain = PretrainConfig::default();
        let toy = DomainSpec::default();
        Self {
            supervised: None,
            unlabeled: None,
            validation: None,
            test: None,
            artifact_dir: None,
            preset: Preset::Desk,
            embed: model.embed,
            hidden: model.hidden,
            max_len: 64,
            pretrain_epochs: pretrain.epochs,
            pretrain_lr: pretrain.lr,
            toy_entities: toy.entities,
            toy_relations: toy.relations,
            toy_min_triples: toy.min_triples,
            toy_max_triples: toy.max_triples,
            toy_templates: toy.templates_per_relation,
            toy_noise: toy.noise_rate,
            n_supervised: 50,
            n_unlabeled: 500,
            n_validation: 50,
            n_test: 100,
        }
    }
}

/// Split sizes for synthetic data generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSizes {
    pub supervised: usize,
    pub unlabeled: usize,
    pub validation: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub supervised: PathBuf,
    pub unlabeled: PathBuf,
    pub validation: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub artifact_dir: PathBuf,
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub toy: DomainSpec,
    pub sizes: SplitSizes,
    pub training: IterationConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        let env = |k| std::env::var(k).ok();
        Self::parse(&text, base, env(SEED_ENV), env(ARTIFACT_DIR_ENV)).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    /// Parses config text. Relative paths in the file resolve against
    /// `base`; the override values replace the file's seed and artifact
    /// directory.
    pub fn parse(
        text: &str,
        base: &Path,
        seed_override: Option<String>,
        artifact_dir_override: Option<String>,
    ) -> Result<Self, ConfigError> {
        let parse_err = |message: String| ConfigError::Parse {
            path: PathBuf::new(),
            message,
        };
        let table: toml::Table = toml::from_str(text).map_err(|e| parse_err(e.to_string()))?;
        let (run, iter): (toml::Table, toml::Table) =
            table.into_iter().partition(|(k, _)| RUN_KEYS.contains(&k.as_str()));
        let keys: RunKeys = toml::Value::Table(run)
            .try_into()
            .map_err(|e: toml::de::Error| parse_err(e.to_string()))?;

        let mut merged = match toml::Value::try_from(keys.preset.base()) {
            Ok(toml::Value::Table(t)) => t,
            _ => unreachable!("iteration config serializes to a table"),
        };
        merged.extend(iter);
        let mut training: IterationConfig = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| parse_err(e.to_string()))?;

        if let Some(seed) = seed_override {
            training.seed = seed
                .trim()
                .parse()
                .map_err(|_| ConfigError::Invalid(format!("{SEED_ENV}={seed:?} is not an unsigned integer")))?;
        }
        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
        let artifact_dir = match artifact_dir_override {
            Some(dir) => PathBuf::from(dir),
            None => resolve(keys.artifact_dir.unwrap_or_else(|| PathBuf::from("artifacts"))),
        };
        let required = |p: Option<PathBuf>, name: &str| {
            p.map(resolve)
                .ok_or_else(|| ConfigError::Invalid(format!("missing key `{name}`")))
        };

        let config = Self {
            supervised: required(keys.supervised, "supervised")?,
            unlabeled: required(keys.unlabeled, "unlabeled")?,
            validation: keys.validation.map(resolve),
            test: keys.test.map(resolve),
            artifact_dir,
            model: ModelConfig {
                embed: keys.embed,
                hidden: keys.hidden,
                max_len: keys.max_len,
            },
            pretrain: PretrainConfig {
                epochs: keys.pretrain_epochs,
                lr: keys.pretrain_lr,
                seed: training.seed,
                ..PretrainConfig::default()
            },
            toy: DomainSpec {
                entities: keys.toy_entities,
                relations: keys.toy_relations,
                min_triples: keys.toy_min_triples,
                max_triples: keys.toy_max_triples,
                templates_per_relation: keys.toy_templates,
                noise_rate: keys.toy_noise,
                seed: training.seed,
            },
            sizes: SplitSizes {
                supervised: keys.n_supervised,
                unlabeled: keys.n_unlabeled,
                validation: keys.n_validation,
                test: keys.n_test,
            },
            training,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.training.validate().map_err(|e| invalid(&e))?;
        self.model.validate().map_err(|e| invalid(&e))?;
        self.toy.validate().map_err(|e| invalid(&e))?;
        if !(self.pretrain.lr > 0.0) {
            return Err(ConfigError::Invalid("pretrain_lr must be positive".into()));
        }
        Ok(())
    }

    /// Checks that every configured data file exists.
    pub fn require_inputs(&self) -> Result<(), ConfigError> {
        let mut files = vec![("supervised", &self.supervised), ("unlabeled", &self.unlabeled)];
        files.extend(self.validation.iter().map(|p| ("validation", p)));
        files.extend(self.test.iter().map(|p| ("test", p)));
        for (name, path) in files {
            if !path.is_file() {
                return Err(ConfigError::Invalid(format!(
                    "{name} file {} does not exist",
                    path.display()
                )));
            }
        }
        Ok(())
    }

    pub fn corpus(&self) -> Result<Corpus, ConfigError> {
        self.require_inputs()?;
        Ok(Corpus {
            supervised: read_pairs(&self.supervised, self.training.kind)?,
            unlabeled: read_texts(&self.unlabeled)?,
        })
    }

    pub fn validation_pairs(&self) -> Result<Vec<Pair>, ConfigError> {
        self.optional_pairs(self.validation.as_deref())
    }

    pub fn test_pairs(&self) -> Result<Vec<Pair>, ConfigError> {
        self.optional_pairs(self.test.as_deref())
    }

    fn optional_pairs(&self, path: Option<&Path>) -> Result<Vec<Pair>, ConfigError> {
        match path {
            Some(p) => Ok(read_pairs(p, self.training.kind)?),
            None => Ok(Vec::new()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logical_forms::FormKind;
    use crate::reward::RewardMode;
    use crate::training::Method;

    const MINIMAL: &str = "supervised = \"sup.tsv\"\nunlabeled = \"unl.txt\"\n";

    fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        RunConfig::parse(text, Path::new("/data"), None, None)
    }

    #[test]
    fn minimal_file_uses_desk_preset() {
        let c = parse(MINIMAL).unwrap();
        assert_eq!(c.training, IterationConfig::desk());
        assert_eq!(c.supervised, PathBuf::from("/data/sup.tsv"));
        assert_eq!(c.artifact_dir, PathBuf::from("/data/artifacts"));
        assert_eq!(c.validation, None);
    }

    #[test]
    fn every_iteration_field_is_settable() {
        let text = format!(
            "{MINIMAL}preset = \"reference\"\niterations = 2\nsamples = 4\ntau = 0.5\nepsilon = 0.1\n\
             lr = 1e-4\nwarmup_lr = 2e-3\nmethod = \"cc_only\"\ndomain = \"sexpr\"\nworkers = 3\n\
             eval_every_steps = 7\noptimizer = \"adam\"\ncarry_counts = true\n"
        );
        let c = parse(&text).unwrap();
        let t = &c.training;
        assert_eq!((t.iterations, t.samples, t.workers), (2, 4, 3));
        assert_eq!((t.tau, t.epsilon, t.lr, t.warmup_lr), (0.5, 0.1, 1e-4, Some(2e-3)));
        assert_eq!(t.method, Method::Locco(RewardMode::CcOnly));
        assert_eq!(t.kind, FormKind::Sexpr);
        assert_eq!(t.eval_every_steps, Some(7));
        assert!(t.carry_counts);
        assert_eq!(t.patience, IterationConfig::default().patience);
    }

    #[test]
    fn unknown_and_malformed_keys_rejected() {
        assert!(matches!(parse(&format!("{MINIMAL}bogus = 1\n")), Err(ConfigError::Parse { .. })));
        assert!(matches!(parse(&format!("{MINIMAL}samples = \"x\"\n")), Err(ConfigError::Parse { .. })));
        assert!(matches!(parse(&format!("{MINIMAL}method = \"nope\"\n")), Err(ConfigError::Parse { .. })));
        assert!(matches!(parse("unlabeled = \"u\"\n"), Err(ConfigError::Invalid(_))));
        assert!(matches!(parse(&format!("{MINIMAL}samples = 0\n")), Err(ConfigError::Invalid(_))));
        assert!(matches!(parse(&format!("{MINIMAL}embed = 500\n")), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn environment_overrides() {
        let c = RunConfig::parse(
            &format!("{MINIMAL}seed = 3\nartifact_dir = \"out\"\n"),
            Path::new("/data"),
            Some("11".into()),
            Some("/tmp/elsewhere".into()),
        )
        .unwrap();
        assert_eq!(c.training.seed, 11);
        assert_eq!(c.toy.seed, 11);
        assert_eq!(c.artifact_dir, PathBuf::from("/tmp/elsewhere"));
        let bad = RunConfig::parse(MINIMAL, Path::new("/"), Some("x".into()), None);
        assert!(matches!(bad, Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn missing_inputs_are_named() {
        let c = parse(MINIMAL).unwrap();
        let err = c.require_inputs().unwrap_err().to_string();
        assert!(err.contains("/data/sup.tsv"), "{err}");
    }
}

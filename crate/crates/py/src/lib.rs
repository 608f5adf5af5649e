//! Python bindings: logical forms, the logic prior, reward weighting,
//! metrics, the toy domain, the reference model and a full training run.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use locco_core::logic_prior::PriorTable;
use locco_core::logical_forms::{FormKind, LogicalForm, Part};
use locco_core::models::{
    ModelConfig, ModelError, ModelHandle, OptimizerKind, Role, SampleResult, SamplingParams,
    Seq2Seq, Vocabulary,
};
use locco_core::reward::{self, RewardConfig, RewardMode};
use locco_core::run_config::RunConfig;
use locco_core::toy_domain::{DomainSpec, ToyDomain};
use locco_core::training::{self, Artifacts};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn model_err(e: ModelError) -> PyErr {
    match e {
        ModelError::Io(io) => PyIOError::new_err(io.to_string()),
        other => value_err(other),
    }
}

fn form_kind(kind: &str) -> PyResult<FormKind> {
    kind.parse().map_err(value_err)
}

/// A parsed logical form (triple set or s-expression).
#[pyclass(name = "Form", frozen, eq, skip_from_py_object)]
#[derive(Clone, PartialEq)]
struct PyForm(LogicalForm);

#[pymethods]
impl PyForm {
    #[staticmethod]
    #[pyo3(signature = (text, kind = "triples"))]
    fn parse(text: &str, kind: &str) -> PyResult<Self> {
        form_kind(kind)?.parse(text).map(PyForm).map_err(value_err)
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.0.kind().as_str()
    }

    fn linearize(&self) -> String {
        self.0.linearize()
    }

    /// Distinct parts, in canonical order.
    fn parts(&self) -> Vec<String> {
        self.0.parts().into_iter().map(|p| p.as_str().to_string()).collect()
    }

    fn part_occurrences(&self) -> Vec<String> {
        self.0.part_occurrences().into_iter().map(|p| p.as_str().to_string()).collect()
    }

    fn __repr__(&self) -> String {
        format!("Form({:?})", self.0.linearize())
    }
}

/// Count-based prior over logical-form parts.
#[pyclass(name = "Prior")]
struct PyPrior(PriorTable);

#[pymethods]
impl PyPrior {
    #[new]
    #[pyo3(signature = (tau = 1.0))]
    fn new(tau: f64) -> PyResult<Self> {
        PriorTable::new(tau).map(PyPrior).map_err(value_err)
    }

    fn observe(&mut self, form: &PyForm) {
        self.0.observe(&form.0);
    }

    fn logprob(&self, form: &PyForm) -> PyResult<f64> {
        self.0.logprob(&form.0).map_err(value_err)
    }

    fn count(&self, part: &str) -> Option<f64> {
        self.0.count(&Part::from_canonical(part))
    }

    fn theta(&self, part: &str) -> Option<f64> {
        self.0.theta(&Part::from_canonical(part))
    }

    #[getter]
    fn total(&self) -> f64 {
        self.0.total()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(&path).map_err(value_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        PriorTable::load(&path).map(PyPrior).map_err(value_err)
    }
}

#[pyfunction]
#[pyo3(signature = (values, sigma_floor = reward::DEFAULT_SIGMA_FLOOR))]
fn normalize(values: Vec<f64>, sigma_floor: f64) -> Vec<f64> {
    reward::normalize(&values, sigma_floor)
}

#[pyfunction]
#[pyo3(signature = (r, a, epsilon = reward::DEFAULT_EPSILON))]
fn clipped_weight(r: f64, a: f64, epsilon: f64) -> f64 {
    reward::clipped_weight(r, a, epsilon)
}

#[pyfunction]
#[pyo3(signature = (logq_new, logq_old, ceiling = reward::DEFAULT_RATIO_CEILING))]
fn importance_ratio(logq_new: f64, logq_old: f64, ceiling: f64) -> f64 {
    reward::importance_ratio(logq_new, logq_old, ceiling)
}

/// Per-sample weights of one group.
#[pyfunction]
#[pyo3(signature = (values, logq_new, logq_old, mode = "full", epsilon = reward::DEFAULT_EPSILON))]
fn group_weights(
    values: Vec<f64>,
    logq_new: Vec<f64>,
    logq_old: Vec<f64>,
    mode: &str,
    epsilon: f64,
) -> PyResult<Vec<f64>> {
    if values.len() != logq_new.len() || values.len() != logq_old.len() {
        return Err(PyValueError::new_err("values, logq_new and logq_old differ in length"));
    }
    let config = RewardConfig {
        mode: mode.parse::<RewardMode>().map_err(value_err)?,
        epsilon,
        ..RewardConfig::default()
    };
    config.validate().map_err(value_err)?;
    Ok(reward::group_weights(&values, &logq_new, &logq_old, &config))
}

fn unwrap_forms(forms: &[Option<PyRef<'_, PyForm>>]) -> Vec<Option<LogicalForm>> {
    forms.iter().map(|f| f.as_ref().map(|f| f.0.clone())).collect()
}

#[pyfunction]
fn exact_match(preds: Vec<Option<PyRef<'_, PyForm>>>, golds: Vec<PyRef<'_, PyForm>>) -> PyResult<f64> {
    let golds: Vec<LogicalForm> = golds.iter().map(|g| g.0.clone()).collect();
    locco_core::metrics::exact_match_accuracy(&unwrap_forms(&preds), &golds).map_err(value_err)
}

/// (f1, precision, recall), micro-averaged.
#[pyfunction]
fn triple_f1(preds: Vec<Option<PyRef<'_, PyForm>>>, golds: Vec<PyRef<'_, PyForm>>) -> PyResult<(f64, f64, f64)> {
    let golds: Vec<LogicalForm> = golds.iter().map(|g| g.0.clone()).collect();
    let r = locco_core::metrics::triple_f1(&unwrap_forms(&preds), &golds).map_err(value_err)?;
    Ok((r.f1, r.precision, r.recall))
}

type LabeledSplit = Vec<(String, String)>;

/// Synthetic splits as (supervised, unlabeled, validation, test); labeled
/// splits are (text, linearized form) pairs.
#[pyfunction]
#[pyo3(signature = (n_supervised, n_unlabeled, n_validation, n_test, seed = 7, entities = 20, relations = 5, noise_rate = 0.0))]
#[allow(clippy::too_many_arguments)]
fn toy_splits(
    n_supervised: usize,
    n_unlabeled: usize,
    n_validation: usize,
    n_test: usize,
    seed: u64,
    entities: usize,
    relations: usize,
    noise_rate: f64,
) -> PyResult<(LabeledSplit, Vec<String>, LabeledSplit, LabeledSplit)> {
    let spec = DomainSpec {
        entities,
        relations,
        noise_rate,
        seed,
        ..DomainSpec::default()
    };
    let domain = ToyDomain::new(spec).map_err(value_err)?;
    let s = domain
        .generate(n_supervised, n_unlabeled, n_validation, n_test)
        .map_err(value_err)?;
    let pairs = |ps: &[locco_core::data::Pair]| -> LabeledSplit {
        ps.iter().map(|p| (p.text.clone(), p.form.linearize())).collect()
    };
    Ok((
        pairs(&s.corpus.supervised),
        s.corpus.unlabeled.clone(),
        pairs(&s.validation),
        pairs(&s.test),
    ))
}

fn sample_tuple(s: SampleResult) -> (String, f64, bool) {
    (s.text(), s.logq, s.truncated)
}

/// The reference encoder-decoder.
#[pyclass(name = "Model", skip_from_py_object)]
#[derive(Clone)]
struct PyModel(ModelHandle);

#[pymethods]
impl PyModel {
    /// Builds the vocabulary from the whitespace tokens of `texts`.
    #[new]
    #[pyo3(signature = (texts, embed = 32, hidden = 32, max_len = 64, role = "parser", seed = 0))]
    fn new(texts: Vec<String>, embed: usize, hidden: usize, max_len: usize, role: &str, seed: u64) -> PyResult<Self> {
        let vocab = Vocabulary::build(texts.iter().map(String::as_str));
        let role: Role = role.parse().map_err(value_err)?;
        let config = ModelConfig { embed, hidden, max_len };
        ModelHandle::new(vocab, config, role, seed).map(PyModel).map_err(model_err)
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.0.num_parameters()
    }

    #[getter]
    fn role(&self) -> &'static str {
        self.0.role().as_str()
    }

    #[getter]
    fn frozen(&self) -> bool {
        self.0.is_frozen()
    }

    #[getter]
    fn version(&self) -> u32 {
        self.0.version()
    }

    fn fingerprint(&self) -> String {
        self.0.fingerprint()
    }

    fn logprob(&self, condition: &str, target: &str) -> f64 {
        self.0.logprob(condition, target)
    }

    /// [(text, logq, truncated)] for `n` seeded draws.
    #[pyo3(signature = (condition, n = 1, temperature = 1.0, top_p = 0.95, seed = 0))]
    fn sample(&self, condition: &str, n: usize, temperature: f64, top_p: f64, seed: u64) -> PyResult<Vec<(String, f64, bool)>> {
        let params = SamplingParams { temperature, top_p };
        let out = self.0.sample(condition, n, &params, seed).map_err(model_err)?;
        Ok(out.into_iter().map(sample_tuple).collect())
    }

    fn greedy(&self, condition: &str) -> (String, f64, bool) {
        sample_tuple(self.0.greedy(condition))
    }

    /// One gradient step on `Σ w · log p(target | condition)` over the
    /// (condition, target, w) triples.
    #[pyo3(signature = (batch, lr))]
    fn weighted_update(&mut self, batch: Vec<(String, String, f64)>, lr: f64) -> PyResult<()> {
        let examples: Vec<locco_core::models::Example> = batch
            .iter()
            .map(|(c, t, w)| locco_core::models::Example::new(c, t, *w))
            .collect();
        self.0.weighted_update(&examples, lr).map_err(model_err)
    }

    fn clone_frozen(&self) -> Self {
        PyModel(self.0.clone_frozen())
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(&path).map_err(model_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        ModelHandle::load(&path).map(PyModel).map_err(model_err)
    }
}

/// Pretraining, warm-up and every iteration as configured in the config
/// file; returns the final parser.
#[pyfunction]
fn run(config_path: PathBuf) -> PyResult<PyModel> {
    let cfg = RunConfig::load(&config_path).map_err(value_err)?;
    let corpus = cfg.corpus().map_err(value_err)?;
    let val = cfg.validation_pairs().map_err(value_err)?;
    let test = cfg.test_pairs().map_err(value_err)?;
    let vocab = training::build_vocabulary(&corpus, &[&val, &test]);
    let mut initial = ModelHandle::new(vocab, cfg.model, Role::Parser, cfg.training.seed).map_err(model_err)?;
    if cfg.pretrain.epochs > 0 {
        initial = training::pretrain_denoising(
            initial,
            &training::pretraining_sequences(&corpus),
            OptimizerKind::Adam,
            &cfg.pretrain,
        )
        .map_err(value_err)?;
    }
    let art = Artifacts::new(&cfg.artifact_dir);
    let out = training::run(&initial, &corpus, &val, &cfg.training, &art).map_err(value_err)?;
    Ok(PyModel(out.parser))
}

#[pymodule]
fn locco(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyForm>()?;
    m.add_class::<PyPrior>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(normalize, m)?)?;
    m.add_function(wrap_pyfunction!(clipped_weight, m)?)?;
    m.add_function(wrap_pyfunction!(importance_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(group_weights, m)?)?;
    m.add_function(wrap_pyfunction!(exact_match, m)?)?;
    m.add_function(wrap_pyfunction!(triple_f1, m)?)?;
    m.add_function(wrap_pyfunction!(toy_splits, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}

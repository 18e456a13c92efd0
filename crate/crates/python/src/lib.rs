//! Python bindings: tokenization, sketching, training, generation and
//! evaluation. Structured results are returned as plain dicts and lists.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use sketchfill::checkpoint::Checkpoint;
use sketchfill::corpus::synthetic::{generate, SyntheticConfig};
use sketchfill::corpus::{self, DialogueExample, JsonlRecord, PersonaTrait, StopWordSet};
use sketchfill::eval;
use sketchfill::inference::{generate_response, FillMode, GenerationConfig};
use sketchfill::lm::{train_lm, CandidateScorer, LmConfig};
use sketchfill::model::{ModelConfig, SketchModel as CoreModel, Variant};
use sketchfill::trainer::{self, TrainConfig, TrainOptions};

fn to_py(e: sketchfill::Error) -> PyErr {
    match e {
        sketchfill::Error::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Converts a serializable value to Python objects through JSON.
fn to_python<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn record(item: &Bound<'_, PyAny>, stop: &StopWordSet) -> PyResult<DialogueExample> {
    let dict = item.cast::<PyDict>().map_err(|_| PyValueError::new_err("records must be dicts"))?;
    let field = |key: &str| -> PyResult<Bound<'_, PyAny>> {
        dict.get_item(key)?.ok_or_else(|| PyValueError::new_err(format!("record is missing {key:?}")))
    };
    let personas: Vec<String> = field("personas")?.extract()?;
    let history: Vec<String> = field("history")?.extract()?;
    let response: String = field("response")?.extract()?;
    let personas: Vec<&str> = personas.iter().map(String::as_str).collect();
    Ok(DialogueExample::new(&personas, &history, &response, stop))
}

fn records(items: &Bound<'_, PyAny>) -> PyResult<Vec<DialogueExample>> {
    let stop = StopWordSet::default();
    items.try_iter()?.map(|item| record(&item?, &stop)).collect()
}

fn traits(personas: &[String]) -> Vec<PersonaTrait> {
    let stop = StopWordSet::default();
    personas.iter().map(|p| PersonaTrait::new(p, &stop)).collect()
}

#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    corpus::tokenize(text)
}

#[pyfunction]
fn detokenize(tokens: Vec<String>) -> String {
    corpus::detokenize(&tokens)
}

/// Returns the sketch tokens and, per slot, `(position, persona, rare word index)`.
#[pyfunction]
fn sketchify(response: &str, personas: Vec<String>) -> (Vec<String>, Vec<(usize, usize, usize)>) {
    let sketch = corpus::sketchify(&corpus::tokenize(response), &traits(&personas));
    let slots = sketch
        .slot_positions
        .iter()
        .zip(&sketch.slot_sources)
        .map(|(&pos, s)| (pos, s.persona, s.rare_word))
        .collect();
    (sketch.tokens, slots)
}

/// Synthetic persona dialogues as `{personas, history, response}` dicts.
#[pyfunction]
#[pyo3(signature = (dialogues = 100, seed = 0))]
fn synthetic_dataset(py: Python<'_>, dialogues: usize, seed: u64) -> PyResult<Bound<'_, PyAny>> {
    let data = generate(&SyntheticConfig { dialogues, seed, ..Default::default() });
    let recs: Vec<JsonlRecord> = data.iter().map(JsonlRecord::from).collect();
    to_python(py, &recs)
}

#[pyfunction]
fn novelty_stats<'py>(
    py: Python<'py>,
    generated: Vec<Vec<String>>,
    training: Vec<Vec<String>>,
) -> PyResult<Bound<'py, PyAny>> {
    to_python(py, &eval::novelty_stats(&generated, &training).map_err(to_py)?)
}

#[pyfunction]
fn question_rate(py: Python<'_>, responses: Vec<Vec<String>>) -> PyResult<Bound<'_, PyAny>> {
    to_python(py, &eval::question_rate(&responses))
}

/// Language model that scores filled candidates.
#[pyclass(module = "sketchfill_py", frozen)]
struct LanguageModel {
    inner: sketchfill::lm::LanguageModel,
    config: LmConfig,
}

#[pymethods]
impl LanguageModel {
    /// Trains on the responses of `records` over the vocabulary of `model`.
    #[staticmethod]
    #[pyo3(signature = (records, model, dim = 64, max_epochs = 20, lr = 1e-3, batch_size = 32, seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        py: Python<'_>,
        records: &Bound<'_, PyAny>,
        model: &SketchModel,
        dim: usize,
        max_epochs: usize,
        lr: f64,
        batch_size: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let data = self::records(records)?;
        let responses: Vec<Vec<String>> = data.into_iter().map(|ex| ex.response).collect();
        let config = LmConfig { dim, max_epochs, lr, batch_size, seed, ..LmConfig::default() };
        let vocab = model.inner.vocab.clone();
        let trained = py.detach(|| train_lm(&responses, &vocab, &config)).map_err(to_py)?;
        Ok(LanguageModel { inner: trained.model, config })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ck = Checkpoint::load(&path).map_err(to_py)?;
        let config = match &ck.config {
            sketchfill::checkpoint::CheckpointConfig::Lm { lm } => lm.clone(),
            _ => return Err(PyValueError::new_err("not a language-model checkpoint")),
        };
        Ok(LanguageModel { inner: ck.to_lm().map_err(to_py)?, config })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        Checkpoint::from_lm(&self.inner, self.config.clone()).save(&path).map_err(to_py)
    }

    /// `exp` of the mean per-token negative log-likelihood, EOS included.
    fn score(&self, tokens: Vec<String>) -> PyResult<f64> {
        self.inner.score(&tokens).map_err(to_py)
    }
}

/// Trained sketch model.
#[pyclass(module = "sketchfill_py", frozen)]
struct SketchModel {
    inner: CoreModel,
    checkpoint: Checkpoint,
}

#[pymethods]
impl SketchModel {
    /// Trains on lists of `{personas, history, response}` dicts and keeps
    /// the weights with the best validation perplexity.
    #[staticmethod]
    #[pyo3(signature = (
        train, validation, variant = "SF-A-R", dim = 64, lr = 1e-2, dropout = 0.1,
        batch_size = 32, max_epochs = 10, patience = 3, seed = 0
    ))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        py: Python<'_>,
        train: &Bound<'_, PyAny>,
        validation: &Bound<'_, PyAny>,
        variant: &str,
        dim: usize,
        lr: f64,
        dropout: f64,
        batch_size: usize,
        max_epochs: usize,
        patience: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let variant: Variant = variant.parse().map_err(to_py)?;
        let (train, validation) = (records(train)?, records(validation)?);
        let config = TrainConfig {
            model: ModelConfig { variant, d_emb: dim, d_hid: dim, dropout, ..ModelConfig::default() },
            lr,
            batch_size,
            max_epochs,
            patience,
            seed,
            ..TrainConfig::default()
        };
        let out = py
            .detach(|| trainer::train(&train, &validation, &config, &TrainOptions::default()))
            .map_err(to_py)?;
        Ok(SketchModel { inner: out.model, checkpoint: out.checkpoint })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let checkpoint = Checkpoint::load(&path).map_err(to_py)?;
        Ok(SketchModel { inner: checkpoint.to_model().map_err(to_py)?, checkpoint })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.checkpoint.save(&path).map_err(to_py)
    }

    #[getter]
    fn variant(&self) -> &'static str {
        self.inner.config.variant.name()
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.vocab.len()
    }

    /// Sketch perplexity over records.
    fn perplexity(&self, py: Python<'_>, records: &Bound<'_, PyAny>) -> PyResult<f64> {
        let data = self::records(records)?;
        py.detach(|| eval::corpus_perplexity(&self.inner, &data, Some(10))).map_err(to_py)
    }

    /// Reply to `turns` (oldest first). Reranking variants need `lm` unless
    /// `fill="pointer"`. With `debug=True` returns `{reply, debug}`.
    #[pyo3(signature = (personas, turns, lm = None, beam = 7, fill = None, debug = false))]
    #[allow(clippy::too_many_arguments)]
    fn generate<'py>(
        &self,
        py: Python<'py>,
        personas: Vec<String>,
        turns: Vec<String>,
        lm: Option<&LanguageModel>,
        beam: usize,
        fill: Option<&str>,
        debug: bool,
    ) -> PyResult<Bound<'py, PyAny>> {
        let fill_mode = match fill {
            None => FillMode::for_variant(self.inner.config.variant),
            Some("rerank") => FillMode::Rerank,
            Some("pointer") => FillMode::Pointer,
            Some(other) => return Err(PyValueError::new_err(format!("unknown fill mode {other:?}"))),
        };
        let config = GenerationConfig {
            beam_size: beam,
            candidate_cap: beam.max(GenerationConfig::default().candidate_cap),
            fill_mode,
            ..GenerationConfig::default()
        };
        let traits = traits(&personas);
        let turns: Vec<Vec<String>> = turns.iter().map(|t| corpus::tokenize(t)).collect();
        let scorer = lm.map(|l| &l.inner as &dyn CandidateScorer);
        let g = py
            .detach(|| generate_response(&self.inner, scorer, &traits, &turns, &config))
            .map_err(to_py)?;
        let reply = corpus::detokenize(&g.response);
        if debug {
            to_python(py, &serde_json::json!({ "reply": reply, "debug": g.debug }))
        } else {
            Ok(reply.into_pyobject(py)?.into_any())
        }
    }
}

#[pymodule]
fn sketchfill_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(detokenize, m)?)?;
    m.add_function(wrap_pyfunction!(sketchify, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(novelty_stats, m)?)?;
    m.add_function(wrap_pyfunction!(question_rate, m)?)?;
    m.add_class::<SketchModel>()?;
    m.add_class::<LanguageModel>()?;
    Ok(())
}

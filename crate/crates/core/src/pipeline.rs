//! End-to-end collaborative inference for one sample.
//!
//! Order of work: specialist predictions (if enabled), embedding + retrieval
//! (if enabled), prompt rendering, generation, parsing. With both contexts
//! disabled the prompt is the plain task template, so the same entry point
//! also covers generalist-only inference.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, Embed, Generate, Predict};
use crate::label::{Diagnosis, LabelSet, Outcome, PredictionError, Sample, SpecialistPrediction, TaskKind};
use crate::parse::parse_prediction;
use crate::prompt::{render_prompt, Placeholder, PromptBindings, PromptError, TemplateId};
use crate::vector::{Index, IndexError, RetrievalConfig, RetrievedCase};
use crate::vote::{format_moed_context, format_rad_context, majority_vote, multilabel_vote, VoteError};

/// Line appended to generation prompts when retrieval context is enabled.
const RAD_LINE: &str = "The reference diagnoses of the most similar cases are {RAD}.";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PipelineError {
    #[error("no specialists registered")]
    NoSpecialists,
    #[error("all {} specialists failed: {}", .0.len(), join_failures(.0))]
    AllBackendsFailed(Vec<SpecialistFailure>),
    #[error("task {0} needs a label set")]
    MissingLabelSet(TaskKind),
    #[error("retrieval is enabled but no index was supplied")]
    MissingIndex,
    #[error("retrieval is enabled but no embedding backend was supplied")]
    MissingEmbedder,
    #[error("no generator backend was supplied")]
    MissingGenerator,
    #[error("mode {mode} does not apply to task {task}")]
    Unsupported { mode: Mode, task: TaskKind },
    #[error("sample {0:?} lacks a field its task requires: {1}")]
    IncompleteSample(String, &'static str),
    #[error("embedding failed: {0}")]
    Embed(BackendError),
    #[error("retrieval failed: {0}")]
    Retrieval(#[from] IndexError),
    #[error("generator failed: {0}")]
    Inference(BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Vote(#[from] VoteError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecialistFailure {
    pub specialist_id: String,
    pub message: String,
}

fn join_failures(fs: &[SpecialistFailure]) -> String {
    fs.iter().map(|f| format!("{}: {}", f.specialist_id, f.message)).collect::<Vec<_>>().join("; ")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Generalist alone, plain task prompt.
    Gfm,
    /// First registered specialist alone.
    Specialist,
    /// Majority vote over specialists, no generalist.
    Voting,
    Moed,
    Rad,
    Gsco,
}

impl Mode {
    pub const ALL: [Mode; 6] = [Mode::Gfm, Mode::Specialist, Mode::Voting, Mode::Moed, Mode::Rad, Mode::Gsco];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Gfm => "gfm",
            Mode::Specialist => "specialist",
            Mode::Voting => "voting",
            Mode::Moed => "moed",
            Mode::Rad => "rad",
            Mode::Gsco => "gsco",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        Mode::ALL.into_iter().find(|m| m.as_str() == s)
    }

    pub fn needs_specialists(self) -> bool {
        matches!(self, Mode::Specialist | Mode::Voting | Mode::Moed | Mode::Gsco)
    }

    pub fn needs_index(self) -> bool {
        matches!(self, Mode::Rad | Mode::Gsco)
    }

    pub fn needs_generator(self) -> bool {
        matches!(self, Mode::Gfm | Mode::Moed | Mode::Rad | Mode::Gsco)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GscoConfig {
    pub retrieval: RetrievalConfig,
    pub use_moed: bool,
    pub use_rad: bool,
    /// Which of the four collaboration phrasings to render (0..=3).
    pub template_variant: u8,
}

impl Default for GscoConfig {
    fn default() -> Self {
        GscoConfig { retrieval: RetrievalConfig::default(), use_moed: true, use_rad: true, template_variant: 0 }
    }
}

impl GscoConfig {
    /// Context switches implied by a generator-backed mode.
    pub fn for_mode(mode: Mode, retrieval: RetrievalConfig, template_variant: u8) -> GscoConfig {
        let (use_moed, use_rad) = match mode {
            Mode::Moed => (true, false),
            Mode::Rad => (false, true),
            Mode::Gsco => (true, true),
            _ => (false, false),
        };
        GscoConfig { retrieval, use_moed, use_rad, template_variant }
    }
}

/// The model handles available to the pipeline.
#[derive(Clone, Copy, Default)]
pub struct Backends<'a> {
    pub specialists: &'a [&'a dyn Predict],
    pub generator: Option<&'a dyn Generate>,
    pub embedder: Option<&'a dyn Embed>,
    pub index: Option<&'a Index>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gathered {
    pub predictions: Vec<SpecialistPrediction>,
    pub failures: Vec<SpecialistFailure>,
}

/// Queries every specialist in registration order. Individual failures are
/// recorded; the call fails only when none of them produced a valid answer.
pub fn gather_specialist_predictions(
    sample: &Sample,
    labels: &LabelSet,
    specialists: &[&dyn Predict],
) -> Result<Gathered, PipelineError> {
    if specialists.is_empty() {
        return Err(PipelineError::NoSpecialists);
    }
    let mut predictions = Vec::with_capacity(specialists.len());
    let mut failures = Vec::new();
    for s in specialists {
        let result = s
            .predict(&sample.image_ref, labels)
            .map_err(|e| e.to_string())
            .and_then(|p| p.validate(labels, sample.task).map(|()| p).map_err(|e: PredictionError| e.to_string()));
        match result {
            Ok(p) => predictions.push(p),
            Err(message) => failures.push(SpecialistFailure { specialist_id: s.id().to_string(), message }),
        }
    }
    if predictions.is_empty() {
        return Err(PipelineError::AllBackendsFailed(failures));
    }
    Ok(Gathered { predictions, failures })
}

/// A rendered prompt plus the contexts that went into it.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedPrompt {
    pub prompt: String,
    pub context_moed: Option<String>,
    pub context_rad: Option<String>,
    pub retrieved: Vec<RetrievedCase>,
    pub specialist_failures: Vec<SpecialistFailure>,
}

fn required_labels<'l>(sample: &Sample, labels: Option<&'l LabelSet>) -> Result<Option<&'l LabelSet>, PipelineError> {
    match (sample.task.is_classification(), labels) {
        (true, None) => Err(PipelineError::MissingLabelSet(sample.task)),
        (true, some) => Ok(some),
        (false, _) => Ok(None),
    }
}

/// Steps 1-3: gather contexts and render the prompt.
pub fn prepare_prompt(
    sample: &Sample,
    labels: Option<&LabelSet>,
    backends: &Backends<'_>,
    cfg: &GscoConfig,
) -> Result<PreparedPrompt, PipelineError> {
    let labels = required_labels(sample, labels)?;
    let mut specialist_failures = Vec::new();

    let context_moed = if cfg.use_moed {
        let Some(labels) = labels else {
            return Err(PipelineError::Unsupported { mode: Mode::Moed, task: sample.task });
        };
        let gathered = gather_specialist_predictions(sample, labels, backends.specialists)?;
        specialist_failures = gathered.failures;
        Some(format_moed_context(&gathered.predictions, labels))
    } else {
        None
    };

    let mut retrieved = Vec::new();
    let context_rad = if cfg.use_rad {
        let index = backends.index.ok_or(PipelineError::MissingIndex)?;
        let embedder = backends.embedder.ok_or(PipelineError::MissingEmbedder)?;
        let query = embedder.embed(&sample.image_ref).map_err(PipelineError::Embed)?;
        retrieved = index.query_topk(&query, &cfg.retrieval)?;
        Some(format_rad_context(&retrieved))
    } else {
        None
    };

    let mut bindings = PromptBindings::new().with(Placeholder::Modality, sample.modality.as_str());
    let prompt = match labels {
        Some(labels) => {
            bindings = bindings.with_label_set(labels);
            if context_moed.is_none() && context_rad.is_none() {
                render_prompt(TemplateId::Cls, &bindings)?
            } else {
                bindings = bindings
                    .with(Placeholder::Moed, context_moed.as_deref().unwrap_or("none"))
                    .with(Placeholder::Rad, context_rad.as_deref().unwrap_or("none"));
                render_prompt(TemplateId::gsco(cfg.template_variant)?, &bindings)?
            }
        }
        None => {
            let template = if sample.task.is_vqa() {
                let q = sample
                    .question
                    .as_deref()
                    .ok_or_else(|| PipelineError::IncompleteSample(sample.id.clone(), "question"))?;
                bindings = bindings.with(Placeholder::Question, q);
                TemplateId::Vqa
            } else {
                TemplateId::Mrg
            };
            let mut prompt = render_prompt(template, &bindings)?;
            if let Some(rad) = &context_rad {
                prompt.push('\n');
                prompt.push_str(&RAD_LINE.replace("{RAD}", rad));
            }
            prompt
        }
    };

    Ok(PreparedPrompt { prompt, context_moed, context_rad, retrieved, specialist_failures })
}

/// Runs the collaborative pipeline for one sample.
///
/// An unparseable classification answer is not an error: the diagnosis comes
/// back with no labels and `parse_warning` set.
pub fn run_collaborative_inference(
    sample: &Sample,
    labels: Option<&LabelSet>,
    backends: &Backends<'_>,
    cfg: &GscoConfig,
) -> Result<Diagnosis, PipelineError> {
    let generator = backends.generator.ok_or(PipelineError::MissingGenerator)?;
    let prepared = prepare_prompt(sample, labels, backends, cfg)?;
    let raw_text = generator
        .generate(&sample.image_ref, &prepared.prompt)
        .map_err(PipelineError::Inference)?;
    let (outcome, parse_warning) = match labels.filter(|_| sample.task.is_classification()) {
        Some(labels) => {
            let parsed = parse_prediction(&raw_text, labels, sample.task);
            (Outcome::Labels(parsed.labels), parsed.warning)
        }
        None => (Outcome::Text(raw_text.clone()), false),
    };
    Ok(Diagnosis {
        sample_id: sample.id.clone(),
        outcome,
        raw_text,
        context_moed: prepared.context_moed,
        context_rad: prepared.context_rad,
        parse_warning,
    })
}

fn specialist_only<'l>(sample: &Sample, labels: Option<&'l LabelSet>, mode: Mode) -> Result<&'l LabelSet, PipelineError> {
    match required_labels(sample, labels)? {
        Some(l) => Ok(l),
        None => Err(PipelineError::Unsupported { mode, task: sample.task }),
    }
}

/// Specialist majority vote, without a generalist.
pub fn run_voting(sample: &Sample, labels: Option<&LabelSet>, specialists: &[&dyn Predict]) -> Result<Diagnosis, PipelineError> {
    let labels = specialist_only(sample, labels, Mode::Voting)?;
    let gathered = gather_specialist_predictions(sample, labels, specialists)?;
    let outcome = if sample.task == TaskKind::ClsMultilabel {
        multilabel_vote(&gathered.predictions, labels)?
    } else {
        majority_vote(&gathered.predictions, labels)?
    };
    let winner = SpecialistPrediction { specialist_id: String::new(), labels: outcome.winning_labels.clone(), scores: None };
    Ok(Diagnosis {
        sample_id: sample.id.clone(),
        raw_text: format_moed_context(core::slice::from_ref(&winner), labels),
        outcome: Outcome::Labels(outcome.winning_labels),
        context_moed: Some(format_moed_context(&gathered.predictions, labels)),
        context_rad: None,
        parse_warning: false,
    })
}

/// The first registered specialist's answer.
pub fn run_specialist(sample: &Sample, labels: Option<&LabelSet>, specialists: &[&dyn Predict]) -> Result<Diagnosis, PipelineError> {
    let labels = specialist_only(sample, labels, Mode::Specialist)?;
    let first = specialists.first().ok_or(PipelineError::NoSpecialists)?;
    let gathered = gather_specialist_predictions(sample, labels, core::slice::from_ref(first))?;
    let p = gathered.predictions.into_iter().next().expect("gather returned at least one prediction");
    Ok(Diagnosis {
        sample_id: sample.id.clone(),
        raw_text: format_moed_context(core::slice::from_ref(&p), labels),
        outcome: Outcome::Labels(p.labels),
        context_moed: None,
        context_rad: None,
        parse_warning: false,
    })
}

/// Dispatches one sample through `mode`.
pub fn run_mode(
    mode: Mode,
    sample: &Sample,
    labels: Option<&LabelSet>,
    backends: &Backends<'_>,
    retrieval: &RetrievalConfig,
    template_variant: u8,
) -> Result<Diagnosis, PipelineError> {
    match mode {
        Mode::Voting => run_voting(sample, labels, backends.specialists),
        Mode::Specialist => run_specialist(sample, labels, backends.specialists),
        _ => {
            let cfg = GscoConfig::for_mode(mode, retrieval.clone(), template_variant);
            run_collaborative_inference(sample, labels, backends, &cfg)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;

    struct Fixed {
        id: String,
        answer: Result<Vec<usize>, BackendError>,
    }

    impl Predict for Fixed {
        fn id(&self) -> &str {
            &self.id
        }
        fn predict(&self, _: &str, _: &LabelSet) -> Result<SpecialistPrediction, BackendError> {
            self.answer.clone().map(|labels| SpecialistPrediction { specialist_id: self.id.clone(), labels, scores: None })
        }
    }

    fn fixed(id: &str, labels: &[usize]) -> Fixed {
        Fixed { id: id.into(), answer: Ok(labels.to_vec()) }
    }

    fn failing(id: &str) -> Fixed {
        Fixed { id: id.into(), answer: Err(BackendError::Transport { backend: id.into(), message: "down".into() }) }
    }

    /// Answers with the first label named in the specialist-answer line.
    struct FirstMoed;

    impl Generate for FirstMoed {
        fn id(&self) -> &str {
            "first-moed"
        }
        fn generate(&self, _: &str, prompt: &str) -> Result<String, BackendError> {
            let line = prompt
                .lines()
                .find_map(|l| l.strip_prefix("The reference answers by other models are "))
                .unwrap_or("");
            Ok(line.trim_end_matches('.').split(", ").next().unwrap_or("").into())
        }
    }

    struct Constant(&'static str);

    impl Generate for Constant {
        fn id(&self) -> &str {
            "constant"
        }
        fn generate(&self, _: &str, _: &str) -> Result<String, BackendError> {
            Ok(self.0.into())
        }
    }

    struct Echo;

    impl Generate for Echo {
        fn id(&self) -> &str {
            "echo"
        }
        fn generate(&self, _: &str, prompt: &str) -> Result<String, BackendError> {
            Ok(prompt.into())
        }
    }

    fn sample(task: TaskKind) -> Sample {
        Sample {
            id: "s1".into(),
            image_ref: "img/s1.png".into(),
            modality: "chest X-ray".into(),
            task,
            truth_labels: Some(vec![1]),
            question: None,
            reference_text: None,
        }
    }

    fn binary() -> LabelSet {
        LabelSet::new(["Negative", "Positive"], None).unwrap()
    }

    #[test]
    fn gather_in_registration_order() {
        let set = LabelSet::new(["Normal", "Pneumonia"], None).unwrap();
        let (a, b, c) = (fixed("a", &[1]), fixed("b", &[0]), fixed("c", &[1]));
        let specs: [&dyn Predict; 3] = [&a, &b, &c];
        let g = gather_specialist_predictions(&sample(TaskKind::ClsBinary), &set, &specs).unwrap();
        let labels: Vec<_> = g.predictions.iter().map(|p| p.labels[0]).collect();
        assert_eq!(labels, [1, 0, 1]);
        assert!(g.failures.is_empty());
    }

    #[test]
    fn gather_partial_and_total_failure() {
        let set = binary();
        let (a, b, c) = (fixed("a", &[1]), failing("b"), fixed("c", &[0]));
        let specs: [&dyn Predict; 3] = [&a, &b, &c];
        let g = gather_specialist_predictions(&sample(TaskKind::ClsBinary), &set, &specs).unwrap();
        assert_eq!(g.predictions.len(), 2);
        assert_eq!(g.failures.len(), 1);
        assert_eq!(g.failures[0].specialist_id, "b");

        let (x, y) = (failing("x"), fixed("y", &[5]));
        let specs: [&dyn Predict; 2] = [&x, &y];
        let err = gather_specialist_predictions(&sample(TaskKind::ClsBinary), &set, &specs).unwrap_err();
        assert!(matches!(err, PipelineError::AllBackendsFailed(ref f) if f.len() == 2));

        assert_eq!(gather_specialist_predictions(&sample(TaskKind::ClsBinary), &set, &[]), Err(PipelineError::NoSpecialists));
    }

    #[test]
    fn moed_end_to_end() {
        let set = binary();
        let (a, b, c) = (fixed("a", &[1]), fixed("b", &[1]), fixed("c", &[0]));
        let specs: [&dyn Predict; 3] = [&a, &b, &c];
        let backends = Backends { specialists: &specs, generator: Some(&FirstMoed), ..Default::default() };
        let cfg = GscoConfig { use_rad: false, ..GscoConfig::default() };
        let d = run_collaborative_inference(&sample(TaskKind::ClsBinary), Some(&set), &backends, &cfg).unwrap();
        assert_eq!(d.outcome, Outcome::Labels(vec![1]));
        assert_eq!(d.raw_text, "Positive");
        assert_eq!(d.context_moed.as_deref(), Some("Positive, Positive, Negative"));
        assert_eq!(d.context_rad, None);
        assert!(!d.parse_warning);
    }

    #[test]
    fn parse_failure_sets_warning() {
        let set = binary();
        let a = fixed("a", &[1]);
        let specs: [&dyn Predict; 1] = [&a];
        let gen = Constant("inconclusive");
        let backends = Backends { specialists: &specs, generator: Some(&gen), ..Default::default() };
        let cfg = GscoConfig { use_rad: false, ..GscoConfig::default() };
        let d = run_collaborative_inference(&sample(TaskKind::ClsBinary), Some(&set), &backends, &cfg).unwrap();
        assert_eq!(d.outcome, Outcome::Labels(vec![]));
        assert!(d.parse_warning);
        assert_eq!(d.raw_text, "inconclusive");
    }

    #[test]
    fn no_context_reduces_to_cls_prompt() {
        let set = binary();
        let s = sample(TaskKind::ClsBinary);
        let backends = Backends { generator: Some(&Echo), ..Default::default() };
        let cfg = GscoConfig { use_moed: false, use_rad: false, ..GscoConfig::default() };
        let d = run_collaborative_inference(&s, Some(&set), &backends, &cfg).unwrap();
        let plain = render_prompt(
            TemplateId::Cls,
            &PromptBindings::new().with(Placeholder::Modality, "chest X-ray").with_label_set(&set),
        )
        .unwrap();
        assert_eq!(d.raw_text, plain);
    }

    #[test]
    fn missing_pieces() {
        let set = binary();
        let s = sample(TaskKind::ClsBinary);
        let backends = Backends { generator: Some(&Echo), ..Default::default() };
        let rad = GscoConfig { use_moed: false, ..GscoConfig::default() };
        assert_eq!(run_collaborative_inference(&s, Some(&set), &backends, &rad), Err(PipelineError::MissingIndex));
        let moed = GscoConfig { use_rad: false, ..GscoConfig::default() };
        assert_eq!(run_collaborative_inference(&s, Some(&set), &backends, &moed), Err(PipelineError::NoSpecialists));
        assert_eq!(run_collaborative_inference(&s, None, &backends, &moed), Err(PipelineError::MissingLabelSet(TaskKind::ClsBinary)));
        let none = Backends::default();
        assert_eq!(run_collaborative_inference(&s, Some(&set), &none, &moed), Err(PipelineError::MissingGenerator));
    }

    #[test]
    fn generator_failure_is_inference_error() {
        struct Down;
        impl Generate for Down {
            fn id(&self) -> &str {
                "down"
            }
            fn generate(&self, _: &str, _: &str) -> Result<String, BackendError> {
                Err(BackendError::Transport { backend: "down".into(), message: "refused".into() })
            }
        }
        let set = binary();
        let backends = Backends { generator: Some(&Down), ..Default::default() };
        let cfg = GscoConfig { use_moed: false, use_rad: false, ..GscoConfig::default() };
        let err = run_collaborative_inference(&sample(TaskKind::ClsBinary), Some(&set), &backends, &cfg).unwrap_err();
        assert!(matches!(err, PipelineError::Inference(_)));
    }

    #[test]
    fn voting_and_specialist_modes() {
        let set = binary();
        let (a, b, c) = (fixed("a", &[0]), fixed("b", &[1]), fixed("c", &[1]));
        let specs: [&dyn Predict; 3] = [&a, &b, &c];
        let v = run_voting(&sample(TaskKind::ClsBinary), Some(&set), &specs).unwrap();
        assert_eq!(v.outcome, Outcome::Labels(vec![1]));
        assert_eq!(v.raw_text, "Positive");
        assert_eq!(v.context_moed.as_deref(), Some("Negative, Positive, Positive"));
        let s = run_specialist(&sample(TaskKind::ClsBinary), Some(&set), &specs).unwrap();
        assert_eq!(s.outcome, Outcome::Labels(vec![0]));
    }

    #[test]
    fn generation_tasks_use_their_templates() {
        let mut s = sample(TaskKind::VqaOpen);
        s.truth_labels = None;
        s.question = Some("Where is the lesion?".into());
        let backends = Backends { generator: Some(&Echo), ..Default::default() };
        let cfg = GscoConfig { use_moed: false, use_rad: false, ..GscoConfig::default() };
        let d = run_collaborative_inference(&s, None, &backends, &cfg).unwrap();
        assert!(d.raw_text.ends_with("The question is Where is the lesion?."));
        assert_eq!(d.generated_text(), Some(d.raw_text.as_str()));

        s.question = None;
        assert!(matches!(run_collaborative_inference(&s, None, &backends, &cfg), Err(PipelineError::IncompleteSample(..))));

        let moed = GscoConfig { use_rad: false, ..GscoConfig::default() };
        s.task = TaskKind::Mrg;
        assert!(matches!(run_collaborative_inference(&s, None, &backends, &moed), Err(PipelineError::Unsupported { .. })));
    }

    #[test]
    fn mode_names() {
        for m in Mode::ALL {
            assert_eq!(Mode::parse(m.as_str()), Some(m));
        }
    }
}

//! Synthetic needle-in-a-haystack construction.
//!
//! A haystack is an ordered list of [`ContextUnit`]s (text passages and
//! images) into which exactly one needle unit is inserted at a controlled
//! depth. Four task variants are covered:
//!
//! - `text_retrieval`: the needle is a short factual text snippet.
//! - `image_retrieval`: the needle image is embedded inside a larger host
//!   image and the question asks which candidate option appears.
//! - `rendered_text_retrieval`: the same textual fact rendered into an
//!   image unit, probing whether visually encoded text recruits text-like
//!   heads.
//! - `identical_image_retrieval`: the needle image is inserted unchanged and
//!   the question asks presence/absence.
//!
//! Token accounting uses the four-characters-per-token heuristic; text is
//! grouped into units of an estimated 500 tokens, while each image counts
//! as one composition unit regardless of its token cost. All construction
//! is a pure function of (pool, config, seed).

mod pool;

pub use pool::DistractorPool;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::persist::sha256_hex;
use crate::rng::SeededRng;

/// Estimated tokens per text unit when grouping a corpus.
pub const UNIT_TOKENS: usize = 500;
/// One token is approximated as four characters of text.
pub const CHARS_PER_TOKEN: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    TextRetrieval,
    ImageRetrieval,
    RenderedTextRetrieval,
    IdenticalImageRetrieval,
}

impl Task {
    pub const ALL: [Task; 4] = [
        Task::TextRetrieval,
        Task::ImageRetrieval,
        Task::RenderedTextRetrieval,
        Task::IdenticalImageRetrieval,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::TextRetrieval => "text_retrieval",
            Task::ImageRetrieval => "image_retrieval",
            Task::RenderedTextRetrieval => "rendered_text_retrieval",
            Task::IdenticalImageRetrieval => "identical_image_retrieval",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text_retrieval" | "text" => Ok(Task::TextRetrieval),
            "image_retrieval" | "image" => Ok(Task::ImageRetrieval),
            "rendered_text_retrieval" | "rendered_text" => Ok(Task::RenderedTextRetrieval),
            "identical_image_retrieval" | "identical_image" => Ok(Task::IdenticalImageRetrieval),
            other => Err(Error::config(format!("unknown task: {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitKind {
    Text,
    Image,
    RenderedText,
}

/// Where an image's bytes come from. Synthetic and rendered images have no
/// file; they are identified purely by content hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageSource {
    /// An on-disk image referenced by relative path.
    File { path: String },
    /// A generated placeholder image.
    Synthetic { id: String },
    /// Text rendered into an image; backends derive a deterministic
    /// pseudo-visual token sequence from the content hash.
    Rendered { text: String },
    /// A needle image composited into a host image at a seeded offset.
    Composite {
        host: Box<ImageHandle>,
        embedded: Box<ImageHandle>,
        offset_frac: f64,
    },
}

/// Content-addressed reference to an image payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageHandle {
    pub source: ImageSource,
    pub content_hash: String,
}

impl ImageHandle {
    pub fn synthetic(id: impl Into<String>) -> Self {
        let id = id.into();
        let content_hash = sha256_hex(format!("synthetic-image:{id}").as_bytes());
        ImageHandle {
            source: ImageSource::Synthetic { id },
            content_hash,
        }
    }

    pub fn from_file(path: impl Into<String>, bytes: &[u8]) -> Self {
        ImageHandle {
            source: ImageSource::File { path: path.into() },
            content_hash: sha256_hex(bytes),
        }
    }

    /// Deterministic pseudo-visual rendering of a text snippet.
    pub fn rendered(text: impl Into<String>) -> Self {
        let text = text.into();
        let content_hash = sha256_hex(format!("rendered-text:{text}").as_bytes());
        ImageHandle {
            source: ImageSource::Rendered { text },
            content_hash,
        }
    }

    /// Embeds `self` into `host` at a fractional offset in [0, 1).
    pub fn composited_into(&self, host: &ImageHandle, offset_frac: f64) -> Self {
        let content_hash = sha256_hex(
            format!(
                "composite:{}:{}:{offset_frac:.6}",
                host.content_hash, self.content_hash
            )
            .as_bytes(),
        );
        ImageHandle {
            source: ImageSource::Composite {
                host: Box::new(host.clone()),
                embedded: Box::new(self.clone()),
                offset_frac,
            },
            content_hash,
        }
    }

    /// The embedded needle handle, when this is a composite.
    pub fn embedded(&self) -> Option<&ImageHandle> {
        match &self.source {
            ImageSource::Composite { embedded, .. } => Some(embedded),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    Text(String),
    Image(ImageHandle),
}

/// One interleaved context element: a text passage or an image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextUnit {
    pub unit_id: String,
    pub kind: UnitKind,
    pub payload: Payload,
    pub estimated_tokens: usize,
}

impl ContextUnit {
    pub fn text(unit_id: impl Into<String>, body: impl Into<String>) -> Result<Self> {
        let body = body.into();
        let estimated_tokens = estimate_tokens(&body)?;
        Ok(ContextUnit {
            unit_id: unit_id.into(),
            kind: UnitKind::Text,
            payload: Payload::Text(body),
            estimated_tokens,
        })
    }

    pub fn image(unit_id: impl Into<String>, handle: ImageHandle, estimated_tokens: usize) -> Self {
        ContextUnit {
            unit_id: unit_id.into(),
            kind: UnitKind::Image,
            payload: Payload::Image(handle),
            estimated_tokens,
        }
    }

    pub fn rendered_text(
        unit_id: impl Into<String>,
        handle: ImageHandle,
        estimated_tokens: usize,
    ) -> Self {
        ContextUnit {
            unit_id: unit_id.into(),
            kind: UnitKind::RenderedText,
            payload: Payload::Image(handle),
            estimated_tokens,
        }
    }

    pub fn is_visual(&self) -> bool {
        matches!(self.kind, UnitKind::Image | UnitKind::RenderedText)
    }

    /// Stable hash of the unit's payload, independent of unit id.
    pub fn payload_hash(&self) -> String {
        match &self.payload {
            Payload::Text(t) => sha256_hex(t.as_bytes()),
            Payload::Image(h) => h.content_hash.clone(),
        }
    }
}

/// Gold answer for a needle question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Answer {
    Text(String),
    OptionIndex(usize),
}

/// The single task-relevant evidence item plus its question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeedleSpec {
    pub task: Task,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fact_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub needle_image: Option<ImageHandle>,
    pub question: String,
    pub gold_answer: Answer,
}

impl NeedleSpec {
    pub fn text_fact(
        fact: impl Into<String>,
        question: impl Into<String>,
        gold: impl Into<String>,
    ) -> Self {
        NeedleSpec {
            task: Task::TextRetrieval,
            fact_text: Some(fact.into()),
            needle_image: None,
            question: question.into(),
            gold_answer: Answer::Text(gold.into()),
        }
    }

    pub fn rendered_fact(
        fact: impl Into<String>,
        question: impl Into<String>,
        gold: impl Into<String>,
    ) -> Self {
        NeedleSpec {
            task: Task::RenderedTextRetrieval,
            fact_text: Some(fact.into()),
            needle_image: None,
            question: question.into(),
            gold_answer: Answer::Text(gold.into()),
        }
    }

    pub fn image(task: Task, image: ImageHandle, question: impl Into<String>, gold: Answer) -> Self {
        NeedleSpec {
            task,
            fact_text: None,
            needle_image: Some(image),
            question: question.into(),
            gold_answer: gold,
        }
    }

    /// Checks the exactly-one-payload and non-empty-question invariants.
    pub fn validate(&self) -> Result<()> {
        if self.question.is_empty() {
            return Err(Error::invalid_input("needle question must be non-empty"));
        }
        let text_family = matches!(self.task, Task::TextRetrieval | Task::RenderedTextRetrieval);
        match (text_family, &self.fact_text, &self.needle_image) {
            (true, Some(_), None) | (false, None, Some(_)) => Ok(()),
            _ => Err(Error::config(format!(
                "task {} requires exactly its own needle payload kind",
                self.task.as_str()
            ))),
        }
    }
}

/// Identifies the needle unit within an example's unit list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeedleInfo {
    pub unit_id: String,
    /// True when the needle occupies a sub-range of a composite image unit
    /// rather than the whole unit.
    pub embedded: bool,
    pub gold: Answer,
}

/// One haystack + question + needle annotation, ready for a backend layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NiahExample {
    pub example_id: String,
    pub task: Task,
    pub units: Vec<ContextUnit>,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub needle: Option<NeedleInfo>,
    pub target_length_tokens: usize,
    pub depth_fraction: f64,
    pub image_ratio: f64,
    pub seed: u64,
}

impl NiahExample {
    /// Assembles an example from raw parts; used by the re-ranker and by
    /// tests that need full control over unit placement.
    pub fn from_units(
        units: Vec<ContextUnit>,
        question: impl Into<String>,
        needle: Option<NeedleInfo>,
        task: Task,
        seed: u64,
    ) -> Self {
        let question = question.into();
        let target = units.iter().map(|u| u.estimated_tokens).sum();
        let mut ex = NiahExample {
            example_id: String::new(),
            task,
            units,
            question,
            needle,
            target_length_tokens: target,
            depth_fraction: 0.0,
            image_ratio: 0.0,
            seed,
        };
        ex.example_id = ex.compute_id();
        ex
    }

    fn compute_id(&self) -> String {
        let mut material = String::new();
        material.push_str(self.task.as_str());
        material.push('|');
        material.push_str(&self.question);
        material.push('|');
        material.push_str(&self.seed.to_string());
        for u in &self.units {
            material.push('|');
            material.push_str(&u.payload_hash());
        }
        sha256_hex(material.as_bytes())[..16].to_string()
    }

    pub fn total_estimated_tokens(&self) -> usize {
        self.units.iter().map(|u| u.estimated_tokens).sum()
    }

    /// The needle unit, when one is annotated.
    pub fn needle_unit(&self) -> Option<&ContextUnit> {
        let info = self.needle.as_ref()?;
        self.units.iter().find(|u| u.unit_id == info.unit_id)
    }

    /// Image-kind units excluding the needle unit (composition accounting
    /// is over distractors only).
    pub fn distractor_image_units(&self) -> usize {
        let needle_id = self.needle.as_ref().map(|n| n.unit_id.as_str());
        self.units
            .iter()
            .filter(|u| Some(u.unit_id.as_str()) != needle_id && u.is_visual())
            .count()
    }

    /// Total-length tolerance check: the estimated token sum must lie
    /// within `tolerance` (fractional) of the recorded target.
    pub fn check_length_tolerance(&self, tolerance: f64) -> Result<()> {
        let total = self.total_estimated_tokens() as f64;
        let target = self.target_length_tokens as f64;
        if target <= 0.0 {
            return Err(Error::invalid_input("target_length_tokens must be positive"));
        }
        let deviation = (total - target).abs() / target;
        if deviation > tolerance {
            return Err(Error::invalid_input(format!(
                "context length {total} deviates {:.1}% from target {target} (allowed {:.0}%)",
                deviation * 100.0,
                tolerance * 100.0
            )));
        }
        Ok(())
    }
}

/// Builder-side token accounting knobs shared with backend layouts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuilderConfig {
    /// Estimated tokens contributed by one image unit.
    pub vision_tokens_per_image: usize,
    /// Allowed fractional deviation of an example's estimated token total
    /// from its target length.
    pub length_tolerance: f64,
}

impl Default for BuilderConfig {
    fn default() -> Self {
        BuilderConfig {
            vision_tokens_per_image: 64,
            length_tolerance: 0.10,
        }
    }
}

/// Per-example construction plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamplePlan {
    pub target_length_tokens: usize,
    pub image_ratio: f64,
    pub depth_fraction: f64,
    /// Explicit distractor-unit budget; derived from the target length
    /// when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit_budget: Option<usize>,
}

/// ceil(chars / 4), the character-length token heuristic.
pub fn estimate_tokens(text: &str) -> Result<usize> {
    if text.is_empty() {
        return Err(Error::invalid_input("cannot estimate tokens of empty text"));
    }
    let chars = text.chars().count();
    Ok(chars.div_ceil(CHARS_PER_TOKEN))
}

/// round-half-up of `ratio * budget`, the image-unit count convention.
pub fn image_unit_count(image_ratio: f64, unit_budget: usize) -> usize {
    let raw = image_ratio * unit_budget as f64;
    let n = (raw + 0.5).floor() as usize;
    n.min(unit_budget)
}

/// Derives a distractor-unit budget whose expected token total best matches
/// `target_tokens` given the pool's per-unit sizes.
pub fn plan_unit_budget(
    target_tokens: usize,
    image_ratio: f64,
    text_unit_tokens: usize,
    vision_tokens_per_image: usize,
) -> usize {
    let per_unit = (1.0 - image_ratio) * text_unit_tokens as f64
        + image_ratio * vision_tokens_per_image as f64;
    ((target_tokens as f64 / per_unit) + 0.5).floor().max(1.0) as usize
}

/// Scans budgets near the analytic estimate and keeps the one whose
/// expected sum (with the image count the ratio would force) lands closest
/// to the target; unit-size quantization makes the plain estimate miss.
fn best_unit_budget(target_tokens: usize, image_ratio: f64, text_mean: f64, image_mean: f64) -> usize {
    let per_unit = (1.0 - image_ratio) * text_mean + image_ratio * image_mean;
    let b0 = ((target_tokens as f64 / per_unit) + 0.5).floor().max(1.0) as usize;
    let mut best = (f64::INFINITY, b0);
    for b in b0.saturating_sub(2).max(1)..=b0 + 2 {
        let n_img = image_unit_count(image_ratio, b) as f64;
        let expected = (b as f64 - n_img) * text_mean + n_img * image_mean;
        let dist = (expected - target_tokens as f64).abs();
        if dist < best.0 {
            best = (dist, b);
        }
    }
    best.1
}

/// Samples `unit_budget` distractor units from the pool: exactly
/// round(image_ratio x budget) image units, the rest text, in a seeded
/// shuffle order. Deterministic per (pool, args, seed).
pub fn build_haystack(
    pool: &DistractorPool,
    target_length_tokens: usize,
    image_ratio: f64,
    unit_budget: usize,
    seed: u64,
) -> Result<Vec<ContextUnit>> {
    if !(0.0..=1.0).contains(&image_ratio) {
        return Err(Error::invalid_input(format!(
            "image_ratio must lie in [0, 1], got {image_ratio}"
        )));
    }
    if unit_budget == 0 {
        return Err(Error::invalid_input("unit_budget must be positive"));
    }
    let n_images = image_unit_count(image_ratio, unit_budget);
    let n_text = unit_budget - n_images;

    if pool.text_units().len() < n_text {
        return Err(Error::PoolExhausted {
            modality: "text",
            needed: n_text,
            available: pool.text_units().len(),
        });
    }
    if pool.image_units().len() < n_images {
        return Err(Error::PoolExhausted {
            modality: "image",
            needed: n_images,
            available: pool.image_units().len(),
        });
    }

    let mut text_rng = SeededRng::derive(seed, "haystack-text");
    let mut image_rng = SeededRng::derive(seed, "haystack-image");
    let mut order_rng = SeededRng::derive(seed, "haystack-order");

    let mut units: Vec<ContextUnit> = Vec::with_capacity(unit_budget);
    for idx in text_rng.sample_indices(pool.text_units().len(), n_text) {
        units.push(pool.text_units()[idx].clone());
    }
    for idx in image_rng.sample_indices(pool.image_units().len(), n_images) {
        units.push(pool.image_units()[idx].clone());
    }
    order_rng.shuffle(&mut units);

    // `target_length_tokens` is advisory here; the per-example tolerance is
    // enforced where the target is recorded (make_task_example).
    let _ = target_length_tokens;
    Ok(units)
}

/// Builds the needle's context unit for each task variant.
///
/// For `image_retrieval` the needle image must already be composited into a
/// host image ([`ImageHandle::composited_into`]); `make_task_example` does
/// this with a pool-drawn host.
pub fn needle_unit(needle: &NeedleSpec, cfg: &BuilderConfig) -> Result<ContextUnit> {
    needle.validate()?;
    match needle.task {
        Task::TextRetrieval => {
            ContextUnit::text("needle", needle.fact_text.clone().unwrap_or_default())
        }
        Task::RenderedTextRetrieval => {
            let fact = needle.fact_text.clone().unwrap_or_default();
            let handle = ImageHandle::rendered(fact);
            Ok(ContextUnit::rendered_text(
                "needle",
                handle,
                cfg.vision_tokens_per_image,
            ))
        }
        Task::ImageRetrieval => {
            let handle = needle.needle_image.clone().unwrap();
            if !matches!(handle.source, ImageSource::Composite { .. }) {
                return Err(Error::config(
                    "image_retrieval needle must be composited into a host image",
                ));
            }
            // host and embedded halves both contribute vision tokens
            Ok(ContextUnit::image(
                "needle",
                handle,
                2 * cfg.vision_tokens_per_image,
            ))
        }
        Task::IdenticalImageRetrieval => {
            let handle = needle.needle_image.clone().unwrap();
            Ok(ContextUnit::image(
                "needle",
                handle,
                cfg.vision_tokens_per_image,
            ))
        }
    }
}

/// Inserts the needle at the unit boundary nearest
/// `depth_fraction x total estimated tokens`. Ties pick the earlier
/// boundary; depth 0 places the needle first and depth 1 last.
pub fn insert_needle(
    haystack: Vec<ContextUnit>,
    needle: &NeedleSpec,
    depth_fraction: f64,
    cfg: &BuilderConfig,
) -> Result<NiahExample> {
    if !(0.0..=1.0).contains(&depth_fraction) {
        return Err(Error::invalid_input(format!(
            "depth_fraction must lie in [0, 1], got {depth_fraction}"
        )));
    }
    let unit = needle_unit(needle, cfg)?;
    let total: usize = haystack.iter().map(|u| u.estimated_tokens).sum();
    let target = depth_fraction * total as f64;

    let mut best_idx = 0usize;
    let mut best_dist = f64::INFINITY;
    let mut cumulative = 0usize;
    for boundary in 0..=haystack.len() {
        let dist = (cumulative as f64 - target).abs();
        if dist < best_dist {
            best_dist = dist;
            best_idx = boundary;
        }
        if boundary < haystack.len() {
            cumulative += haystack[boundary].estimated_tokens;
        }
    }

    let mut units = haystack;
    units.insert(best_idx, unit);

    let embedded = matches!(
        (needle.task, &needle.needle_image),
        (
            Task::ImageRetrieval,
            Some(ImageHandle {
                source: ImageSource::Composite { .. },
                ..
            })
        )
    );

    let mut example = NiahExample {
        example_id: String::new(),
        task: needle.task,
        units,
        question: needle.question.clone(),
        needle: Some(NeedleInfo {
            unit_id: "needle".to_string(),
            embedded,
            gold: needle.gold_answer.clone(),
        }),
        target_length_tokens: 0,
        depth_fraction,
        image_ratio: 0.0,
        seed: 0,
    };
    example.target_length_tokens = example.total_estimated_tokens();
    example.example_id = example.compute_id();
    Ok(example)
}

/// Builds one complete task example: haystack sampling, task-specific
/// needle-unit construction, and depth placement.
pub fn make_task_example(
    task: Task,
    needle: &NeedleSpec,
    pool: &DistractorPool,
    plan: &ExamplePlan,
    cfg: &BuilderConfig,
    seed: u64,
) -> Result<NiahExample> {
    if needle.task != task {
        return Err(Error::config(format!(
            "needle is for task {}, example requested {}",
            needle.task.as_str(),
            task.as_str()
        )));
    }
    needle.validate()?;

    // Composite the needle image into a pool-drawn host for image retrieval.
    let needle = match task {
        Task::ImageRetrieval => {
            let hosts = pool.image_units();
            if hosts.is_empty() {
                return Err(Error::PoolExhausted {
                    modality: "image",
                    needed: 1,
                    available: 0,
                });
            }
            let mut host_rng = SeededRng::derive(seed, "needle-host");
            let host_unit = &hosts[host_rng.below(hosts.len())];
            let Payload::Image(host) = &host_unit.payload else {
                return Err(Error::config("image pool unit carries no image payload"));
            };
            let offset = host_rng.next_f64();
            let raw = needle.needle_image.clone().ok_or_else(|| {
                Error::config("image_retrieval needle requires needle_image")
            })?;
            let mut composed = needle.clone();
            composed.needle_image = Some(raw.composited_into(host, offset));
            composed
        }
        _ => needle.clone(),
    };

    let unit = needle_unit(&needle, cfg)?;
    let needle_tokens = unit.estimated_tokens;
    let distractor_target = plan.target_length_tokens.saturating_sub(needle_tokens);
    let budget = match plan.unit_budget {
        Some(b) => b,
        None => {
            let text_mean = pool.mean_text_tokens().max(1.0);
            let image_mean = pool
                .mean_image_tokens()
                .unwrap_or(cfg.vision_tokens_per_image as f64)
                .max(1.0);
            best_unit_budget(distractor_target, plan.image_ratio, text_mean, image_mean)
        }
    };

    let haystack = build_haystack(
        pool,
        distractor_target,
        plan.image_ratio,
        budget,
        seed,
    )?;
    let mut example = insert_needle(haystack, &needle, plan.depth_fraction, cfg)?;
    example.target_length_tokens = plan.target_length_tokens;
    example.image_ratio = plan.image_ratio;
    example.seed = seed;
    example.example_id = example.compute_id();
    example.check_length_tolerance(cfg.length_tolerance)?;
    Ok(example)
}

/// Deterministic needle specs for a detection run: templated facts for the
/// text-family tasks, seeded synthetic images for the image-family tasks.
pub fn seeded_needle(task: Task, question_idx: usize, seed: u64) -> NeedleSpec {
    let mut rng = SeededRng::derive(seed, &format!("needle-{question_idx}"));
    match task {
        Task::TextRetrieval | Task::RenderedTextRetrieval => {
            let subject = pool::WORDS[rng.below(pool::WORDS.len())];
            let place = pool::WORDS[rng.below(pool::WORDS.len())];
            let object = pool::WORDS[rng.below(pool::WORDS.len())];
            let fact = format!("The {subject} near the {place} is a {object}.");
            let question = format!("What is the {subject} near the {place}?");
            let gold = format!("a {object}");
            if task == Task::TextRetrieval {
                NeedleSpec::text_fact(fact, question, gold)
            } else {
                NeedleSpec::rendered_fact(fact, question, gold)
            }
        }
        Task::ImageRetrieval => {
            let image = ImageHandle::synthetic(format!("needle-{question_idx}-{:08x}", rng.next_u64()));
            NeedleSpec::image(
                task,
                image,
                format!("Which option image appears in the context (question {question_idx})?"),
                Answer::OptionIndex(1 + rng.below(4)),
            )
        }
        Task::IdenticalImageRetrieval => {
            let image = ImageHandle::synthetic(format!("needle-{question_idx}-{:08x}", rng.next_u64()));
            NeedleSpec::image(
                task,
                image,
                format!("Does the query image appear in the context (question {question_idx})?"),
                Answer::Text("yes".into()),
            )
        }
    }
}

/// One example per (question, depth): the full detection set for a
/// (task, length) condition.
#[allow(clippy::too_many_arguments)]
pub fn generate_detection_dataset(
    task: Task,
    target_length_tokens: usize,
    depths: &[f64],
    n_questions: usize,
    image_ratio: f64,
    pool: &DistractorPool,
    cfg: &BuilderConfig,
    seed: u64,
) -> Result<Vec<NiahExample>> {
    let mut out = Vec::with_capacity(n_questions * depths.len());
    for q in 0..n_questions {
        let needle = seeded_needle(task, q, seed);
        for (d, &depth) in depths.iter().enumerate() {
            let plan = ExamplePlan {
                target_length_tokens,
                image_ratio,
                depth_fraction: depth,
                unit_budget: None,
            };
            let example_seed = SeededRng::derive(seed, &format!("example-{q}-{d}")).next_u64();
            out.push(make_task_example(task, &needle, pool, &plan, cfg, example_seed)?);
        }
    }
    Ok(out)
}

/// Rebuilds the haystack at each requested image ratio while carrying the
/// needle unit over unchanged; only distractor composition varies.
pub fn compose_ratio_sweep(
    base: &NiahExample,
    pool: &DistractorPool,
    ratios: &[f64],
    seed: u64,
) -> Result<Vec<NiahExample>> {
    let info = base
        .needle
        .as_ref()
        .ok_or_else(|| Error::invalid_input("ratio sweep requires a laid-out needle"))?;
    let needle_unit = base
        .needle_unit()
        .ok_or_else(|| Error::invalid_input("needle unit missing from base example"))?
        .clone();
    let budget = base.units.len().saturating_sub(1);
    if budget == 0 {
        return Err(Error::invalid_input("base example has no distractor units"));
    }

    let mut out = Vec::with_capacity(ratios.len());
    for (i, &ratio) in ratios.iter().enumerate() {
        let sweep_seed = SeededRng::derive(seed, &format!("ratio-sweep-{i}")).next_u64();
        let haystack = build_haystack(pool, base.target_length_tokens, ratio, budget, sweep_seed)?;

        // Re-place the preserved needle unit at the base depth.
        let total: usize = haystack.iter().map(|u| u.estimated_tokens).sum();
        let target = base.depth_fraction * total as f64;
        let mut best_idx = 0usize;
        let mut best_dist = f64::INFINITY;
        let mut cumulative = 0usize;
        for boundary in 0..=haystack.len() {
            let dist = (cumulative as f64 - target).abs();
            if dist < best_dist {
                best_dist = dist;
                best_idx = boundary;
            }
            if boundary < haystack.len() {
                cumulative += haystack[boundary].estimated_tokens;
            }
        }
        let mut units = haystack;
        units.insert(best_idx, needle_unit.clone());

        let mut example = NiahExample {
            example_id: String::new(),
            task: base.task,
            units,
            question: base.question.clone(),
            needle: Some(info.clone()),
            target_length_tokens: 0,
            depth_fraction: base.depth_fraction,
            image_ratio: ratio,
            seed: sweep_seed,
        };
        example.target_length_tokens = example.total_estimated_tokens();
        example.example_id = example.compute_id();
        out.push(example);
    }
    Ok(out)
}

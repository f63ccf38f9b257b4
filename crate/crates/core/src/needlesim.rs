//! Synthetic needle-in-a-haystack videos and a color-presence mock model.
//!
//! Every frame is a solid color. Needle frames carry a color that appears
//! nowhere else, and the question asks which color briefly appeared. The
//! mock model answers correctly iff one of the submitted images contains at
//! least one pixel of the needle color, so detection rates depend only on
//! which frames the sampling plan reaches.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::benchmark::{AnswerOption, DurationBuckets, PromptTemplate, QAItem};
use crate::error::{Error, Result};
use crate::framesource::{check_indices, contains_color, write_image_directory, Frame, FrameReader, FrameSource, Rgb};
use crate::harness::mock::{ChatRequest, Handler, MockReply};
use crate::harness::{evaluate, ChatBackend, EvalOptions, ItemInputs, ItemRequest};
use crate::panelizer::panelize_sequence;
use crate::policy::{plan_with_mode, Grid, PlanMode, SamplePlan, SamplingPolicy, VideoMeta};

pub const DEFAULT_NEEDLE_COLOR: Rgb = [255, 0, 255];
pub const DEFAULT_DISTRACTORS: [Rgb; 3] = [[40, 90, 160], [200, 180, 60], [30, 140, 70]];

pub fn color_label(c: Rgb) -> String {
    format!("rgb({}, {}, {})", c[0], c[1], c[2])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeedleSpan {
    pub start: u64,
    pub length: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeedleSpec {
    pub haystack_frames: u64,
    pub fps: f64,
    pub width: u32,
    pub height: u32,
    pub needle_color: Rgb,
    pub needles: Vec<NeedleSpan>,
    pub distractor_colors: Vec<Rgb>,
    pub seed: u64,
}

impl NeedleSpec {
    pub fn single(haystack_frames: u64, fps: f64, start: u64, length: u64, seed: u64) -> Self {
        NeedleSpec {
            haystack_frames,
            fps,
            width: 64,
            height: 48,
            needle_color: DEFAULT_NEEDLE_COLOR,
            needles: vec![NeedleSpan { start, length }],
            distractor_colors: DEFAULT_DISTRACTORS.to_vec(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.haystack_frames == 0 {
            return Err(Error::InvalidSpec("haystack needs at least one frame".into()));
        }
        if !(self.fps > 0.0) || self.width == 0 || self.height == 0 {
            return Err(Error::InvalidSpec("fps and frame size must be positive".into()));
        }
        if self.distractor_colors.is_empty() {
            return Err(Error::InvalidSpec("need at least one distractor color".into()));
        }
        if self.distractor_colors.contains(&self.needle_color) {
            return Err(Error::InvalidSpec("needle color is also a distractor".into()));
        }
        for n in &self.needles {
            if n.length == 0 || n.start.checked_add(n.length).is_none_or(|end| end > self.haystack_frames) {
                return Err(Error::InvalidSpec(format!(
                    "needle ({}, {}) does not fit in {} frames",
                    n.start, n.length, self.haystack_frames
                )));
            }
        }
        Ok(())
    }

    pub fn meta(&self) -> VideoMeta {
        VideoMeta::new(self.haystack_frames, self.fps, self.width, self.height)
    }

    pub fn is_needle(&self, index: u64) -> bool {
        self.needles.iter().any(|n| index >= n.start && index < n.start + n.length)
    }

    /// Color of frame `index`; haystack colors are drawn per frame from the seed.
    pub fn frame_color(&self, index: u64) -> Rgb {
        if self.is_needle(index) {
            return self.needle_color;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        self.distractor_colors[rng.gen_range(0..self.distractor_colors.len())]
    }

    pub fn frame(&self, index: u64) -> Frame {
        Frame::solid(index, index as f64 / self.fps, self.width, self.height, self.frame_color(index))
    }
}

/// In-memory rendering of a [`NeedleSpec`].
#[derive(Debug, Clone)]
pub struct NeedleVideo {
    spec: NeedleSpec,
    meta: VideoMeta,
}

impl NeedleVideo {
    pub fn new(spec: NeedleSpec) -> Result<Self> {
        spec.validate()?;
        let meta = spec.meta();
        Ok(NeedleVideo { spec, meta })
    }

    pub fn spec(&self) -> &NeedleSpec {
        &self.spec
    }
}

impl FrameReader for NeedleVideo {
    fn meta(&self) -> &VideoMeta {
        &self.meta
    }

    fn read_frames(&mut self, indices: &[u64]) -> Result<Vec<Frame>> {
        check_indices(indices, self.meta.frame_count)?;
        Ok(indices.iter().map(|&i| self.spec.frame(i)).collect())
    }
}

/// Writes the video as an image directory.
pub fn generate_video(spec: &NeedleSpec, dir: &Path) -> Result<FrameSource> {
    spec.validate()?;
    write_image_directory(dir, (0..spec.haystack_frames).map(|i| spec.frame(i)), spec.fps)
}

/// Multiple-choice question whose gold option is the needle color.
pub fn needle_question(spec: &NeedleSpec, item_id: &str, video_uri: &str, gold_position: usize) -> QAItem {
    let mut colors: Vec<Rgb> = spec.distractor_colors.iter().copied().take(3).collect();
    let gold_position = gold_position.min(colors.len());
    colors.insert(gold_position, spec.needle_color);
    QAItem {
        item_id: item_id.to_string(),
        video_uri: video_uri.to_string(),
        question: "Which color is shown briefly somewhere in the video?".into(),
        options: colors
            .iter()
            .enumerate()
            .map(|(i, &c)| AnswerOption { letter: (b'A' + i as u8) as char, text: color_label(c) })
            .collect(),
        gold: (b'A' + gold_position as u8) as char,
        duration_seconds: spec.haystack_frames as f64 / spec.fps,
        tags: vec!["needle".into()],
    }
}

fn prompt_options(prompt: &str) -> Vec<(char, &str)> {
    prompt
        .lines()
        .filter_map(|l| {
            let mut chars = l.chars();
            let letter = chars.next().filter(char::is_ascii_uppercase)?;
            let rest = chars.as_str().strip_prefix(". ")?;
            Some((letter, rest))
        })
        .collect()
}

/// Gold letter iff any image (packed RGB) shows the needle color, else the
/// first other option.
pub fn mock_vlm_answer(images: &[&[u8]], prompt: &str, needle_color: Rgb) -> char {
    let options = prompt_options(prompt);
    let label = color_label(needle_color);
    let gold = options.iter().find(|(_, t)| *t == label).map(|(l, _)| *l);
    let seen = images.iter().any(|px| contains_color(px, needle_color));
    match gold {
        Some(g) if seen => g,
        _ => options
            .iter()
            .map(|(l, _)| *l)
            .find(|&l| Some(l) != gold)
            .unwrap_or('A'),
    }
}

/// Mock endpoint handler answering via [`mock_vlm_answer`].
pub fn needle_handler(needle_color: Rgb) -> Handler {
    Arc::new(move |req: &ChatRequest| {
        let decoded: std::result::Result<Vec<Vec<u8>>, _> = req
            .images
            .iter()
            .map(|png| image::load_from_memory(png).map(|img| img.to_rgb8().into_raw()))
            .collect();
        match decoded {
            Ok(images) => {
                let refs: Vec<&[u8]> = images.iter().map(Vec::as_slice).collect();
                MockReply::ok(mock_vlm_answer(&refs, &req.prompt, needle_color).to_string())
            }
            Err(e) => MockReply { status: 400, content: format!("undecodable image: {e}") },
        }
    })
}

/// Probability that a uniformly placed needle of `length` frames overlaps a
/// sampled index, by counting every valid start.
pub fn detection_probability(frame_count: u64, sampled: &[u64], length: u64) -> f64 {
    if length == 0 || length > frame_count {
        return 0.0;
    }
    let starts = frame_count - length + 1;
    let mut sorted = sampled.to_vec();
    sorted.sort_unstable();
    let hit = (0..starts)
        .filter(|&s| {
            let i = sorted.partition_point(|&x| x < s);
            i < sorted.len() && sorted[i] < s + length
        })
        .count();
    hit as f64 / starts as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub haystack_frames: u64,
    pub fps: f64,
    pub width: u32,
    pub height: u32,
    pub needle_length: u64,
    pub needle_color: Rgb,
    pub distractor_colors: Vec<Rgb>,
    pub policy: SamplingPolicy,
    pub trials: usize,
    pub seed: u64,
    pub concurrency: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            haystack_frames: 640,
            fps: 2.0,
            width: 64,
            height: 48,
            needle_length: 1,
            needle_color: DEFAULT_NEEDLE_COLOR,
            distractor_colors: DEFAULT_DISTRACTORS.to_vec(),
            policy: SamplingPolicy { context_window: 8, ..SamplingPolicy::default() },
            trials: 1000,
            seed: 7,
            concurrency: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub plan_mode: PlanMode,
    pub panel_active: bool,
    pub frames_sampled: u64,
    pub grid: Grid,
    pub detections: usize,
    pub detection_rate: f64,
    pub analytic_expectation: f64,
    /// Binomial standard error at the analytic expectation.
    pub standard_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub trials: usize,
    pub detection_rate_baseline: f64,
    pub detection_rate_panels: f64,
    pub baseline: ArmReport,
    pub panels: ArmReport,
    pub config: SimConfig,
}

struct TrialInputs<'a> {
    template: &'a NeedleSpec,
    plan: &'a SamplePlan,
    starts: &'a HashMap<String, u64>,
    length: u64,
}

impl TrialInputs<'_> {
    fn spec_for(&self, item: &QAItem) -> Result<NeedleSpec> {
        let start = *self
            .starts
            .get(&item.item_id)
            .ok_or_else(|| Error::PlanViolation(format!("unknown trial `{}`", item.item_id)))?;
        let mut spec = self.template.clone();
        spec.needles = vec![NeedleSpan { start, length: self.length }];
        Ok(spec)
    }
}

impl ItemInputs for TrialInputs<'_> {
    fn grid_for(&self, _item: &QAItem) -> Result<Grid> {
        Ok(self.plan.grid())
    }

    fn inputs_for(&self, item: &QAItem) -> Result<ItemRequest> {
        let mut video = NeedleVideo::new(self.spec_for(item)?)?;
        let frames = video.read_frames(&self.plan.frame_indices)?;
        let images = panelize_sequence(&frames, self.plan)?
            .iter()
            .map(|p| p.encode_png())
            .collect::<Result<Vec<_>>>()?;
        Ok(ItemRequest { images, grid: self.plan.grid() })
    }
}

/// Runs baseline and paneled sampling over the same randomly placed needles
/// and queries `backend` (normally the mock endpoint) for every trial.
pub fn run_simulation(cfg: &SimConfig, backend: &dyn ChatBackend) -> Result<SimReport> {
    if cfg.trials == 0 {
        return Err(Error::InvalidSpec("trials must be >= 1".into()));
    }
    let template = NeedleSpec {
        haystack_frames: cfg.haystack_frames,
        fps: cfg.fps,
        width: cfg.width,
        height: cfg.height,
        needle_color: cfg.needle_color,
        needles: vec![NeedleSpan { start: 0, length: cfg.needle_length }],
        distractor_colors: cfg.distractor_colors.clone(),
        seed: cfg.seed,
    };
    template.validate()?;
    let meta = template.meta();

    let max_start = cfg.haystack_frames - cfg.needle_length;
    let mut starts = HashMap::new();
    let items: Vec<QAItem> = (0..cfg.trials)
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(t as u64);
            let start = rng.gen_range(0..=max_start);
            let n_options = template.distractor_colors.len().min(3) + 1;
            let gold = rng.gen_range(0..n_options);
            let id = format!("trial-{t:06}");
            starts.insert(id.clone(), start);
            needle_question(&template, &id, &format!("needle://{id}"), gold)
        })
        .collect();

    let arm = |mode: PlanMode| -> Result<ArmReport> {
        let plan = plan_with_mode(&cfg.policy, &meta, mode)?;
        let inputs = TrialInputs { template: &template, plan: &plan, starts: &starts, length: cfg.needle_length };
        let opts = EvalOptions {
            run_id: format!("needle-{mode:?}").to_lowercase(),
            template: PromptTemplate::default(),
            buckets: DurationBuckets::single(),
            concurrency: cfg.concurrency,
            config: serde_json::Value::Null,
        };
        let result = evaluate(&items, &inputs, backend, None, &opts)?;
        if result.error_count > 0 {
            let first = result.predictions.iter().find_map(|p| p.error.clone()).unwrap_or_default();
            return Err(Error::Endpoint(format!("{} trials failed: {first}", result.error_count)));
        }
        let p = detection_probability(cfg.haystack_frames, &plan.frame_indices, cfg.needle_length);
        Ok(ArmReport {
            plan_mode: mode,
            panel_active: plan.panel_active,
            frames_sampled: plan.frames_to_sample,
            grid: plan.grid(),
            detections: result.correct,
            detection_rate: result.accuracy_overall,
            analytic_expectation: p,
            standard_error: (p * (1.0 - p) / cfg.trials as f64).sqrt(),
        })
    };
    let baseline = arm(PlanMode::Baseline)?;
    let panels = arm(PlanMode::Panels)?;
    Ok(SimReport {
        trials: cfg.trials,
        detection_rate_baseline: baseline.detection_rate,
        detection_rate_panels: panels.detection_rate,
        baseline,
        panels,
        config: cfg.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmark::render_prompt;
    use crate::panelizer::compose_chunk;
    use crate::policy::{plan_sampling, Gamma};

    #[test]
    fn needle_lands_where_requested() {
        let spec = NeedleSpec::single(10, 2.0, 3, 1, 1);
        let colored: Vec<u64> = (0..10).filter(|&i| spec.frame_color(i) == spec.needle_color).collect();
        assert_eq!(colored, vec![3]);
    }

    #[test]
    fn overflowing_span_is_rejected() {
        let spec = NeedleSpec::single(10, 2.0, 9, 2, 1);
        assert!(matches!(spec.validate(), Err(Error::InvalidSpec(_))));
        let mut spec = NeedleSpec::single(10, 2.0, 0, 1, 1);
        spec.distractor_colors.push(spec.needle_color);
        assert!(spec.validate().is_err());
    }

    #[test]
    fn mock_answers_by_color_presence() {
        let spec = NeedleSpec::single(10, 2.0, 3, 1, 1);
        let item = needle_question(&spec, "t", "v", 2);
        assert_eq!(item.gold, 'C');
        let prompt = render_prompt(&item, &PromptTemplate::default(), None).unwrap();
        let needle = spec.frame(3);
        let hay = spec.frame(4);
        assert_eq!(mock_vlm_answer(&[&hay.pixels, &needle.pixels], &prompt, spec.needle_color), 'C');
        assert_eq!(mock_vlm_answer(&[&hay.pixels], &prompt, spec.needle_color), 'A');
    }

    #[test]
    fn needle_survives_inside_a_panel_tile() {
        let spec = NeedleSpec::single(8, 2.0, 5, 1, 3);
        let policy = SamplingPolicy { context_window: 2, alpha: 2, beta: 2, gamma: Gamma::AbsoluteFrames(0.0) };
        let plan = plan_sampling(&policy, &spec.meta()).unwrap();
        let mut video = NeedleVideo::new(spec.clone()).unwrap();
        let frames = video.read_frames(&plan.frame_indices).unwrap();
        let panel = compose_chunk(&frames[4..8], &plan, 1).unwrap();
        // tile 1 (top right) holds frame 5
        let tile = &panel.slice_tiles()[1];
        assert!(tile.chunks(3).all(|p| p == spec.needle_color));
        let item = needle_question(&spec, "t", "v", 0);
        let prompt = render_prompt(&item, &PromptTemplate::default(), None).unwrap();
        assert_eq!(mock_vlm_answer(&[&panel.pixels], &prompt, spec.needle_color), 'A');
    }

    #[test]
    fn counting_oracle_matches_closed_form_for_single_frames() {
        let idx = crate::policy::uniform_indices(640, 8).unwrap();
        assert_eq!(detection_probability(640, &idx, 1), 8.0 / 640.0);
        let idx = crate::policy::uniform_indices(640, 32).unwrap();
        assert_eq!(detection_probability(640, &idx, 1), 32.0 / 640.0);
        assert_eq!(detection_probability(640, &idx, 640), 1.0);
    }
}

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::client::ChatBackend;
use super::parse::{parse_choice, PARSER_VERSION};
use super::store::{Prediction, PredictionStore};
use crate::benchmark::{render_prompt, DurationBuckets, PromptTemplate, QAItem};
use crate::error::{Error, Result};
use crate::panelizer::{Manifest, MANIFEST_NAME};
use crate::policy::Grid;

/// Images (PNG, chronological) and grid for one item.
#[derive(Debug, Clone)]
pub struct ItemRequest {
    pub images: Vec<Vec<u8>>,
    pub grid: Grid,
}

/// Supplies the rendered images for each item.
pub trait ItemInputs: Sync {
    /// Fails with [`Error::PlanViolation`] when the item has no manifest.
    fn grid_for(&self, item: &QAItem) -> Result<Grid>;
    fn inputs_for(&self, item: &QAItem) -> Result<ItemRequest>;
}

/// Manifests found under a panels directory, looked up by video uri or file stem.
#[derive(Debug, Default)]
pub struct ManifestIndex {
    entries: Vec<(PathBuf, Manifest)>,
    by_uri: HashMap<String, usize>,
    by_stem: HashMap<String, usize>,
}

fn stem(uri: &str) -> String {
    let p = Path::new(uri.trim_end_matches('/'));
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| uri.to_string())
}

impl ManifestIndex {
    pub fn load(panels_dir: &Path) -> Result<Self> {
        let mut index = ManifestIndex::default();
        let mut stack = vec![panels_dir.to_path_buf()];
        let mut found = Vec::new();
        while let Some(dir) = stack.pop() {
            for entry in fs::read_dir(&dir)? {
                let path = entry?.path();
                if path.is_dir() {
                    stack.push(path);
                } else if path.file_name().is_some_and(|n| n == MANIFEST_NAME) {
                    found.push(path);
                }
            }
        }
        found.sort();
        for path in found {
            let m = Manifest::load(&path)?;
            let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
            index.insert(dir, m);
        }
        Ok(index)
    }

    pub fn insert(&mut self, dir: PathBuf, manifest: Manifest) {
        let i = self.entries.len();
        self.by_uri.insert(manifest.video_uri.clone(), i);
        self.by_stem.insert(stem(&manifest.video_uri), i);
        self.entries.push((dir, manifest));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lookup(&self, video_uri: &str) -> Option<(&Path, &Manifest)> {
        self.by_uri
            .get(video_uri)
            .or_else(|| self.by_stem.get(&stem(video_uri)))
            .map(|&i| (self.entries[i].0.as_path(), &self.entries[i].1))
    }

    fn require(&self, item: &QAItem) -> Result<(&Path, &Manifest)> {
        self.lookup(&item.video_uri).ok_or_else(|| {
            Error::PlanViolation(format!(
                "no manifest for video `{}` (item `{}`)",
                item.video_uri, item.item_id
            ))
        })
    }
}

impl ItemInputs for ManifestIndex {
    fn grid_for(&self, item: &QAItem) -> Result<Grid> {
        self.require(item).map(|(_, m)| m.plan.grid())
    }

    fn inputs_for(&self, item: &QAItem) -> Result<ItemRequest> {
        let (dir, m) = self.require(item)?;
        let images = m
            .image_paths(dir)
            .iter()
            .map(fs::read)
            .collect::<std::io::Result<Vec<_>>>()?;
        Ok(ItemRequest { images, grid: m.plan.grid() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketScore {
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub run_id: String,
    pub parser_version: String,
    pub template: PromptTemplate,
    pub buckets: DurationBuckets,
    /// Fully resolved run configuration.
    pub config: Value,
    pub n: usize,
    pub correct: usize,
    pub accuracy_overall: f64,
    pub accuracy_by_bucket: IndexMap<String, BucketScore>,
    pub unparsable_count: usize,
    pub error_count: usize,
    /// In dataset order.
    pub predictions: Vec<Prediction>,
}

impl EvalResult {
    /// Copy with latencies zeroed, for run-to-run comparison.
    pub fn without_timings(&self) -> EvalResult {
        let mut r = self.clone();
        for p in &mut r.predictions {
            p.latency_seconds = 0.0;
        }
        r
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}

pub struct EvalOptions {
    pub run_id: String,
    pub template: PromptTemplate,
    pub buckets: DurationBuckets,
    pub concurrency: usize,
    pub config: Value,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            run_id: "run".into(),
            template: PromptTemplate::default(),
            buckets: DurationBuckets::single(),
            concurrency: 1,
            config: Value::Null,
        }
    }
}

/// Scores predictions against items. Missing predictions count as wrong.
pub fn score(
    items: &[QAItem],
    predictions: &HashMap<String, Prediction>,
    opts: &EvalOptions,
) -> EvalResult {
    let mut by_bucket: IndexMap<String, BucketScore> = IndexMap::new();
    for b in &opts.buckets.buckets {
        by_bucket.insert(b.name.clone(), BucketScore { n: 0, correct: 0, accuracy: 0.0 });
    }
    let (mut correct, mut unparsable, mut errors) = (0, 0, 0);
    let mut ordered = Vec::with_capacity(items.len());
    for item in items {
        let entry = by_bucket
            .get_mut(opts.buckets.bucket_of(item.duration_seconds))
            .expect("bucket exists");
        entry.n += 1;
        let Some(p) = predictions.get(&item.item_id) else {
            continue;
        };
        let ok = p.error.is_none() && p.parsed_letter == Some(item.gold);
        if ok {
            correct += 1;
            entry.correct += 1;
        }
        if p.error.is_some() {
            errors += 1;
        } else if p.parsed_letter.is_none() {
            unparsable += 1;
        }
        ordered.push(p.clone());
    }
    by_bucket.retain(|_, s| s.n > 0);
    for s in by_bucket.values_mut() {
        s.accuracy = s.correct as f64 / s.n as f64;
    }
    let n = items.len();
    EvalResult {
        run_id: opts.run_id.clone(),
        parser_version: PARSER_VERSION.into(),
        template: opts.template.clone(),
        buckets: opts.buckets.clone(),
        config: opts.config.clone(),
        n,
        correct,
        accuracy_overall: if n == 0 { 0.0 } else { correct as f64 / n as f64 },
        accuracy_by_bucket: by_bucket,
        unparsable_count: unparsable,
        error_count: errors,
        predictions: ordered,
    }
}

fn predict(
    item: &QAItem,
    prompt: &str,
    inputs: &dyn ItemInputs,
    backend: &dyn ChatBackend,
) -> Prediction {
    let start = Instant::now();
    let outcome = inputs
        .inputs_for(item)
        .and_then(|req| {
            let n = req.images.len();
            backend.complete(&req.images, prompt).map(|text| (text, n))
        });
    let latency_seconds = start.elapsed().as_secs_f64();
    match outcome {
        Ok((raw, request_images)) => {
            let parsed = parse_choice(&raw, &item.options);
            Prediction {
                item_id: item.item_id.clone(),
                raw_response: raw,
                parsed_letter: parsed,
                gold: item.gold,
                correct: parsed == Some(item.gold),
                latency_seconds,
                request_images,
                error: None,
            }
        }
        Err(e) => Prediction {
            item_id: item.item_id.clone(),
            raw_response: String::new(),
            parsed_letter: None,
            gold: item.gold,
            correct: false,
            latency_seconds,
            request_images: 0,
            error: Some(format!("{}: {e}", e.class())),
        },
    }
}

/// Queries every item not already completed in `store`, then scores.
///
/// Items whose stored record carries an error are retried.
pub fn evaluate(
    items: &[QAItem],
    inputs: &dyn ItemInputs,
    backend: &dyn ChatBackend,
    store: Option<&PredictionStore>,
    opts: &EvalOptions,
) -> Result<EvalResult> {
    opts.buckets.validate()?;
    let prompts = items
        .iter()
        .map(|item| {
            let grid = inputs.grid_for(item)?;
            render_prompt(item, &opts.template, Some(grid))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut done: HashMap<String, Prediction> = store
        .map(|s| {
            s.completed()
                .iter()
                .filter(|(_, p)| p.error.is_none())
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect()
        })
        .unwrap_or_default();
    let pending: Vec<usize> = (0..items.len())
        .filter(|&i| !done.contains_key(&items[i].item_id))
        .collect();

    let next = AtomicUsize::new(0);
    let fresh = Mutex::new(Vec::with_capacity(pending.len()));
    let first_error: Mutex<Option<Error>> = Mutex::new(None);
    let workers = opts.concurrency.max(1).min(pending.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(&i) = pending.get(k) else { break };
                let p = predict(&items[i], &prompts[i], inputs, backend);
                if let Some(s) = store {
                    if let Err(e) = s.append(&p) {
                        first_error.lock().unwrap().get_or_insert(e);
                        break;
                    }
                }
                fresh.lock().unwrap().push(p);
            });
        }
    });
    if let Some(e) = first_error.into_inner().unwrap() {
        return Err(e);
    }
    for p in fresh.into_inner().unwrap() {
        done.insert(p.item_id.clone(), p);
    }
    Ok(score(items, &done, opts))
}

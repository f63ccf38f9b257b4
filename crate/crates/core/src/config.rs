//! Run configuration layered as file < environment < flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::benchmark::{DatasetFormat, TemplateId};
use crate::error::{Error, Result};
use crate::harness::EndpointConfig;
use crate::policy::{Gamma, Grid, SamplingPolicy};

pub const ENV_PREFIX: &str = "VIDPANEL_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IoPaths {
    pub dataset: Option<PathBuf>,
    pub dataset_format: DatasetFormat,
    pub panels_dir: Option<PathBuf>,
    pub run_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Default for IoPaths {
    fn default() -> Self {
        IoPaths {
            dataset: None,
            dataset_format: DatasetFormat::GenericJsonl,
            panels_dir: None,
            run_dir: None,
            out_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub policy: SamplingPolicy,
    pub template: TemplateId,
    /// `vmme`, `timescope`, `all`, or `name:max,...,name`.
    pub buckets: String,
    pub endpoint: EndpointConfig,
    pub paths: IoPaths,
    pub parallelism: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            policy: SamplingPolicy::default(),
            template: TemplateId::Default,
            buckets: "vmme".into(),
            endpoint: EndpointConfig::default(),
            paths: IoPaths::default(),
            parallelism: 4,
            seed: 7,
        }
    }
}

/// Recursively overlays `top` onto `base`; nulls in `top` are ignored.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                if v.is_null() {
                    continue;
                }
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (slot, v) => *slot = v,
    }
}

fn set_path(root: &mut Value, path: &[&str], v: Value) {
    let mut cur = root;
    for key in &path[..path.len() - 1] {
        cur = cur
            .as_object_mut()
            .expect("object")
            .entry(*key)
            .or_insert_with(|| Value::Object(Map::new()));
    }
    cur.as_object_mut().expect("object").insert(path[path.len() - 1].to_string(), v);
}

fn num(var: &str, s: &str) -> Result<Value> {
    s.trim()
        .parse::<u64>()
        .map(Value::from)
        .map_err(|_| Error::Config(format!("{var}={s} is not an integer")))
}

/// Builds an overlay from `VIDPANEL_*` variables.
pub fn env_overlay<I>(vars: I) -> Result<Value>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut out = json!({});
    for (k, v) in vars {
        let Some(name) = k.strip_prefix(ENV_PREFIX) else { continue };
        match name {
            "CONTEXT_WINDOW" => set_path(&mut out, &["policy", "context_window"], num(&k, &v)?),
            "GRID" => {
                let g: Grid = v.parse()?;
                set_path(&mut out, &["policy", "alpha"], g.cols.into());
                set_path(&mut out, &["policy", "beta"], g.rows.into());
            }
            "GAMMA" => {
                v.parse::<Gamma>()?;
                set_path(&mut out, &["policy", "gamma"], v.into());
            }
            "TEMPLATE" => set_path(&mut out, &["template"], serde_json::to_value(v.parse::<TemplateId>()?)?),
            "BUCKETS" => set_path(&mut out, &["buckets"], v.into()),
            "ENDPOINT" => set_path(&mut out, &["endpoint", "base_url"], v.into()),
            "MODEL" => set_path(&mut out, &["endpoint", "model_name"], v.into()),
            "CONCURRENCY" => set_path(&mut out, &["endpoint", "concurrency_limit"], num(&k, &v)?),
            "PARALLELISM" => set_path(&mut out, &["parallelism"], num(&k, &v)?),
            "SEED" => set_path(&mut out, &["seed"], num(&k, &v)?),
            _ => {}
        }
    }
    Ok(out)
}

impl RunConfig {
    /// Defaults, then the JSON file, then environment, then flag overlay.
    pub fn resolve<I>(file: Option<&Path>, env: I, flags: Value) -> Result<RunConfig>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut v = serde_json::to_value(RunConfig::default())?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
            let file_value: Value = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("invalid config {}: {e}", path.display())))?;
            merge(&mut v, file_value);
        }
        merge(&mut v, env_overlay(env)?);
        merge(&mut v, flags);
        let cfg: RunConfig =
            serde_json::from_value(v).map_err(|e| Error::Config(format!("invalid configuration: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        self.endpoint.validate()?;
        self.buckets.parse::<crate::benchmark::DurationBuckets>()?;
        if self.parallelism == 0 {
            return Err(Error::Config("parallelism must be >= 1".into()));
        }
        Ok(())
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

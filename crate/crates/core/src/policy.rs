//! Dynamic frame sampling.
//!
//! A video of `D` frames is sampled with `C` frames when `gamma * C >= D`.
//! Otherwise `alpha * beta * C` frames are sampled and grouped into
//! `C` panels of `beta` rows by `alpha` columns.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum spacing (in frames) between sampled frames before paneling kicks in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Gamma {
    AbsoluteFrames(f64),
    FpsMultiple(f64),
}

impl Default for Gamma {
    fn default() -> Self {
        Gamma::FpsMultiple(1.0)
    }
}

impl Gamma {
    fn value(&self) -> f64 {
        match *self {
            Gamma::AbsoluteFrames(v) | Gamma::FpsMultiple(v) => v,
        }
    }
}

impl fmt::Display for Gamma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Gamma::AbsoluteFrames(v) => write!(f, "{v}f"),
            Gamma::FpsMultiple(v) => write!(f, "{v}fps"),
        }
    }
}

/// Parses `<float>fps` (multiple of the video frame rate) or `<float>f` (frames).
impl FromStr for Gamma {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (num, ctor): (&str, fn(f64) -> Gamma) = if let Some(n) = s.strip_suffix("fps") {
            (n, Gamma::FpsMultiple)
        } else if let Some(n) = s.strip_suffix('f') {
            (n, Gamma::AbsoluteFrames)
        } else {
            return Err(Error::InvalidPolicy(format!(
                "gamma `{s}` must end in `fps` or `f`"
            )));
        };
        let v: f64 = num
            .trim()
            .parse()
            .map_err(|_| Error::InvalidPolicy(format!("gamma `{s}` is not a number")))?;
        if !v.is_finite() || v < 0.0 {
            return Err(Error::InvalidPolicy(format!(
                "gamma `{s}` must be finite and non-negative"
            )));
        }
        Ok(ctor(v))
    }
}

impl TryFrom<String> for Gamma {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Gamma> for String {
    fn from(g: Gamma) -> String {
        g.to_string()
    }
}

/// Panel grid, written `RxC` (rows by columns).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Grid {
    pub rows: u32,
    pub cols: u32,
}

impl Grid {
    pub const fn new(rows: u32, cols: u32) -> Self {
        Grid { rows, cols }
    }

    pub fn cells(&self) -> u64 {
        u64::from(self.rows) * u64::from(self.cols)
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

impl FromStr for Grid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidPolicy(format!("grid `{s}` must look like 2x2"));
        let (r, c) = s.trim().split_once(['x', 'X']).ok_or_else(bad)?;
        let rows: u32 = r.trim().parse().map_err(|_| bad())?;
        let cols: u32 = c.trim().parse().map_err(|_| bad())?;
        if rows == 0 || cols == 0 {
            return Err(bad());
        }
        Ok(Grid { rows, cols })
    }
}

impl TryFrom<String> for Grid {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Grid> for String {
    fn from(g: Grid) -> String {
        g.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingPolicy {
    /// Number of images the model accepts per query.
    pub context_window: u32,
    /// Frames combined horizontally (grid columns).
    pub alpha: u32,
    /// Frames combined vertically (grid rows).
    pub beta: u32,
    pub gamma: Gamma,
}

impl Default for SamplingPolicy {
    fn default() -> Self {
        SamplingPolicy {
            context_window: 32,
            alpha: 2,
            beta: 2,
            gamma: Gamma::FpsMultiple(1.0),
        }
    }
}

impl SamplingPolicy {
    pub fn new(context_window: u32, grid: Grid, gamma: Gamma) -> Result<Self> {
        let p = SamplingPolicy {
            context_window,
            alpha: grid.cols,
            beta: grid.rows,
            gamma,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn grid(&self) -> Grid {
        Grid::new(self.beta, self.alpha)
    }

    pub fn validate(&self) -> Result<()> {
        if self.context_window == 0 {
            return Err(Error::InvalidPolicy("context_window must be >= 1".into()));
        }
        if self.alpha == 0 || self.beta == 0 {
            return Err(Error::InvalidPolicy("alpha and beta must be >= 1".into()));
        }
        let g = self.gamma.value();
        if !g.is_finite() || g < 0.0 {
            return Err(Error::InvalidPolicy(format!(
                "gamma {} must be finite and non-negative",
                self.gamma
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub frame_count: u64,
    pub fps: f64,
    pub width: u32,
    pub height: u32,
    pub duration_seconds: f64,
}

impl VideoMeta {
    pub fn new(frame_count: u64, fps: f64, width: u32, height: u32) -> Self {
        VideoMeta {
            frame_count,
            fps,
            width,
            height,
            duration_seconds: frame_count as f64 / fps,
        }
    }

    /// Checks everything except `frame_count > 0`, which planning reports as
    /// [`Error::EmptyVideo`].
    pub fn validate(&self) -> Result<()> {
        if !self.fps.is_finite() || self.fps <= 0.0 {
            return Err(Error::InvalidMeta(format!("fps {} must be > 0", self.fps)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidMeta(format!(
                "frame size {}x{} must be non-zero",
                self.width, self.height
            )));
        }
        if !self.duration_seconds.is_finite() || self.duration_seconds < 0.0 {
            return Err(Error::InvalidMeta("duration must be non-negative".into()));
        }
        let expected = self.frame_count as f64 / self.fps;
        if (self.duration_seconds - expected).abs() > 1.0 / self.fps + 1e-9 {
            return Err(Error::InvalidMeta(format!(
                "duration {}s disagrees with {} frames at {} fps",
                self.duration_seconds, self.frame_count, self.fps
            )));
        }
        Ok(())
    }

    pub fn timestamp_of(&self, index: u64) -> f64 {
        index as f64 / self.fps
    }
}

/// Which variant of the pipeline a plan feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanMode {
    /// Dynamic sampling: panels when frames would be closer than gamma.
    #[default]
    Panels,
    /// Never panel; `min(C, D)` full-resolution frames.
    Baseline,
    /// Same trigger as `Panels`, but instead of paneling each of the `C`
    /// frames is only downsampled to the tile size.
    LowresInput,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplePlan {
    pub mode: PlanMode,
    pub panel_active: bool,
    pub frames_to_sample: u64,
    pub frame_indices: Vec<u64>,
    pub grid_rows: u32,
    pub grid_cols: u32,
    pub tile_width: u32,
    pub tile_height: u32,
    pub panel_count: u64,
    pub pad_frames: u64,
}

impl SamplePlan {
    pub fn grid(&self) -> Grid {
        Grid::new(self.grid_rows, self.grid_cols)
    }

    pub fn panel_width(&self) -> u32 {
        self.grid_cols * self.tile_width
    }

    pub fn panel_height(&self) -> u32 {
        self.grid_rows * self.tile_height
    }
}

/// Gamma in frames for this video.
pub fn resolve_gamma(policy: &SamplingPolicy, meta: &VideoMeta) -> Result<f64> {
    if !(meta.fps > 0.0) {
        return Err(Error::InvalidMeta(format!("fps {} must be > 0", meta.fps)));
    }
    let g = match policy.gamma {
        Gamma::AbsoluteFrames(g) => g,
        Gamma::FpsMultiple(m) => m * meta.fps,
    };
    if !g.is_finite() || g < 0.0 {
        return Err(Error::InvalidPolicy(format!(
            "gamma {} resolves to {g} frames",
            policy.gamma
        )));
    }
    Ok(g)
}

/// Whether the paneling branch triggers: `gamma * C < D`.
pub fn panel_triggered(policy: &SamplingPolicy, meta: &VideoMeta) -> Result<bool> {
    let g = resolve_gamma(policy, meta)?;
    Ok(g * f64::from(policy.context_window) < meta.frame_count as f64)
}

/// Center-of-bin uniform sampling: `floor((i + 0.5) * frame_count / n)`.
pub fn uniform_indices(frame_count: u64, n: u64) -> Result<Vec<u64>> {
    if n == 0 {
        return Err(Error::InvalidPolicy("cannot sample zero frames".into()));
    }
    if n > frame_count {
        return Err(Error::InsufficientFrames {
            requested: n,
            available: frame_count,
        });
    }
    let d = u128::from(frame_count);
    let n2 = 2 * u128::from(n);
    Ok((0..u128::from(n))
        .map(|i| ((2 * i + 1) * d / n2) as u64)
        .collect())
}

pub fn plan_sampling(policy: &SamplingPolicy, meta: &VideoMeta) -> Result<SamplePlan> {
    plan_with_mode(policy, meta, PlanMode::Panels)
}

pub fn plan_with_mode(
    policy: &SamplingPolicy,
    meta: &VideoMeta,
    mode: PlanMode,
) -> Result<SamplePlan> {
    policy.validate()?;
    if meta.frame_count == 0 {
        return Err(Error::EmptyVideo);
    }
    meta.validate()?;

    let triggered = panel_triggered(policy, meta)?;
    let c = u64::from(policy.context_window);
    let d = meta.frame_count;

    let (panel_active, frames_to_sample, grid) = match mode {
        PlanMode::Panels if triggered => {
            let t = (u64::from(policy.alpha) * u64::from(policy.beta) * c).min(d);
            (true, t, policy.grid())
        }
        _ => (false, c.min(d), Grid::new(1, 1)),
    };

    let (tile_width, tile_height) = if panel_active || (mode == PlanMode::LowresInput && triggered)
    {
        (meta.width / policy.alpha, meta.height / policy.beta)
    } else {
        (meta.width, meta.height)
    };
    if tile_width == 0 || tile_height == 0 {
        return Err(Error::InvalidGeometry(format!(
            "{}x{} frames cannot be split into a {} grid",
            meta.width,
            meta.height,
            policy.grid()
        )));
    }

    let cells = grid.cells();
    let panel_count = frames_to_sample.div_ceil(cells);
    Ok(SamplePlan {
        mode,
        panel_active,
        frames_to_sample,
        frame_indices: uniform_indices(d, frames_to_sample)?,
        grid_rows: grid.rows,
        grid_cols: grid.cols,
        tile_width,
        tile_height,
        panel_count,
        pad_frames: panel_count * cells - frames_to_sample,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn policy(c: u32, a: u32, b: u32, gamma: Gamma) -> SamplingPolicy {
        SamplingPolicy {
            context_window: c,
            alpha: a,
            beta: b,
            gamma,
        }
    }

    #[test]
    fn gamma_resolution() {
        let m30 = VideoMeta::new(900, 30.0, 640, 480);
        let m2 = VideoMeta::new(100, 2.0, 640, 480);
        let p = |g| policy(8, 2, 2, g);
        assert_eq!(resolve_gamma(&p(Gamma::FpsMultiple(1.0)), &m30).unwrap(), 30.0);
        assert_eq!(resolve_gamma(&p(Gamma::FpsMultiple(0.5)), &m2).unwrap(), 1.0);
        assert_eq!(resolve_gamma(&p(Gamma::AbsoluteFrames(0.0)), &m30).unwrap(), 0.0);
        assert!(matches!(
            resolve_gamma(&p(Gamma::FpsMultiple(f64::INFINITY)), &m2),
            Err(Error::InvalidPolicy(_))
        ));
    }

    #[test]
    fn gamma_and_grid_parse() {
        assert_eq!("1fps".parse::<Gamma>().unwrap(), Gamma::FpsMultiple(1.0));
        assert_eq!("0.5fps".parse::<Gamma>().unwrap(), Gamma::FpsMultiple(0.5));
        assert_eq!("30f".parse::<Gamma>().unwrap(), Gamma::AbsoluteFrames(30.0));
        assert!("30".parse::<Gamma>().is_err());
        assert!("-1f".parse::<Gamma>().is_err());
        assert_eq!("3x4".parse::<Grid>().unwrap(), Grid::new(3, 4));
        assert!("0x2".parse::<Grid>().is_err());
        assert!("22".parse::<Grid>().is_err());
    }

    #[test]
    fn short_video_is_not_paneled() {
        let meta = VideoMeta::new(900, 30.0, 640, 480);
        let plan = plan_sampling(&SamplingPolicy::default(), &meta).unwrap();
        assert!(!plan.panel_active);
        assert_eq!(plan.frames_to_sample, 32);
        assert_eq!((plan.grid_rows, plan.grid_cols), (1, 1));
        assert_eq!((plan.tile_width, plan.tile_height), (640, 480));
        assert_eq!(plan.panel_count, 32);
    }

    #[test]
    fn long_video_is_paneled() {
        let meta = VideoMeta::new(5180, 2.0, 640, 480);
        let plan = plan_sampling(&SamplingPolicy::default(), &meta).unwrap();
        assert!(plan.panel_active);
        assert_eq!(plan.frames_to_sample, 128);
        assert_eq!(plan.panel_count, 32);
        assert_eq!((plan.grid_rows, plan.grid_cols), (2, 2));
        assert_eq!((plan.tile_width, plan.tile_height), (320, 240));
        assert_eq!(plan.pad_frames, 0);
    }

    #[test]
    fn zero_gamma_clamps_to_video_length() {
        let meta = VideoMeta::new(8, 1.0, 64, 64);
        let plan = plan_sampling(&policy(8, 2, 2, Gamma::AbsoluteFrames(0.0)), &meta).unwrap();
        assert!(plan.panel_active);
        assert_eq!(plan.frames_to_sample, 8);
        assert_eq!(plan.pad_frames, 0);
        assert_eq!(plan.panel_count, 2);
        assert_eq!(plan.frame_indices, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn boundary_tie_does_not_panel() {
        // gamma * C == D
        let meta = VideoMeta::new(64, 2.0, 64, 64);
        let plan = plan_sampling(&policy(32, 2, 2, Gamma::FpsMultiple(1.0)), &meta).unwrap();
        assert!(!plan.panel_active);
        let meta = VideoMeta::new(65, 2.0, 64, 64);
        let plan = plan_sampling(&policy(32, 2, 2, Gamma::FpsMultiple(1.0)), &meta).unwrap();
        assert!(plan.panel_active);
    }

    #[test]
    fn empty_video_and_degenerate_geometry() {
        let meta = VideoMeta::new(0, 1.0, 64, 64);
        assert!(matches!(
            plan_sampling(&SamplingPolicy::default(), &meta),
            Err(Error::EmptyVideo)
        ));
        let meta = VideoMeta::new(1000, 1.0, 1, 64);
        assert!(matches!(
            plan_sampling(&policy(4, 2, 2, Gamma::AbsoluteFrames(0.0)), &meta),
            Err(Error::InvalidGeometry(_))
        ));
    }

    #[test]
    fn uneven_clamp_pads_last_panel() {
        let meta = VideoMeta::new(5, 1.0, 64, 64);
        let plan = plan_sampling(&policy(8, 2, 2, Gamma::AbsoluteFrames(0.0)), &meta).unwrap();
        assert_eq!(plan.frames_to_sample, 5);
        assert_eq!(plan.panel_count, 2);
        assert_eq!(plan.pad_frames, 3);
    }

    #[test]
    fn baseline_and_lowres_modes() {
        let meta = VideoMeta::new(5180, 2.0, 640, 480);
        let p = SamplingPolicy::default();
        let base = plan_with_mode(&p, &meta, PlanMode::Baseline).unwrap();
        assert!(!base.panel_active);
        assert_eq!(base.frames_to_sample, 32);
        assert_eq!((base.tile_width, base.tile_height), (640, 480));
        let low = plan_with_mode(&p, &meta, PlanMode::LowresInput).unwrap();
        assert!(!low.panel_active);
        assert_eq!(low.frames_to_sample, 32);
        assert_eq!((low.tile_width, low.tile_height), (320, 240));
        assert_eq!(low.frame_indices, base.frame_indices);

        let short = VideoMeta::new(60, 2.0, 640, 480);
        let low = plan_with_mode(&p, &short, PlanMode::LowresInput).unwrap();
        assert_eq!((low.tile_width, low.tile_height), (640, 480));
    }

    #[test]
    fn uniform_index_examples() {
        assert_eq!(uniform_indices(4, 4).unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(uniform_indices(10, 2).unwrap(), vec![2, 7]);
        assert_eq!(uniform_indices(1, 1).unwrap(), vec![0]);
        assert!(matches!(
            uniform_indices(3, 4),
            Err(Error::InsufficientFrames { requested: 4, available: 3 })
        ));
    }

    #[test]
    fn plan_serialization_is_stable() {
        let meta = VideoMeta::new(5180, 2.0, 640, 480);
        let a = serde_json::to_string(&plan_sampling(&SamplingPolicy::default(), &meta).unwrap())
            .unwrap();
        let b = serde_json::to_string(&plan_sampling(&SamplingPolicy::default(), &meta).unwrap())
            .unwrap();
        assert_eq!(a, b);
        let back: SamplePlan = serde_json::from_str(&a).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), a);
    }

    proptest! {
        #[test]
        fn trigger_is_monotone_in_duration(
            c in 1u32..64, g in 0u32..20, d in 1u64..5000,
        ) {
            let p = policy(c, 2, 2, Gamma::AbsoluteFrames(f64::from(g)));
            let meta = VideoMeta::new(d, 1.0, 64, 64);
            let plan = plan_sampling(&p, &meta).unwrap();
            let threshold = u64::from(g) * u64::from(c);
            prop_assert_eq!(plan.panel_active, d > threshold);
        }

        #[test]
        fn zero_gamma_always_panels(d in 1u64..10_000, c in 1u32..64) {
            let p = policy(c, 2, 2, Gamma::AbsoluteFrames(0.0));
            let plan = plan_sampling(&p, &VideoMeta::new(d, 2.0, 64, 64)).unwrap();
            prop_assert!(plan.panel_active);
        }

        #[test]
        fn unit_grid_reduces_to_baseline(d in 1u64..10_000, c in 1u32..64) {
            let p = policy(c, 1, 1, Gamma::AbsoluteFrames(0.0));
            let meta = VideoMeta::new(d, 2.0, 64, 48);
            let forced = plan_sampling(&p, &meta).unwrap();
            let base = plan_with_mode(&p, &meta, PlanMode::Baseline).unwrap();
            prop_assert_eq!(forced.frames_to_sample, base.frames_to_sample);
            prop_assert_eq!(&forced.frame_indices, &base.frame_indices);
            prop_assert_eq!(forced.grid(), Grid::new(1, 1));
            prop_assert_eq!((forced.tile_width, forced.tile_height), (64, 48));
            prop_assert_eq!(forced.pad_frames, 0);
        }

        #[test]
        fn plan_invariants(
            d in 1u64..20_000, c in 1u32..64, a in 1u32..5, b in 1u32..5, g in 0.0f64..4.0,
        ) {
            let p = policy(c, a, b, Gamma::FpsMultiple(g));
            let plan = plan_sampling(&p, &VideoMeta::new(d, 2.0, 640, 480)).unwrap();
            prop_assert_eq!(plan.frame_indices.len() as u64, plan.frames_to_sample);
            prop_assert!(plan.frame_indices.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(plan.frame_indices.iter().all(|&i| i < d));
            prop_assert!(plan.pad_frames < plan.grid().cells());
            if plan.panel_active {
                prop_assert!(plan.panel_count <= u64::from(c));
                prop_assert_eq!(
                    plan.frames_to_sample,
                    (u64::from(a) * u64::from(b) * u64::from(c)).min(d)
                );
            }
        }
    }
}

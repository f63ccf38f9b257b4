//! C ABI for the vidpanel sampling planner, tiler and answer parser.
//!
//! Conventions:
//! * every fallible function returns a [`VpStatus`]; on failure the message
//!   is available from [`vp_last_error`] on the same thread;
//! * handles (`VpPolicy`, `VpPlan`) are opaque and owned by the caller once
//!   returned, release them with the matching `*_free`;
//! * strings returned as `char *` must be released with [`vp_string_free`];
//! * images are tightly packed RGB24, row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use vidpanel::benchmark::{render_prompt, AnswerOption, PromptTemplate, QAItem, TemplateId};
use vidpanel::harness::parse_choice;
use vidpanel::panelizer::{compose_panel, downsample_tile};
use vidpanel::policy::{plan_with_mode, uniform_indices};
use vidpanel::{Error, Frame, Gamma, Grid, PlanMode, SamplePlan, SamplingPolicy, VideoMeta};

/// Status codes. Values are stable.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    InvalidPolicy = 10,
    InvalidMeta = 11,
    EmptyVideo = 12,
    InsufficientFrames = 13,
    InvalidGeometry = 14,
    TemplateError = 15,
    Internal = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VpGammaKind {
    /// Threshold is `value * fps` frames.
    FpsMultiple = 0,
    /// Threshold is `value` frames.
    AbsoluteFrames = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VpPlanMode {
    Panels = 0,
    Baseline = 1,
    LowresInput = 2,
}

/// Opaque sampling policy.
pub struct VpPolicy(SamplingPolicy);

/// Opaque sampling plan.
pub struct VpPlan(SamplePlan);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: VpStatus, msg: impl Into<String>) -> VpStatus {
    set_error(msg.into());
    status
}

fn from_error(e: Error) -> VpStatus {
    let status = match &e {
        Error::InvalidPolicy(_) => VpStatus::InvalidPolicy,
        Error::InvalidMeta(_) => VpStatus::InvalidMeta,
        Error::InsufficientFrames { .. } => VpStatus::InsufficientFrames,
        Error::InvalidGeometry(_) => VpStatus::InvalidGeometry,
        Error::Template(_) => VpStatus::TemplateError,
        Error::Dataset(_) | Error::Config(_) | Error::Json(_) => VpStatus::InvalidArgument,
        _ if e.class() == "EmptyVideo" => VpStatus::EmptyVideo,
        _ => VpStatus::Internal,
    };
    fail(status, format!("{}: {e}", e.class()))
}

/// Runs `f`, turning panics into `Internal` and clearing the error slot on success.
fn guard(f: impl FnOnce() -> VpStatus) -> VpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(VpStatus::Ok) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            VpStatus::Ok
        }
        Ok(s) => s,
        Err(_) => fail(VpStatus::Internal, "panic inside vidpanel"),
    }
}

macro_rules! non_null {
    ($($p:expr),+) => {
        $(if $p.is_null() {
            return fail(VpStatus::NullPointer, concat!("`", stringify!($p), "` is null"));
        })+
    };
}

macro_rules! try_vp {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(err) => return from_error(err),
        }
    };
}

unsafe fn cstr<'a>(p: *const c_char) -> Result<&'a str, VpStatus> {
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(VpStatus::InvalidArgument, "string is not valid UTF-8"))
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("nul bytes removed").into_raw()
}

/// Message for the last failed call on this thread, or NULL.
/// The pointer stays valid until the next vidpanel call on this thread.
#[no_mangle]
pub extern "C" fn vp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn vp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn vp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Creates a policy: `context_window` images per query, `alpha` columns by
/// `beta` rows per panel, and a threshold `gamma_value` of kind `gamma_kind`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vp_policy_new(
    context_window: u32,
    alpha: u32,
    beta: u32,
    gamma_kind: VpGammaKind,
    gamma_value: f64,
    out: *mut *mut VpPolicy,
) -> VpStatus {
    guard(|| {
        non_null!(out);
        let gamma = match gamma_kind {
            VpGammaKind::FpsMultiple => Gamma::FpsMultiple(gamma_value),
            VpGammaKind::AbsoluteFrames => Gamma::AbsoluteFrames(gamma_value),
        };
        let grid = Grid { rows: beta, cols: alpha };
        let policy = try_vp!(SamplingPolicy::new(context_window, grid, gamma));
        *out = Box::into_raw(Box::new(VpPolicy(policy)));
        VpStatus::Ok
    })
}

/// # Safety
/// `policy` must come from `vp_policy_new` (or be NULL).
#[no_mangle]
pub unsafe extern "C" fn vp_policy_free(policy: *mut VpPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Plans sampling for a video with the given metadata.
///
/// # Safety
/// `policy` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vp_plan_sampling(
    policy: *const VpPolicy,
    frame_count: u64,
    fps: f64,
    width: u32,
    height: u32,
    mode: VpPlanMode,
    out: *mut *mut VpPlan,
) -> VpStatus {
    guard(|| {
        non_null!(policy, out);
        let meta = VideoMeta::new(frame_count, fps, width, height);
        let mode = match mode {
            VpPlanMode::Panels => PlanMode::Panels,
            VpPlanMode::Baseline => PlanMode::Baseline,
            VpPlanMode::LowresInput => PlanMode::LowresInput,
        };
        let plan = try_vp!(plan_with_mode(&(*policy).0, &meta, mode));
        *out = Box::into_raw(Box::new(VpPlan(plan)));
        VpStatus::Ok
    })
}

/// # Safety
/// `plan` must come from `vp_plan_sampling` (or be NULL).
#[no_mangle]
pub unsafe extern "C" fn vp_plan_free(plan: *mut VpPlan) {
    if !plan.is_null() {
        drop(Box::from_raw(plan));
    }
}

/// # Safety
/// `plan` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn vp_plan_panel_active(plan: *const VpPlan) -> bool {
    !plan.is_null() && (*plan).0.panel_active
}

/// Number of frames the plan samples, 0 for NULL.
///
/// # Safety
/// `plan` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn vp_plan_frames_to_sample(plan: *const VpPlan) -> u64 {
    if plan.is_null() {
        0
    } else {
        (*plan).0.frames_to_sample
    }
}

/// Number of images sent to the model, 0 for NULL.
///
/// # Safety
/// `plan` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn vp_plan_panel_count(plan: *const VpPlan) -> u64 {
    if plan.is_null() {
        0
    } else {
        (*plan).0.panel_count
    }
}

/// Grid and tile geometry. Any output pointer may be NULL.
///
/// # Safety
/// `plan` must be a live handle; non-NULL outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn vp_plan_geometry(
    plan: *const VpPlan,
    grid_rows: *mut u32,
    grid_cols: *mut u32,
    tile_width: *mut u32,
    tile_height: *mut u32,
) -> VpStatus {
    guard(|| {
        non_null!(plan);
        let p = &(*plan).0;
        for (dst, v) in [
            (grid_rows, p.grid_rows),
            (grid_cols, p.grid_cols),
            (tile_width, p.tile_width),
            (tile_height, p.tile_height),
        ] {
            if !dst.is_null() {
                *dst = v;
            }
        }
        VpStatus::Ok
    })
}

unsafe fn copy_out(src: &[u64], out: *mut u64, capacity: usize, len: *mut usize) -> VpStatus {
    if !len.is_null() {
        *len = src.len();
    }
    if src.len() > capacity {
        return fail(
            VpStatus::BufferTooSmall,
            format!("need room for {} values, got {capacity}", src.len()),
        );
    }
    if !src.is_empty() {
        if out.is_null() {
            return fail(VpStatus::NullPointer, "`out` is null");
        }
        ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    }
    VpStatus::Ok
}

/// Copies the sampled frame indices into `out`. `*len` always receives the
/// required count, so callers can size the buffer with a first call.
///
/// # Safety
/// `out` must have room for `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn vp_plan_indices(
    plan: *const VpPlan,
    out: *mut u64,
    capacity: usize,
    len: *mut usize,
) -> VpStatus {
    guard(|| {
        non_null!(plan);
        copy_out(&(*plan).0.frame_indices, out, capacity, len)
    })
}

/// The plan serialized as JSON; free with `vp_string_free`.
///
/// # Safety
/// `plan` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn vp_plan_to_json(plan: *const VpPlan) -> *mut c_char {
    if plan.is_null() {
        set_error("`plan` is null".into());
        return ptr::null_mut();
    }
    match serde_json::to_string(&(*plan).0) {
        Ok(s) => into_c_string(s),
        Err(e) => {
            set_error(e.to_string());
            ptr::null_mut()
        }
    }
}

/// `n` center-of-bin indices over `frame_count` frames.
///
/// # Safety
/// `out` must have room for `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn vp_uniform_indices(
    frame_count: u64,
    n: u64,
    out: *mut u64,
    capacity: usize,
    len: *mut usize,
) -> VpStatus {
    guard(|| {
        let idx = try_vp!(uniform_indices(frame_count, n));
        copy_out(&idx, out, capacity, len)
    })
}

/// Bilinear resize of an RGB24 image into `dst` (`dst_width * dst_height * 3` bytes).
///
/// # Safety
/// `src` must hold `src_width * src_height * 3` bytes and `dst` the destination size.
#[no_mangle]
pub unsafe extern "C" fn vp_downsample(
    src: *const u8,
    src_width: u32,
    src_height: u32,
    dst: *mut u8,
    dst_width: u32,
    dst_height: u32,
) -> VpStatus {
    guard(|| {
        non_null!(src, dst);
        let n = src_width as usize * src_height as usize * 3;
        let pixels = std::slice::from_raw_parts(src, n).to_vec();
        let frame = try_vp!(Frame::new(0, 0.0, src_width, src_height, pixels));
        let tile = try_vp!(downsample_tile(&frame, dst_width, dst_height));
        ptr::copy_nonoverlapping(tile.pixels.as_ptr(), dst, tile.pixels.len());
        VpStatus::Ok
    })
}

/// Lays `rows * cols` equally sized RGB24 tiles out row-major into `dst`,
/// which must hold `cols * tile_width * rows * tile_height * 3` bytes.
///
/// # Safety
/// `tiles` must point to `rows * cols` buffers of `tile_width * tile_height * 3` bytes.
#[no_mangle]
pub unsafe extern "C" fn vp_compose_panel(
    tiles: *const *const u8,
    tile_width: u32,
    tile_height: u32,
    rows: u32,
    cols: u32,
    dst: *mut u8,
) -> VpStatus {
    guard(|| {
        non_null!(tiles, dst);
        let cells = rows as usize * cols as usize;
        let size = tile_width as usize * tile_height as usize * 3;
        let mut frames = Vec::with_capacity(cells);
        for (k, &t) in std::slice::from_raw_parts(tiles, cells).iter().enumerate() {
            if t.is_null() {
                return fail(VpStatus::NullPointer, format!("tile {k} is null"));
            }
            let px = std::slice::from_raw_parts(t, size).to_vec();
            frames.push(try_vp!(Frame::new(k as u64, 0.0, tile_width, tile_height, px)));
        }
        let panel = try_vp!(compose_panel(&frames, rows, cols));
        ptr::copy_nonoverlapping(panel.pixels.as_ptr(), dst, panel.pixels.len());
        VpStatus::Ok
    })
}

/// Extracts the chosen letter from a model response. `option_texts[i]` is
/// the text of option `'A' + i`. `*letter` receives the letter, or 0 when
/// nothing could be parsed (still `VP_STATUS_OK`).
///
/// # Safety
/// `response` and each of the `option_count` texts must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn vp_parse_choice(
    response: *const c_char,
    option_texts: *const *const c_char,
    option_count: usize,
    letter: *mut c_char,
) -> VpStatus {
    guard(|| {
        non_null!(response, letter);
        let options = match collect_options(option_texts, option_count) {
            Ok(o) => o,
            Err(s) => return s,
        };
        let response = match cstr(response) {
            Ok(r) => r,
            Err(s) => return s,
        };
        *letter = parse_choice(response, &options).map_or(0, |c| c as u8 as c_char);
        VpStatus::Ok
    })
}

unsafe fn collect_options(texts: *const *const c_char, count: usize) -> Result<Vec<AnswerOption>, VpStatus> {
    if count > 26 {
        return Err(fail(VpStatus::InvalidArgument, "at most 26 options"));
    }
    if count > 0 && texts.is_null() {
        return Err(fail(VpStatus::NullPointer, "`option_texts` is null"));
    }
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let p = *texts.add(i);
        if p.is_null() {
            return Err(fail(VpStatus::NullPointer, format!("option {i} is null")));
        }
        out.push(AnswerOption { letter: (b'A' + i as u8) as char, text: cstr(p)?.to_string() });
    }
    Ok(out)
}

/// Renders the prompt for one question. `template` is `default`, `p1`,
/// `p2` or `p3`; `grid_rows`/`grid_cols` of 0 mean "no panels". The result
/// is written to `*out` and must be freed with `vp_string_free`.
///
/// # Safety
/// Strings must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vp_render_prompt(
    question: *const c_char,
    option_texts: *const *const c_char,
    option_count: usize,
    template: *const c_char,
    grid_rows: u32,
    grid_cols: u32,
    out: *mut *mut c_char,
) -> VpStatus {
    guard(|| {
        non_null!(question, template, out);
        let options = match collect_options(option_texts, option_count) {
            Ok(o) => o,
            Err(s) => return s,
        };
        let (question, template) = match (cstr(question), cstr(template)) {
            (Ok(q), Ok(t)) => (q, t),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        let id: TemplateId = try_vp!(template.parse());
        let item = QAItem {
            item_id: String::new(),
            video_uri: String::new(),
            question: question.to_string(),
            gold: options.first().map_or('A', |o| o.letter),
            options,
            duration_seconds: 0.0,
            tags: Vec::new(),
        };
        let grid = (grid_rows > 0 && grid_cols > 0).then_some(Grid { rows: grid_rows, cols: grid_cols });
        let prompt = try_vp!(render_prompt(&item, &PromptTemplate::new(id), grid));
        *out = into_c_string(prompt);
        VpStatus::Ok
    })
}

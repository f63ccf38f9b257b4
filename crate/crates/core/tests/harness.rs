mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use common::*;
use serde_json::Value;
use vidpanel::benchmark::{render_prompt, AnswerOption, DurationBuckets, PromptTemplate};
use vidpanel::framesource::write_image_directory;
use vidpanel::harness::mock::{parse_chat_request, ChatRequest, MockReply, MockServer};
use vidpanel::harness::*;
use vidpanel::panelizer::panelize_to_dir;
use vidpanel::policy::{plan_sampling, Gamma, Grid};
use vidpanel::{Error, Frame, SamplingPolicy};

fn opts(run_id: &str) -> EvalOptions {
    EvalOptions {
        run_id: run_id.into(),
        buckets: DurationBuckets::vmme(),
        concurrency: 3,
        ..EvalOptions::default()
    }
}

#[test]
fn echo_endpoint_returns_raw_text() {
    let server = MockServer::start(0, 1, Arc::new(|_: &ChatRequest| MockReply::ok("B"))).unwrap();
    let text = query_model(&endpoint(&server), &[b"img".to_vec()], "which?").unwrap();
    assert_eq!(text, "B");
}

#[test]
fn transient_failures_are_retried() {
    let calls = Arc::new(AtomicUsize::new(0));
    let c = Arc::clone(&calls);
    let server = MockServer::start(
        0,
        1,
        Arc::new(move |_: &ChatRequest| {
            if c.fetch_add(1, Ordering::SeqCst) < 2 {
                MockReply::status(500)
            } else {
                MockReply::ok("C")
            }
        }),
    )
    .unwrap();
    let cfg = EndpointConfig { max_retries: 2, ..endpoint(&server) };
    assert_eq!(query_model(&cfg, &[], "q").unwrap(), "C");
    assert_eq!(calls.load(Ordering::SeqCst), 3);

    calls.store(0, Ordering::SeqCst);
    let cfg = EndpointConfig { max_retries: 1, ..endpoint(&server) };
    let err = query_model(&cfg, &[], "q").unwrap_err();
    assert!(matches!(err, Error::Endpoint(_)), "{err}");
    assert_eq!(calls.load(Ordering::SeqCst), 2);
}

#[test]
fn client_errors_are_not_retried() {
    let (handler, calls) = counting(Arc::new(|_: &ChatRequest| MockReply::status(400)));
    let server = MockServer::start(0, 1, handler).unwrap();
    let err = query_model(&endpoint(&server), &[], "q").unwrap_err();
    assert_eq!(err.class(), "ConfigError");
    assert_eq!(calls.load(Ordering::SeqCst), 1);
}

#[test]
fn too_many_images_fail_before_the_network() {
    let (handler, calls) = counting(Arc::new(|_: &ChatRequest| MockReply::ok("A")));
    let server = MockServer::start(0, 1, handler).unwrap();
    let images = vec![b"x".to_vec(); 33];
    let cfg = EndpointConfig { max_images_per_request: 32, ..endpoint(&server) };
    let err = query_model(&cfg, &images, "q").unwrap_err();
    assert_eq!(err.class(), "ConfigError");
    assert_eq!(calls.load(Ordering::SeqCst), 0);
}

#[test]
fn unreachable_endpoint_exhausts_retries() {
    // bind then drop to get a port nobody listens on
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let cfg = EndpointConfig {
        base_url: format!("http://127.0.0.1:{port}/v1"),
        max_retries: 1,
        backoff_initial_ms: 1,
        ..EndpointConfig::default()
    };
    assert!(matches!(query_model(&cfg, &[], "q"), Err(Error::Endpoint(_))));
}

#[test]
fn wire_format_matches_recorded_fixture() {
    let fixture: Value =
        serde_json::from_str(include_str!("fixtures/chat_request.json")).unwrap();
    let item = vidpanel::benchmark::QAItem {
        item_id: "x".into(),
        video_uri: "v".into(),
        question: "Which color?".into(),
        options: vec![
            AnswerOption { letter: 'A', text: "red".into() },
            AnswerOption { letter: 'B', text: "blue".into() },
        ],
        gold: 'B',
        duration_seconds: 1.0,
        tags: vec![],
    };
    let prompt = render_prompt(&item, &PromptTemplate::default(), None).unwrap();
    let images = vec![b"panel-0".to_vec(), b"panel-1".to_vec()];
    assert_eq!(build_request_body("fixture-model", &images, &prompt), fixture);

    // and the mock server sees exactly what was sent
    let seen: Arc<Mutex<Option<ChatRequest>>> = Arc::default();
    let s = Arc::clone(&seen);
    let server = MockServer::start(
        0,
        1,
        Arc::new(move |r: &ChatRequest| {
            *s.lock().unwrap() = Some(r.clone());
            MockReply::ok("B")
        }),
    )
    .unwrap();
    let cfg = EndpointConfig { model_name: "fixture-model".into(), ..endpoint(&server) };
    query_model(&cfg, &images, &prompt).unwrap();
    let got = seen.lock().unwrap().take().unwrap();
    let expected = parse_chat_request(&fixture).unwrap();
    assert_eq!((got.model, got.images, got.prompt), (expected.model, expected.images, expected.prompt));

    let response: Value =
        serde_json::from_str(include_str!("fixtures/chat_response.json")).unwrap();
    assert_eq!(extract_response_text(&response).unwrap(), "B");
}

#[test]
fn scoring_fixtures() {
    let ten = items(10);
    let server = MockServer::start(0, 2, answer_table(&ten, |i| i.gold.to_string())).unwrap();
    let r = evaluate(&ten, &FixedInputs, &backend(&server), None, &opts("gold")).unwrap();
    assert_eq!(r.accuracy_overall, 1.0);
    assert_eq!(r.correct, 10);

    let four = items(4);
    let server = MockServer::start(
        0,
        2,
        answer_table(&four, |i| if i.item_id == "q002" { "A".into() } else { i.gold.to_string() }),
    )
    .unwrap();
    let r = evaluate(&four, &FixedInputs, &backend(&server), None, &opts("three")).unwrap();
    assert_eq!(r.accuracy_overall, 0.75);
    assert_eq!(r.unparsable_count, 0);

    let server = MockServer::start(0, 2, answer_table(&four, |_| "zzz qqq".into())).unwrap();
    let r = evaluate(&four, &FixedInputs, &backend(&server), None, &opts("junk")).unwrap();
    assert_eq!(r.accuracy_overall, 0.0);
    assert_eq!(r.unparsable_count, 4);
}

#[test]
fn bucket_weighted_mean_equals_overall_and_order_is_irrelevant() {
    let all = items(12);
    let handler = answer_table(&all, |i| if i.item_id.ends_with(['1', '4', '7']) { "D".into() } else { i.gold.to_string() });
    let server = MockServer::start(0, 2, handler).unwrap();
    let b = backend(&server);
    let r = evaluate(&all, &FixedInputs, &b, None, &opts("x")).unwrap();
    let weighted: f64 = r.accuracy_by_bucket.values().map(|s| s.accuracy * s.n as f64).sum::<f64>() / r.n as f64;
    assert!((weighted - r.accuracy_overall).abs() < 1e-12);

    let mut reversed = all.clone();
    reversed.reverse();
    let r2 = evaluate(&reversed, &FixedInputs, &b, None, &opts("x")).unwrap();
    assert_eq!(r2.accuracy_overall, r.accuracy_overall);
    assert_eq!(r2.accuracy_by_bucket, r.accuracy_by_bucket);
}

#[test]
fn endpoint_errors_are_recorded_per_item() {
    let all = items(4);
    let target = all[1].question.clone();
    let server = MockServer::start(
        0,
        1,
        Arc::new(move |r: &ChatRequest| {
            if r.prompt.contains(&target) {
                MockReply::status(503)
            } else {
                MockReply::ok("A")
            }
        }),
    )
    .unwrap();
    let b = HttpBackend::new(EndpointConfig { max_retries: 0, ..endpoint(&server) }).unwrap();
    let r = evaluate(&all, &FixedInputs, &b, None, &opts("err")).unwrap();
    assert_eq!(r.error_count, 1);
    assert_eq!(r.n, 4);
    assert!(r.predictions[1].error.as_deref().unwrap().starts_with("EndpointError"));
    assert_eq!(r.correct, 1); // only q000 has gold A
}

#[test]
fn resumed_run_equals_uninterrupted_run() {
    let all = items(9);
    let handler = answer_table(&all, |i| if i.item_id == "q005" { "no idea".into() } else { i.gold.to_string() });
    let (handler, calls) = counting(handler);
    let server = MockServer::start(0, 2, handler).unwrap();
    let b = backend(&server);
    let dir = tempfile::tempdir().unwrap();

    let full_store = PredictionStore::open(&dir.path().join("full.jsonl")).unwrap();
    let full = evaluate(&all, &FixedInputs, &b, Some(&full_store), &opts("r")).unwrap();

    // first "process" handles a prefix and dies mid-write
    let path = dir.path().join("resumed.jsonl");
    {
        let store = PredictionStore::open(&path).unwrap();
        evaluate(&all[..4], &FixedInputs, &b, Some(&store), &opts("r")).unwrap();
    }
    let mut f = std::fs::OpenOptions::new().append(true).open(&path).unwrap();
    std::io::Write::write_all(&mut f, br#"{"item_id":"q004","raw_resp"#).unwrap();
    drop(f);

    calls.store(0, Ordering::SeqCst);
    let store = PredictionStore::open(&path).unwrap();
    assert_eq!(store.completed().len(), 4);
    let resumed = evaluate(&all, &FixedInputs, &b, Some(&store), &opts("r")).unwrap();
    assert_eq!(calls.load(Ordering::SeqCst), 5);
    assert_eq!(resumed.without_timings(), full.without_timings());
    assert_eq!(
        serde_json::to_string(&resumed.without_timings()).unwrap(),
        serde_json::to_string(&full.without_timings()).unwrap()
    );
}

#[test]
fn errored_items_are_retried_on_resume() {
    let all = items(3);
    let fail = Arc::new(std::sync::atomic::AtomicBool::new(true));
    let f = Arc::clone(&fail);
    let golds = answer_table(&all, |i| i.gold.to_string());
    let server = MockServer::start(
        0,
        1,
        Arc::new(move |r: &ChatRequest| {
            if f.load(Ordering::SeqCst) && r.prompt.contains("q001") {
                MockReply::status(500)
            } else {
                golds(r)
            }
        }),
    )
    .unwrap();
    let b = HttpBackend::new(EndpointConfig { max_retries: 0, ..endpoint(&server) }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.jsonl");
    let first = evaluate(&all, &FixedInputs, &b, Some(&PredictionStore::open(&path).unwrap()), &opts("e")).unwrap();
    assert_eq!((first.correct, first.error_count), (2, 1));
    fail.store(false, Ordering::SeqCst);
    let second = evaluate(&all, &FixedInputs, &b, Some(&PredictionStore::open(&path).unwrap()), &opts("e")).unwrap();
    assert_eq!((second.correct, second.error_count), (3, 0));
}

#[test]
fn manifests_drive_real_panel_requests() {
    let root = tempfile::tempdir().unwrap();
    let video_dir = root.path().join("clip");
    let frames = (0..40).map(|i| Frame::solid(i, 0.0, 16, 12, [(i * 6) as u8, 0, 0]));
    let mut src = write_image_directory(&video_dir, frames, 1.0).unwrap();
    let policy = SamplingPolicy::new(4, Grid { rows: 2, cols: 2 }, Gamma::FpsMultiple(1.0)).unwrap();
    let plan = plan_sampling(&policy, &src.meta).unwrap();
    assert!(plan.panel_active);
    let uri = video_dir.to_string_lossy().into_owned();
    panelize_to_dir(&mut src, &uri, &plan, Value::Null, &root.path().join("panels/clip")).unwrap();

    let index = ManifestIndex::load(&root.path().join("panels")).unwrap();
    let mut it = item("clip-q", 'C', 40.0);
    it.video_uri = "clip.mp4".into(); // resolved by file stem
    let seen = Arc::new(Mutex::new(Vec::new()));
    let s = Arc::clone(&seen);
    let server = MockServer::start(
        0,
        1,
        Arc::new(move |r: &ChatRequest| {
            s.lock().unwrap().push((r.images.len(), r.prompt.clone()));
            MockReply::ok("C")
        }),
    )
    .unwrap();
    let opts = EvalOptions {
        template: PromptTemplate::new(vidpanel::benchmark::TemplateId::GridLayout),
        ..EvalOptions::default()
    };
    let r = evaluate(&[it.clone()], &index, &backend(&server), None, &opts).unwrap();
    assert_eq!(r.accuracy_overall, 1.0);
    assert_eq!(r.predictions[0].request_images, 4);
    let (n, prompt) = seen.lock().unwrap()[0].clone();
    assert_eq!(n, 4);
    assert!(prompt.contains("divided into 2 rows and 2 columns"));

    it.video_uri = "elsewhere/unknown.mp4".into();
    let err = evaluate(&[it], &index, &backend(&server), None, &opts).unwrap_err();
    assert_eq!(err.class(), "PlanViolation");
}

#[test]
fn report_rejects_different_item_sets() {
    let a = score(&items(3), &Default::default(), &EvalOptions::default());
    let b = score(&items(4), &Default::default(), &EvalOptions::default());
    assert_eq!(compare_runs(&a, &b).unwrap_err().class(), "ReportError");

    let same = compare_runs(&a, &a).unwrap();
    assert_eq!(same.overall.delta_display, "+0.0");
    assert!(same.flipped.is_empty());
}

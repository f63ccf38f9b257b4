mod common;

use std::path::Path;
use std::process::{Command, Output};
use std::sync::Arc;

use vidpanel::benchmark::to_generic_jsonl;
use vidpanel::framesource::write_image_directory;
use vidpanel::harness::mock::{ChatRequest, MockReply, MockServer};
use vidpanel::Frame;

fn vidpanel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vidpanel"))
        .args(args)
        .env_remove("VIDPANEL_CONTEXT_WINDOW")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn plan_prints_paneling_decision() {
    let o = vidpanel(&["plan", "--frames", "5180", "--fps", "2", "--context", "32"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("panel_active=true\n"), "{out}");
    assert!(out.contains("T=128\n"), "{out}");

    let o = vidpanel(&["plan", "--frames", "5180", "--fps", "2", "--context", "32", "--baseline"]);
    assert!(stdout(&o).contains("T=32\n"));

    let o = vidpanel(&["plan", "--frames", "60", "--fps", "2", "--context", "32"]);
    assert!(stdout(&o).contains("panel_active=false\n"));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(vidpanel(&["plan", "--frames", "10", "--bogus"]).status.code(), Some(2));
    assert_eq!(vidpanel(&["nonsense"]).status.code(), Some(2));
    assert_eq!(vidpanel(&["plan", "--frames", "10", "--grid", "2by2"]).status.code(), Some(2));
}

#[test]
fn domain_errors_exit_one_with_class() {
    let empty = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let o = vidpanel(&[
        "panelize",
        empty.path().to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: EmptyVideo: "), "{}", stderr(&o));

    let o = vidpanel(&["plan", "--frames", "10", "--context", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: InvalidPolicy: "), "{}", stderr(&o));
}

#[test]
fn layered_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"policy": {"context_window": 8, "alpha": 3, "beta": 1}}"#).unwrap();
    let run = |env: Option<&str>, extra: &[&str]| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_vidpanel"));
        cmd.args(["--config", cfg.to_str().unwrap(), "plan", "--frames", "1000"]).args(extra);
        cmd.env_remove("VIDPANEL_CONTEXT_WINDOW");
        if let Some(v) = env {
            cmd.env("VIDPANEL_CONTEXT_WINDOW", v);
        }
        stdout(&cmd.output().unwrap())
    };
    assert!(run(None, &[]).contains("T=24\n"));
    assert!(run(Some("10"), &[]).contains("T=30\n"));
    assert!(run(Some("10"), &["--context", "4"]).contains("T=12\n"));
}

fn make_video(dir: &Path, frames: u64) -> String {
    let src = (0..frames).map(|i| Frame::solid(i, 0.0, 16, 12, [(i * 3) as u8, 40, 0]));
    write_image_directory(dir, src, 1.0).unwrap();
    dir.to_string_lossy().into_owned()
}

#[test]
fn panelize_eval_report_end_to_end() {
    let root = tempfile::tempdir().unwrap();
    let r = root.path();
    let uri = make_video(&r.join("clipA"), 60);
    let panels = r.join("panels");

    let out_dir = panels.join("clipA");
    let o = vidpanel(&["panelize", &uri, "--out", out_dir.to_str().unwrap(), "--context", "4"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(panels.join("clipA/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["plan"]["frames_to_sample"], 16);
    assert_eq!(manifest["config"]["policy"]["context_window"], 4);

    // rerunning the same config reproduces every artifact byte for byte
    let snapshot = || {
        let mut files: Vec<_> = std::fs::read_dir(&out_dir).unwrap().map(|e| e.unwrap().path()).collect();
        files.sort();
        files.into_iter().map(|f| std::fs::read(f).unwrap()).collect::<Vec<_>>()
    };
    let before = snapshot();
    assert_eq!(before.len(), 5);
    vidpanel(&["panelize", &uri, "--out", out_dir.to_str().unwrap(), "--context", "4"]);
    assert!(before == snapshot(), "panelize output changed between identical runs");

    let mut items = common::items(4);
    for it in &mut items {
        it.video_uri = "clipA.mp4".into();
    }
    let dataset = r.join("items.jsonl");
    std::fs::write(&dataset, to_generic_jsonl(&items).unwrap()).unwrap();

    let o = vidpanel(&[
        "eval",
        "--dataset",
        dataset.to_str().unwrap(),
        "--panels-dir",
        panels.to_str().unwrap(),
        "--run-dir",
        r.join("runs/a").to_str().unwrap(),
        "--dry-run",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("requests=4"), "{}", stdout(&o));
    assert!(stdout(&o).contains("panel_active=true"));

    let golds = common::answer_table(&items, |i| i.gold.to_string());
    let server = MockServer::start(
        0,
        2,
        Arc::new(move |req: &ChatRequest| {
            if req.images.len() != 4 {
                return MockReply::status(400);
            }
            golds(req)
        }),
    )
    .unwrap();
    let wrong = common::answer_table(&items, |i| if i.item_id == "q000" { i.gold.to_string() } else { "A".into() });
    let weak = MockServer::start(0, 2, wrong).unwrap();

    for (run, srv, template) in [("a", &weak, "default"), ("b", &server, "p1")] {
        let o = vidpanel(&[
            "eval",
            "--dataset",
            dataset.to_str().unwrap(),
            "--panels-dir",
            panels.to_str().unwrap(),
            "--endpoint",
            &srv.base_url(),
            "--template",
            template,
            "--buckets",
            "all",
            "--run-dir",
            r.join("runs").join(run).to_str().unwrap(),
            "--run-id",
            run,
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let a: serde_json::Value =
        serde_json::from_slice(&std::fs::read(r.join("runs/a/result.json")).unwrap()).unwrap();
    assert_eq!(a["accuracy_overall"], 0.25);
    assert_eq!(a["config"]["template"], "default");

    let json_out = r.join("cmp.json");
    let o = vidpanel(&[
        "report",
        "--a",
        r.join("runs/a").to_str().unwrap(),
        "--b",
        r.join("runs/b/result.json").to_str().unwrap(),
        "--json",
        json_out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = stdout(&o);
    assert!(table.contains("+75.0"), "{table}");
    assert!(table.contains("+300.0%"), "{table}");
    let cmp: serde_json::Value = serde_json::from_slice(&std::fs::read(json_out).unwrap()).unwrap();
    assert_eq!(cmp["flipped"].as_array().unwrap().len(), 3);
}

#[test]
fn simulate_prints_report() {
    let o = vidpanel(&["simulate", "--duration-frames", "64", "--context", "4", "--trials", "20", "--seed", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["trials"], 20);
    assert_eq!(report["baseline"]["analytic_expectation"], 4.0 / 64.0);
    assert_eq!(report["panels"]["analytic_expectation"], 16.0 / 64.0);
}

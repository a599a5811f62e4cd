//! End-to-end tests of the `dam` binary.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use dam_core::mask::{BBox, BinaryMask};
use dam_core::tracker::trace::{FrameRecord, Trace, TraceHeader};
use dam_core::tracker::CandidateSet;
use serde_json::Value;

fn dam(args: &[&str]) -> Output {
    dam_stdin(args, None)
}

fn dam_stdin(args: &[&str], input: Option<&str>) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_dam"))
        .args(args)
        .stdin(if input.is_some() { Stdio::piped() } else { Stdio::null() })
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    if let Some(text) = input {
        child.stdin.take().unwrap().write_all(text.as_bytes()).unwrap();
    }
    child.wait_with_output().unwrap()
}

fn ok(args: &[&str]) -> Vec<Value> {
    let out = dam(args);
    assert!(out.status.success(), "dam {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    records(&out.stdout)
}

fn records(bytes: &[u8]) -> Vec<Value> {
    std::str::from_utf8(bytes)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn of_type<'a>(recs: &'a [Value], t: &str) -> Vec<&'a Value> {
    recs.iter().filter(|r| r["type"] == t).collect()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

/// Target sits still; the other two candidates are always empty, so no
/// anchor can ever fire.
fn quiet_trace(dir: &Path) -> String {
    let (w, h) = (24, 24);
    let target = BinaryMask::rectangle(w, h, BBox::new(5, 5, 12, 12).unwrap());
    let e = BinaryMask::new(w, h);
    let frames = (1..=25u64)
        .map(|f| {
            let c = CandidateSet::new([target.clone(), e.clone(), e.clone()], [0.9, 0.2, 0.1]).unwrap();
            let mut r = FrameRecord::from_candidates(f, &c);
            r.gt_mask = Some(target.to_rle());
            r
        })
        .collect();
    let t = Trace {
        header: Some(TraceHeader::new(0, &target, None)),
        frames,
    };
    let p = path(dir, "quiet.jsonl");
    let mut buf = Vec::new();
    t.write(&mut buf).unwrap();
    std::fs::write(&p, buf).unwrap();
    p
}

fn recorded_crossing(dir: &Path) -> String {
    let p = path(dir, "crossing.jsonl");
    ok(&["record", "--scenario", "crossing", "--out", &p]);
    p
}

#[test]
fn header_carries_version_and_config() {
    let recs = ok(&["track", "--scenario", "crossing"]);
    let h = &recs[0];
    assert_eq!(h["type"], "header");
    assert_eq!(h["tool"], "dam");
    assert_eq!(h["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(h["command"], "track");
    assert_eq!(h["config"]["policy"]["delta"], 5);
    assert_eq!(h["config_digest"].as_str().unwrap().len(), 64);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = path(dir.path(), "run.toml");
    std::fs::write(&cfg, "[policy]\ndelta = 3\ntheta_anc = 0.6\n").unwrap();
    let recs = ok(&["track", "--scenario", "crossing", "--config", &cfg]);
    assert_eq!(recs[0]["config"]["policy"]["delta"], 3);
    assert_eq!(recs[0]["config"]["policy"]["theta_anc"], 0.6);
    let recs = ok(&["track", "--scenario", "crossing", "--config", &cfg, "--delta", "7"]);
    assert_eq!(recs[0]["config"]["policy"]["delta"], 7);
    assert_eq!(recs[0]["config"]["policy"]["theta_anc"], 0.6);

    std::fs::write(&cfg, "[policy]\nbogus = 1\n").unwrap();
    assert_eq!(dam(&["track", "--scenario", "crossing", "--config", &cfg]).status.code(), Some(2));
}

#[test]
fn track_trace_writes_result_file() {
    let dir = tempfile::tempdir().unwrap();
    let t = recorded_crossing(dir.path());
    let out = path(dir.path(), "r.jsonl");
    let o = dam(&["track", "--trace", &t, "--variant", "dam_full", "--out", &out]);
    assert!(o.status.success());
    assert!(o.stdout.is_empty());
    let recs = records(&std::fs::read(&out).unwrap());
    assert_eq!(of_type(&recs, "sequence").len(), 1);
    let summary = of_type(&recs, "summary")[0];
    assert_eq!(summary["drm_updates"], serde_json::json!([12]));
    let rows = recs.iter().filter(|r| r.get("frame_index").is_some()).count();
    assert_eq!(rows, 36);
}

#[test]
fn trace_and_scenario_runs_agree() {
    let dir = tempfile::tempdir().unwrap();
    let t = recorded_crossing(dir.path());
    let digest = |recs: &[Value]| of_type(recs, "summary")[0]["digest"].clone();
    let a = ok(&["track", "--trace", &t]);
    let b = ok(&["track", "--scenario", "crossing"]);
    assert_eq!(digest(&a), digest(&b));
}

#[test]
fn missing_trace_fails_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path(), "r.jsonl");
    let o = dam(&["track", "--trace", "/nonexistent/t.jsonl", "--out", &out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&o.stderr).is_empty());
    assert!(!Path::new(&out).exists());
}

#[test]
fn malformed_trace_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let t = path(dir.path(), "bad.jsonl");
    std::fs::write(&t, "{\"frame_index\": 1}\nnot json\n").unwrap();
    assert_eq!(dam(&["track", "--trace", &t]).status.code(), Some(2));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(dam(&[]).status.code(), Some(1));
    assert_eq!(dam(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(dam(&["track", "--scenario", "crossing", "--variant", "nope"]).status.code(), Some(1));
    assert_eq!(dam(&["--help"]).status.code(), Some(0));
    assert_eq!(dam(&["--version"]).status.code(), Some(0));
}

#[test]
fn self_eval_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let r = path(dir.path(), "r.jsonl");
    ok(&["track", "--scenario", "crossing", "--out", &r]);
    let recs = ok(&["eval", "--result", &r, "--gt", &r]);
    let s = of_type(&recs, "sequence")[0];
    assert_eq!((s["quality"].as_f64(), s["accuracy"].as_f64(), s["robustness"].as_f64()), (Some(1.0), Some(1.0), Some(1.0)));
    assert_eq!(of_type(&recs, "aggregate").len(), 1);
}

#[test]
fn eval_separates_dam_from_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let rd = path(dir.path(), "dam.jsonl");
    let rb = path(dir.path(), "base.jsonl");
    ok(&["track", "--scenario", "crossing", "--variant", "dam_full", "--out", &rd]);
    ok(&["track", "--scenario", "crossing", "--variant", "sam21_baseline", "--out", &rb]);
    let recs = ok(&["eval", "--result", &rd, "--gt", "scenario:crossing", "--result", &rb, "--gt", "scenario:crossing", "--ar-table"]);
    let seqs = of_type(&recs, "sequence");
    let (d, b) = (seqs[0]["robustness"].as_f64().unwrap(), seqs[1]["robustness"].as_f64().unwrap());
    assert_eq!(d, 1.0);
    assert!(d > b, "{d} vs {b}");
    assert_eq!(of_type(&recs, "ar").len(), 2);

    // trace ground truth gives the same numbers
    let t = recorded_crossing(dir.path());
    let again = ok(&["eval", "--result", &rd, "--gt", &t]);
    assert_eq!(of_type(&again, "sequence")[0]["robustness"], seqs[0]["robustness"]);
}

#[test]
fn eval_metric_set() {
    let dir = tempfile::tempdir().unwrap();
    let r = path(dir.path(), "r.jsonl");
    ok(&["track", "--scenario", "crossing", "--out", &r]);
    let recs = ok(&["eval", "--result", &r, "--gt", &r, "--metrics", "auc"]);
    let s = of_type(&recs, "sequence")[0].as_object().unwrap();
    assert!(s.contains_key("auc") && !s.contains_key("quality"));
    assert_eq!(dam(&["eval", "--result", &r, "--gt", &r, "--metrics", ""]).status.code(), Some(1));
    assert_eq!(dam(&["eval", "--result", &r, "--gt", &r, "--metrics", "bogus"]).status.code(), Some(1));
}

#[test]
fn eval_rejects_misaligned_gt() {
    let dir = tempfile::tempdir().unwrap();
    let r = path(dir.path(), "r.jsonl");
    ok(&["track", "--scenario", "crossing", "--out", &r]);
    let q = quiet_trace(dir.path());
    assert_eq!(dam(&["eval", "--result", &r, "--gt", &q]).status.code(), Some(2));
}

#[test]
fn ablate_suite_table() {
    let recs = ok(&["ablate", "--scenario", "suite", "--suite-size", "6", "--workers", "2"]);
    let rows = of_type(&recs, "variant");
    let names: Vec<&str> = rows.iter().map(|r| r["variant"].as_str().unwrap()).collect();
    assert_eq!(names, ["sam21_baseline", "pres", "delta_only", "drm1", "drm2", "dam_full", "drm_tenc", "ram_no_last"]);
    let rob = |n: &str| rows.iter().find(|r| r["variant"] == n).unwrap()["robustness"].as_f64().unwrap();
    let best = rows.iter().map(|r| r["robustness"].as_f64().unwrap()).fold(0.0, f64::max);
    assert_eq!(rob("dam_full"), best);
    assert!(rob("dam_full") > rob("sam21_baseline"));

    let one = ok(&["ablate", "--scenario", "crossing", "--variants", "drm2"]);
    assert_eq!(of_type(&one, "variant").len(), 1);
    assert_eq!(dam(&["ablate", "--scenario", "crossing", "--variants", "xx"]).status.code(), Some(1));
}

#[test]
fn ablate_is_independent_of_workers() {
    let a = dam(&["ablate", "--scenario", "suite", "--suite-size", "4", "--workers", "1"]);
    let b = dam(&["ablate", "--scenario", "suite", "--suite-size", "4", "--workers", "4"]);
    let strip = |o: &Output| records(&o.stdout).into_iter().skip(1).collect::<Vec<_>>();
    assert_eq!(strip(&a), strip(&b));
}

#[test]
fn sweep_range_and_constant_curve() {
    let recs = ok(&["sweep", "--scenario", "crossing", "--param", "theta_anc", "--range", "0.5:0.95:0.05"]);
    let rows = of_type(&recs, "sweep");
    assert_eq!(rows.len(), 10);
    assert_eq!(rows[0]["value"], 0.5);
    assert_eq!(rows[9]["value"], 0.95);

    let dir = tempfile::tempdir().unwrap();
    let q = quiet_trace(dir.path());
    let recs = ok(&["sweep", "--trace", &q, "--param", "theta_anc", "--range", "0.1:0.9:0.1"]);
    let rows = of_type(&recs, "sweep");
    assert_eq!(rows.len(), 9);
    assert!(rows.windows(2).all(|w| w[0]["ao"] == w[1]["ao"] && w[0]["quality"] == w[1]["quality"]));

    assert_eq!(dam(&["sweep", "--scenario", "crossing", "--param", "theta_anc", "--range", "0.5:0.9:0"]).status.code(), Some(1));
    assert_eq!(dam(&["sweep", "--scenario", "crossing", "--param", "delta", "--range", "1:2:1"]).status.code(), Some(1));
}

#[test]
fn rt_skip_pattern() {
    let dir = tempfile::tempdir().unwrap();
    let t = recorded_crossing(dir.path());
    let recs = ok(&["rt", "--trace", &t, "--fps", "20", "--latency-ms", "75"]);
    let rows: Vec<&Value> = recs.iter().filter(|r| r.get("frame_index").is_some()).skip(1).collect();
    for r in &rows {
        let even = r["frame_index"].as_u64().unwrap() % 2 == 0;
        assert_eq!(r.get("skipped").and_then(Value::as_bool).unwrap_or(false), even, "{r}");
    }

    let inf = ok(&["rt", "--trace", &t, "--fps", "inf", "--latency-ms", "500"]);
    let offline = ok(&["track", "--trace", &t]);
    assert_eq!(of_type(&inf, "summary")[0]["digest"], of_type(&offline, "summary")[0]["digest"]);

    let lat = path(dir.path(), "lat.txt");
    std::fs::write(&lat, vec!["10"; 35].join("\n")).unwrap();
    let listed = ok(&["rt", "--trace", &t, "--fps", "20", "--latency-file", &lat]);
    assert_eq!(of_type(&listed, "summary")[0]["digest"], of_type(&offline, "summary")[0]["digest"]);

    std::fs::write(&lat, "10\n10\n").unwrap();
    assert_eq!(dam(&["rt", "--trace", &t, "--latency-file", &lat]).status.code(), Some(2));
    assert_eq!(dam(&["rt", "--trace", &t, "--fps", "0"]).status.code(), Some(2));
}

#[test]
fn distill_manifest() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("half.txt"), "3 2 2\n1 0\n1 0\n0 1\n1 0\n0 -1\n0 -1\n").unwrap();
    std::fs::write(dir.path().join("full.txt"), "3 2 2\n1 0\n1 0\n0 1\n1 0\n1 0\n0 -1\n").unwrap();
    let manifest = path(dir.path(), "m.jsonl");
    std::fs::write(
        &manifest,
        [
            r#"{"sequence":"a","frame_index":0,"features":"half.txt","gt_rle":[0,3,3]}"#,
            r#"{"sequence":"a","frame_index":1,"features":"full.txt","gt_box":[0,0,30,10],"image_size":[30,20]}"#,
            r#"{"sequence":"a","frame_index":2,"features":"half.txt","gt_rle":[0,3,3]}"#,
            r#"{"sequence":"b","frame_index":0,"features":"half.txt","gt_rle":[0,3,3]}"#,
        ]
        .join("\n"),
    )
    .unwrap();
    let recs = ok(&["distill", "--manifest", &manifest]);
    let frames = of_type(&recs, "frame");
    assert_eq!(frames.len(), 4);
    assert_eq!(frames[0]["ratio"], 0.5);
    assert_eq!(frames[0]["has_distractor"], false);
    assert_eq!(frames[1]["ratio"], 1.0);
    assert_eq!(frames[1]["has_distractor"], true);
    assert_eq!(of_type(&recs, "selected")[0]["sequences"], serde_json::json!(["a"]));

    // a stricter frame fraction drops sequence a (1 of 3 frames flagged)
    let strict = ok(&["distill", "--manifest", &manifest, "--frame-fraction", "0.5"]);
    assert_eq!(of_type(&strict, "selected")[0]["sequences"], serde_json::json!([]));

    let bad = path(dir.path(), "bad.jsonl");
    std::fs::write(&bad, r#"{"sequence":"a","frame_index":0,"features":"missing.txt","gt_rle":[0,3,3]}"#).unwrap();
    assert_eq!(dam(&["distill", "--manifest", &bad]).status.code(), Some(2));
}

#[test]
fn record_then_replay() {
    let dir = tempfile::tempdir().unwrap();
    let t = recorded_crossing(dir.path());
    let trace = Trace::read(std::io::BufReader::new(std::fs::File::open(&t).unwrap())).unwrap();
    assert_eq!(trace.frames.len(), 35);
    assert!(trace.header.unwrap().source.unwrap().starts_with("scenario:crossing"));
    assert!(trace.frames.iter().all(|f| f.gt_mask.is_some()));
}

#[test]
fn serve_trace_answers_and_survives_errors() {
    let dir = tempfile::tempdir().unwrap();
    let t = recorded_crossing(dir.path());
    let session = [
        r#"{"type":"predict","frame_index":1,"memory_view":[]}"#,
        r#"{"type":"init","width":96,"height":64,"init_rle":[6144],"config":null}"#,
        "garbage",
        r#"{"type":"predict","frame_index":1,"memory_view":[]}"#,
        r#"{"type":"predict","frame_index":999,"memory_view":[]}"#,
        r#"{"type":"shutdown"}"#,
    ]
    .join("\n");
    let out = dam_stdin(&["serve-trace", "--trace", &t], Some(&session));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let replies = records(&out.stdout);
    let kinds: Vec<&str> = replies.iter().map(|r| r["type"].as_str().unwrap()).collect();
    assert_eq!(kinds, ["error", "error", "prediction", "error"]);
    assert_eq!(replies[2]["candidates"].as_array().unwrap().len(), 3);
}

#[test]
fn track_through_bridge_matches_offline() {
    let dir = tempfile::tempdir().unwrap();
    let t = recorded_crossing(dir.path());
    let exe = PathBuf::from(env!("CARGO_BIN_EXE_dam")).display().to_string();
    let bridged = ok(&[
        "track", "--trace", &t, "--bridge", &exe, "--bridge-arg", "serve-trace", "--bridge-arg", "--trace", "--bridge-arg", &t,
    ]);
    let offline = ok(&["track", "--trace", &t]);
    assert_eq!(of_type(&bridged, "summary")[0]["digest"], of_type(&offline, "summary")[0]["digest"]);
}

#[test]
fn bridge_failure_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let t = recorded_crossing(dir.path());
    let o = dam(&["track", "--trace", &t, "--bridge", "/nonexistent/bridge"]);
    assert!(!o.status.success());
    assert!(!String::from_utf8_lossy(&o.stderr).is_empty());
}

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::inputs::{self, load_gt, load_result, load_scenario, load_sequences, write_result, Sequence};
use super::{apply_policy_args, base_config, usage, AblateArgs, CliError, DistillArgs, EvalArgs, Output, RecordArgs, RtArgs, ServeArgs, SweepArgs, TrackArgs};
use crate::config::RunConfig;
use crate::distill::{self, FeatureMap, ScoreMode};
use crate::error::Error;
use crate::mask::BinaryMask;
use crate::metrics::{self, EvalSummary};
use crate::policy::{PolicyConfig, Variant};
use crate::tracker::protocol::{self, BridgePredictor};
use crate::tracker::realtime::{Budget, LatencyModel};
use crate::tracker::sim::{self, BlobScenario};
use crate::tracker::trace::Trace;

type CmdResult = Result<(Output, Option<PathBuf>), CliError>;

fn pool(workers: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {workers} workers: {e}")))
}

fn single(mut seqs: Vec<Sequence>, what: &str) -> Result<Sequence, CliError> {
    if seqs.len() != 1 {
        return usage(format!("{what} takes exactly one sequence, got {}", seqs.len()));
    }
    Ok(seqs.pop().unwrap())
}

fn finish(cfg: &RunConfig, out: Output) -> CmdResult {
    Ok((out, cfg.io.out.clone()))
}

pub(super) fn track(a: TrackArgs) -> CmdResult {
    let mut cfg = base_config(&a.common)?;
    apply_policy_args(&mut cfg, &a.policy);
    cfg.validate()?;
    let seq = single(load_sequences(&a.input)?, "track")?;

    let result = match &a.bridge {
        None => seq.run(cfg.policy, cfg.bank),
        Some(program) => {
            let init = seq.init_mask();
            let conf = serde_json::json!({ "policy": cfg.policy, "bank": cfg.bank });
            let mut bridge = BridgePredictor::spawn(program, &a.bridge_args, &init, conf)?;
            let r = seq.run_with(&mut bridge, cfg.policy, cfg.bank);
            bridge.close()?;
            r
        }
    }
    .map_err(|e| e.in_file(seq.name()))?;

    let mut out = Output::new("track", &cfg);
    write_result(&mut out, seq.name(), &result);
    finish(&cfg, out)
}

const METRIC_NAMES: [(&str, &str); 6] = [
    ("quality", "quality"),
    ("accuracy", "accuracy"),
    ("robustness", "robustness"),
    ("auc", "auc"),
    ("ao", "ao"),
    ("failed", "failed_frames"),
];

fn parse_metric_set(s: &str) -> Result<Vec<&'static str>, CliError> {
    let mut keys = Vec::new();
    for name in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        match METRIC_NAMES.iter().find(|(n, _)| *n == name) {
            Some((_, key)) if !keys.contains(key) => keys.push(*key),
            Some(_) => {}
            None => return usage(format!("unknown metric `{name}`")),
        }
    }
    if keys.is_empty() {
        return usage("empty metric set");
    }
    Ok(keys)
}

fn metric_record(kind: &str, name: &str, s: &EvalSummary, keys: &[&str]) -> serde_json::Value {
    let all = serde_json::to_value(s).expect("summary serializes");
    let mut m = serde_json::Map::new();
    m.insert("type".into(), kind.into());
    m.insert("name".into(), name.into());
    m.insert("frames_evaluated".into(), s.frames_evaluated.into());
    for k in keys {
        m.insert((*k).into(), all[*k].clone());
    }
    serde_json::Value::Object(m)
}

/// Pairs tracked frames of a result with ground truth by frame index.
fn align(
    name: &str,
    frames: &[u64],
    pred: Vec<BinaryMask>,
    gt: Vec<(u64, BinaryMask)>,
) -> Result<(Vec<BinaryMask>, Vec<BinaryMask>), Error> {
    let gt_frames: Vec<u64> = gt.iter().map(|(f, _)| *f).collect();
    if gt_frames != frames {
        return Err(Error::Invalid(format!(
            "{name}: result covers {} frames, ground truth {}; frame indices must match",
            frames.len(),
            gt_frames.len()
        )));
    }
    Ok((pred, gt.into_iter().map(|(_, m)| m).collect()))
}

pub(super) fn eval(a: EvalArgs) -> CmdResult {
    let mut cfg = base_config(&a.common)?;
    if let Some(s) = a.success_iou {
        cfg.metrics.success_iou = s;
    }
    cfg.validate()?;
    let keys = parse_metric_set(&a.metrics)?;
    if a.result.len() != a.gt.len() {
        return usage(format!(
            "{} result files but {} ground-truth sources",
            a.result.len(),
            a.gt.len()
        ));
    }

    let pool = pool(cfg.workers)?;
    let summaries: Vec<(String, EvalSummary)> = pool.install(|| {
        a.result
            .par_iter()
            .zip(a.gt.par_iter())
            .map(|(rp, gspec)| {
                let r = load_result(rp)?;
                let frames: Vec<u64> = r.result.rows.iter().skip(1).map(|r| r.frame_index).collect();
                let pred: Vec<BinaryMask> = r.result.masks()?.into_iter().skip(1).collect();
                let (pred, gt) = align(&r.name, &frames, pred, load_gt(gspec)?)?;
                let s = metrics::evaluate(&pred, &gt, &cfg.metrics).map_err(|e| e.in_file(rp.display().to_string()))?;
                Ok((r.name, s))
            })
            .collect::<Result<_, Error>>()
    })?;

    let mut out = Output::new("eval", &cfg);
    for (name, s) in &summaries {
        out.record(&metric_record("sequence", name, s, &keys));
    }
    let all: Vec<EvalSummary> = summaries.iter().map(|(_, s)| *s).collect();
    out.record(&metric_record("aggregate", "all", &metrics::aggregate(&all)?, &keys));
    if a.ar_table {
        for (name, s) in &summaries {
            out.record(&serde_json::json!({
                "type": "ar",
                "name": name,
                "accuracy": s.accuracy,
                "robustness": s.robustness,
            }));
        }
    }
    finish(&cfg, out)
}

fn score_sequence(seq: &Sequence, policy: PolicyConfig, cfg: &RunConfig) -> Result<(EvalSummary, Option<usize>), Error> {
    let r = seq.run(policy, cfg.bank).map_err(|e| e.in_file(seq.name()))?;
    let pred: Vec<BinaryMask> = r.masks()?.into_iter().skip(1).collect();
    let summary = metrics::evaluate(&pred, &seq.gt()?, &cfg.metrics)?;
    let switches = match seq {
        Sequence::Scenario(sc) => Some(sc.identity_switches(&r)?),
        Sequence::Trace { .. } => None,
    };
    Ok((summary, switches))
}

#[derive(Serialize)]
struct VariantRow {
    #[serde(rename = "type")]
    kind: &'static str,
    variant: Variant,
    sequences: usize,
    quality: f64,
    accuracy: f64,
    robustness: f64,
    auc: f64,
    ao: f64,
    failed_frames: usize,
    frames: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    identity_switches: Option<usize>,
}

fn parse_variants(s: Option<&str>) -> Result<Vec<Variant>, CliError> {
    let Some(s) = s else {
        return Ok(Variant::ALL.to_vec());
    };
    let mut out = Vec::new();
    for t in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let v: Variant = t.parse().map_err(|e: Error| CliError::Usage(e.to_string()))?;
        if !out.contains(&v) {
            out.push(v);
        }
    }
    if out.is_empty() {
        return usage("no variants given");
    }
    Ok(out)
}

pub(super) fn ablate(a: AblateArgs) -> CmdResult {
    let mut cfg = base_config(&a.common)?;
    apply_policy_args(&mut cfg, &a.policy);
    cfg.validate()?;
    let variants = parse_variants(a.variants.as_deref())?;
    let seqs = load_sequences(&a.input)?;

    let jobs: Vec<(usize, usize)> = (0..variants.len())
        .flat_map(|v| (0..seqs.len()).map(move |s| (v, s)))
        .collect();
    let scored: Vec<(EvalSummary, Option<usize>)> = pool(cfg.workers)?.install(|| {
        jobs.par_iter()
            .map(|&(v, s)| {
                let policy = PolicyConfig {
                    variant: variants[v],
                    ..cfg.policy
                };
                score_sequence(&seqs[s], policy, &cfg)
            })
            .collect::<Result<_, Error>>()
    })?;

    let mut out = Output::new("ablate", &cfg);
    for (vi, chunk) in scored.chunks(seqs.len()).enumerate() {
        let sums: Vec<EvalSummary> = chunk.iter().map(|(s, _)| *s).collect();
        let agg = metrics::aggregate(&sums)?;
        let switches = chunk.iter().map(|(_, w)| *w).sum::<Option<usize>>();
        out.record(&VariantRow {
            kind: "variant",
            variant: variants[vi],
            sequences: seqs.len(),
            quality: agg.quality,
            accuracy: agg.accuracy,
            robustness: agg.robustness,
            auc: agg.auc,
            ao: agg.ao,
            failed_frames: agg.failed_frames,
            frames: agg.frames_evaluated,
            identity_switches: switches,
        });
    }
    finish(&cfg, out)
}

/// `start:stop:step`, stop inclusive (within rounding).
pub(crate) fn parse_range(s: &str) -> Result<Vec<f64>, CliError> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .or_else(|_| usage(format!("range `{s}` is not start:stop:step")))?;
    let [start, stop, step] = parts[..] else {
        return usage(format!("range `{s}` is not start:stop:step"));
    };
    if !(start.is_finite() && stop.is_finite() && step.is_finite()) {
        return usage("range bounds must be finite");
    }
    if step <= 0.0 {
        return usage(format!("range step must be positive, got {step}"));
    }
    if stop < start {
        return usage(format!("range stop {stop} is below start {start}"));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..n)
        .map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12)
        .collect())
}

pub(super) fn sweep(a: SweepArgs) -> CmdResult {
    let mut cfg = base_config(&a.common)?;
    apply_policy_args(&mut cfg, &a.policy);
    cfg.validate()?;
    let setter: fn(&mut PolicyConfig, f64) = match a.param.as_str() {
        "theta_anc" => |p, v| p.theta_anc = v,
        "theta_iou" => |p, v| p.theta_iou = v,
        "theta_area" => |p, v| p.theta_area = v,
        other => return usage(format!("unknown sweep parameter `{other}`")),
    };
    let values = parse_range(&a.range)?;
    let policies: Vec<PolicyConfig> = values
        .iter()
        .map(|&v| {
            let mut p = cfg.policy;
            setter(&mut p, v);
            p.validate().map(|_| p)
        })
        .collect::<Result<_, Error>>()?;
    let seqs = load_sequences(&a.input)?;

    let jobs: Vec<(usize, usize)> = (0..policies.len())
        .flat_map(|v| (0..seqs.len()).map(move |s| (v, s)))
        .collect();
    let scored: Vec<EvalSummary> = pool(cfg.workers)?.install(|| {
        jobs.par_iter()
            .map(|&(v, s)| score_sequence(&seqs[s], policies[v], &cfg).map(|(e, _)| e))
            .collect::<Result<_, Error>>()
    })?;

    let mut out = Output::new("sweep", &cfg);
    for (value, chunk) in values.iter().zip(scored.chunks(seqs.len())) {
        let agg = metrics::aggregate(chunk)?;
        out.record(&serde_json::json!({
            "type": "sweep",
            "param": a.param,
            "value": value,
            "ao": agg.ao,
            "quality": agg.quality,
            "robustness": agg.robustness,
        }));
    }
    finish(&cfg, out)
}

fn read_latency_file(path: &Path) -> Result<Vec<f64>, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path.display().to_string()))?;
    text.split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::Invalid(format!("bad latency `{t}`")).in_file(path.display().to_string()))
        })
        .collect()
}

pub(super) fn rt(a: RtArgs) -> CmdResult {
    let mut cfg = base_config(&a.common)?;
    apply_policy_args(&mut cfg, &a.policy);
    if let Some(f) = a.fps {
        cfg.rt.fps = f;
    }
    if let Some(ms) = a.latency_ms {
        cfg.rt.latency = LatencyModel::Constant { ms };
    }
    if let Some(p) = &a.latency_file {
        cfg.rt.latency = LatencyModel::PerFrame {
            ms: read_latency_file(p)?,
        };
    }
    if let Some(s) = &a.latency_normal {
        let Some((mean, std)) = s
            .split_once(',')
            .and_then(|(m, d)| Some((m.trim().parse().ok()?, d.trim().parse().ok()?)))
        else {
            return usage(format!("--latency-normal expects mean,std, got `{s}`"));
        };
        cfg.rt.latency = LatencyModel::Normal {
            mean,
            std,
            seed: cfg.seed,
        };
    }
    cfg.validate()?;
    let seq = single(load_sequences(&a.input)?, "rt")?;
    let latencies = cfg.rt.latency.latencies(seq.frames().len())?;
    let budget = if cfg.rt.fps.is_infinite() {
        Budget::Unlimited
    } else {
        Budget::Fps(cfg.rt.fps)
    };
    let result = seq
        .run_rt(&latencies, budget, cfg.policy, cfg.bank)
        .map_err(|e| e.in_file(seq.name()))?;
    let mut out = Output::new("rt", &cfg);
    write_result(&mut out, seq.name(), &result);
    finish(&cfg, out)
}

/// One line of a distill manifest.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    sequence: String,
    frame_index: u64,
    /// Feature file; `.txt` files use the text form, anything else binary.
    features: PathBuf,
    /// Target mask on the feature grid.
    #[serde(default)]
    gt_rle: Option<Vec<u64>>,
    /// Target box `[x_min, y_min, x_max, y_max]` in image coordinates.
    #[serde(default)]
    gt_box: Option<[f64; 4]>,
    /// Image `[width, height]` the box refers to; the grid size when absent.
    #[serde(default)]
    image_size: Option<[f64; 2]>,
}

fn load_features(path: &Path) -> Result<FeatureMap, Error> {
    let r = inputs::open(path)?;
    let f = if path.extension().is_some_and(|e| e == "txt") {
        FeatureMap::read_text(r)
    } else {
        FeatureMap::read_binary(r)
    };
    f.map_err(|e| e.in_file(path.display().to_string()))
}

fn distill_frame(e: &ManifestEntry, base: &Path, cfg: &distill::DistillConfig) -> Result<distill::FrameVerdict, Error> {
    let f = load_features(&base.join(&e.features))?;
    let gt = match (&e.gt_rle, e.gt_box) {
        (Some(rle), _) => BinaryMask::from_rle(f.width(), f.height(), rle)?,
        (None, Some(b)) => {
            let size = e
                .image_size
                .map_or((f.width() as f64, f.height() as f64), |[w, h]| (w, h));
            distill::rasterize_box(b, size, f.width(), f.height())
        }
        (None, None) => return Err(Error::Invalid("frame has neither gt_rle nor gt_box".into())),
    };
    distill::classify_frame(&f, &gt, cfg)
}

pub(super) fn distill(a: DistillArgs) -> CmdResult {
    let mut cfg = base_config(&a.common)?;
    if let Some(v) = a.ratio_threshold {
        cfg.distill.ratio_threshold = v;
    }
    if let Some(v) = a.frame_fraction {
        cfg.distill.frame_fraction = v;
    }
    if a.distance {
        cfg.distill.mode = ScoreMode::Distance;
    }
    cfg.validate()?;
    let Some(manifest) = a.manifest.clone().or_else(|| cfg.io.input.clone()) else {
        return usage("distill needs --manifest");
    };
    let base = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let text = std::fs::read_to_string(&manifest).map_err(|e| Error::from(e).in_file(manifest.display().to_string()))?;
    let entries: Vec<ManifestEntry> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::Invalid(format!("line {}: {e}", i + 1)).in_file(manifest.display().to_string()))
        })
        .collect::<Result<_, _>>()?;
    if entries.is_empty() {
        return Err(Error::EmptyInput("manifest lists no frames").in_file(manifest.display().to_string()).into());
    }

    let verdicts: Vec<distill::FrameVerdict> = pool(cfg.workers)?.install(|| {
        entries
            .par_iter()
            .map(|e| {
                distill_frame(e, &base, &cfg.distill)
                    .map_err(|err| err.in_file(format!("{} frame {}", e.sequence, e.frame_index)))
            })
            .collect::<Result<_, Error>>()
    })?;

    let mut out = Output::new("distill", &cfg);
    let mut order: Vec<&str> = Vec::new();
    let mut flags: BTreeMap<&str, Vec<bool>> = BTreeMap::new();
    for (e, v) in entries.iter().zip(&verdicts) {
        out.record(&serde_json::json!({
            "type": "frame",
            "sequence": e.sequence,
            "frame_index": e.frame_index,
            "has_distractor": v.has_distractor,
            "theta": v.theta,
            "n_in": v.n_in,
            "n_out": v.n_out,
            "ratio": v.ratio,
        }));
        if !flags.contains_key(e.sequence.as_str()) {
            order.push(&e.sequence);
        }
        flags.entry(&e.sequence).or_default().push(v.has_distractor);
    }
    let mut selected = Vec::new();
    for name in order {
        let f = &flags[name];
        let sel = distill::sequence_selected(f, &cfg.distill)?;
        out.record(&serde_json::json!({
            "type": "sequence",
            "sequence": name,
            "frames": f.len(),
            "flagged": f.iter().filter(|x| **x).count(),
            "selected": sel,
        }));
        if sel {
            selected.push(name);
        }
    }
    out.record(&serde_json::json!({ "type": "selected", "sequences": selected }));
    finish(&cfg, out)
}

fn scenario_from(spec: &str) -> Result<BlobScenario, CliError> {
    Ok(load_scenario(spec)?)
}

pub(super) fn record(a: RecordArgs) -> CmdResult {
    let mut cfg = base_config(&a.common)?;
    apply_policy_args(&mut cfg, &a.policy);
    cfg.validate()?;
    let sc = scenario_from(&a.scenario)?;
    let (_, mut trace) = sim::record_scenario(&sc, cfg.policy, cfg.bank)?;
    if let Some(h) = &mut trace.header {
        h.source = Some(format!(
            "scenario:{} variant={} config={}",
            sc.name,
            cfg.policy.variant,
            cfg.digest()
        ));
    }
    let mut out = Output::raw();
    out.trace(&trace)?;
    finish(&cfg, out)
}

pub(super) fn serve_trace(a: ServeArgs) -> Result<(), CliError> {
    let trace: Trace = inputs::load_trace(&a.trace)?;
    let stdin = std::io::stdin().lock();
    let stdout = std::io::stdout().lock();
    protocol::serve_trace(&trace, stdin, stdout)?;
    Ok(())
}

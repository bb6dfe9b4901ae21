use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use indexmap::IndexSet;
use lidarpost::assigner::{adaptive_assign, fixed_assign, AnchorLabel};
use lidarpost::config::Config;
use lidarpost::ensemble::{
    box_vote_with, ensemble_pair_frames_with, grid_search_weight_frames_with, merge_sources, nms_classwise,
    soft_nms_indexed, ClassThresholds, DetectionSet,
};
use lidarpost::io::{read_boxes, read_points, write_boxes, write_jsonl, write_points, FrameMap};
use lidarpost::metrics::{
    average_precision, match_frame_with, mota_motp_with, split_difficulty, ApResult, DifficultyLevel, EvalConfig,
    MatchLedger,
};
use lidarpost::pointcloud::{apply_augmentation, concat_frames, crop_range, sample_augmentation};
use lidarpost::tracker::Tracker;
use lidarpost::voxelizer::{voxelize, VoxelMode};
use lidarpost::{Box3, Label};
use rayon::prelude::*;
use serde_json::json;

use crate::{AssignModeArg, CliResult, Command, Failure, LevelArg, Shared, VoxelModeArg};

type Sets = Vec<DetectionSet<f64>>;

pub(crate) fn dispatch(cmd: &Command, shared: &Shared, cfg: &Config) -> CliResult<String> {
    let start = Instant::now();
    let mut summary = match cmd {
        Command::Concat {
            current,
            previous,
            delta,
            crop,
            augment,
        } => concat(shared, cfg, current, previous, *delta, *crop, *augment)?,
        Command::Voxelize { input, channels, mode } => voxelize_cmd(shared, cfg, input, *channels, *mode)?,
        Command::Assign {
            anchors,
            gt,
            mode,
            pos_iou,
            neg_iou,
            top_k,
        } => assign(shared, cfg, anchors, gt, *mode, *pos_iou, *neg_iou, *top_k)?,
        Command::Nms { input, iou } => nms_cmd(shared, cfg, input, *iou)?,
        Command::SoftNms {
            input,
            sigma,
            score_floor,
        } => soft_nms_cmd(shared, cfg, input, *sigma, *score_floor)?,
        Command::Vote {
            input,
            kept,
            iou,
            vote_iou,
        } => vote(shared, cfg, input, kept.as_deref(), *iou, *vote_iou)?,
        Command::Ensemble { input, gt, iou, vote } => ensemble(shared, cfg, input, gt.as_deref(), *iou, *vote)?,
        Command::Track { input } => track(shared, cfg, input)?,
        Command::EvalDet {
            dets,
            gt,
            level,
            pr_csv,
        } => eval_det(shared, cfg, dets, gt, *level, pr_csv.as_deref())?,
        Command::EvalMot { tracks, gt, iou } => eval_mot(shared, cfg, tracks, gt, *iou)?,
        Command::DefaultConfig => {
            let text = Config::default().to_json_pretty();
            if let Some(out) = &shared.output {
                write_text(out, &format!("{text}\n"))?;
            }
            return Ok(text);
        }
    };
    // Reports are one key=value per line; one-line summaries stay on one line.
    let sep = if summary.contains('\n') { '\n' } else { ' ' };
    let _ = write!(summary, "{sep}elapsed_ms={:.3}", start.elapsed().as_secs_f64() * 1e3);
    Ok(summary)
}

fn output(shared: &Shared) -> CliResult<&Path> {
    shared
        .output
        .as_deref()
        .ok_or_else(|| Failure::Usage("this command needs --output".into()))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| Failure::Internal(format!("cannot write {}: {e}", path.display())))
}

fn load_boxes(path: &Path, class: Option<Label>) -> CliResult<FrameMap<f64>> {
    let mut frames = read_boxes::<f64>(path)?;
    if let Some(label) = class {
        for set in frames.values_mut() {
            set.boxes.retain(|b| b.label == label);
        }
    }
    Ok(frames)
}

fn thresholds(cfg: &Config, iou: Option<f64>) -> CliResult<ClassThresholds<f64>> {
    match iou {
        Some(v) if !(0.0..=1.0).contains(&v) => Err(Failure::Usage(format!("--iou {v} outside [0, 1]"))),
        Some(v) => Ok(ClassThresholds::uniform(v)),
        None => Ok(cfg.ensemble.nms_iou),
    }
}

fn box_count(sets: &[DetectionSet<f64>]) -> usize {
    sets.iter().map(DetectionSet::len).sum()
}

/// Frame ids in first-appearance order over several files.
fn frame_order<'a>(maps: impl IntoIterator<Item = &'a FrameMap<f64>>) -> Vec<String> {
    let mut ids: IndexSet<String> = IndexSet::new();
    for m in maps {
        ids.extend(m.keys().cloned());
    }
    ids.into_iter().collect()
}

/// One set per id, empty where the file has no boxes for that frame.
fn aligned(ids: &[String], map: &FrameMap<f64>, source_id: u32) -> Sets {
    ids.iter()
        .map(|id| {
            let mut set = map
                .get(id)
                .cloned()
                .unwrap_or_else(|| DetectionSet::new(id.clone(), Vec::new()));
            set.source_id = source_id;
            set
        })
        .collect()
}

fn concat(
    shared: &Shared,
    cfg: &Config,
    current: &Path,
    previous: &Path,
    delta: Option<f64>,
    crop: bool,
    augment: bool,
) -> CliResult<String> {
    let out = output(shared)?;
    let cur = read_points::<f64>(current, 4)?;
    let prev = read_points::<f64>(previous, 4)?;
    let delta = delta.unwrap_or(cfg.pointcloud.frame_delta);
    let mut cloud = concat_frames(&cur, &prev, delta)?;
    if crop {
        cloud = crop_range(&cloud, &cfg.pointcloud.range);
    }
    if augment {
        let aug = sample_augmentation::<f64>(shared.seed);
        cloud = apply_augmentation(&cloud, &[], &aug)?.0;
    }
    write_points(out, &cloud, 5)?;
    Ok(format!(
        "concat: current={} previous={} written={} delta={delta}",
        cur.len(),
        prev.len(),
        cloud.len()
    ))
}

fn voxelize_cmd(shared: &Shared, cfg: &Config, input: &Path, channels: usize, mode: VoxelModeArg) -> CliResult<String> {
    let cloud = read_points::<f64>(input, channels)?;
    let mode = match mode {
        VoxelModeArg::Hard => VoxelMode::Hard,
        VoxelModeArg::Dynamic => VoxelMode::Dynamic,
    };
    let grid = voxelize(&cloud, &cfg.voxelizer, mode)?;
    if let Some(out) = &shared.output {
        write_jsonl(
            out,
            grid.entries.iter().map(|(k, v)| {
                json!({"ix": k.ix, "iy": k.iy, "iz": k.iz, "count": v.count(), "mean": v.mean})
            }),
        )?;
    }
    Ok(format!(
        "voxelize: points={} voxels={} stored={} dropped_points={} dropped_voxels={} out_of_range={}",
        cloud.len(),
        grid.len(),
        grid.point_count(),
        grid.dropped_points,
        grid.dropped_voxels,
        grid.out_of_range
    ))
}

#[allow(clippy::too_many_arguments)]
fn assign(
    shared: &Shared,
    cfg: &Config,
    anchors: &Path,
    gt: &Path,
    mode: AssignModeArg,
    pos_iou: Option<f64>,
    neg_iou: Option<f64>,
    top_k: Option<usize>,
) -> CliResult<String> {
    let out = output(shared)?;
    let anchor_frames = load_boxes(anchors, shared.class)?;
    let gt_frames = load_boxes(gt, shared.class)?;
    let pos = pos_iou.unwrap_or(cfg.assigner.pos_iou);
    let neg = neg_iou.unwrap_or(cfg.assigner.neg_iou);
    let k = top_k.unwrap_or(cfg.assigner.top_k);

    let frames: Vec<(&String, &DetectionSet<f64>)> = anchor_frames.iter().collect();
    let results = frames
        .par_iter()
        .map(|&(id, set)| {
            let gts = gt_frames.get(id).map_or(&[][..], |s| &s.boxes[..]);
            let res = match mode {
                AssignModeArg::Fixed => fixed_assign(&set.boxes, gts, pos, neg),
                AssignModeArg::Adaptive => adaptive_assign(&set.boxes, gts, k),
            }?;
            Ok((id, res))
        })
        .collect::<lidarpost::Result<Vec<_>>>()?;

    let mut records = Vec::new();
    let (mut positive, mut negative, mut ignored) = (0usize, 0usize, 0usize);
    for (id, res) in &results {
        for (a, label) in res.labels.iter().enumerate() {
            let mut rec = json!({"frame_id": id, "anchor": a});
            match label {
                &AnchorLabel::Positive(g) => {
                    positive += 1;
                    rec["label"] = json!("POSITIVE");
                    rec["gt"] = json!(g);
                    if let Some(t) = &res.adaptive_thresholds {
                        rec["threshold"] = json!(t[g]);
                    }
                }
                AnchorLabel::Negative => {
                    negative += 1;
                    rec["label"] = json!("NEGATIVE");
                }
                AnchorLabel::Ignored => {
                    ignored += 1;
                    rec["label"] = json!("IGNORED");
                }
            }
            records.push(rec);
        }
    }
    write_jsonl(out, &records)?;
    Ok(format!(
        "assign: frames={} anchors={} positive={positive} negative={negative} ignored={ignored}",
        results.len(),
        records.len()
    ))
}

fn nms_frames(sets: &[DetectionSet<f64>], thr: &ClassThresholds<f64>, cfg: &Config) -> Sets {
    sets.par_iter()
        .map(|set| {
            let keep = nms_classwise(&set.boxes, thr, cfg.ensemble.iou_kind);
            DetectionSet {
                boxes: keep.into_iter().map(|i| set.boxes[i].clone()).collect(),
                ..set.clone()
            }
        })
        .collect()
}

fn nms_cmd(shared: &Shared, cfg: &Config, input: &Path, iou: Option<f64>) -> CliResult<String> {
    let out = output(shared)?;
    let thr = thresholds(cfg, iou)?;
    let frames: Sets = load_boxes(input, shared.class)?.into_values().collect();
    let kept = nms_frames(&frames, &thr, cfg);
    write_boxes(out, &kept)?;
    Ok(format!(
        "nms: frames={} input={} kept={}",
        frames.len(),
        box_count(&frames),
        box_count(&kept)
    ))
}

fn soft_nms_cmd(
    shared: &Shared,
    cfg: &Config,
    input: &Path,
    sigma: Option<f64>,
    floor: Option<f64>,
) -> CliResult<String> {
    let out = output(shared)?;
    let sigma = sigma.unwrap_or(cfg.ensemble.soft_nms_sigma);
    let floor = floor.unwrap_or(cfg.ensemble.soft_nms_score_floor);
    let frames: Sets = load_boxes(input, shared.class)?.into_values().collect();
    let rescored = frames
        .par_iter()
        .map(|set| {
            let kept = soft_nms_indexed(&set.boxes, sigma, floor, cfg.ensemble.iou_kind)?;
            Ok(DetectionSet {
                boxes: kept.into_iter().map(|(i, s)| set.boxes[i].clone().with_score(s)).collect(),
                ..set.clone()
            })
        })
        .collect::<lidarpost::Result<Sets>>()?;
    write_boxes(out, &rescored)?;
    Ok(format!(
        "soft-nms: frames={} input={} kept={}",
        frames.len(),
        box_count(&frames),
        box_count(&rescored)
    ))
}

fn vote_frames(kept: &[DetectionSet<f64>], pools: &[DetectionSet<f64>], vote_iou: f64, cfg: &Config) -> Sets {
    kept.par_iter()
        .zip(pools)
        .map(|(k, pool)| DetectionSet {
            boxes: box_vote_with(&k.boxes, &pool.boxes, vote_iou, cfg.ensemble.iou_kind),
            ..k.clone()
        })
        .collect()
}

fn vote(
    shared: &Shared,
    cfg: &Config,
    input: &Path,
    kept: Option<&Path>,
    iou: Option<f64>,
    vote_iou: Option<f64>,
) -> CliResult<String> {
    let out = output(shared)?;
    let vote_iou = vote_iou.unwrap_or(cfg.ensemble.vote_iou);
    let pool_map = load_boxes(input, shared.class)?;
    let (ids, kept_sets) = match kept {
        Some(path) => {
            let kept_map = load_boxes(path, shared.class)?;
            let ids = frame_order([&kept_map]);
            let sets = aligned(&ids, &kept_map, 0);
            (ids, sets)
        }
        None => {
            let ids = frame_order([&pool_map]);
            let sets = nms_frames(&aligned(&ids, &pool_map, 0), &thresholds(cfg, iou)?, cfg);
            (ids, sets)
        }
    };
    let pools = aligned(&ids, &pool_map, 0);
    let voted = vote_frames(&kept_sets, &pools, vote_iou, cfg);
    write_boxes(out, &voted)?;
    Ok(format!(
        "vote: frames={} pool={} kept={}",
        ids.len(),
        box_count(&pools),
        box_count(&voted)
    ))
}

/// Per-class AP/APH over frames aligned by position. Classes with neither
/// ground truth nor detections are left out.
pub(crate) fn evaluate(
    dets: &[&[Box3]],
    gts: &[&[Box3]],
    eval: &EvalConfig,
    level: DifficultyLevel,
    class: Option<Label>,
) -> Vec<(Label, ApResult<f64>)> {
    Label::ALL
        .into_iter()
        .filter(|l| class.is_none_or(|c| c == *l))
        .filter_map(|label| {
            let of = |boxes: &[Box3]| -> Vec<Box3> { boxes.iter().filter(|b| b.label == label).cloned().collect() };
            let thr = eval.iou_threshold(label);
            let ledgers: Vec<MatchLedger<f64>> = dets
                .par_iter()
                .zip(gts)
                .map(|(d, g)| {
                    let g = split_difficulty(&of(g), level);
                    match_frame_with(&of(d), &g, thr, eval.iou_kind)
                })
                .collect();
            let gt_count = ledgers.iter().map(MatchLedger::gt_count).sum();
            let r = average_precision(&ledgers, gt_count);
            (r.gt_count > 0 || r.detection_count > 0).then_some((label, r))
        })
        .collect()
}

/// Mean AP over the classes that have ground truth.
pub(crate) fn mean_ap(results: &[(Label, ApResult<f64>)]) -> (f64, f64) {
    let with_gt: Vec<_> = results.iter().filter(|(_, r)| r.gt_count > 0).collect();
    if with_gt.is_empty() {
        return (0.0, 0.0);
    }
    let n = with_gt.len() as f64;
    (
        with_gt.iter().map(|(_, r)| r.ap).sum::<f64>() / n,
        with_gt.iter().map(|(_, r)| r.aph).sum::<f64>() / n,
    )
}

fn slices(sets: &[DetectionSet<f64>]) -> Vec<&[Box3]> {
    sets.iter().map(|s| &s.boxes[..]).collect()
}

fn ensemble(
    shared: &Shared,
    cfg: &Config,
    inputs: &[std::path::PathBuf],
    gt: Option<&Path>,
    iou: Option<f64>,
    vote: bool,
) -> CliResult<String> {
    let out = output(shared)?;
    let thr = thresholds(cfg, iou)?;
    let kind = cfg.ensemble.iou_kind;
    let maps = inputs
        .iter()
        .map(|p| load_boxes(p, shared.class))
        .collect::<CliResult<Vec<_>>>()?;
    let gt_map = gt.map(|p| load_boxes(p, shared.class)).transpose()?;
    let ids = frame_order(gt_map.iter().chain(&maps));
    let sources: Vec<Sets> = maps
        .iter()
        .enumerate()
        .map(|(i, m)| aligned(&ids, m, i as u32))
        .collect();

    let mut weights: Vec<Option<f64>> = vec![None; sources.len()];
    let mut score = None;
    let result = match &gt_map {
        Some(gm) => {
            let gt_sets = aligned(&ids, gm, 0);
            let gt_slices = slices(&gt_sets);
            let level = cfg.eval.level;
            let score_fn =
                |frames: &[DetectionSet<f64>]| mean_ap(&evaluate(&slices(frames), &gt_slices, &cfg.eval, level, None)).0;
            let singles: Vec<Sets> = sources.iter().map(|s| nms_frames(s, &thr, cfg)).collect();
            let single_scores: Vec<f64> = singles.iter().map(|s| score_fn(s)).collect();
            let mut order: Vec<usize> = (0..sources.len()).collect();
            order.sort_by(|&a, &b| single_scores[b].total_cmp(&single_scores[a]).then(a.cmp(&b)));

            let mut current = singles[order[0]].clone();
            let mut best = single_scores[order[0]];
            weights[order[0]] = Some(1.0);
            for &i in &order[1..] {
                let (w, s) = grid_search_weight_frames_with(
                    &current,
                    &sources[i],
                    &cfg.ensemble.weight_grid,
                    &thr,
                    kind,
                    score_fn,
                )?;
                if s - best < cfg.ensemble.min_improvement {
                    break;
                }
                current = ensemble_pair_frames_with(&current, &sources[i], 1.0, w, &thr, kind)?;
                best = s;
                weights[i] = Some(w);
            }
            score = Some(best);
            current
        }
        None => {
            let mut current = nms_frames(&sources[0], &thr, cfg);
            weights[0] = Some(1.0);
            for (i, src) in sources.iter().enumerate().skip(1) {
                current = ensemble_pair_frames_with(&current, src, 1.0, 1.0, &thr, kind)?;
                weights[i] = Some(1.0);
            }
            current
        }
    };

    let result = if vote {
        let pools = (0..ids.len())
            .map(|f| {
                let frame: Sets = sources.iter().map(|s| s[f].clone()).collect();
                merge_sources(&frame)
            })
            .collect::<lidarpost::Result<Sets>>()?;
        vote_frames(&result, &pools, cfg.ensemble.vote_iou, cfg)
    } else {
        result
    };
    write_boxes(out, &result)?;

    let weights: Vec<String> = weights
        .iter()
        .map(|w| w.map_or_else(|| "-".to_owned(), |w| w.to_string()))
        .collect();
    let mut s = format!(
        "ensemble: frames={} sources={} input={} kept={} weights={}",
        ids.len(),
        sources.len(),
        sources.iter().map(|s| box_count(s)).sum::<usize>(),
        box_count(&result),
        weights.join(",")
    );
    if let Some(ap) = score {
        let _ = write!(s, " search_map={ap}");
    }
    Ok(s)
}

fn track(shared: &Shared, cfg: &Config, input: &Path) -> CliResult<String> {
    let out = output(shared)?;
    let frames: Sets = load_boxes(input, shared.class)?.into_values().collect();
    let mut tracker = Tracker::<f64>::new(cfg.tracker.clone())?;
    let mut ids = BTreeSet::new();
    let mut tracked = Vec::with_capacity(frames.len());
    for set in &frames {
        let boxes = tracker.step(set)?;
        ids.extend(boxes.iter().filter_map(|b| b.track_id));
        tracked.push(DetectionSet {
            boxes,
            ..set.clone()
        });
    }
    write_boxes(out, &tracked)?;
    Ok(format!(
        "track: frames={} detections={} reported={} tracks={}",
        frames.len(),
        box_count(&frames),
        box_count(&tracked),
        ids.len()
    ))
}

fn eval_det(
    shared: &Shared,
    cfg: &Config,
    dets: &Path,
    gt: &Path,
    level: Option<LevelArg>,
    pr_csv: Option<&Path>,
) -> CliResult<String> {
    let det_map = load_boxes(dets, shared.class)?;
    let gt_map = load_boxes(gt, shared.class)?;
    let level = match level {
        Some(LevelArg::L1) => DifficultyLevel::L1,
        Some(LevelArg::L2) => DifficultyLevel::L2,
        None => cfg.eval.level,
    };
    let ids = frame_order([&gt_map, &det_map]);
    let d = aligned(&ids, &det_map, 0);
    let g = aligned(&ids, &gt_map, 0);
    let results = evaluate(&slices(&d), &slices(&g), &cfg.eval, level, shared.class);

    let mut report = format!("level={level:?}\nframes={}\n", ids.len());
    for (label, r) in &results {
        let _ = writeln!(report, "{label}.ap={}", r.ap);
        let _ = writeln!(report, "{label}.aph={}", r.aph);
        let _ = writeln!(report, "{label}.gt={}", r.gt_count);
        let _ = writeln!(report, "{label}.detections={}", r.detection_count);
        let _ = writeln!(report, "{label}.tp={}", r.true_positives);
    }
    let (map, maph) = mean_ap(&results);
    let _ = writeln!(report, "mean.ap={map}");
    let _ = writeln!(report, "mean.aph={maph}");
    if let Some(out) = &shared.output {
        write_text(out, &report)?;
    }
    if let Some(path) = pr_csv {
        let mut csv = String::from("label,score,recall,precision,precision_h\n");
        for (label, r) in &results {
            for p in &r.curve {
                let _ = writeln!(csv, "{label},{},{},{},{}", p.score, p.recall, p.precision, p.precision_h);
            }
        }
        write_text(path, &csv)?;
    }
    Ok(report.trim_end().to_owned())
}

fn eval_mot(shared: &Shared, cfg: &Config, tracks: &Path, gt: &Path, iou: Option<f64>) -> CliResult<String> {
    let track_map = load_boxes(tracks, shared.class)?;
    let gt_map = load_boxes(gt, shared.class)?;
    for (what, map) in [("ground-truth", &gt_map), ("tracked", &track_map)] {
        if let Some(set) = map.values().find(|s| s.boxes.iter().any(|b| b.track_id.is_none())) {
            return Err(Failure::Input(format!(
                "{what} box without track_id in frame {:?}",
                set.frame_id
            )));
        }
    }
    let ids = frame_order([&gt_map, &track_map]);
    let t = aligned(&ids, &track_map, 0);
    let g = aligned(&ids, &gt_map, 0);

    let mut report = format!("frames={}\n", ids.len());
    let mut evaluated = 0;
    for label in Label::ALL.into_iter().filter(|l| shared.class.is_none_or(|c| c == *l)) {
        let of = |sets: &[DetectionSet<f64>]| -> Vec<Vec<Box3>> {
            sets.iter()
                .map(|s| s.boxes.iter().filter(|b| b.label == label).cloned().collect())
                .collect()
        };
        let (tl, gl) = (of(&t), of(&g));
        if gl.iter().all(Vec::is_empty) {
            continue;
        }
        let thr = iou.unwrap_or_else(|| cfg.eval.iou_threshold(label));
        let m = mota_motp_with(&tl, &gl, thr, cfg.eval.iou_kind)?;
        evaluated += 1;
        let _ = writeln!(report, "{label}.mota={}", m.mota);
        let _ = writeln!(report, "{label}.motp={}", m.motp);
        let _ = writeln!(report, "{label}.false_positives={}", m.false_positives);
        let _ = writeln!(report, "{label}.misses={}", m.misses);
        let _ = writeln!(report, "{label}.id_switches={}", m.id_switches);
        let _ = writeln!(report, "{label}.matches={}", m.matches);
        let _ = writeln!(report, "{label}.gt={}", m.gt_total);
    }
    if evaluated == 0 {
        return Err(Failure::Input("no ground-truth boxes to evaluate".into()));
    }
    if let Some(out) = &shared.output {
        write_text(out, &report)?;
    }
    Ok(report.trim_end().to_owned())
}

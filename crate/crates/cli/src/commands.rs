use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use localmatch::bench::{keyframe_sweep, run_sampling_bench, window_sweep};
use localmatch::contrastive::{
    contrastive_loss, downsample_labels, gradient_check, project, sample_anchor_set, sample_coordinates,
    subsample_batch, ObjectFeatureSets, ProjectionHead, CONTRASTIVE_LOSS_WEIGHT,
};
use localmatch::io::{
    load_feature_map, load_mask, mask_path_for, read_manifest, save_feature_map, save_mask, write_manifest,
};
use localmatch::matching::keyframe_schedule;
use localmatch::metrics::{evaluate, SeenSplit};
use localmatch::pipeline::segment_video;
use localmatch::synth::{synthesize_video, SynthConfig};
use localmatch::{FeatureMap, ObjectLabelMap, VideoSequence};

use crate::config::{parse_dims, parse_list, parse_motion, usage, RunConfig};

pub const MANIFEST: &str = "manifest.txt";
/// Finite-difference step for `loss --grad-check`.
pub const GRAD_CHECK_STEP: f64 = 1e-4;
pub const GRAD_CHECK_TOLERANCE: f64 = 1e-4;
const GRAD_CHECK_COORDS: usize = 256;
const GRAD_CHECK_ANCHORS: usize = 30;
const GRAD_CHECK_POSITIVES: usize = 8;

/// Accepts a manifest file or a directory holding one.
fn manifest_path(input: &Path) -> PathBuf {
    if input.is_dir() {
        input.join(MANIFEST)
    } else {
        input.to_path_buf()
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub struct SynthArgs {
    pub frames: usize,
    pub size: String,
    pub channels: usize,
    pub objects: usize,
    pub motion: String,
}

pub fn synth(run: &RunConfig, args: &SynthArgs) -> Result<()> {
    if args.objects == 0 {
        return Err(usage("--objects must be at least 1"));
    }
    if args.frames == 0 || args.channels == 0 {
        return Err(usage("--frames and --channels must be positive"));
    }
    let dims = parse_dims(&args.size, 2)?;
    let config = SynthConfig {
        height: dims[0],
        width: dims[1],
        channels: args.channels,
        frames: args.frames,
        objects: args.objects,
        motion: parse_motion(&args.motion)?,
        noise: run.noise,
        seed: run.seed,
    };
    let video = synthesize_video(&config)?;
    let out = run.out_dir()?;
    create_dir(out)?;
    let gt = video.ground_truth().expect("synthetic videos carry ground truth");
    let mut entries = Vec::with_capacity(video.len());
    for (t, (frame, mask)) in video.frames().iter().zip(gt).enumerate() {
        let name = format!("frame_{:04}.fmap", t + 1);
        let path = out.join(&name);
        save_feature_map(frame, &path)?;
        save_mask(mask, mask_path_for(&path))?;
        entries.push(name);
    }
    write_manifest(out.join(MANIFEST), &entries)?;
    println!(
        "wrote {} frames ({}x{}x{}, {} objects) to {}",
        video.len(),
        config.height,
        config.width,
        config.channels,
        config.objects,
        out.display()
    );
    Ok(())
}

pub fn segment(run: &RunConfig, input: &Path) -> Result<()> {
    let entries = read_manifest(manifest_path(input))?;
    if entries.is_empty() {
        bail!("manifest {} lists no frames", input.display());
    }
    let frames = entries
        .iter()
        .map(load_feature_map)
        .collect::<localmatch::Result<Vec<_>>>()?;
    let first_mask_path = mask_path_for(&entries[0]);
    let first_mask =
        load_mask(&first_mask_path).with_context(|| format!("first-frame mask {}", first_mask_path.display()))?;
    let video = VideoSequence::new(frames, first_mask, None)?;
    let result = segment_video(&video, &run.matching)?;

    let out = run.out_dir()?;
    create_dir(out)?;
    let mut names = Vec::with_capacity(entries.len());
    for (entry, mask) in entries.iter().zip(result.labels_at_mask_resolution()) {
        let name = mask_path_for(Path::new(
            entry.file_name().context("manifest entry without a file name")?,
        ));
        save_mask(&mask, out.join(&name))?;
        names.push(name.to_string_lossy().into_owned());
    }
    write_manifest(out.join(MANIFEST), &names)?;

    let total = |f: fn(&localmatch::pipeline::StageTimes) -> f64| result.timings.iter().map(f).sum::<f64>();
    let matching = result.matching_seconds();
    let propagated = video.len().saturating_sub(1).max(1);
    println!(
        "timing frames={} sampling_s={:.4} affinity_s={:.4} aggregation_s={:.4} matching_s={:.4} ms_per_frame={:.2}",
        video.len(),
        total(|t| t.sampling),
        total(|t| t.affinity),
        total(|t| t.aggregation),
        matching,
        1e3 * matching / propagated as f64
    );
    Ok(())
}

/// Loads masks named by a manifest; missing files read as unannotated frames
/// when `optional`.
fn load_masks(input: &Path, optional: bool) -> Result<Vec<Option<ObjectLabelMap>>> {
    read_manifest(manifest_path(input))?
        .iter()
        .map(|entry| {
            let path = mask_path_for(entry);
            if optional && !path.exists() {
                return Ok(None);
            }
            Ok(Some(load_mask(&path)?))
        })
        .collect()
}

fn parse_ids(text: Option<&str>) -> Result<BTreeSet<u8>> {
    Ok(text
        .map(parse_list::<u8>)
        .transpose()?
        .unwrap_or_default()
        .into_iter()
        .collect())
}

pub fn eval(run: &RunConfig, pred: &Path, gt: &Path, seen: Option<&str>, unseen: Option<&str>) -> Result<()> {
    let pred: Vec<ObjectLabelMap> = load_masks(pred, false)?.into_iter().flatten().collect();
    let gt = load_masks(gt, true)?;
    if pred.len() != gt.len() {
        bail!("{} predicted frames but {} ground-truth frames", pred.len(), gt.len());
    }
    let split = (seen.is_some() || unseen.is_some())
        .then(|| -> Result<SeenSplit> {
            Ok(SeenSplit {
                seen: parse_ids(seen)?,
                unseen: parse_ids(unseen)?,
            })
        })
        .transpose()?;
    let report = evaluate(&pred, &gt, run.tolerance, split.as_ref())?;
    let csv = report.to_csv();
    print!("{csv}");
    if let Some(out) = &run.out {
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            create_dir(parent)?;
        }
        fs::write(out, &csv).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

pub struct LossArgs {
    pub input: Option<PathBuf>,
    pub query: Option<PathBuf>,
    pub keyframes: Vec<PathBuf>,
    pub projection: usize,
    pub grad_check: bool,
}

fn load_frame(path: &Path) -> Result<(FeatureMap, ObjectLabelMap)> {
    let map = load_feature_map(path)?;
    let mask_path = mask_path_for(path);
    let mask = load_mask(&mask_path).with_context(|| format!("labels for {}", path.display()))?;
    let labels = if mask.same_dims(&ObjectLabelMap::background(map.height(), map.width(), 0)) {
        mask
    } else {
        downsample_labels(&mask, map.height(), map.width())?
    };
    Ok((map, labels))
}

/// Query frame and keyframes: explicit paths, or the last manifest entry as
/// query with the scheduled keyframes before it.
fn loss_inputs(run: &RunConfig, args: &LossArgs) -> Result<(PathBuf, Vec<PathBuf>)> {
    match (&args.query, &args.input) {
        (Some(q), _) => {
            if args.keyframes.is_empty() {
                return Err(usage("--query needs at least one --keyframe"));
            }
            Ok((q.clone(), args.keyframes.clone()))
        }
        (None, Some(input)) => {
            let mut entries = read_manifest(manifest_path(input))?;
            if entries.len() < 2 {
                bail!("the loss needs a query frame and at least one earlier keyframe");
            }
            let query = entries.pop().expect("non-empty");
            let keyframes = entries
                .into_iter()
                .enumerate()
                .filter(|(t, _)| keyframe_schedule(t + 1, run.matching.keyframe_interval))
                .map(|(_, e)| e)
                .collect();
            Ok((query, keyframes))
        }
        (None, None) => Err(usage("give --input <manifest> or --query with --keyframe")),
    }
}

pub fn loss(run: &RunConfig, args: &LossArgs) -> Result<()> {
    if args.projection == 0 {
        return Err(usage("--projection must be positive"));
    }
    let (query_path, keyframe_paths) = loss_inputs(run, args)?;
    let (query, query_labels) = load_frame(&query_path)?;
    let head = ProjectionHead::random(query.channels(), args.projection, true, run.seed);
    let zq = project(&query, &head)?;
    let keyframes = keyframe_paths
        .iter()
        .map(|p| {
            let (map, labels) = load_frame(p)?;
            Ok((project(&map, &head)?, labels))
        })
        .collect::<Result<Vec<_>>>()?;
    let anchor_sets = ObjectFeatureSets::from_frames(&[(&zq, &query_labels)])?;
    let keyframe_refs: Vec<_> = keyframes.iter().map(|(z, l)| (z, l)).collect();
    let keyframe_sets = ObjectFeatureSets::from_frames(&keyframe_refs)?;
    let batch = sample_anchor_set(&anchor_sets, &keyframe_sets, run.tau, run.seed)?;
    let out = contrastive_loss(&batch)?;

    let counts: BTreeMap<u8, usize> = batch.anchor_counts();
    println!("loss L_c={:.9}", out.value);
    println!(
        "weighted_loss={:.9} (weight {CONTRASTIVE_LOSS_WEIGHT})",
        CONTRASTIVE_LOSS_WEIGHT * out.value
    );
    println!(
        "anchors {}",
        counts
            .iter()
            .map(|(o, n)| format!("{o}:{n}"))
            .collect::<Vec<_>>()
            .join(" ")
    );
    println!("grad_max_norm={:.6e}", out.max_grad_norm());

    if args.grad_check {
        let sub = subsample_batch(&batch, GRAD_CHECK_ANCHORS, GRAD_CHECK_POSITIVES, run.seed)?;
        let len = contrastive_loss(&sub)?.flat_gradient().len();
        let coords = sample_coordinates(len, GRAD_CHECK_COORDS, run.seed);
        let err = gradient_check(&sub, GRAD_CHECK_STEP, Some(&coords))?;
        let verdict = if err <= GRAD_CHECK_TOLERANCE { "pass" } else { "fail" };
        println!(
            "grad_check max_rel_err={err:.3e} coords={} anchors={} {verdict}",
            coords.len(),
            sub.anchors().len()
        );
        if err > GRAD_CHECK_TOLERANCE {
            bail!("gradient check failed: max relative error {err:.3e} exceeds {GRAD_CHECK_TOLERANCE:e}");
        }
    }
    Ok(())
}

pub struct BenchArgs {
    pub sizes: String,
    pub ks: String,
    pub reps: usize,
    pub r_list: Option<String>,
    pub matching: bool,
}

pub fn bench(run: &RunConfig, args: &BenchArgs) -> Result<()> {
    let geometries = args
        .sizes
        .split(',')
        .map(|s| parse_dims(s.trim(), 3).map(|d| (d[0], d[1], d[2])))
        .collect::<Result<Vec<_>>>()?;
    let ks: Vec<usize> = parse_list(&args.ks)?;
    if let Some(k) = ks.iter().find(|&&k| k % 2 == 0 || k == 0) {
        return Err(usage(format!("window must be odd and positive, got {k}")));
    }
    if args.reps < localmatch::bench::MIN_REPETITIONS {
        return Err(usage(format!(
            "--reps must be at least {}",
            localmatch::bench::MIN_REPETITIONS
        )));
    }
    let report = run_sampling_bench(&geometries, &ks, args.reps, run.matching.parallel, run.seed)?;
    print!("{}", report.to_table());
    let mut files = vec![("bench.csv", report.to_csv())];

    let video = SynthConfig {
        noise: run.noise,
        seed: run.seed,
        ..SynthConfig::default()
    };
    if args.matching {
        let sweep = window_sweep(&video, &run.matching, &ks, args.reps)?;
        println!();
        print!("{}", sweep.to_csv());
        files.push(("window_sweep.csv", sweep.to_csv()));
    }
    if let Some(list) = &args.r_list {
        let rs: Vec<usize> = parse_list(list)?;
        if rs.contains(&0) {
            return Err(usage("keyframe intervals must be positive"));
        }
        let sweep = keyframe_sweep(&video, &run.matching, &rs, args.reps)?;
        println!();
        print!("{}", sweep.to_csv());
        files.push(("keyframe_sweep.csv", sweep.to_csv()));
    }
    if let Some(out) = &run.out {
        create_dir(out)?;
        for (name, text) in files {
            let path = out.join(name);
            fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        }
    }
    Ok(())
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use localmatch::io::{load_mask, save_feature_map, save_mask, write_manifest};
use localmatch::{FeatureMap, ObjectLabelMap};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_localmatch"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Value on the line after `header` in CSV output.
fn csv_field(text: &str, header: &str, column: &str) -> f64 {
    let mut lines = text.lines();
    while let Some(line) = lines.next() {
        if line == header {
            let values: Vec<&str> = lines.next().unwrap().split(',').collect();
            let idx = header.split(',').position(|h| h == column).unwrap();
            return values[idx].parse().unwrap();
        }
    }
    panic!("no `{header}` in\n{text}");
}

#[test]
fn synth_writes_frames_masks_and_manifest_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&[
            "synth",
            "--frames",
            "10",
            "--size",
            "64x64",
            "--channels",
            "16",
            "--objects",
            "2",
            "--seed",
            "7",
            "--out",
            p(out),
        ]);
    }
    let names: Vec<String> = {
        let mut n: Vec<String> = fs::read_dir(&a)
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        n.sort();
        n
    };
    assert_eq!(names.iter().filter(|n| n.ends_with(".fmap")).count(), 10);
    assert_eq!(names.iter().filter(|n| n.ends_with(".mask")).count(), 10);
    assert!(names.contains(&"manifest.txt".to_string()));
    for n in &names {
        assert_eq!(
            fs::read(a.join(n)).unwrap(),
            fs::read(b.join(n)).unwrap(),
            "{n} differs"
        );
    }
}

#[test]
fn synth_rejects_zero_objects() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["synth", "--objects", "0", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn segment_then_eval_recovers_synthetic_masks() {
    let dir = tempfile::tempdir().unwrap();
    let (video, pred) = (dir.path().join("video"), dir.path().join("pred"));
    ok(&[
        "synth",
        "--frames",
        "10",
        "--size",
        "64x64",
        "--channels",
        "16",
        "--objects",
        "2",
        "--seed",
        "7",
        "--out",
        p(&video),
    ]);
    let stdout = ok(&["segment", "--input", p(&video), "--out", p(&pred)]);
    assert!(stdout.starts_with("timing frames=10 "), "{stdout}");
    let report = ok(&["eval", "--pred", p(&pred), "--gt", p(&video)]);
    assert!(report.starts_with("object,J,F\n"));
    assert!(csv_field(&report, "mean_J,mean_F,JandF", "mean_J") >= 0.95);
}

#[test]
fn aligned_single_pixel_window_is_exact_on_static_video() {
    let dir = tempfile::tempdir().unwrap();
    let (video, pred) = (dir.path().join("video"), dir.path().join("pred"));
    ok(&[
        "synth",
        "--frames",
        "6",
        "--size",
        "32x32",
        "--channels",
        "8",
        "--motion",
        "0,0",
        "--noise",
        "0",
        "--out",
        p(&video),
    ]);
    ok(&[
        "segment",
        "--input",
        p(&video),
        "--out",
        p(&pred),
        "--mode",
        "aligned",
        "--k",
        "1",
        "--r",
        "1",
    ]);
    for t in 1..=6 {
        let name = format!("frame_{t:04}.mask");
        assert_eq!(
            load_mask(pred.join(&name)).unwrap(),
            load_mask(video.join(&name)).unwrap()
        );
    }
}

#[test]
fn even_window_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let video = dir.path().join("video");
    ok(&["synth", "--frames", "2", "--size", "16x16", "--out", p(&video)]);
    let out = run(&[
        "segment",
        "--input",
        p(&video),
        "--out",
        p(&dir.path().join("pred")),
        "--k",
        "4",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("window must be odd"));
}

#[test]
fn segment_reports_missing_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "segment",
        "--input",
        p(&dir.path().join("nothing")),
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

fn write_masks(dir: &Path, masks: &[ObjectLabelMap]) {
    fs::create_dir_all(dir).unwrap();
    let names: Vec<String> = (1..=masks.len()).map(|t| format!("frame_{t:04}.mask")).collect();
    for (n, m) in names.iter().zip(masks) {
        save_mask(m, dir.join(n)).unwrap();
    }
    write_manifest(dir.join("manifest.txt"), &names).unwrap();
}

fn halves(h: usize, w: usize, left_only: bool) -> ObjectLabelMap {
    let labels = (0..h * w).map(|i| (!left_only || i % w < w / 2) as u8).collect();
    ObjectLabelMap::new(h, w, 1, labels).unwrap()
}

#[test]
fn eval_examples() {
    let dir = tempfile::tempdir().unwrap();
    let full = halves(8, 8, false);
    let gt = dir.path().join("gt");
    let pred = dir.path().join("pred");
    write_masks(&gt, &[full.clone(), full.clone()]);
    write_masks(&pred, &[full.clone(), halves(8, 8, true)]);

    let same = ok(&["eval", "--pred", p(&gt), "--gt", p(&gt)]);
    assert_eq!(csv_field(&same, "mean_J,mean_F,JandF", "JandF"), 1.0);

    let half = ok(&[
        "eval",
        "--pred",
        p(&pred),
        "--gt",
        p(&gt),
        "--seen",
        "1",
        "--unseen",
        "2",
    ]);
    assert_eq!(csv_field(&half, "mean_J,mean_F,JandF", "mean_J"), 0.5);
    assert!(half.contains("J_s,F_s,J_u,F_u\n"));

    let csv = dir.path().join("report.csv");
    ok(&["eval", "--pred", p(&pred), "--gt", p(&gt), "--out", p(&csv)]);
    assert_eq!(
        fs::read_to_string(csv).unwrap(),
        ok(&["eval", "--pred", p(&pred), "--gt", p(&gt)])
    );

    let short = dir.path().join("short");
    write_masks(&short, &[full]);
    assert_eq!(
        run(&["eval", "--pred", p(&short), "--gt", p(&gt)]).status.code(),
        Some(1)
    );
}

#[test]
fn loss_verb() {
    let dir = tempfile::tempdir().unwrap();
    let video = dir.path().join("video");
    ok(&[
        "synth",
        "--frames",
        "4",
        "--size",
        "24x24",
        "--channels",
        "8",
        "--out",
        p(&video),
    ]);

    let out = ok(&["loss", "--input", p(&video), "--r", "2", "--grad-check"]);
    assert!(out.contains("loss L_c="), "{out}");
    assert!(out.contains("grad_max_norm="));
    assert!(
        out.lines()
            .any(|l| l.starts_with("grad_check ") && l.ends_with(" pass")),
        "{out}"
    );

    assert_eq!(
        run(&["loss", "--input", p(&video), "--tau", "0"]).status.code(),
        Some(2)
    );

    // background only: no negatives
    let map = FeatureMap::from_fn(6, 6, 4, |r, c, ch| (r * 6 + c + ch) as f32 * 0.1);
    for name in ["q", "k"] {
        save_feature_map(&map, dir.path().join(format!("{name}.fmap"))).unwrap();
        save_mask(
            &ObjectLabelMap::background(6, 6, 0),
            dir.path().join(format!("{name}.mask")),
        )
        .unwrap();
    }
    let single = ok(&[
        "loss",
        "--query",
        p(&dir.path().join("q.fmap")),
        "--keyframe",
        p(&dir.path().join("k.fmap")),
    ]);
    assert!(single.contains("loss L_c=0.000000000\n"), "{single}");
}

#[test]
fn bench_rows_match_the_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench");
    let table = ok(&[
        "bench",
        "--sizes",
        "12x10x4,8x8x2",
        "--ks",
        "3,5",
        "--reps",
        "3",
        "--r-list",
        "1,3",
        "--k",
        "3",
        "--out",
        p(&out),
    ]);
    assert!(table.contains("gather-oracle") && table.contains("direction-shift"));
    let csv = fs::read_to_string(out.join("bench.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().all(|r| r.ends_with(",true")));
    assert!(fs::read_to_string(out.join("keyframe_sweep.csv"))
        .unwrap()
        .starts_with("r,"));
    assert_eq!(
        run(&["bench", "--reps", "2", "--sizes", "8x8x2", "--ks", "3"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn config_file_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let video = dir.path().join("video");
    ok(&[
        "synth",
        "--frames",
        "3",
        "--size",
        "16x16",
        "--channels",
        "8",
        "--out",
        p(&video),
    ]);
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# from file\nk = 4\nmode = aligned\n").unwrap();
    let pred = dir.path().join("pred");
    let args = ["segment", "--input", p(&video), "--out", p(&pred), "--config", p(&cfg)];
    assert_eq!(run(&args).status.code(), Some(2));
    let mut overridden = args.to_vec();
    overridden.extend(["--k", "3"]);
    ok(&overridden);

    fs::write(&cfg, "window = 3\n").unwrap();
    let out = run(&args);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key"));
}

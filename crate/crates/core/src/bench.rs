//! Timing harness for the sampling kernels and the matching stage.
//!
//! Every timed configuration is first checked for bit equality against the
//! gather oracle; a mismatch aborts the run with its location.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matching::MatchConfig;
use crate::pipeline::segment_video;
use crate::sampling::{
    aligned_references, sample_gather, sample_gather_into, sample_shift, sample_shift_into, sample_shift_parallel,
    DirectionSet, SampledMatrix,
};
use crate::synth::{synthesize_video, SynthConfig};
use crate::tensor::FeatureMap;

pub const GATHER_ORACLE: &str = "gather-oracle";
pub const DIRECTION_SHIFT: &str = "direction-shift";
pub const MIN_REPETITIONS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub implementation: String,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub window: usize,
    pub repetitions: usize,
    pub mean_s: f64,
    pub std_s: f64,
    /// Sampled elements (`H·W·k²·D`) produced per second.
    pub throughput: f64,
    pub equal_to_oracle: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

const HEADER: [&str; 10] = [
    "implementation",
    "H",
    "W",
    "D",
    "k",
    "reps",
    "mean_s",
    "std_s",
    "elements_per_s",
    "equal_to_oracle",
];

impl BenchReport {
    pub fn find(&self, implementation: &str, dims: (usize, usize, usize), window: usize) -> Option<&BenchRow> {
        self.rows.iter().find(|r| {
            r.implementation == implementation && (r.height, r.width, r.channels) == dims && r.window == window
        })
    }

    fn cells(row: &BenchRow) -> [String; 10] {
        [
            row.implementation.clone(),
            row.height.to_string(),
            row.width.to_string(),
            row.channels.to_string(),
            row.window.to_string(),
            row.repetitions.to_string(),
            format!("{:.6}", row.mean_s),
            format!("{:.6}", row.std_s),
            format!("{:.4e}", row.throughput),
            row.equal_to_oracle.to_string(),
        ]
    }

    pub fn to_csv(&self) -> String {
        let mut out = HEADER.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&Self::cells(row).join(","));
            out.push('\n');
        }
        out
    }

    /// Space-aligned plain-text table.
    pub fn to_table(&self) -> String {
        let body: Vec<[String; 10]> = self.rows.iter().map(Self::cells).collect();
        let widths: Vec<usize> = (0..HEADER.len())
            .map(|c| {
                body.iter()
                    .map(|r| r[c].len())
                    .chain([HEADER[c].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut out = String::new();
        let line = |out: &mut String, cells: &mut dyn Iterator<Item = &str>| {
            let parts: Vec<String> = cells.zip(&widths).map(|(s, &w)| format!("{s:>w$}")).collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(&mut out, &mut HEADER.iter().copied());
        for r in &body {
            line(&mut out, &mut r.iter().map(String::as_str));
        }
        out
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Feature map with entries uniform in `[-1, 1)`.
pub fn random_feature_map(height: usize, width: usize, channels: usize, seed: u64) -> FeatureMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..height * width * channels)
        .map(|_| rng.gen_range(-1.0f32..1.0))
        .collect();
    FeatureMap::new(height, width, channels, data).expect("finite by construction")
}

/// One discarded warm-up call, then `reps` timed calls.
fn time_reps(reps: usize, mut f: impl FnMut() -> Result<()>) -> Result<Vec<f64>> {
    f()?;
    (0..reps)
        .map(|_| {
            let clock = Instant::now();
            f()?;
            Ok(clock.elapsed().as_secs_f64())
        })
        .collect()
}

fn check_against(oracle: &SampledMatrix, fast: &SampledMatrix) -> Result<()> {
    match oracle.first_difference(fast) {
        None => Ok(()),
        Some((query, direction, channel)) => Err(Error::OracleMismatch {
            implementation: DIRECTION_SHIFT.into(),
            query,
            direction,
            channel,
        }),
    }
}

/// Times the gather oracle against direction-shift sampling with aligned
/// references for each `(H, W, D)` geometry and window size. Both write into
/// an output buffer allocated once per configuration, so page-fault cost of
/// a fresh allocation stays out of the kernel timings.
pub fn run_sampling_bench(
    geometries: &[(usize, usize, usize)],
    windows: &[usize],
    reps: usize,
    parallel: bool,
    seed: u64,
) -> Result<BenchReport> {
    if reps < MIN_REPETITIONS {
        return Err(Error::InvalidConfig(format!(
            "at least {MIN_REPETITIONS} repetitions required, got {reps}"
        )));
    }
    if geometries.is_empty() || windows.is_empty() {
        return Err(Error::InvalidConfig("empty geometry or window list".into()));
    }
    let shift = if parallel { sample_shift_parallel } else { sample_shift };
    let mut report = BenchReport::default();
    for (g, &(h, w, d)) in geometries.iter().enumerate() {
        if h == 0 || w == 0 || d == 0 {
            return Err(Error::EmptyTensor);
        }
        let map = random_feature_map(h, w, d, seed.wrapping_add(g as u64));
        let refs = aligned_references(h, w);
        for &k in windows {
            let dirs = DirectionSet::new(k)?;
            let oracle = sample_gather(&map, &refs, &dirs)?;
            check_against(&oracle, &shift(&map, &refs, &dirs)?)?;
            let elements = (h * w * dirs.len() * d) as f64;
            let mut buf = SampledMatrix::for_sampling(&refs, &dirs, d);
            let gather_times = time_reps(reps, || sample_gather_into(&map, &refs, &dirs, &mut buf))?;
            let shift_times = time_reps(reps, || sample_shift_into(&map, &refs, &dirs, parallel, &mut buf))?;
            check_against(&oracle, &buf)?;
            drop((oracle, buf));
            for (name, times) in [(GATHER_ORACLE, gather_times), (DIRECTION_SHIFT, shift_times)] {
                let (mean_s, std_s) = mean_std(&times);
                report.rows.push(BenchRow {
                    implementation: name.into(),
                    height: h,
                    width: w,
                    channels: d,
                    window: k,
                    repetitions: reps,
                    mean_s,
                    std_s,
                    throughput: elements / mean_s,
                    equal_to_oracle: true,
                });
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    /// Window size or keyframe interval, depending on the sweep.
    pub value: usize,
    /// Mean candidates per query element over frames 2..T.
    pub candidates_per_frame: f64,
    /// Fastest total matching time over the repetitions.
    pub matching_s: f64,
    /// Query elements matched per second.
    pub throughput: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub parameter: &'static str,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{},candidates_per_frame,matching_s,elements_per_s\n", self.parameter);
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:.3},{:.6},{:.4e}",
                r.value, r.candidates_per_frame, r.matching_s, r.throughput
            );
        }
        out
    }
}

fn sweep(
    parameter: &'static str,
    video: &SynthConfig,
    values: &[usize],
    reps: usize,
    configure: impl Fn(usize) -> MatchConfig,
) -> Result<SweepReport> {
    if reps == 0 || values.is_empty() {
        return Err(Error::InvalidConfig("empty sweep".into()));
    }
    let seq = synthesize_video(video)?;
    let queries = (video.height * video.width * video.frames.saturating_sub(1)) as f64;
    let configs: Vec<MatchConfig> = values.iter().map(|&v| configure(v)).collect();
    let mut best = vec![f64::INFINITY; values.len()];
    let mut candidates = vec![0.0; values.len()];
    // round-robin so a slow stretch of machine time does not land on one value
    for _ in 0..reps {
        for (i, config) in configs.iter().enumerate() {
            let out = segment_video(&seq, config)?;
            best[i] = best[i].min(out.matching_seconds());
            let total: usize = out.candidates.iter().sum();
            candidates[i] = total as f64 / (out.candidates.len().saturating_sub(1)).max(1) as f64;
        }
    }
    let rows = values
        .iter()
        .zip(best.iter().zip(&candidates))
        .map(|(&value, (&s, &c))| SweepRow {
            value,
            candidates_per_frame: c,
            matching_s: s,
            throughput: queries / s,
        })
        .collect();
    Ok(SweepReport { parameter, rows })
}

/// Matching-stage timing as the window size varies.
pub fn window_sweep(video: &SynthConfig, base: &MatchConfig, windows: &[usize], reps: usize) -> Result<SweepReport> {
    sweep("k", video, windows, reps, |k| MatchConfig {
        window: k,
        ..base.clone()
    })
}

/// Matching-stage timing and candidate counts as the keyframe interval varies.
pub fn keyframe_sweep(
    video: &SynthConfig,
    base: &MatchConfig,
    intervals: &[usize],
    reps: usize,
) -> Result<SweepReport> {
    sweep("r", video, intervals, reps, |r| MatchConfig {
        keyframe_interval: r,
        ..base.clone()
    })
}

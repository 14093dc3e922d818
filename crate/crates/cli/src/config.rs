//! Run settings: command-line flags over a `key=value` file over defaults.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};
use clap::Args;

use localmatch::contrastive::DEFAULT_TEMPERATURE;
use localmatch::{MatchConfig, ReferenceMode};

/// A problem with how the tool was invoked; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Keys accepted in a config file.
pub const CONFIG_KEYS: &[&str] = &[
    "k",
    "r",
    "mode",
    "top_t",
    "coarse_patch",
    "capacity",
    "parallel",
    "tau",
    "seed",
    "noise",
    "tolerance",
    "out",
];

#[derive(Debug, Clone, Default, Args)]
pub struct SharedArgs {
    /// Local window side (odd)
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// Keyframe interval
    #[arg(long, global = true)]
    pub r: Option<usize>,
    /// Reference mode: aligned or guided
    #[arg(long, global = true)]
    pub mode: Option<ReferenceMode>,
    /// References kept per query in guided mode
    #[arg(long = "top-t", global = true)]
    pub top_t: Option<usize>,
    /// Coarse patch side for guided reference search
    #[arg(long = "coarse-patch", global = true)]
    pub coarse_patch: Option<usize>,
    /// Maximum memory entries
    #[arg(long, global = true)]
    pub capacity: Option<usize>,
    /// Use the rayon worker pool
    #[arg(long, global = true)]
    pub parallel: bool,
    /// Contrastive temperature
    #[arg(long, global = true)]
    pub tau: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Uniform noise amplitude for synthetic videos
    #[arg(long, global = true)]
    pub noise: Option<f32>,
    /// Boundary tolerance in pixels for contour accuracy
    #[arg(long, global = true)]
    pub tolerance: Option<usize>,
    /// Output directory (or file, for eval)
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Plain-text key=value settings file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

/// Resolved settings.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub matching: MatchConfig,
    pub tau: f64,
    pub seed: u64,
    pub noise: f32,
    pub tolerance: Option<usize>,
    pub out: Option<PathBuf>,
}

/// Parses `key=value` lines; `#` starts a comment, `-` in keys reads as `_`.
pub fn parse_config_file(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(usage(format!(
                "config line {}: expected key=value, got `{line}`",
                n + 1
            )));
        };
        let key = key.trim().replace('-', "_");
        if !CONFIG_KEYS.contains(&key.as_str()) {
            return Err(usage(format!("config line {}: unknown key `{key}`", n + 1)));
        }
        out.insert(key, value.trim().to_string());
    }
    Ok(out)
}

fn from_file<T: FromStr>(file: &BTreeMap<String, String>, key: &str) -> Result<Option<T>>
where
    T::Err: fmt::Display,
{
    file.get(key)
        .map(|v| v.parse::<T>().map_err(|e| usage(format!("config key `{key}`: {e}"))))
        .transpose()
}

fn pick<T: FromStr>(flag: Option<T>, file: &BTreeMap<String, String>, key: &str) -> Result<Option<T>>
where
    T::Err: fmt::Display,
{
    Ok(match flag {
        Some(v) => Some(v),
        None => from_file(file, key)?,
    })
}

fn load_file(path: Option<&Path>) -> Result<BTreeMap<String, String>> {
    match path {
        None => Ok(BTreeMap::new()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            parse_config_file(&text)
        }
    }
}

impl RunConfig {
    pub fn resolve(args: &SharedArgs, default_noise: f32) -> Result<Self> {
        let file = load_file(args.config.as_deref())?;
        let defaults = MatchConfig::default();
        let parallel = args.parallel || from_file::<bool>(&file, "parallel")?.unwrap_or(false);
        let matching = MatchConfig {
            window: pick(args.k, &file, "k")?.unwrap_or(defaults.window),
            keyframe_interval: pick(args.r, &file, "r")?.unwrap_or(defaults.keyframe_interval),
            mode: pick(args.mode, &file, "mode")?.unwrap_or(defaults.mode),
            top_t: pick(args.top_t, &file, "top_t")?.unwrap_or(defaults.top_t),
            coarse_patch: pick(args.coarse_patch, &file, "coarse_patch")?.unwrap_or(defaults.coarse_patch),
            capacity: pick(args.capacity, &file, "capacity")?,
            parallel,
        };
        matching.validate().map_err(|e| usage(e.to_string()))?;
        let tau = pick(args.tau, &file, "tau")?.unwrap_or(DEFAULT_TEMPERATURE);
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(usage(format!("temperature must be positive and finite, got {tau}")));
        }
        let noise = pick(args.noise, &file, "noise")?.unwrap_or(default_noise);
        if !(noise >= 0.0 && noise.is_finite()) {
            return Err(usage(format!("noise amplitude must be >= 0, got {noise}")));
        }
        Ok(Self {
            matching,
            tau,
            seed: pick(args.seed, &file, "seed")?.unwrap_or(0),
            noise,
            tolerance: pick(args.tolerance, &file, "tolerance")?,
            out: pick(args.out.clone(), &file, "out")?,
        })
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.out.as_deref().ok_or_else(|| usage("--out is required"))
    }
}

/// `HxW` or `HxWxD`.
pub fn parse_dims(text: &str, parts: usize) -> Result<Vec<usize>> {
    let dims: Vec<usize> = text
        .split('x')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| usage(format!("bad size `{text}`")))?;
    if dims.len() != parts || dims.contains(&0) {
        return Err(usage(format!(
            "bad size `{text}`: expected {parts} positive values joined by x"
        )));
    }
    Ok(dims)
}

pub fn parse_list<T: FromStr>(text: &str) -> Result<Vec<T>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|_| usage(format!("bad list entry `{s}` in `{text}`")))
        })
        .collect()
}

/// `dy,dx` steps separated by `;`.
pub fn parse_motion(text: &str) -> Result<Vec<(i32, i32)>> {
    text.split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|step| {
            let v: Vec<i32> = parse_list(step)?;
            match v[..] {
                [dy, dx] => Ok((dy, dx)),
                _ => Err(usage(format!("bad motion step `{step}`, expected dy,dx"))),
            }
        })
        .collect()
}

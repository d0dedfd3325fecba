//! Run configuration: every module's knobs in one structure, serialized
//! as a line-oriented `key = value` format with `[section]` headers.
//! Unknown sections or keys are rejected; `parse(render(c)) == c`.

use std::fmt::Write as _;

use super::PipelineError;
use crate::geometry::{AugmentConfig, ZAnchor, ZPolicy};
use crate::metrics::EmptyPolicy;
use crate::numerics::{LossConfig, ScheduleConfig};
use crate::sampler::SamplerConfig;
use crate::stats::{PValueMode, StatConfig, ZeroDiffPolicy};

/// PET intensity normalization choice. The per-volume min-max map is the
/// default; a fixed window is available for dataset-global normalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PetRescale {
    MinMax,
    Fixed { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrepConfig {
    /// Common resampling spacing for the head-and-neck pipeline, mm.
    pub common_spacing: (f64, f64, f64),
    pub hecktor_crop: (usize, usize, usize),
    /// Whole-body crop target; `None` keeps native extents.
    pub autopet_crop: Option<(usize, usize, usize)>,
    pub z_policy: ZPolicy,
    pub z_anchor: ZAnchor,
    pub label_gtvp: u32,
    pub label_gtvn: u32,
    pub pet_rescale: PetRescale,
    /// When set, whole-body cases whose spacing disagrees with this are
    /// failed instead of silently accepted.
    pub autopet_expected_spacing: Option<(f64, f64, f64)>,
    /// Threshold for binarizing soft predictions and priors.
    pub binarize_threshold: f64,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self {
            common_spacing: (1.0, 1.0, 1.0),
            hecktor_crop: (192, 192, 192),
            autopet_crop: Some((192, 192, 224)),
            z_policy: ZPolicy::Top,
            z_anchor: ZAnchor::High,
            label_gtvp: 1,
            label_gtvn: 2,
            pet_rescale: PetRescale::MinMax,
            autopet_expected_spacing: None,
            binarize_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: Option<String>,
    pub prep: PrepConfig,
    pub sampler: SamplerConfig,
    pub augment: AugmentConfig,
    pub loss: LossConfig,
    /// No silent default: pipeline paths that need the schedule require it
    /// to be configured explicitly.
    pub schedule: Option<ScheduleConfig>,
    pub stats: StatConfig,
    pub empty_policy: EmptyPolicy,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: None,
            prep: PrepConfig::default(),
            sampler: SamplerConfig::default(),
            augment: AugmentConfig::default(),
            loss: LossConfig::default(),
            schedule: None,
            stats: StatConfig::default(),
            empty_policy: EmptyPolicy::One,
        }
    }
}

impl RunConfig {
    /// Propagate the global seed into every sub-config that draws.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.sync_seeds();
        self
    }

    fn sync_seeds(&mut self) {
        self.sampler.seed = self.seed;
        self.augment.seed = self.seed;
        self.stats.seed = self.seed;
    }
}

fn err(line: usize, msg: impl Into<String>) -> PipelineError {
    PipelineError::Config(format!("line {line}: {}", msg.into()))
}

fn parse_f64(v: &str, line: usize) -> Result<f64, PipelineError> {
    v.parse::<f64>().map_err(|_| err(line, format!("bad number {v:?}")))
}

fn parse_u64(v: &str, line: usize) -> Result<u64, PipelineError> {
    v.parse::<u64>().map_err(|_| err(line, format!("bad integer {v:?}")))
}

fn parse_u32(v: &str, line: usize) -> Result<u32, PipelineError> {
    v.parse::<u32>().map_err(|_| err(line, format!("bad integer {v:?}")))
}

fn parse_usize(v: &str, line: usize) -> Result<usize, PipelineError> {
    v.parse::<usize>().map_err(|_| err(line, format!("bad integer {v:?}")))
}

fn split3(v: &str, line: usize) -> Result<(&str, &str, &str), PipelineError> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(err(line, format!("expected three comma-separated values, got {v:?}")));
    }
    Ok((parts[0], parts[1], parts[2]))
}

fn parse_f64x3(v: &str, line: usize) -> Result<(f64, f64, f64), PipelineError> {
    let (a, b, c) = split3(v, line)?;
    Ok((parse_f64(a, line)?, parse_f64(b, line)?, parse_f64(c, line)?))
}

fn parse_usizex3(v: &str, line: usize) -> Result<(usize, usize, usize), PipelineError> {
    let (a, b, c) = split3(v, line)?;
    Ok((parse_usize(a, line)?, parse_usize(b, line)?, parse_usize(c, line)?))
}

fn parse_boolx3(v: &str, line: usize) -> Result<(bool, bool, bool), PipelineError> {
    let flag = |s: &str| match s {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(err(line, format!("expected 0 or 1, got {other:?}"))),
    };
    let (a, b, c) = split3(v, line)?;
    Ok((flag(a)?, flag(b)?, flag(c)?))
}

fn parse_pair(v: &str, line: usize) -> Result<(f64, f64), PipelineError> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(err(line, format!("expected two comma-separated values, got {v:?}")));
    }
    Ok((parse_f64(parts[0], line)?, parse_f64(parts[1], line)?))
}

fn parse_schedule_list(v: &str, line: usize) -> Result<Vec<(u32, f64)>, PipelineError> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|item| {
            let (e, p) = item
                .split_once(':')
                .ok_or_else(|| err(line, format!("expected epoch:probability, got {item:?}")))?;
            Ok((parse_u32(e.trim(), line)?, parse_f64(p.trim(), line)?))
        })
        .collect()
}

/// Parse the documented config text. Only keys rendered by [`render`] are
/// accepted.
pub fn parse(text: &str) -> Result<RunConfig, PipelineError> {
    let mut cfg = RunConfig::default();
    let mut schedule = ScheduleConfig::new(f64::NAN, 1);
    let mut schedule_touched = false;
    let mut section = String::new();

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            section = name.trim().to_string();
            match section.as_str() {
                "run" | "prep" | "sampler" | "augment" | "loss" | "schedule" | "stats"
                | "metrics" => {}
                other => return Err(err(line_no, format!("unknown section [{other}]"))),
            }
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(line_no, format!("expected key = value, got {line:?}")))?;
        let key = key.trim();
        let v = value.trim();
        let unknown = || err(line_no, format!("unknown key {key:?} in section [{section}]"));

        match section.as_str() {
            "run" => match key {
                "seed" => cfg.seed = parse_u64(v, line_no)?,
                "output_dir" => cfg.output_dir = (!v.is_empty()).then(|| v.to_string()),
                _ => return Err(unknown()),
            },
            "prep" => match key {
                "common_spacing" => cfg.prep.common_spacing = parse_f64x3(v, line_no)?,
                "hecktor_crop" => cfg.prep.hecktor_crop = parse_usizex3(v, line_no)?,
                "autopet_crop" => {
                    cfg.prep.autopet_crop = if v == "none" {
                        None
                    } else {
                        Some(parse_usizex3(v, line_no)?)
                    }
                }
                "z_policy" => {
                    cfg.prep.z_policy = match v {
                        "top" => ZPolicy::Top,
                        "center" => ZPolicy::Center,
                        other => return Err(err(line_no, format!("unknown z_policy {other:?}"))),
                    }
                }
                "z_anchor" => {
                    cfg.prep.z_anchor = ZAnchor::parse(v)
                        .ok_or_else(|| err(line_no, format!("unknown z_anchor {v:?}")))?
                }
                "label_gtvp" => cfg.prep.label_gtvp = parse_u32(v, line_no)?,
                "label_gtvn" => cfg.prep.label_gtvn = parse_u32(v, line_no)?,
                "pet_rescale" => {
                    cfg.prep.pet_rescale = if v == "minmax" {
                        PetRescale::MinMax
                    } else if let Some(win) = v.strip_prefix("fixed:") {
                        let (lo, hi) = parse_pair(win, line_no)?;
                        PetRescale::Fixed { lo, hi }
                    } else {
                        return Err(err(line_no, format!("unknown pet_rescale {v:?}")));
                    }
                }
                "autopet_expected_spacing" => {
                    cfg.prep.autopet_expected_spacing = if v == "none" {
                        None
                    } else {
                        Some(parse_f64x3(v, line_no)?)
                    }
                }
                "binarize_threshold" => cfg.prep.binarize_threshold = parse_f64(v, line_no)?,
                _ => return Err(unknown()),
            },
            "sampler" => match key {
                "patch_shape" => cfg.sampler.patch_shape = parse_usizex3(v, line_no)?,
                "samples_per_volume" => cfg.sampler.samples_per_volume = parse_usize(v, line_no)?,
                "fg_probability" => cfg.sampler.fg_probability = parse_f64(v, line_no)?,
                "fg_schedule" => cfg.sampler.fg_schedule = parse_schedule_list(v, line_no)?,
                _ => return Err(unknown()),
            },
            "augment" => match key {
                "flip_axes" => cfg.augment.flip_axes = parse_boolx3(v, line_no)?,
                "flip_probability" => cfg.augment.flip_probability = parse_f64(v, line_no)?,
                "rotation_max_deg" => cfg.augment.rotation_max_deg = parse_f64x3(v, line_no)?,
                "scale_range" => cfg.augment.scale_range = parse_pair(v, line_no)?,
                "translation_max_mm" => cfg.augment.translation_max_mm = parse_f64x3(v, line_no)?,
                "gaussian_noise_std" => cfg.augment.gaussian_noise_std = parse_f64(v, line_no)?,
                "gamma_range" => cfg.augment.gamma_range = parse_pair(v, line_no)?,
                "transform_probability" => {
                    cfg.augment.transform_probability = parse_f64(v, line_no)?
                }
                _ => return Err(unknown()),
            },
            "loss" => match key {
                "dice_weight" => cfg.loss.dice_weight = parse_f64(v, line_no)?,
                "focal_weight" => cfg.loss.focal_weight = parse_f64(v, line_no)?,
                "focal_gamma" => cfg.loss.focal_gamma = parse_f64(v, line_no)?,
                "focal_alpha" => cfg.loss.focal_alpha = parse_f64(v, line_no)?,
                "smooth_eps" => cfg.loss.smooth_eps = parse_f64(v, line_no)?,
                _ => return Err(unknown()),
            },
            "schedule" => {
                schedule_touched = true;
                match key {
                    "eta_max" => schedule.eta_max = parse_f64(v, line_no)?,
                    "eta_min" => schedule.eta_min = parse_f64(v, line_no)?,
                    "t_0" => schedule.t_0 = parse_u64(v, line_no)?,
                    "t_mult" => schedule.t_mult = parse_u64(v, line_no)?,
                    _ => return Err(unknown()),
                }
            }
            "stats" => match key {
                "alpha" => cfg.stats.alpha = parse_f64(v, line_no)?,
                "n_bootstrap" => cfg.stats.n_bootstrap = parse_usize(v, line_no)?,
                "zero_diff_policy" => {
                    cfg.stats.zero_diff_policy = ZeroDiffPolicy::parse(v)
                        .ok_or_else(|| err(line_no, format!("unknown zero_diff_policy {v:?}")))?
                }
                "mode" => {
                    cfg.stats.mode = PValueMode::parse(v)
                        .ok_or_else(|| err(line_no, format!("unknown mode {v:?}")))?
                }
                _ => return Err(unknown()),
            },
            "metrics" => match key {
                "empty_empty" => {
                    cfg.empty_policy = EmptyPolicy::parse(v)
                        .ok_or_else(|| err(line_no, format!("unknown empty_empty {v:?}")))?
                }
                _ => return Err(unknown()),
            },
            "" => return Err(err(line_no, "key outside any [section]")),
            _ => unreachable!("section validated on entry"),
        }
    }

    if schedule_touched {
        if !schedule.eta_max.is_finite() {
            return Err(PipelineError::Config(
                "[schedule] requires eta_max".to_string(),
            ));
        }
        schedule.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.schedule = Some(schedule);
    }
    cfg.sync_seeds();
    Ok(cfg)
}

pub fn parse_file(path: &std::path::Path) -> Result<RunConfig, PipelineError> {
    let text = std::fs::read_to_string(path)?;
    parse(&text)
}

/// Render the full config (every key, fixed order).
pub fn render(cfg: &RunConfig) -> String {
    let mut s = String::new();
    let t3f = |t: (f64, f64, f64)| format!("{},{},{}", t.0, t.1, t.2);
    let t3u = |t: (usize, usize, usize)| format!("{},{},{}", t.0, t.1, t.2);
    let t3b = |t: (bool, bool, bool)| {
        format!("{},{},{}", u8::from(t.0), u8::from(t.1), u8::from(t.2))
    };
    let pair = |t: (f64, f64)| format!("{},{}", t.0, t.1);

    writeln!(s, "[run]").unwrap();
    writeln!(s, "seed = {}", cfg.seed).unwrap();
    writeln!(s, "output_dir = {}", cfg.output_dir.as_deref().unwrap_or("")).unwrap();

    writeln!(s, "\n[prep]").unwrap();
    writeln!(s, "common_spacing = {}", t3f(cfg.prep.common_spacing)).unwrap();
    writeln!(s, "hecktor_crop = {}", t3u(cfg.prep.hecktor_crop)).unwrap();
    writeln!(
        s,
        "autopet_crop = {}",
        cfg.prep.autopet_crop.map_or("none".to_string(), t3u)
    )
    .unwrap();
    writeln!(
        s,
        "z_policy = {}",
        match cfg.prep.z_policy {
            ZPolicy::Top => "top",
            ZPolicy::Center => "center",
        }
    )
    .unwrap();
    writeln!(s, "z_anchor = {}", cfg.prep.z_anchor.as_str()).unwrap();
    writeln!(s, "label_gtvp = {}", cfg.prep.label_gtvp).unwrap();
    writeln!(s, "label_gtvn = {}", cfg.prep.label_gtvn).unwrap();
    writeln!(
        s,
        "pet_rescale = {}",
        match cfg.prep.pet_rescale {
            PetRescale::MinMax => "minmax".to_string(),
            PetRescale::Fixed { lo, hi } => format!("fixed:{lo},{hi}"),
        }
    )
    .unwrap();
    writeln!(
        s,
        "autopet_expected_spacing = {}",
        cfg.prep
            .autopet_expected_spacing
            .map_or("none".to_string(), t3f)
    )
    .unwrap();
    writeln!(s, "binarize_threshold = {}", cfg.prep.binarize_threshold).unwrap();

    writeln!(s, "\n[sampler]").unwrap();
    writeln!(s, "patch_shape = {}", t3u(cfg.sampler.patch_shape)).unwrap();
    writeln!(s, "samples_per_volume = {}", cfg.sampler.samples_per_volume).unwrap();
    writeln!(s, "fg_probability = {}", cfg.sampler.fg_probability).unwrap();
    let sched = cfg
        .sampler
        .fg_schedule
        .iter()
        .map(|(e, p)| format!("{e}:{p}"))
        .collect::<Vec<_>>()
        .join(",");
    writeln!(s, "fg_schedule = {sched}").unwrap();

    writeln!(s, "\n[augment]").unwrap();
    writeln!(s, "flip_axes = {}", t3b(cfg.augment.flip_axes)).unwrap();
    writeln!(s, "flip_probability = {}", cfg.augment.flip_probability).unwrap();
    writeln!(s, "rotation_max_deg = {}", t3f(cfg.augment.rotation_max_deg)).unwrap();
    writeln!(s, "scale_range = {}", pair(cfg.augment.scale_range)).unwrap();
    writeln!(s, "translation_max_mm = {}", t3f(cfg.augment.translation_max_mm)).unwrap();
    writeln!(s, "gaussian_noise_std = {}", cfg.augment.gaussian_noise_std).unwrap();
    writeln!(s, "gamma_range = {}", pair(cfg.augment.gamma_range)).unwrap();
    writeln!(s, "transform_probability = {}", cfg.augment.transform_probability).unwrap();

    writeln!(s, "\n[loss]").unwrap();
    writeln!(s, "dice_weight = {}", cfg.loss.dice_weight).unwrap();
    writeln!(s, "focal_weight = {}", cfg.loss.focal_weight).unwrap();
    writeln!(s, "focal_gamma = {}", cfg.loss.focal_gamma).unwrap();
    writeln!(s, "focal_alpha = {}", cfg.loss.focal_alpha).unwrap();
    writeln!(s, "smooth_eps = {}", cfg.loss.smooth_eps).unwrap();

    if let Some(sch) = &cfg.schedule {
        writeln!(s, "\n[schedule]").unwrap();
        writeln!(s, "eta_max = {}", sch.eta_max).unwrap();
        writeln!(s, "eta_min = {}", sch.eta_min).unwrap();
        writeln!(s, "t_0 = {}", sch.t_0).unwrap();
        writeln!(s, "t_mult = {}", sch.t_mult).unwrap();
    }

    writeln!(s, "\n[stats]").unwrap();
    writeln!(s, "alpha = {}", cfg.stats.alpha).unwrap();
    writeln!(s, "n_bootstrap = {}", cfg.stats.n_bootstrap).unwrap();
    writeln!(s, "zero_diff_policy = {}", cfg.stats.zero_diff_policy.as_str()).unwrap();
    writeln!(s, "mode = {}", cfg.stats.mode.as_str()).unwrap();

    writeln!(s, "\n[metrics]").unwrap();
    writeln!(s, "empty_empty = {}", cfg.empty_policy.as_str()).unwrap();
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let text = render(&cfg);
        let back = parse(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn customized_config_round_trips() {
        let mut cfg = RunConfig::default().with_seed(12345);
        cfg.output_dir = Some("out/run1".into());
        cfg.prep.common_spacing = (2.0, 2.0, 3.0);
        cfg.prep.autopet_crop = None;
        cfg.prep.pet_rescale = PetRescale::Fixed { lo: 0.0, hi: 25.5 };
        cfg.prep.autopet_expected_spacing = Some((2.036, 2.036, 3.0));
        cfg.sampler.fg_schedule = vec![(0, 0.9), (10, 0.5)];
        cfg.schedule = Some(ScheduleConfig {
            eta_max: 0.001,
            eta_min: 1e-6,
            t_0: 50,
            t_mult: 2,
        });
        cfg.stats.n_bootstrap = 500;
        cfg.empty_policy = crate::metrics::EmptyPolicy::Exclude;
        let back = parse(&render(&cfg)).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_and_sections_rejected() {
        assert!(matches!(
            parse("[run]\nseed = 3\nbogus = 1\n"),
            Err(PipelineError::Config(_))
        ));
        assert!(matches!(
            parse("[warp]\nspeed = 9\n"),
            Err(PipelineError::Config(_))
        ));
        assert!(matches!(
            parse("seed = 3\n"),
            Err(PipelineError::Config(_))
        ));
    }

    #[test]
    fn seed_propagates_to_subconfigs() {
        let cfg = parse("[run]\nseed = 77\n").unwrap();
        assert_eq!(cfg.sampler.seed, 77);
        assert_eq!(cfg.augment.seed, 77);
        assert_eq!(cfg.stats.seed, 77);
    }

    #[test]
    fn schedule_requires_eta_max() {
        assert!(matches!(
            parse("[schedule]\nt_0 = 10\n"),
            Err(PipelineError::Config(_))
        ));
        let cfg = parse("[schedule]\neta_max = 0.01\nt_0 = 10\n").unwrap();
        let sch = cfg.schedule.unwrap();
        assert_eq!(sch.eta_max, 0.01);
        assert_eq!(sch.t_mult, 1);
    }

    #[test]
    fn comments_and_blanks_ignored() {
        let cfg = parse("# top comment\n\n[run]\n# inner\nseed = 5\n").unwrap();
        assert_eq!(cfg.seed, 5);
    }
}

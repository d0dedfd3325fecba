//! Patch extraction for patch-based training: fixed-size windows drawn
//! around foreground voxels with a configured probability, uniformly over
//! the admissible window positions otherwise.

use thiserror::Error;

use crate::geometry::extract_window;
use crate::rng::derive_rng;
use crate::volume::{MultiChannelVolume, Volume3D, VolumeError};
use rand::Rng;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("bad sampler config: {0}")]
    BadConfig(String),
    #[error("source shape {source_shape:?} smaller than patch {patch:?}; pad the volume first")]
    PadFirst {
        source_shape: (usize, usize, usize),
        patch: (usize, usize, usize),
    },
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// Patch geometry and label-sampling policy.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub patch_shape: (usize, usize, usize),
    pub samples_per_volume: usize,
    /// Probability that a patch is centered on a foreground voxel.
    pub fg_probability: f64,
    /// Optional piecewise-constant schedule of (epoch, fg_probability)
    /// breakpoints with strictly increasing epochs. Before the first
    /// breakpoint the base `fg_probability` applies.
    pub fg_schedule: Vec<(u32, f64)>,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            patch_shape: (96, 96, 96),
            samples_per_volume: 80,
            fg_probability: 0.5,
            fg_schedule: Vec::new(),
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.patch_shape.0 < 1 || self.patch_shape.1 < 1 || self.patch_shape.2 < 1 {
            return Err(SamplerError::BadConfig("patch axes must be >= 1".into()));
        }
        if self.samples_per_volume < 1 {
            return Err(SamplerError::BadConfig(
                "samples_per_volume must be >= 1".into(),
            ));
        }
        let prob_ok = |p: f64| (0.0..=1.0).contains(&p);
        if !prob_ok(self.fg_probability) {
            return Err(SamplerError::BadConfig(format!(
                "fg_probability {} outside [0, 1]",
                self.fg_probability
            )));
        }
        for w in self.fg_schedule.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(SamplerError::BadConfig(
                    "schedule epochs must be strictly increasing".into(),
                ));
            }
        }
        if self.fg_schedule.iter().any(|&(_, p)| !prob_ok(p)) {
            return Err(SamplerError::BadConfig(
                "schedule probabilities must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// One extracted training window.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub data: MultiChannelVolume,
    pub label: Volume3D,
    pub source_case: String,
    /// Start indices of the window in the source grid.
    pub origin: (usize, usize, usize),
}

/// Foreground-centering probability in effect at `epoch`: the value of the
/// last schedule breakpoint at or before it, else the base probability.
pub fn fg_probability_at(cfg: &SamplerConfig, epoch: u32) -> f64 {
    cfg.fg_schedule
        .iter()
        .take_while(|&&(e, _)| e <= epoch)
        .last()
        .map_or(cfg.fg_probability, |&(_, p)| p)
}


/// Draw `cfg.samples_per_volume` patches from one case.
///
/// With probability `fg_probability_at(cfg, epoch)` the patch center is a
/// uniform draw over the mask's foreground voxels (window shifted inward
/// when the center sits near a border); otherwise the window position is a
/// uniform draw over all admissible positions. A mask with no foreground
/// silently degrades every draw to the uniform branch, since negative
/// cases are legitimate inputs. Deterministic in (seed, case_id, epoch).
pub fn sample_patches(
    mcv: &MultiChannelVolume,
    mask: &Volume3D,
    cfg: &SamplerConfig,
    case_id: &str,
    epoch: u32,
) -> Result<Vec<Patch>, SamplerError> {
    cfg.validate()?;
    mcv.channels()[0].same_grid(mask)?;
    let src = mcv.shape();
    let p = cfg.patch_shape;
    if src.0 < p.0 || src.1 < p.1 || src.2 < p.2 {
        return Err(SamplerError::PadFirst {
            source_shape: src,
            patch: p,
        });
    }

    let fg_indices: Vec<usize> = mask
        .data()
        .iter()
        .enumerate()
        .filter_map(|(i, &v)| (v > 0.0).then_some(i))
        .collect();
    let fg_prob = fg_probability_at(cfg, epoch);

    let max_origin = (src.0 - p.0, src.1 - p.1, src.2 - p.2);
    let clamp_center = |c: usize, half: usize, max_o: usize| -> usize {
        // window start from a drawn center, shifted inward at borders
        c.saturating_sub(half).min(max_o)
    };

    let mut rng = derive_rng(cfg.seed, &format!("sampler/{case_id}"), u64::from(epoch));
    let mut patches = Vec::with_capacity(cfg.samples_per_volume);
    for _ in 0..cfg.samples_per_volume {
        let take_fg = rng.random::<f64>() < fg_prob && !fg_indices.is_empty();
        let origin = if take_fg {
            let i = fg_indices[rng.random_range(0..fg_indices.len())];
            let cx = i % src.0;
            let cy = (i / src.0) % src.1;
            let cz = i / (src.0 * src.1);
            let o = (
                clamp_center(cx, p.0 / 2, max_origin.0),
                clamp_center(cy, p.1 / 2, max_origin.1),
                clamp_center(cz, p.2 / 2, max_origin.2),
            );
            // the drawn center must stay inside the shifted window
            debug_assert!(cx >= o.0 && cx < o.0 + p.0);
            debug_assert!(cy >= o.1 && cy < o.1 + p.1);
            debug_assert!(cz >= o.2 && cz < o.2 + p.2);
            o
        } else {
            (
                rng.random_range(0..=max_origin.0),
                rng.random_range(0..=max_origin.1),
                rng.random_range(0..=max_origin.2),
            )
        };

        let channels: Vec<Volume3D> = mcv
            .channels()
            .iter()
            .map(|c| extract_window(c, origin, p))
            .collect();
        let data = crate::volume::stack_channels(channels, mcv.names().to_vec())?;
        patches.push(Patch {
            data,
            label: extract_window(mask, origin, p),
            source_case: case_id.to_string(),
            origin,
        });
    }
    Ok(patches)
}

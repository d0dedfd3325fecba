//! Spatial normalization: resampling to a common spacing, deterministic
//! cropping and padding, reinsertion of predictions into the uncropped
//! grid, and randomized affine/intensity augmentation.

mod augment;

pub use augment::{apply_augment, augment, sample_params, AugmentConfig, AugmentParams};

use thiserror::Error;

use crate::volume::{Volume3D, VolumeError};

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("target spacing must be strictly positive and finite, got {0:?}")]
    BadTargetSpacing((f64, f64, f64)),
    // cannot occur given the min-1 shape clamp; reserved for format evolution
    #[error("resampled shape degenerate on axis {0}")]
    DegenerateTarget(usize),
    #[error("crop spec carries no recorded offsets; apply a crop first")]
    MissingOffsets,
    #[error(
        "offsets {found:?} inconsistent with original shape {original:?} and target {target:?} (expected {expected:?})"
    )]
    OffsetMismatch {
        found: (i64, i64, i64),
        expected: (i64, i64, i64),
        original: (usize, usize, usize),
        target: (usize, usize, usize),
    },
    #[error("prediction shape {0:?} does not match crop target {1:?}")]
    WindowShapeMismatch((usize, usize, usize), (usize, usize, usize)),
    #[error("bad augmentation config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// Interpolation mode: trilinear for image intensities, nearest-neighbor
/// for label masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interp {
    Trilinear,
    Nearest,
}

/// Where the crop window sits along z. The sagittal/coronal (x/y) window is
/// always centered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ZPolicy {
    /// Anchor at the anatomical top of the scan (see [`ZAnchor`]).
    #[default]
    Top,
    Center,
}

/// Which index end of the z axis holds the anatomical top. Orientation
/// conventions vary between exports, so both are supported; the choice is
/// recorded in run metadata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ZAnchor {
    /// Highest z indices are the top (head-first convention). Default.
    #[default]
    High,
    Low,
}

impl ZAnchor {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "high" => Some(ZAnchor::High),
            "low" => Some(ZAnchor::Low),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ZAnchor::High => "high",
            ZAnchor::Low => "low",
        }
    }
}

/// Crop geometry. `recorded_offsets` is filled when the crop is applied and
/// is the start index of the window in the source grid per axis; negative
/// values mean the source was padded on that axis.
#[derive(Debug, Clone, PartialEq)]
pub struct CropSpec {
    pub target_shape: (usize, usize, usize),
    pub policy_z: ZPolicy,
    pub z_anchor: ZAnchor,
    pub recorded_offsets: Option<(i64, i64, i64)>,
}

impl CropSpec {
    pub fn new(target_shape: (usize, usize, usize)) -> Self {
        Self {
            target_shape,
            policy_z: ZPolicy::Top,
            z_anchor: ZAnchor::High,
            recorded_offsets: None,
        }
    }

    pub fn with_policy_z(mut self, policy: ZPolicy) -> Self {
        self.policy_z = policy;
        self
    }

    pub fn with_z_anchor(mut self, anchor: ZAnchor) -> Self {
        self.z_anchor = anchor;
        self
    }

    fn expected_offsets(&self, source: (usize, usize, usize)) -> (i64, i64, i64) {
        let centered = |n: usize, t: usize| -> i64 {
            if n >= t {
                ((n - t) / 2) as i64
            } else {
                -(((t - n) / 2) as i64)
            }
        };
        let z = {
            let (n, t) = (source.2, self.target_shape.2);
            if n < t {
                // undersized axes always pad symmetrically
                centered(n, t)
            } else {
                match (self.policy_z, self.z_anchor) {
                    (ZPolicy::Center, _) => centered(n, t),
                    (ZPolicy::Top, ZAnchor::High) => (n - t) as i64,
                    (ZPolicy::Top, ZAnchor::Low) => 0,
                }
            }
        };
        (
            centered(source.0, self.target_shape.0),
            centered(source.1, self.target_shape.1),
            z,
        )
    }
}

fn round_shape(n: usize, s_src: f64, s_tgt: f64) -> usize {
    // round half away from zero, floor-clamped to one voxel
    ((n as f64 * s_src / s_tgt).round() as usize).max(1)
}

#[inline]
fn nearest_index(coord: f64, n: usize) -> usize {
    // round half toward negative infinity: gives uniform coverage at
    // integer upsampling ratios where every sample lands on a .5 tie
    let i = (coord - 0.5).ceil();
    (i.max(0.0) as usize).min(n - 1)
}

/// Trilinear sample at fractional voxel coordinates, edge-clamped.
pub(crate) fn sample_trilinear(vol: &Volume3D, cx: f64, cy: f64, cz: f64) -> f64 {
    let (nx, ny, nz) = vol.shape();
    let cx = cx.clamp(0.0, (nx - 1) as f64);
    let cy = cy.clamp(0.0, (ny - 1) as f64);
    let cz = cz.clamp(0.0, (nz - 1) as f64);
    let (x0, y0, z0) = (cx.floor(), cy.floor(), cz.floor());
    let (fx, fy, fz) = (cx - x0, cy - y0, cz - z0);
    let (x0, y0, z0) = (x0 as usize, y0 as usize, z0 as usize);
    let x1 = (x0 + 1).min(nx - 1);
    let y1 = (y0 + 1).min(ny - 1);
    let z1 = (z0 + 1).min(nz - 1);

    let c000 = vol.get(x0, y0, z0);
    let c100 = vol.get(x1, y0, z0);
    let c010 = vol.get(x0, y1, z0);
    let c110 = vol.get(x1, y1, z0);
    let c001 = vol.get(x0, y0, z1);
    let c101 = vol.get(x1, y0, z1);
    let c011 = vol.get(x0, y1, z1);
    let c111 = vol.get(x1, y1, z1);

    let c00 = c000 * (1.0 - fx) + c100 * fx;
    let c10 = c010 * (1.0 - fx) + c110 * fx;
    let c01 = c001 * (1.0 - fx) + c101 * fx;
    let c11 = c011 * (1.0 - fx) + c111 * fx;
    let c0 = c00 * (1.0 - fy) + c10 * fy;
    let c1 = c01 * (1.0 - fy) + c11 * fy;
    c0 * (1.0 - fz) + c1 * fz
}

pub(crate) fn sample_nearest(vol: &Volume3D, cx: f64, cy: f64, cz: f64) -> f64 {
    let (nx, ny, nz) = vol.shape();
    vol.get(
        nearest_index(cx, nx),
        nearest_index(cy, ny),
        nearest_index(cz, nz),
    )
}

/// Resample onto `target_spacing`. Output shape per axis is
/// `round(n * s_src / s_tgt)` (half away from zero, min 1) and voxel
/// centers stay aligned at index zero, so resampling at the source spacing
/// is the identity.
pub fn resample(
    vol: &Volume3D,
    target_spacing: (f64, f64, f64),
    mode: Interp,
) -> Result<Volume3D, GeometryError> {
    let (nx, ny, nz) = vol.shape();
    let (sx, sy, sz) = vol.spacing();
    let ok = |s: f64| s.is_finite() && s > 0.0;
    if !(ok(target_spacing.0) && ok(target_spacing.1) && ok(target_spacing.2)) {
        return Err(GeometryError::BadTargetSpacing(target_spacing));
    }
    let out_shape = (
        round_shape(nx, sx, target_spacing.0),
        round_shape(ny, sy, target_spacing.1),
        round_shape(nz, sz, target_spacing.2),
    );
    if target_spacing == vol.spacing() && mode == Interp::Nearest {
        // exact identity short-circuit
        return Ok(vol.clone());
    }
    resample_onto(vol, target_spacing, out_shape, mode)
}

/// Resample onto an explicit grid: output voxel `i` samples source index
/// coordinate `i * s_tgt / s_src` per axis (index-zero center alignment).
/// Lets a caller reverse an earlier resample exactly even when shape
/// rounding is not invertible.
pub fn resample_onto(
    vol: &Volume3D,
    target_spacing: (f64, f64, f64),
    target_shape: (usize, usize, usize),
    mode: Interp,
) -> Result<Volume3D, GeometryError> {
    let ok = |s: f64| s.is_finite() && s > 0.0;
    if !(ok(target_spacing.0) && ok(target_spacing.1) && ok(target_spacing.2)) {
        return Err(GeometryError::BadTargetSpacing(target_spacing));
    }
    vol.ensure_finite()?;
    let (sx, sy, sz) = vol.spacing();
    let (rx, ry, rz) = (
        target_spacing.0 / sx,
        target_spacing.1 / sy,
        target_spacing.2 / sz,
    );
    let mut data = Vec::with_capacity(target_shape.0 * target_shape.1 * target_shape.2);
    for z in 0..target_shape.2 {
        let cz = z as f64 * rz;
        for y in 0..target_shape.1 {
            let cy = y as f64 * ry;
            for x in 0..target_shape.0 {
                let cx = x as f64 * rx;
                data.push(match mode {
                    Interp::Trilinear => sample_trilinear(vol, cx, cy, cz),
                    Interp::Nearest => sample_nearest(vol, cx, cy, cz),
                });
            }
        }
    }
    let out = Volume3D::new(target_shape, target_spacing, data)?.with_origin(vol.origin());
    Ok(if mode == Interp::Nearest && vol.is_binary() {
        out.mark_binary()?
    } else {
        out
    })
}

/// Copy the `shape`-sized window starting at `origin` (must be in bounds).
pub fn extract_window(
    vol: &Volume3D,
    origin: (usize, usize, usize),
    shape: (usize, usize, usize),
) -> Volume3D {
    let mut data = Vec::with_capacity(shape.0 * shape.1 * shape.2);
    for z in 0..shape.2 {
        for y in 0..shape.1 {
            for x in 0..shape.0 {
                data.push(vol.get(origin.0 + x, origin.1 + y, origin.2 + z));
            }
        }
    }
    let out = Volume3D::new(shape, vol.spacing(), data)
        .expect("window length matches shape")
        .with_origin(vol.origin());
    if vol.is_binary() {
        out.assume_binary()
    } else {
        out
    }
}

/// Crop (or pad) to `spec.target_shape`. The x/y window is centered at
/// `floor((n - t) / 2)`; the z window follows `spec.policy_z` and
/// `spec.z_anchor`.
/// Axes where the source is smaller than the target are padded
/// symmetrically with `pad_value` and their offsets recorded as negative.
/// The returned spec carries the applied offsets for exact inversion.
pub fn crop(vol: &Volume3D, spec: &CropSpec, pad_value: f64) -> (Volume3D, CropSpec) {
    let src = vol.shape();
    let t = spec.target_shape;
    let off = spec.expected_offsets(src);

    let mut data = Vec::with_capacity(t.0 * t.1 * t.2);
    for z in 0..t.2 {
        let zs = z as i64 + off.2;
        for y in 0..t.1 {
            let ys = y as i64 + off.1;
            for x in 0..t.0 {
                let xs = x as i64 + off.0;
                let inside = xs >= 0
                    && ys >= 0
                    && zs >= 0
                    && (xs as usize) < src.0
                    && (ys as usize) < src.1
                    && (zs as usize) < src.2;
                data.push(if inside {
                    vol.get(xs as usize, ys as usize, zs as usize)
                } else {
                    pad_value
                });
            }
        }
    }
    let mut out = Volume3D::new(t, vol.spacing(), data)
        .expect("crop output length matches target shape")
        .with_origin(vol.origin());
    if vol.is_binary() && (pad_value == 0.0 || pad_value == 1.0) {
        out = out.assume_binary();
    }
    let mut applied = spec.clone();
    applied.recorded_offsets = Some(off);
    (out, applied)
}

/// Place a cropped-space prediction back into the original grid. Voxels
/// outside the window get `fill_value`; window regions that were padding
/// during the crop are discarded.
pub fn uncrop(
    pred: &Volume3D,
    spec: &CropSpec,
    original_shape: (usize, usize, usize),
    fill_value: f64,
) -> Result<Volume3D, GeometryError> {
    if pred.shape() != spec.target_shape {
        return Err(GeometryError::WindowShapeMismatch(
            pred.shape(),
            spec.target_shape,
        ));
    }
    let off = spec.recorded_offsets.ok_or(GeometryError::MissingOffsets)?;
    let expected = spec.expected_offsets(original_shape);
    if off != expected {
        return Err(GeometryError::OffsetMismatch {
            found: off,
            expected,
            original: original_shape,
            target: spec.target_shape,
        });
    }

    let t = spec.target_shape;
    let mut out = Volume3D::filled(original_shape, pred.spacing(), fill_value)
        .with_origin(pred.origin());
    for z in 0..t.2 {
        let zs = z as i64 + off.2;
        if zs < 0 || zs as usize >= original_shape.2 {
            continue;
        }
        for y in 0..t.1 {
            let ys = y as i64 + off.1;
            if ys < 0 || ys as usize >= original_shape.1 {
                continue;
            }
            for x in 0..t.0 {
                let xs = x as i64 + off.0;
                if xs < 0 || xs as usize >= original_shape.0 {
                    continue;
                }
                out.set(xs as usize, ys as usize, zs as usize, pred.get(x, y, z));
            }
        }
    }
    Ok(
        if pred.is_binary() && (fill_value == 0.0 || fill_value == 1.0) {
            out.assume_binary()
        } else {
            out
        },
    )
}

/// Reverse voxel order along the selected axes. An exact permutation, so
/// intensities and mask voxel counts are untouched.
pub fn flip_volume(vol: &Volume3D, axes: (bool, bool, bool)) -> Volume3D {
    let (nx, ny, nz) = vol.shape();
    let mut out = vol.clone();
    for z in 0..nz {
        let zs = if axes.2 { nz - 1 - z } else { z };
        for y in 0..ny {
            let ys = if axes.1 { ny - 1 - y } else { y };
            for x in 0..nx {
                let xs = if axes.0 { nx - 1 - x } else { x };
                out.set(x, y, z, vol.get(xs, ys, zs));
            }
        }
    }
    if vol.is_binary() {
        out = out.assume_binary();
    }
    out
}

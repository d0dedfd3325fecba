//! In-memory 3-D volumes and the intensity/mask operations applied to them.
//!
//! All voxel data is stored as `f64` regardless of the on-disk element type,
//! in x-fastest order: `index = x + nx * (y + ny * z)`, matching the NIfTI
//! voxel stream.

use thiserror::Error;

/// Relative tolerance for comparing voxel spacings between volumes.
pub const SPACING_REL_TOL: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("data length {got} does not match shape {shape:?} ({expected} voxels)")]
    DataLengthMismatch {
        shape: (usize, usize, usize),
        expected: usize,
        got: usize,
    },
    #[error("spacing must be strictly positive and finite, got {0:?}")]
    BadSpacing((f64, f64, f64)),
    #[error("volume contains a non-finite voxel at linear index {0}")]
    NonFiniteVoxel(usize),
    #[error("constant volume: min == max == {0}, rescale is undefined")]
    ConstantVolume(f64),
    #[error("volume contains non-integer label {value} at linear index {index}")]
    NonIntegerLabels { index: usize, value: f64 },
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize, usize), (usize, usize, usize)),
    #[error("spacing mismatch beyond tolerance: {0:?} vs {1:?}")]
    SpacingMismatch((f64, f64, f64), (f64, f64, f64)),
    #[error("channel count {0} outside supported range 2..=3")]
    BadChannelCount(usize),
    #[error("duplicate channel name {0:?}")]
    DuplicateChannelName(String),
    #[error("volume is not binary: value {value} at linear index {index}")]
    NotBinary { index: usize, value: f64 },
}

/// A 3-D scalar grid with voxel spacing and origin offset.
///
/// `binary` marks volumes known to contain only 0.0 and 1.0; it is set by
/// mask-producing operations and preserved by operations that cannot break
/// it (nearest-neighbor resampling, flips). Equality ignores the flag.
#[derive(Debug, Clone)]
pub struct Volume3D {
    shape: (usize, usize, usize),
    spacing: (f64, f64, f64),
    origin: (f64, f64, f64),
    data: Vec<f64>,
    binary: bool,
}

impl PartialEq for Volume3D {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self.spacing == other.spacing
            && self.origin == other.origin
            && self.data == other.data
    }
}

impl Volume3D {
    pub fn new(
        shape: (usize, usize, usize),
        spacing: (f64, f64, f64),
        data: Vec<f64>,
    ) -> Result<Self, VolumeError> {
        let expected = shape.0 * shape.1 * shape.2;
        if data.len() != expected {
            return Err(VolumeError::DataLengthMismatch {
                shape,
                expected,
                got: data.len(),
            });
        }
        let ok = |s: f64| s.is_finite() && s > 0.0;
        if !(ok(spacing.0) && ok(spacing.1) && ok(spacing.2)) {
            return Err(VolumeError::BadSpacing(spacing));
        }
        Ok(Self {
            shape,
            spacing,
            origin: (0.0, 0.0, 0.0),
            data,
            binary: false,
        })
    }

    pub fn zeros(shape: (usize, usize, usize), spacing: (f64, f64, f64)) -> Self {
        Self::new(shape, spacing, vec![0.0; shape.0 * shape.1 * shape.2])
            .expect("zero volume is always consistent")
    }

    pub fn filled(shape: (usize, usize, usize), spacing: (f64, f64, f64), value: f64) -> Self {
        Self::new(shape, spacing, vec![value; shape.0 * shape.1 * shape.2])
            .expect("filled volume is always consistent")
    }

    pub fn with_origin(mut self, origin: (f64, f64, f64)) -> Self {
        self.origin = origin;
        self
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    pub fn spacing(&self) -> (f64, f64, f64) {
        self.spacing
    }

    pub fn origin(&self) -> (f64, f64, f64) {
        self.origin
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        self.binary = false;
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn voxel_count(&self) -> usize {
        self.data.len()
    }

    /// Physical volume of one voxel in mm^3.
    pub fn voxel_volume(&self) -> f64 {
        self.spacing.0 * self.spacing.1 * self.spacing.2
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.shape.0 && y < self.shape.1 && z < self.shape.2);
        x + self.shape.0 * (y + self.shape.1 * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, value: f64) {
        let i = self.index(x, y, z);
        self.data[i] = value;
    }

    pub fn is_binary(&self) -> bool {
        self.binary
    }

    /// Verify every voxel is exactly 0.0 or 1.0 and set the binary flag.
    pub fn mark_binary(mut self) -> Result<Self, VolumeError> {
        for (i, &v) in self.data.iter().enumerate() {
            if v != 0.0 && v != 1.0 {
                return Err(VolumeError::NotBinary { index: i, value: v });
            }
        }
        self.binary = true;
        Ok(self)
    }

    /// Set the binary flag without scanning. Caller guarantees the contents.
    pub(crate) fn assume_binary(mut self) -> Self {
        self.binary = true;
        self
    }

    /// Error if any voxel is NaN or infinite.
    pub fn ensure_finite(&self) -> Result<(), VolumeError> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(VolumeError::NonFiniteVoxel(i)),
            None => Ok(()),
        }
    }

    /// New volume with the same geometry and `f(v)` applied per voxel.
    /// The binary flag is not carried over.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape,
            spacing: self.spacing,
            origin: self.origin,
            data: self.data.iter().map(|&v| f(v)).collect(),
            binary: false,
        }
    }

    /// Number of voxels strictly greater than zero.
    pub fn foreground_count(&self) -> usize {
        self.data.iter().filter(|&&v| v > 0.0).count()
    }

    pub fn same_grid(&self, other: &Self) -> Result<(), VolumeError> {
        if self.shape != other.shape {
            return Err(VolumeError::ShapeMismatch(self.shape, other.shape));
        }
        let close = |a: f64, b: f64| (a - b).abs() <= SPACING_REL_TOL * a.abs().max(b.abs());
        if !(close(self.spacing.0, other.spacing.0)
            && close(self.spacing.1, other.spacing.1)
            && close(self.spacing.2, other.spacing.2))
        {
            return Err(VolumeError::SpacingMismatch(self.spacing, other.spacing));
        }
        Ok(())
    }
}

/// An ordered stack of co-registered channels (CT, PET, optional prior mask).
#[derive(Debug, Clone, PartialEq)]
pub struct MultiChannelVolume {
    channels: Vec<Volume3D>,
    names: Vec<String>,
}

impl MultiChannelVolume {
    pub fn channels(&self) -> &[Volume3D] {
        &self.channels
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn channel(&self, name: &str) -> Option<&Volume3D> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.channels[i])
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.channels[0].shape()
    }

    pub fn spacing(&self) -> (f64, f64, f64) {
        self.channels[0].spacing()
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    /// Recover the channel list, inverse of [`stack_channels`].
    pub fn unstack(self) -> (Vec<Volume3D>, Vec<String>) {
        (self.channels, self.names)
    }
}

/// The two binary structure masks of a head-and-neck case. A structure
/// absent from a case is represented by an all-zero mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPair {
    pub gtvp: Volume3D,
    pub gtvn: Volume3D,
}

/// Clamp CT intensities to [-1024, 1024] HU and scale into [-1, 1].
pub fn clip_rescale_ct(ct: &Volume3D) -> Result<Volume3D, VolumeError> {
    ct.ensure_finite()?;
    Ok(ct.map(|v| v.clamp(-1024.0, 1024.0) / 1024.0))
}

/// Affine map of the volume's [min, max] onto [-1, 1].
pub fn rescale_pet(pet: &Volume3D) -> Result<Volume3D, VolumeError> {
    pet.ensure_finite()?;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in pet.data() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo == hi {
        return Err(VolumeError::ConstantVolume(lo));
    }
    let span = hi - lo;
    Ok(pet.map(|v| 2.0 * (v - lo) / span - 1.0))
}

/// Clamp intensities to a fixed window and scale into [-1, 1]. Alternative
/// to the per-volume [`rescale_pet`] when a dataset-global range is wanted.
pub fn rescale_fixed_window(vol: &Volume3D, lo: f64, hi: f64) -> Result<Volume3D, VolumeError> {
    vol.ensure_finite()?;
    if lo >= hi {
        return Err(VolumeError::ConstantVolume(lo));
    }
    let span = hi - lo;
    Ok(vol.map(|v| 2.0 * (v.clamp(lo, hi) - lo) / span - 1.0))
}

/// Split an integer label map into the two binary structure masks.
/// Voxels equal to `label_gtvp` go to the first mask, `label_gtvn` to the
/// second; every other label maps to zero in both.
pub fn split_mask(
    label_map: &Volume3D,
    label_gtvp: u32,
    label_gtvn: u32,
) -> Result<MaskPair, VolumeError> {
    for (i, &v) in label_map.data().iter().enumerate() {
        if !v.is_finite() || v.fract() != 0.0 || v < 0.0 {
            return Err(VolumeError::NonIntegerLabels { index: i, value: v });
        }
    }
    let pick = |label: u32| {
        label_map
            .map(|v| if v == f64::from(label) { 1.0 } else { 0.0 })
            .assume_binary()
    };
    Ok(MaskPair {
        gtvp: pick(label_gtvp),
        gtvn: pick(label_gtvn),
    })
}

/// Stack 2 or 3 co-registered volumes into a multi-channel image.
pub fn stack_channels(
    vols: Vec<Volume3D>,
    names: Vec<String>,
) -> Result<MultiChannelVolume, VolumeError> {
    if !(2..=3).contains(&vols.len()) || vols.len() != names.len() {
        return Err(VolumeError::BadChannelCount(vols.len()));
    }
    for i in 1..names.len() {
        if names[..i].contains(&names[i]) {
            return Err(VolumeError::DuplicateChannelName(names[i].clone()));
        }
    }
    for v in &vols[1..] {
        vols[0].same_grid(v)?;
    }
    Ok(MultiChannelVolume {
        channels: vols,
        names,
    })
}

/// Threshold a soft prediction into a binary mask: 1.0 where `v >= threshold`.
pub fn binarize(vol: &Volume3D, threshold: f64) -> Volume3D {
    vol.map(|v| if v >= threshold { 1.0 } else { 0.0 })
        .assume_binary()
}

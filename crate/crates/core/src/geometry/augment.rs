//! Randomized training-time augmentation: flip composition, rigid+scale
//! affine, Gaussian intensity noise, and gamma warping.
//!
//! Sampling and application are split so a drawn transform can be
//! inspected, recorded, or constructed directly in tests. The draw order
//! inside [`sample_params`] is fixed and every value is drawn whether or
//! not its gate fires, so streams stay aligned across configurations.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{flip_volume, sample_nearest, sample_trilinear, GeometryError};
use crate::rng::derive_rng;
use crate::volume::{MultiChannelVolume, Volume3D};

/// Bounds and probabilities for one augmentation policy.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    /// Which axes may flip.
    pub flip_axes: (bool, bool, bool),
    /// Per-axis flip probability.
    pub flip_probability: f64,
    /// Absolute rotation bound per axis, degrees.
    pub rotation_max_deg: (f64, f64, f64),
    /// Isotropic scale factor range.
    pub scale_range: (f64, f64),
    /// Absolute translation bound per axis, millimetres.
    pub translation_max_mm: (f64, f64, f64),
    /// Std-dev of additive Gaussian noise, in normalized-intensity units.
    pub gaussian_noise_std: f64,
    /// Gamma exponent range; applied on intensities affinely mapped to
    /// [0, 1] and back, so the [-1, 1] intensity contract survives.
    pub gamma_range: (f64, f64),
    /// Probability that each of rotation, scale, translation, noise and
    /// gamma is applied at all.
    pub transform_probability: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip_axes: (true, true, true),
            flip_probability: 0.5,
            rotation_max_deg: (15.0, 15.0, 15.0),
            scale_range: (0.9, 1.1),
            translation_max_mm: (10.0, 10.0, 10.0),
            gaussian_noise_std: 0.02,
            gamma_range: (0.8, 1.25),
            transform_probability: 0.5,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), GeometryError> {
        let prob_ok = |p: f64| (0.0..=1.0).contains(&p);
        if !prob_ok(self.flip_probability) || !prob_ok(self.transform_probability) {
            return Err(GeometryError::BadConfig(
                "probabilities must lie in [0, 1]".into(),
            ));
        }
        if self.scale_range.0 > self.scale_range.1 || self.scale_range.0 <= 0.0 {
            return Err(GeometryError::BadConfig(format!(
                "bad scale range {:?}",
                self.scale_range
            )));
        }
        if self.gamma_range.0 > self.gamma_range.1 || self.gamma_range.0 <= 0.0 {
            return Err(GeometryError::BadConfig(format!(
                "bad gamma range {:?}",
                self.gamma_range
            )));
        }
        if self.gaussian_noise_std < 0.0 {
            return Err(GeometryError::BadConfig("negative noise std".into()));
        }
        let nonneg = |b: (f64, f64, f64)| b.0 >= 0.0 && b.1 >= 0.0 && b.2 >= 0.0;
        if !nonneg(self.rotation_max_deg) || !nonneg(self.translation_max_mm) {
            return Err(GeometryError::BadConfig(
                "rotation/translation bounds must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// One concrete drawn transform.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentParams {
    pub flips: (bool, bool, bool),
    pub rotation_deg: (f64, f64, f64),
    pub scale: f64,
    pub translation_mm: (f64, f64, f64),
    pub gaussian_noise_std: f64,
    pub gamma: f64,
    /// Seed of the per-voxel noise stream.
    pub noise_seed: u64,
}

impl AugmentParams {
    pub fn identity() -> Self {
        Self {
            flips: (false, false, false),
            rotation_deg: (0.0, 0.0, 0.0),
            scale: 1.0,
            translation_mm: (0.0, 0.0, 0.0),
            gaussian_noise_std: 0.0,
            gamma: 1.0,
            noise_seed: 0,
        }
    }

    fn needs_affine(&self) -> bool {
        self.rotation_deg != (0.0, 0.0, 0.0)
            || self.scale != 1.0
            || self.translation_mm != (0.0, 0.0, 0.0)
    }
}

/// Draw the transform for `(cfg.seed, draw_index)`. The same pair always
/// yields the same parameters.
pub fn sample_params(cfg: &AugmentConfig, draw_index: u64) -> Result<AugmentParams, GeometryError> {
    cfg.validate()?;
    let mut rng = derive_rng(cfg.seed, "augment", draw_index);

    let mut flip = |enabled: bool| {
        let u = rng.random::<f64>();
        enabled && u < cfg.flip_probability
    };
    let flips = (flip(cfg.flip_axes.0), flip(cfg.flip_axes.1), flip(cfg.flip_axes.2));

    let gate = |rng: &mut rand_chacha::ChaCha8Rng| rng.random::<f64>() < cfg.transform_probability;
    let bounded = |rng: &mut rand_chacha::ChaCha8Rng, b: f64| {
        if b == 0.0 {
            0.0
        } else {
            rng.random_range(-b..=b)
        }
    };

    let rot_on = gate(&mut rng);
    let rot = (
        bounded(&mut rng, cfg.rotation_max_deg.0),
        bounded(&mut rng, cfg.rotation_max_deg.1),
        bounded(&mut rng, cfg.rotation_max_deg.2),
    );
    let scale_on = gate(&mut rng);
    let scale = rng.random_range(cfg.scale_range.0..=cfg.scale_range.1);
    let trans_on = gate(&mut rng);
    let trans = (
        bounded(&mut rng, cfg.translation_max_mm.0),
        bounded(&mut rng, cfg.translation_max_mm.1),
        bounded(&mut rng, cfg.translation_max_mm.2),
    );
    let noise_on = gate(&mut rng);
    let gamma_on = gate(&mut rng);
    let gamma = rng.random_range(cfg.gamma_range.0..=cfg.gamma_range.1);
    let noise_seed = rng.random::<u64>();

    Ok(AugmentParams {
        flips,
        rotation_deg: if rot_on { rot } else { (0.0, 0.0, 0.0) },
        scale: if scale_on { scale } else { 1.0 },
        translation_mm: if trans_on { trans } else { (0.0, 0.0, 0.0) },
        gaussian_noise_std: if noise_on { cfg.gaussian_noise_std } else { 0.0 },
        gamma: if gamma_on { gamma } else { 1.0 },
        noise_seed,
    })
}

type Mat3 = [[f64; 3]; 3];

fn rotation_matrix(deg: (f64, f64, f64)) -> Mat3 {
    let (a, b, c) = (
        deg.0.to_radians(),
        deg.1.to_radians(),
        deg.2.to_radians(),
    );
    let (sa, ca) = a.sin_cos();
    let (sb, cb) = b.sin_cos();
    let (sc, cc) = c.sin_cos();
    let rx: Mat3 = [[1.0, 0.0, 0.0], [0.0, ca, -sa], [0.0, sa, ca]];
    let ry: Mat3 = [[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]];
    let rz: Mat3 = [[cc, -sc, 0.0], [sc, cc, 0.0], [0.0, 0.0, 1.0]];
    mat_mul(&rz, &mat_mul(&ry, &rx))
}

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut m = [[0.0; 3]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    m
}

fn transpose(a: &Mat3) -> Mat3 {
    let mut m = [[0.0; 3]; 3];
    for (i, row) in a.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            m[j][i] = v;
        }
    }
    m
}

fn mat_vec(a: &Mat3, v: (f64, f64, f64)) -> (f64, f64, f64) {
    (
        a[0][0] * v.0 + a[0][1] * v.1 + a[0][2] * v.2,
        a[1][0] * v.0 + a[1][1] * v.1 + a[1][2] * v.2,
        a[2][0] * v.0 + a[2][1] * v.1 + a[2][2] * v.2,
    )
}

/// Resample one volume through the inverse of the rigid+scale transform.
/// The rotation/scale act about the volume's physical center; coordinates
/// outside the grid are edge-clamped by the samplers.
fn affine_resample(vol: &Volume3D, params: &AugmentParams, nearest: bool) -> Volume3D {
    let (nx, ny, nz) = vol.shape();
    let (sx, sy, sz) = vol.spacing();
    let center = (
        (nx - 1) as f64 / 2.0 * sx,
        (ny - 1) as f64 / 2.0 * sy,
        (nz - 1) as f64 / 2.0 * sz,
    );
    let r_inv = transpose(&rotation_matrix(params.rotation_deg));
    let t = params.translation_mm;

    let mut out = vol.clone();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let p = (
                    x as f64 * sx - center.0 - t.0,
                    y as f64 * sy - center.1 - t.1,
                    z as f64 * sz - center.2 - t.2,
                );
                let q = mat_vec(&r_inv, p);
                let src = (
                    (q.0 / params.scale + center.0) / sx,
                    (q.1 / params.scale + center.1) / sy,
                    (q.2 / params.scale + center.2) / sz,
                );
                let v = if nearest {
                    sample_nearest(vol, src.0, src.1, src.2)
                } else {
                    sample_trilinear(vol, src.0, src.1, src.2)
                };
                out.set(x, y, z, v);
            }
        }
    }
    if nearest && vol.is_binary() {
        out = out.assume_binary();
    }
    out
}

fn add_noise(vol: &mut Volume3D, std: f64, seed: u64, channel: u64) {
    let mut rng = derive_rng(seed, "augment-noise", channel);
    let normal = Normal::new(0.0, std).expect("validated std");
    for v in vol.data_mut() {
        *v += normal.sample(&mut rng);
    }
}

fn apply_gamma(vol: &mut Volume3D, gamma: f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in vol.data() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if hi <= lo {
        return; // constant channel: gamma has no effect
    }
    let span = hi - lo;
    for v in vol.data_mut() {
        let u = ((*v - lo) / span).clamp(0.0, 1.0);
        *v = lo + span * u.powf(gamma);
    }
}

/// Apply one drawn transform identically to every channel and mask.
/// Image channels are resampled trilinearly and receive noise and gamma;
/// masks are resampled nearest-neighbor and keep their binarity.
pub fn apply_augment(
    mcv: &MultiChannelVolume,
    masks: &[Volume3D],
    params: &AugmentParams,
) -> Result<(MultiChannelVolume, Vec<Volume3D>), GeometryError> {
    for m in masks {
        mcv.channels()[0].same_grid(m)?;
    }

    let flip_pass = |v: &Volume3D| {
        if params.flips == (false, false, false) {
            v.clone()
        } else {
            flip_volume(v, params.flips)
        }
    };

    let mut channels: Vec<Volume3D> = mcv.channels().iter().map(flip_pass).collect();
    let mut out_masks: Vec<Volume3D> = masks.iter().map(flip_pass).collect();

    if params.needs_affine() {
        for c in &mut channels {
            *c = affine_resample(c, params, false);
        }
        for m in &mut out_masks {
            *m = affine_resample(m, params, true);
        }
    }

    if params.gaussian_noise_std > 0.0 {
        for (i, c) in channels.iter_mut().enumerate() {
            add_noise(c, params.gaussian_noise_std, params.noise_seed, i as u64);
        }
    }
    if params.gamma != 1.0 {
        for c in &mut channels {
            apply_gamma(c, params.gamma);
        }
    }

    let names = mcv.names().to_vec();
    let stacked = crate::volume::stack_channels(channels, names)?;
    Ok((stacked, out_masks))
}

/// Sample the transform for `draw_index` and apply it.
pub fn augment(
    mcv: &MultiChannelVolume,
    masks: &[Volume3D],
    cfg: &AugmentConfig,
    draw_index: u64,
) -> Result<(MultiChannelVolume, Vec<Volume3D>), GeometryError> {
    let params = sample_params(cfg, draw_index)?;
    apply_augment(mcv, masks, &params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::stack_channels;
    use rand::SeedableRng;

    fn test_case(n: usize) -> (MultiChannelVolume, Vec<Volume3D>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let count = n * n * n;
        let ct: Vec<f64> = (0..count).map(|_| rng.random_range(-1.0..1.0)).collect();
        let pet: Vec<f64> = (0..count).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mask: Vec<f64> = (0..count)
            .map(|_| if rng.random::<f64>() < 0.2 { 1.0 } else { 0.0 })
            .collect();
        let sp = (1.0, 1.0, 1.0);
        let mcv = stack_channels(
            vec![
                Volume3D::new((n, n, n), sp, ct).unwrap(),
                Volume3D::new((n, n, n), sp, pet).unwrap(),
            ],
            vec!["CT".into(), "PET".into()],
        )
        .unwrap();
        let mask = Volume3D::new((n, n, n), sp, mask).unwrap().mark_binary().unwrap();
        (mcv, vec![mask])
    }

    fn identity_config() -> AugmentConfig {
        AugmentConfig {
            flip_axes: (true, true, true),
            flip_probability: 0.0,
            rotation_max_deg: (0.0, 0.0, 0.0),
            scale_range: (1.0, 1.0),
            translation_max_mm: (0.0, 0.0, 0.0),
            gaussian_noise_std: 0.0,
            gamma_range: (1.0, 1.0),
            transform_probability: 0.0,
            seed: 9,
        }
    }

    #[test]
    fn zeroed_config_is_exact_identity() {
        let (mcv, masks) = test_case(6);
        let (out, out_masks) = augment(&mcv, &masks, &identity_config(), 5).unwrap();
        assert_eq!(out, mcv);
        assert_eq!(out_masks, masks);
    }

    #[test]
    fn forced_x_flip_reverses_indices_and_keeps_mask_sums() {
        let (mcv, masks) = test_case(5);
        let cfg = AugmentConfig {
            flip_axes: (true, false, false),
            flip_probability: 1.0,
            ..identity_config()
        };
        let (out, out_masks) = augment(&mcv, &masks, &cfg, 0).unwrap();
        for (oc, ic) in out.channels().iter().zip(mcv.channels()) {
            assert_eq!(oc, &flip_volume(ic, (true, false, false)));
        }
        assert_eq!(out_masks[0].foreground_count(), masks[0].foreground_count());
        assert!(out_masks[0].is_binary());
    }

    #[test]
    fn exact_quarter_turn_is_a_permutation() {
        let (mcv, masks) = test_case(7);
        let params = AugmentParams {
            rotation_deg: (0.0, 0.0, 90.0),
            ..AugmentParams::identity()
        };
        let (out, out_masks) = apply_augment(&mcv, &masks, &params).unwrap();
        // permutation-matrix oracle for a +90 degree turn about z on an
        // n-cube: out(x, y, z) = src(y, n-1-x, z). Channels go through
        // trilinear weights, so they match up to rounding dust; the
        // nearest-resampled mask must be the exact permutation.
        let n = 7;
        for (oc, ic) in out.channels().iter().zip(mcv.channels()) {
            for z in 0..n {
                for y in 0..n {
                    for x in 0..n {
                        let want = ic.get(y, n - 1 - x, z);
                        assert!((oc.get(x, y, z) - want).abs() < 1e-12);
                    }
                }
            }
        }
        for z in 0..n {
            for y in 0..n {
                for x in 0..n {
                    assert_eq!(out_masks[0].get(x, y, z), masks[0].get(y, n - 1 - x, z));
                }
            }
        }
        assert!(out_masks[0].is_binary());
        assert_eq!(out_masks[0].foreground_count(), masks[0].foreground_count());
    }

    #[test]
    fn same_seed_and_draw_index_is_bitwise_identical() {
        let (mcv, masks) = test_case(6);
        let cfg = AugmentConfig { seed: 77, ..AugmentConfig::default() };
        let (a, am) = augment(&mcv, &masks, &cfg, 3).unwrap();
        let (b, bm) = augment(&mcv, &masks, &cfg, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(am, bm);
        let (c, _) = augment(&mcv, &masks, &cfg, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn noise_touches_channels_not_masks() {
        let (mcv, masks) = test_case(5);
        let params = AugmentParams {
            gaussian_noise_std: 0.05,
            noise_seed: 3,
            ..AugmentParams::identity()
        };
        let (out, out_masks) = apply_augment(&mcv, &masks, &params).unwrap();
        assert_ne!(out.channels()[0], mcv.channels()[0]);
        // the two channels must receive distinct noise fields
        let d0: Vec<f64> = out.channels()[0]
            .data()
            .iter()
            .zip(mcv.channels()[0].data())
            .map(|(a, b)| a - b)
            .collect();
        let d1: Vec<f64> = out.channels()[1]
            .data()
            .iter()
            .zip(mcv.channels()[1].data())
            .map(|(a, b)| a - b)
            .collect();
        assert_ne!(d0, d1);
        assert_eq!(out_masks, masks);
    }

    #[test]
    fn gamma_preserves_channel_range() {
        let (mcv, masks) = test_case(5);
        let params = AugmentParams { gamma: 2.0, ..AugmentParams::identity() };
        let (out, _) = apply_augment(&mcv, &masks, &params).unwrap();
        for (oc, ic) in out.channels().iter().zip(mcv.channels()) {
            let lo = ic.data().iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = ic.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for &v in oc.data() {
                assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad_prob = AugmentConfig { flip_probability: 1.5, ..AugmentConfig::default() };
        assert!(matches!(sample_params(&bad_prob, 0), Err(GeometryError::BadConfig(_))));
        let bad_scale = AugmentConfig { scale_range: (1.2, 0.8), ..AugmentConfig::default() };
        assert!(matches!(sample_params(&bad_scale, 0), Err(GeometryError::BadConfig(_))));
        let bad_gamma = AugmentConfig { gamma_range: (0.0, 1.0), ..AugmentConfig::default() };
        assert!(matches!(sample_params(&bad_gamma, 0), Err(GeometryError::BadConfig(_))));
    }
}

//! Single-file NIfTI-1 reading and writing.
//!
//! Files are written little-endian with `vox_offset` 352 (348-byte header
//! plus a zeroed 4-byte extension flag) and `scl_slope = 1`. Both byte
//! orders are read; the order is detected from `dim[0]`, which must lie in
//! 1..=7 in the file's native order. Gzip payloads are detected by their
//! two-byte magic prefix on read and chosen by a `.gz` path suffix on write.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use thiserror::Error;

use crate::volume::{Volume3D, VolumeError};

pub const HEADER_SIZE: usize = 348;
pub const VOX_OFFSET: usize = 352;
const MAGIC: &[u8; 4] = b"n+1\0";

#[derive(Debug, Error)]
pub enum NiftiError {
    #[error("i/o failure: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("voxel block truncated: expected {expected} bytes, found {got}")]
    TruncatedData { expected: usize, got: usize },
    #[error("volume is not three-dimensional (dim[0] = {0})")]
    NotThreeDimensional(i16),
    #[error("refusing lossy write: value {value} at index {index} is not representable as {datatype:?}")]
    LossyWriteRefused {
        index: usize,
        value: f64,
        datatype: Datatype,
    },
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// On-disk element types this toolkit reads and writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Datatype {
    Uint8,
    Int16,
    Int32,
    Float32,
    Float64,
}

impl Datatype {
    pub fn code(self) -> i16 {
        match self {
            Datatype::Uint8 => 2,
            Datatype::Int16 => 4,
            Datatype::Int32 => 8,
            Datatype::Float32 => 16,
            Datatype::Float64 => 64,
        }
    }

    pub fn from_code(code: i16) -> Option<Self> {
        match code {
            2 => Some(Datatype::Uint8),
            4 => Some(Datatype::Int16),
            8 => Some(Datatype::Int32),
            16 => Some(Datatype::Float32),
            64 => Some(Datatype::Float64),
            _ => None,
        }
    }

    pub fn byte_size(self) -> usize {
        match self {
            Datatype::Uint8 => 1,
            Datatype::Int16 => 2,
            Datatype::Int32 => 4,
            Datatype::Float32 => 4,
            Datatype::Float64 => 8,
        }
    }

    pub fn bitpix(self) -> i16 {
        (self.byte_size() * 8) as i16
    }

    fn is_integral(self) -> bool {
        matches!(self, Datatype::Uint8 | Datatype::Int16 | Datatype::Int32)
    }

    /// Integer range check for lossless integral writes.
    fn holds(self, v: f64) -> bool {
        match self {
            Datatype::Uint8 => (0.0..=255.0).contains(&v),
            Datatype::Int16 => (f64::from(i16::MIN)..=f64::from(i16::MAX)).contains(&v),
            Datatype::Int32 => (f64::from(i32::MIN)..=f64::from(i32::MAX)).contains(&v),
            _ => true,
        }
    }
}

/// The header fields this toolkit reads, carried through unmodified.
/// Orientation (qform/sform) is preserved but never interpreted beyond
/// spacing, which comes from `pixdim`.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiHeader {
    pub dim: [i16; 8],
    pub datatype_code: i16,
    pub bitpix: i16,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub qform_code: i16,
    pub sform_code: i16,
    pub quatern: [f32; 3],
    pub qoffset: [f32; 3],
    pub srow_x: [f32; 4],
    pub srow_y: [f32; 4],
    pub srow_z: [f32; 4],
    /// True when the file's byte order differed from this machine's
    /// little-endian convention.
    pub swapped: bool,
}

struct Raw<'a> {
    bytes: &'a [u8],
    swap: bool,
}

impl<'a> Raw<'a> {
    fn i16(&self, off: usize) -> i16 {
        let b = [self.bytes[off], self.bytes[off + 1]];
        if self.swap {
            i16::from_be_bytes(b)
        } else {
            i16::from_le_bytes(b)
        }
    }

    fn i32(&self, off: usize) -> i32 {
        let b: [u8; 4] = self.bytes[off..off + 4].try_into().unwrap();
        if self.swap {
            i32::from_be_bytes(b)
        } else {
            i32::from_le_bytes(b)
        }
    }

    fn f32(&self, off: usize) -> f32 {
        let b: [u8; 4] = self.bytes[off..off + 4].try_into().unwrap();
        if self.swap {
            f32::from_be_bytes(b)
        } else {
            f32::from_le_bytes(b)
        }
    }

    fn f64(&self, off: usize) -> f64 {
        let b: [u8; 8] = self.bytes[off..off + 8].try_into().unwrap();
        if self.swap {
            f64::from_be_bytes(b)
        } else {
            f64::from_le_bytes(b)
        }
    }
}

fn is_gzip(bytes: &[u8]) -> bool {
    bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b
}

fn parse_header(bytes: &[u8]) -> Result<NiftiHeader, NiftiError> {
    if bytes.len() < HEADER_SIZE {
        return Err(NiftiError::MalformedHeader(format!(
            "file holds {} bytes, header needs {HEADER_SIZE}",
            bytes.len()
        )));
    }
    // dim[0] decides the byte order: valid files keep it in 1..=7
    let ndim_le = i16::from_le_bytes([bytes[40], bytes[41]]);
    let swap = if (1..=7).contains(&ndim_le) {
        false
    } else {
        let ndim_be = i16::from_be_bytes([bytes[40], bytes[41]]);
        if (1..=7).contains(&ndim_be) {
            true
        } else {
            return Err(NiftiError::MalformedHeader(format!(
                "dim[0] = {ndim_le} invalid in either byte order"
            )));
        }
    };
    let r = Raw { bytes, swap };

    if &bytes[344..348] != MAGIC {
        return Err(NiftiError::MalformedHeader(format!(
            "bad magic {:?}, expected {MAGIC:?}",
            &bytes[344..348]
        )));
    }
    let sizeof_hdr = r.i32(0);
    if sizeof_hdr != HEADER_SIZE as i32 {
        return Err(NiftiError::MalformedHeader(format!(
            "sizeof_hdr = {sizeof_hdr}, expected {HEADER_SIZE}"
        )));
    }

    let mut dim = [0i16; 8];
    for (i, d) in dim.iter_mut().enumerate() {
        *d = r.i16(40 + 2 * i);
    }
    let mut pixdim = [0f32; 8];
    for (i, p) in pixdim.iter_mut().enumerate() {
        *p = r.f32(76 + 4 * i);
    }

    Ok(NiftiHeader {
        dim,
        datatype_code: r.i16(70),
        bitpix: r.i16(72),
        pixdim,
        vox_offset: r.f32(108),
        scl_slope: r.f32(112),
        scl_inter: r.f32(116),
        qform_code: r.i16(252),
        sform_code: r.i16(254),
        quatern: [r.f32(256), r.f32(260), r.f32(264)],
        qoffset: [r.f32(268), r.f32(272), r.f32(276)],
        srow_x: [r.f32(280), r.f32(284), r.f32(288), r.f32(292)],
        srow_y: [r.f32(296), r.f32(300), r.f32(304), r.f32(308)],
        srow_z: [r.f32(312), r.f32(316), r.f32(320), r.f32(324)],
        swapped: swap,
    })
}

/// Read a NIfTI-1 volume. Gzip is detected from the payload, not the name.
pub fn read_nifti(path: &Path) -> Result<Volume3D, NiftiError> {
    read_nifti_full(path).map(|(vol, _)| vol)
}

/// Read a volume together with its parsed header.
pub fn read_nifti_full(path: &Path) -> Result<(Volume3D, NiftiHeader), NiftiError> {
    let raw = fs::read(path)?;
    let bytes = if is_gzip(&raw) {
        let mut out = Vec::new();
        MultiGzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        out
    } else {
        raw
    };
    parse_bytes(&bytes)
}

/// Decode an in-memory (already decompressed) NIfTI-1 byte stream.
pub fn parse_bytes(bytes: &[u8]) -> Result<(Volume3D, NiftiHeader), NiftiError> {
    let header = parse_header(bytes)?;
    let ndim = header.dim[0];
    // 4-D with a singleton fourth axis is squeezed; anything else non-3D is rejected
    let three_d = ndim == 3 || (ndim == 4 && header.dim[4] == 1);
    if !three_d {
        return Err(NiftiError::NotThreeDimensional(ndim));
    }
    let shape = (
        header.dim[1] as usize,
        header.dim[2] as usize,
        header.dim[3] as usize,
    );
    if shape.0 == 0 || shape.1 == 0 || shape.2 == 0 {
        return Err(NiftiError::MalformedHeader(format!(
            "non-positive spatial dim in {:?}",
            &header.dim[1..4]
        )));
    }
    let datatype = Datatype::from_code(header.datatype_code)
        .ok_or(NiftiError::UnsupportedDatatype(header.datatype_code))?;

    let offset = header.vox_offset as usize;
    if (header.vox_offset as f64) < HEADER_SIZE as f64 {
        return Err(NiftiError::MalformedHeader(format!(
            "vox_offset {} precedes the header end",
            header.vox_offset
        )));
    }
    let n = shape.0 * shape.1 * shape.2;
    let need = n * datatype.byte_size();
    if bytes.len() < offset || bytes.len() - offset < need {
        return Err(NiftiError::TruncatedData {
            expected: need,
            got: bytes.len().saturating_sub(offset),
        });
    }

    let r = Raw {
        bytes: &bytes[offset..offset + need],
        swap: header.swapped,
    };
    let mut data = Vec::with_capacity(n);
    match datatype {
        Datatype::Uint8 => data.extend(r.bytes.iter().map(|&b| f64::from(b))),
        Datatype::Int16 => data.extend((0..n).map(|i| f64::from(r.i16(2 * i)))),
        Datatype::Int32 => data.extend((0..n).map(|i| f64::from(r.i32(4 * i)))),
        Datatype::Float32 => data.extend((0..n).map(|i| f64::from(r.f32(4 * i)))),
        Datatype::Float64 => data.extend((0..n).map(|i| r.f64(8 * i))),
    }

    let slope = f64::from(header.scl_slope);
    let inter = f64::from(header.scl_inter);
    if slope != 0.0 && !(slope == 1.0 && inter == 0.0) {
        for v in &mut data {
            *v = *v * slope + inter;
        }
    }

    let spacing = (
        f64::from(header.pixdim[1]),
        f64::from(header.pixdim[2]),
        f64::from(header.pixdim[3]),
    );
    let origin = if header.sform_code > 0 {
        (
            f64::from(header.srow_x[3]),
            f64::from(header.srow_y[3]),
            f64::from(header.srow_z[3]),
        )
    } else {
        (
            f64::from(header.qoffset[0]),
            f64::from(header.qoffset[1]),
            f64::from(header.qoffset[2]),
        )
    };
    let vol = Volume3D::new(shape, spacing, data)?.with_origin(origin);
    Ok((vol, header))
}

fn put_i16(buf: &mut [u8], off: usize, v: i16) {
    buf[off..off + 2].copy_from_slice(&v.to_le_bytes());
}

fn put_i32(buf: &mut [u8], off: usize, v: i32) {
    buf[off..off + 4].copy_from_slice(&v.to_le_bytes());
}

fn put_f32(buf: &mut [u8], off: usize, v: f32) {
    buf[off..off + 4].copy_from_slice(&v.to_le_bytes());
}

/// Encode a volume as an in-memory NIfTI-1 byte stream (uncompressed).
pub fn encode_bytes(vol: &Volume3D, datatype: Datatype) -> Result<Vec<u8>, NiftiError> {
    if datatype.is_integral() {
        for (i, &v) in vol.data().iter().enumerate() {
            if !v.is_finite() || v.fract() != 0.0 || !datatype.holds(v) {
                return Err(NiftiError::LossyWriteRefused {
                    index: i,
                    value: v,
                    datatype,
                });
            }
        }
    }

    let (nx, ny, nz) = vol.shape();
    let (sx, sy, sz) = vol.spacing();
    let (ox, oy, oz) = vol.origin();

    let mut h = vec![0u8; HEADER_SIZE];
    put_i32(&mut h, 0, HEADER_SIZE as i32);
    let dim: [i16; 8] = [3, nx as i16, ny as i16, nz as i16, 1, 1, 1, 1];
    for (i, d) in dim.iter().enumerate() {
        put_i16(&mut h, 40 + 2 * i, *d);
    }
    put_i16(&mut h, 70, datatype.code());
    put_i16(&mut h, 72, datatype.bitpix());
    let pixdim: [f32; 8] = [1.0, sx as f32, sy as f32, sz as f32, 1.0, 1.0, 1.0, 1.0];
    for (i, p) in pixdim.iter().enumerate() {
        put_f32(&mut h, 76 + 4 * i, *p);
    }
    put_f32(&mut h, 108, VOX_OFFSET as f32);
    put_f32(&mut h, 112, 1.0); // scl_slope
    put_f32(&mut h, 116, 0.0); // scl_inter
    put_i16(&mut h, 252, 1); // qform_code: identity quaternion below
    put_i16(&mut h, 254, 1); // sform_code: diagonal spacing rows below
    put_f32(&mut h, 268, ox as f32);
    put_f32(&mut h, 272, oy as f32);
    put_f32(&mut h, 276, oz as f32);
    put_f32(&mut h, 280, sx as f32);
    put_f32(&mut h, 292, ox as f32);
    put_f32(&mut h, 300, sy as f32);
    put_f32(&mut h, 308, oy as f32);
    put_f32(&mut h, 320, sz as f32);
    put_f32(&mut h, 324, oz as f32);
    h[344..348].copy_from_slice(MAGIC);

    let n = vol.voxel_count();
    let mut out = Vec::with_capacity(VOX_OFFSET + n * datatype.byte_size());
    out.extend_from_slice(&h);
    out.extend_from_slice(&[0u8; 4]); // extension flag: none
    match datatype {
        Datatype::Uint8 => out.extend(vol.data().iter().map(|&v| v as u8)),
        Datatype::Int16 => {
            for &v in vol.data() {
                out.extend_from_slice(&(v as i16).to_le_bytes());
            }
        }
        Datatype::Int32 => {
            for &v in vol.data() {
                out.extend_from_slice(&(v as i32).to_le_bytes());
            }
        }
        Datatype::Float32 => {
            for &v in vol.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Datatype::Float64 => {
            for &v in vol.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

/// Write a volume as single-file NIfTI-1, gzipped when the path ends in ".gz".
pub fn write_nifti(vol: &Volume3D, path: &Path, datatype: Datatype) -> Result<(), NiftiError> {
    let bytes = encode_bytes(vol, datatype)?;
    if path.to_string_lossy().ends_with(".gz") {
        let file = fs::File::create(path)?;
        let mut enc = GzEncoder::new(file, Compression::default());
        enc.write_all(&bytes)?;
        enc.finish()?;
    } else {
        fs::write(path, &bytes)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    fn sample_volume() -> Volume3D {
        let data: Vec<f64> = (0..64).map(f64::from).collect();
        Volume3D::new((4, 4, 4), (1.0, 1.0, 1.0), data).unwrap()
    }

    #[test]
    fn round_trip_float64_is_bit_exact() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("v.nii");
        let vol = Volume3D::new(
            (3, 2, 2),
            (0.5, 1.25, 2.0),
            vec![
                -1.0,
                0.0,
                1.0,
                f64::MIN_POSITIVE,
                1.0 / 3.0,
                -0.1,
                1e300,
                -1e-300,
                42.0,
                0.125,
                -7.5,
                9.0,
            ],
        )
        .unwrap()
        .with_origin((-12.5, 3.0, 0.0));
        write_nifti(&vol, &path, Datatype::Float64).unwrap();
        let back = read_nifti(&path).unwrap();
        assert_eq!(back.shape(), vol.shape());
        assert_eq!(back.spacing(), vol.spacing());
        assert_eq!(back.data(), vol.data());
    }

    #[test]
    fn round_trip_identity_case() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("v.nii");
        let vol = sample_volume();
        write_nifti(&vol, &path, Datatype::Float64).unwrap();
        assert_eq!(read_nifti(&path).unwrap(), vol);
    }

    #[test]
    fn slope_intercept_applied_on_read() {
        // hand-build an int16 file with scl_slope=2, scl_inter=1, one voxel = 3
        let vol = Volume3D::new((1, 1, 1), (1.0, 1.0, 1.0), vec![3.0]).unwrap();
        let mut bytes = encode_bytes(&vol, Datatype::Int16).unwrap();
        bytes[112..116].copy_from_slice(&2.0f32.to_le_bytes());
        bytes[116..120].copy_from_slice(&1.0f32.to_le_bytes());
        let (back, header) = parse_bytes(&bytes).unwrap();
        assert_eq!(header.scl_slope, 2.0);
        assert_eq!(back.data(), &[7.0]);
    }

    #[test]
    fn gzip_transparency() {
        let dir = TempDir::new().unwrap();
        let plain = dir.path().join("v.nii");
        let gz = dir.path().join("v.nii.gz");
        let vol = sample_volume();
        write_nifti(&vol, &plain, Datatype::Float64).unwrap();
        write_nifti(&vol, &gz, Datatype::Float64).unwrap();
        assert!(is_gzip(&fs::read(&gz).unwrap()));
        assert_eq!(read_nifti(&plain).unwrap(), read_nifti(&gz).unwrap());
    }

    #[test]
    fn mask_round_trip_as_uint8() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("m.nii.gz");
        let mask = Volume3D::new((2, 2, 2), (1.0, 1.0, 1.0), vec![0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0])
            .unwrap();
        write_nifti(&mask, &path, Datatype::Uint8).unwrap();
        let back = read_nifti(&path).unwrap();
        assert!(back.data().iter().all(|&v| v == 0.0 || v == 1.0));
        assert_eq!(back.data(), mask.data());
    }

    #[test]
    fn ct_round_trip_as_int16() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("ct.nii");
        let data: Vec<f64> = (-1024..1024).step_by(64).map(f64::from).collect();
        let n = data.len();
        let vol = Volume3D::new((n, 1, 1), (1.0, 1.0, 1.0), data.clone()).unwrap();
        write_nifti(&vol, &path, Datatype::Int16).unwrap();
        let back = read_nifti(&path).unwrap();
        assert_eq!(back.data(), &data[..]);
    }

    #[test]
    fn lossy_integral_write_refused() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("v.nii");
        let vol = Volume3D::new((1, 1, 1), (1.0, 1.0, 1.0), vec![0.5]).unwrap();
        assert!(matches!(
            write_nifti(&vol, &path, Datatype::Uint8),
            Err(NiftiError::LossyWriteRefused { index: 0, .. })
        ));
        let vol = Volume3D::new((1, 1, 1), (1.0, 1.0, 1.0), vec![-1.0]).unwrap();
        assert!(matches!(
            write_nifti(&vol, &path, Datatype::Uint8),
            Err(NiftiError::LossyWriteRefused { .. })
        ));
        let vol = Volume3D::new((1, 1, 1), (1.0, 1.0, 1.0), vec![40000.0]).unwrap();
        assert!(matches!(
            write_nifti(&vol, &path, Datatype::Int16),
            Err(NiftiError::LossyWriteRefused { .. })
        ));
    }

    #[test]
    fn spacing_survives_round_trip_at_f32_precision() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("v.nii");
        let spacing = (0.9765625, 1.23, 3.27); // first is exact in f32
        let vol = Volume3D::new((1, 1, 1), spacing, vec![0.0]).unwrap();
        write_nifti(&vol, &path, Datatype::Float64).unwrap();
        let back = read_nifti(&path).unwrap();
        assert_eq!(back.spacing().0, 0.9765625);
        assert_eq!(back.spacing().1, f64::from(1.23f32));
        assert_eq!(back.spacing().2, f64::from(3.27f32));
    }

    #[test]
    fn origin_survives_round_trip() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("v.nii");
        let vol = sample_volume().with_origin((-100.5, 32.25, 7.0));
        write_nifti(&vol, &path, Datatype::Float64).unwrap();
        assert_eq!(read_nifti(&path).unwrap().origin(), (-100.5, 32.25, 7.0));
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        assert!(matches!(
            parse_bytes(&[0u8; 100]),
            Err(NiftiError::MalformedHeader(_))
        ));

        let good = encode_bytes(&sample_volume(), Datatype::Float64).unwrap();

        let mut bad_magic = good.clone();
        bad_magic[344] = b'x';
        assert!(matches!(
            parse_bytes(&bad_magic),
            Err(NiftiError::MalformedHeader(_))
        ));

        let mut bad_size = good.clone();
        bad_size[0..4].copy_from_slice(&347i32.to_le_bytes());
        assert!(matches!(
            parse_bytes(&bad_size),
            Err(NiftiError::MalformedHeader(_))
        ));

        let mut bad_dtype = good.clone();
        bad_dtype[70..72].copy_from_slice(&1337i16.to_le_bytes());
        assert!(matches!(
            parse_bytes(&bad_dtype),
            Err(NiftiError::UnsupportedDatatype(1337))
        ));

        let mut truncated = good.clone();
        truncated.truncate(good.len() - 9);
        assert!(matches!(
            parse_bytes(&truncated),
            Err(NiftiError::TruncatedData { .. })
        ));

        let mut two_d = good;
        two_d[40..42].copy_from_slice(&2i16.to_le_bytes());
        assert!(matches!(
            parse_bytes(&two_d),
            Err(NiftiError::NotThreeDimensional(2))
        ));
    }

    #[test]
    fn read_missing_file_is_io_failure() {
        assert!(matches!(
            read_nifti(Path::new("/nonexistent/nowhere.nii")),
            Err(NiftiError::IoFailure(_))
        ));
    }
}

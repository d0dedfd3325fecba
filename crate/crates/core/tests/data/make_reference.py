#!/usr/bin/env python3
"""Generate reference NIfTI-1 volumes for reader verification.

Writes the header fields at the byte offsets published in the NIfTI-1
standard (nifti1.h). Kept independent of the Rust implementation so the
committed fixtures act as a cross-check, not a round trip.

Run from this directory:  python3 make_reference.py
"""

import gzip
import struct


def header(endian, dims, pixdim, datatype, bitpix, scl_slope, scl_inter, qoffset):
    e = endian
    h = bytearray(348)
    struct.pack_into(e + "i", h, 0, 348)                      # sizeof_hdr
    ndim = len(dims)
    dim = [ndim] + list(dims) + [1] * (7 - ndim)
    struct.pack_into(e + "8h", h, 40, *dim)                   # dim
    struct.pack_into(e + "h", h, 70, datatype)                # datatype
    struct.pack_into(e + "h", h, 72, bitpix)                  # bitpix
    pd = [1.0] + list(pixdim) + [1.0] * (7 - len(pixdim))
    struct.pack_into(e + "8f", h, 76, *pd)                    # pixdim
    struct.pack_into(e + "f", h, 108, 352.0)                  # vox_offset
    struct.pack_into(e + "f", h, 112, scl_slope)              # scl_slope
    struct.pack_into(e + "f", h, 116, scl_inter)              # scl_inter
    struct.pack_into(e + "h", h, 252, 1)                      # qform_code
    struct.pack_into(e + "3f", h, 268, *qoffset)              # qoffset_{x,y,z}
    h[344:348] = b"n+1\x00"                                   # magic
    return bytes(h)


def voxels_fortran(dims, value):
    nx, ny, nz = dims
    out = []
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                out.append(value(x, y, z))
    return out


def write(path, blob, gz=False):
    if gz:
        # mtime pinned so regeneration is byte-identical
        with gzip.GzipFile(path, "wb", mtime=0) as f:
            f.write(blob)
    else:
        with open(path, "wb") as f:
            f.write(blob)
    print(path, len(blob), "bytes")


def main():
    # 1. little-endian int16 with slope/intercept rescale
    dims = (7, 6, 5)
    hdr = header("<", dims, (0.97, 1.23, 2.5), 4, 16, 2.0, -3.0,
                 (-12.5, 4.25, 7.75))
    vals = voxels_fortran(dims, lambda x, y, z: (x * 31 + y * 17 + z * 7) % 41 - 20)
    data = struct.pack("<%dh" % len(vals), *vals)
    write("ref_int16_scaled.nii", hdr + b"\x00" * 4 + data)

    # 2. big-endian float32, gzipped, slope 0 (no rescale by convention)
    dims = (5, 4, 6)
    hdr = header(">", dims, (2.0, 2.0, 3.0), 16, 32, 0.0, 0.0, (0.0, 0.0, 0.0))
    vals = voxels_fortran(dims, lambda x, y, z: (x + 10 * y + 100 * z) / 4.0)
    data = struct.pack(">%df" % len(vals), *vals)
    write("ref_float32_be.nii.gz", hdr + b"\x00" * 4 + data, gz=True)

    # 3. 4-D with singleton fourth axis: readers should squeeze it
    dims = (3, 3, 3, 1)
    hdr = header("<", dims, (1.5, 1.5, 1.5, 1.0), 2, 8, 1.0, 0.0, (0.0, 0.0, 0.0))
    vals = voxels_fortran(dims[:3], lambda x, y, z: (x + y + z) % 2)
    data = struct.pack("<%dB" % len(vals), *vals)
    write("ref_4d_singleton.nii", hdr + b"\x00" * 4 + data)

    # 4. genuine 4-D (two frames): readers should reject
    dims = (3, 3, 3, 2)
    hdr = header("<", dims, (1.0, 1.0, 1.0, 1.0), 2, 8, 1.0, 0.0, (0.0, 0.0, 0.0))
    vals = voxels_fortran(dims[:3], lambda x, y, z: 1) * 2
    data = struct.pack("<%dB" % len(vals), *vals)
    write("ref_4d_multi.nii", hdr + b"\x00" * 4 + data)


if __name__ == "__main__":
    main()

"""Minimal NIfTI-1 reader and writer for single-frame scalar volumes."""

from __future__ import annotations

import gzip
import os

import numpy as np

from .volume import Volume3

__all__ = ["read_nifti", "write_nifti", "NiftiError", "HEADER_DTYPE"]


class NiftiError(ValueError):
    """Raised for unreadable or unsupported NIfTI-1 files."""


_FIELDS = [
    ("sizeof_hdr", "i4"),
    ("data_type", "S10"),
    ("db_name", "S18"),
    ("extents", "i4"),
    ("session_error", "i2"),
    ("regular", "S1"),
    ("dim_info", "u1"),
    ("dim", "i2", (8,)),
    ("intent_p1", "f4"),
    ("intent_p2", "f4"),
    ("intent_p3", "f4"),
    ("intent_code", "i2"),
    ("datatype", "i2"),
    ("bitpix", "i2"),
    ("slice_start", "i2"),
    ("pixdim", "f4", (8,)),
    ("vox_offset", "f4"),
    ("scl_slope", "f4"),
    ("scl_inter", "f4"),
    ("slice_end", "i2"),
    ("slice_code", "u1"),
    ("xyzt_units", "u1"),
    ("cal_max", "f4"),
    ("cal_min", "f4"),
    ("slice_duration", "f4"),
    ("toffset", "f4"),
    ("glmax", "i4"),
    ("glmin", "i4"),
    ("descrip", "S80"),
    ("aux_file", "S24"),
    ("qform_code", "i2"),
    ("sform_code", "i2"),
    ("quatern_b", "f4"),
    ("quatern_c", "f4"),
    ("quatern_d", "f4"),
    ("qoffset_x", "f4"),
    ("qoffset_y", "f4"),
    ("qoffset_z", "f4"),
    ("srow_x", "f4", (4,)),
    ("srow_y", "f4", (4,)),
    ("srow_z", "f4", (4,)),
    ("intent_name", "S16"),
    ("magic", "S4"),
]

HEADER_DTYPE = np.dtype(_FIELDS)
assert HEADER_DTYPE.itemsize == 348

# NIfTI datatype code -> numpy type
_DATATYPES = {
    2: np.uint8,
    4: np.int16,
    8: np.int32,
    16: np.float32,
    64: np.float64,
}


def _read_bytes(path) -> bytes:
    path = os.fspath(path)
    opener = gzip.open if path.endswith(".gz") else open
    with opener(path, "rb") as fh:
        return fh.read()


def _write_bytes(path, payload: bytes) -> None:
    path = os.fspath(path)
    with open(path, "wb") as raw:
        if path.endswith(".gz"):
            # empty name and zero mtime keep the compressed bytes reproducible
            with gzip.GzipFile(filename="", mode="wb", fileobj=raw, mtime=0) as fh:
                fh.write(payload)
        else:
            raw.write(payload)


def _parse_header(raw: bytes) -> np.ndarray:
    if len(raw) < 348:
        raise NiftiError("corrupt header: file shorter than 348 bytes")
    for order in ("<", ">"):
        hdr = np.frombuffer(raw[:348], dtype=HEADER_DTYPE.newbyteorder(order))[0]
        if int(hdr["sizeof_hdr"]) == 348:
            return hdr
    raise NiftiError("corrupt header: sizeof_hdr is not 348")


def _quaternion_to_matrix(b, c, d):
    a2 = 1.0 - (b * b + c * c + d * d)
    a = np.sqrt(a2) if a2 > 1e-7 else 0.0
    if a == 0.0:
        norm = np.sqrt(b * b + c * c + d * d)
        b, c, d = b / norm, c / norm, d / norm
    return np.array(
        [
            [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
            [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
            [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b],
        ]
    )


def _matrix_to_quaternion(rot):
    """Quaternion (b, c, d) and qfac for an orthonormal matrix."""
    rot = np.array(rot, dtype=np.float64)
    qfac = 1.0
    if np.linalg.det(rot) < 0:
        rot[:, 2] = -rot[:, 2]
        qfac = -1.0
    trace = np.trace(rot)
    if trace > 0:
        s = np.sqrt(trace + 1.0) * 2
        a = 0.25 * s
        b = (rot[2, 1] - rot[1, 2]) / s
        c = (rot[0, 2] - rot[2, 0]) / s
        d = (rot[1, 0] - rot[0, 1]) / s
    elif rot[0, 0] > rot[1, 1] and rot[0, 0] > rot[2, 2]:
        s = np.sqrt(1.0 + rot[0, 0] - rot[1, 1] - rot[2, 2]) * 2
        a = (rot[2, 1] - rot[1, 2]) / s
        b = 0.25 * s
        c = (rot[0, 1] + rot[1, 0]) / s
        d = (rot[0, 2] + rot[2, 0]) / s
    elif rot[1, 1] > rot[2, 2]:
        s = np.sqrt(1.0 + rot[1, 1] - rot[0, 0] - rot[2, 2]) * 2
        a = (rot[0, 2] - rot[2, 0]) / s
        b = (rot[0, 1] + rot[1, 0]) / s
        c = 0.25 * s
        d = (rot[1, 2] + rot[2, 1]) / s
    else:
        s = np.sqrt(1.0 + rot[2, 2] - rot[0, 0] - rot[1, 1]) * 2
        a = (rot[1, 0] - rot[0, 1]) / s
        b = (rot[0, 2] + rot[2, 0]) / s
        c = (rot[1, 2] + rot[2, 1]) / s
        d = 0.25 * s
    if a < 0:
        b, c, d = -b, -c, -d
    return (b, c, d), qfac


def read_nifti(path) -> Volume3:
    """Read a NIfTI-1 file (``.nii`` or ``.nii.gz``) into a :class:`Volume3`.

    Intensities are scaled by ``scl_slope``/``scl_inter`` and promoted to
    float32. Geometry comes from the sform when ``sform_code > 0``, else the
    qform, else an identity orientation at the origin.
    """
    try:
        raw = _read_bytes(path)
    except OSError as exc:
        raise NiftiError(f"cannot read {path}: {exc}") from exc

    hdr = _parse_header(raw)
    magic = bytes(hdr["magic"])
    if magic not in (b"n+1", b"ni1"):
        raise NiftiError(f"bad magic {magic!r}")
    if magic == b"ni1":
        raise NiftiError("two-file (.hdr/.img) NIfTI is not supported")

    dim = [int(v) for v in hdr["dim"]]
    ndim = dim[0]
    if ndim < 3 or ndim > 7 or any(v != 1 for v in dim[4 : ndim + 1]):
        raise NiftiError(f"only single-frame 3D volumes are supported (dim={dim})")
    shape = tuple(dim[1:4])
    if min(shape) < 1:
        raise NiftiError(f"invalid dims {shape}")

    code = int(hdr["datatype"])
    if code not in _DATATYPES:
        raise NiftiError(f"unsupported datatype code {code}")
    dtype = np.dtype(_DATATYPES[code]).newbyteorder(hdr.dtype["sizeof_hdr"].byteorder)
    offset = int(hdr["vox_offset"])
    count = int(np.prod(shape))
    if len(raw) < offset + count * dtype.itemsize:
        raise NiftiError("truncated data block")
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    data = data.reshape(shape, order="F").astype(np.float64 if code == 64 else np.float32)

    slope, inter = float(hdr["scl_slope"]), float(hdr["scl_inter"])
    if np.isfinite(slope) and slope != 0.0 and (slope != 1.0 or inter != 0.0):
        data = data * slope + inter

    pixdim = np.abs(hdr["pixdim"][1:4].astype(np.float64))
    spacing = tuple(float(p) if p > 0 else 1.0 for p in pixdim)
    if int(hdr["sform_code"]) > 0:
        srow = np.stack([hdr["srow_x"], hdr["srow_y"], hdr["srow_z"]]).astype(np.float64)
        cols = srow[:, :3]
        orientation = cols / np.linalg.norm(cols, axis=0)
        origin = srow[:, 3]
    elif int(hdr["qform_code"]) > 0:
        orientation = _quaternion_to_matrix(
            float(hdr["quatern_b"]), float(hdr["quatern_c"]), float(hdr["quatern_d"])
        )
        qfac = -1.0 if float(hdr["pixdim"][0]) < 0 else 1.0
        orientation[:, 2] *= qfac
        origin = np.array([hdr["qoffset_x"], hdr["qoffset_y"], hdr["qoffset_z"]], dtype=np.float64)
    else:
        orientation = np.eye(3)
        origin = np.zeros(3)

    return Volume3(
        data.astype(np.float32),
        spacing=spacing,
        origin=tuple(origin),
        orientation=orientation,
    )


def write_nifti(vol: Volume3, path) -> None:
    """Write ``vol`` as little-endian float32 NIfTI-1; gzip when ``path`` ends in ``.gz``."""
    hdr = np.zeros((), dtype=HEADER_DTYPE.newbyteorder("<"))
    hdr["sizeof_hdr"] = 348
    hdr["regular"] = b"r"
    hdr["dim"] = [3, *vol.dims, 1, 1, 1, 1]
    hdr["datatype"] = 16
    hdr["bitpix"] = 32

    (qb, qc, qd), qfac = _matrix_to_quaternion(vol.orientation)
    hdr["pixdim"] = [qfac, *vol.spacing, 1.0, 1.0, 1.0, 1.0]
    hdr["vox_offset"] = 352.0
    hdr["scl_slope"] = 1.0
    hdr["scl_inter"] = 0.0
    hdr["xyzt_units"] = 2  # mm
    hdr["qform_code"] = 1
    hdr["sform_code"] = 1
    hdr["quatern_b"], hdr["quatern_c"], hdr["quatern_d"] = qb, qc, qd
    hdr["qoffset_x"], hdr["qoffset_y"], hdr["qoffset_z"] = vol.origin
    aff = vol.affine
    hdr["srow_x"] = aff[0]
    hdr["srow_y"] = aff[1]
    hdr["srow_z"] = aff[2]
    hdr["magic"] = b"n+1"

    payload = np.asarray(vol.data, dtype="<f4").tobytes(order="F")
    _write_bytes(path, hdr.tobytes() + b"\x00" * 4 + payload)

"""NPY tensor files and NPZ-style ZIP archives.

Tensors are plain C-contiguous numpy arrays restricted to float32, float64
and uint8.  Files are written as NPY v1.0 and read from v1.0 or v2.0.
Archives are ZIP files whose ``<name>.npy`` members hold tensors (the NPZ
convention, so ``numpy.load`` opens them too); members without the ``.npy``
suffix (JSON manifests) are stored as raw bytes.
"""

from __future__ import annotations

import io
import os
import tempfile
import zipfile
from pathlib import Path
from typing import Mapping, Union

import numpy as np
from numpy.lib import format as npformat

from .errors import TensorDtypeError, TensorFormatError, UnsupportedLayoutError

ALLOWED_DTYPES = (np.dtype("<f4"), np.dtype("<f8"), np.dtype("|u1"))

# Fixed member timestamp so archives hash identically across runs.
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)

PathLike = Union[str, os.PathLike]
Entry = Union[np.ndarray, bytes]


def _check_dtype(dtype: np.dtype) -> None:
    if dtype not in ALLOWED_DTYPES:
        raise TensorDtypeError(f"unsupported tensor dtype {dtype.str!r}; expected f4, f8 or u1")


def tensor_to_bytes(t: np.ndarray) -> bytes:
    """Serialize ``t`` to NPY v1.0 bytes."""
    t = np.asarray(t)
    _check_dtype(t.dtype)
    buf = io.BytesIO()
    npformat.write_array(buf, np.require(t, requirements="C"), version=(1, 0), allow_pickle=False)
    return buf.getvalue()


def tensor_from_bytes(raw: bytes) -> np.ndarray:
    """Parse NPY bytes, validating layout and dtype."""
    f = io.BytesIO(raw)
    try:
        major, minor = npformat.read_magic(f)
    except ValueError as exc:
        raise TensorFormatError(f"bad NPY magic: {exc}") from exc
    try:
        if (major, minor) == (1, 0):
            shape, fortran, dtype = npformat.read_array_header_1_0(f)
        elif (major, minor) == (2, 0):
            shape, fortran, dtype = npformat.read_array_header_2_0(f)
        else:
            raise TensorFormatError(f"unsupported NPY version {major}.{minor}")
    except ValueError as exc:
        raise TensorFormatError(f"bad NPY header: {exc}") from exc
    if fortran:
        raise UnsupportedLayoutError("Fortran-ordered NPY arrays are not supported")
    _check_dtype(dtype)
    count = int(np.prod(shape, dtype=np.int64))
    payload = raw[f.tell():]
    if len(payload) != count * dtype.itemsize:
        raise TensorFormatError(
            f"payload holds {len(payload)} bytes, header implies {count * dtype.itemsize}"
        )
    return np.reshape(np.frombuffer(payload, dtype=dtype, count=count), shape).copy()


def read_tensor(path: PathLike) -> np.ndarray:
    return tensor_from_bytes(Path(path).read_bytes())


def write_tensor(t: np.ndarray, path: PathLike) -> None:
    data = tensor_to_bytes(t)
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise OSError(f"cannot write tensor to {path}: {exc}") from exc


def _atomic_write(path: Path, write) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            write(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_archive(path: PathLike, entries: Mapping[str, Entry]) -> None:
    """Write ``entries`` to a ZIP archive, replacing ``path`` atomically.

    Arrays are stored as ``<key>.npy`` members, bytes verbatim under ``key``.
    Member order follows the mapping's iteration order and every member gets
    the same fixed timestamp, so equal inputs give byte-identical files.
    """

    def write(fh):
        with zipfile.ZipFile(fh, "w", compression=zipfile.ZIP_STORED) as zf:
            for key, value in entries.items():
                if isinstance(value, (bytes, bytearray)):
                    name, data = key, bytes(value)
                else:
                    name, data = key + ".npy", tensor_to_bytes(value)
                info = zipfile.ZipInfo(name, date_time=_ZIP_EPOCH)
                info.external_attr = 0o644 << 16
                zf.writestr(info, data)

    _atomic_write(Path(path), write)


def read_archive(path: PathLike) -> dict[str, Entry]:
    """Read every member of an archive written by :func:`write_archive`."""
    out: dict[str, Entry] = {}
    try:
        zf = zipfile.ZipFile(path, "r")
    except zipfile.BadZipFile as exc:
        raise TensorFormatError(f"{path} is not a ZIP archive") from exc
    with zf:
        for name in zf.namelist():
            data = zf.read(name)
            if name.endswith(".npy"):
                out[name[:-4]] = tensor_from_bytes(data)
            else:
                out[name] = data
    return out

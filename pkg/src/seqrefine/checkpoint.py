"""Denoiser checkpoint files.

Layout: a plain-text preamble of ``key value`` lines (version, n, d, h,
l, seed) terminated by one blank line, then each parameter array in
declaration order as a little-endian uint32 element count followed by
that many little-endian float32 values. Weights are stored at float32;
loading promotes them back to float64, so save -> load -> save
reproduces the file byte for byte.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .denoiser import DenoiserModel

FORMAT_VERSION = 1


class CheckpointFormatError(ValueError):
    """Malformed or truncated checkpoint file."""


def save_checkpoint(model: DenoiserModel, path) -> None:
    path = Path(path)
    preamble = (
        f"version {FORMAT_VERSION}\n"
        f"n {model.n_regions}\n"
        f"d {model.dim}\n"
        f"h {model.hidden}\n"
        f"l {model.layers}\n"
        f"seed {model.seed}\n"
        "\n"
    )
    chunks = [preamble.encode("ascii")]
    for p in model.params:
        vals = np.ascontiguousarray(p, dtype="<f4")
        chunks.append(struct.pack("<I", vals.size))
        chunks.append(vals.tobytes())
    path.write_bytes(b"".join(chunks))


def load_checkpoint(path) -> DenoiserModel:
    path = Path(path)
    blob = path.read_bytes()
    sep = blob.find(b"\n\n")
    if sep < 0:
        raise CheckpointFormatError(f"{path}: no blank line terminating the preamble")
    meta: dict[str, int] = {}
    for line in blob[:sep].decode("ascii", errors="replace").splitlines():
        parts = line.split()
        if len(parts) != 2:
            raise CheckpointFormatError(f"{path}: bad preamble line {line!r}")
        try:
            meta[parts[0]] = int(parts[1])
        except ValueError as exc:
            raise CheckpointFormatError(f"{path}: non-integer value in {line!r}") from exc
    missing = {"version", "n", "d", "h", "l", "seed"} - meta.keys()
    if missing:
        raise CheckpointFormatError(f"{path}: preamble missing {sorted(missing)}")
    if meta["version"] != FORMAT_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported version {meta['version']}")

    model = DenoiserModel(meta["n"], meta["d"], hidden=meta["h"], layers=meta["l"], seed=meta["seed"])
    off = sep + 2
    params = []
    for expect in model.params:
        if off + 4 > len(blob):
            raise CheckpointFormatError(f"{path}: truncated before array header")
        (count,) = struct.unpack_from("<I", blob, off)
        off += 4
        if count != expect.size:
            raise CheckpointFormatError(
                f"{path}: array of {count} values where {expect.size} expected")
        end = off + 4 * count
        if end > len(blob):
            raise CheckpointFormatError(f"{path}: truncated array data")
        vals = np.frombuffer(blob, dtype="<f4", count=count, offset=off)
        params.append(vals.astype(np.float64).reshape(expect.shape))
        off = end
    if off != len(blob):
        raise CheckpointFormatError(f"{path}: {len(blob) - off} trailing bytes")
    model.set_params(params)
    return model

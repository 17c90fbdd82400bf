"""Raw little-endian volume files described by a JSON manifest.

A container is a directory holding ``manifest.json`` plus one payload file
per array.  Payloads are x-fastest; arrays with leading axes (coils, echoes)
store one volume after another in C order over the leading axes.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .signal import flatten, unflatten

MANIFEST = "manifest.json"
DTYPES = {"c64": np.dtype("<c8"), "f32": np.dtype("<f4"), "u8": np.dtype("u1")}


class ContainerError(ValueError):
    """Malformed manifest or payload."""


def write_container(directory, arrays: dict, shape, echo_times=None, n_coils=None, **meta) -> Path:
    """Write ``arrays`` (name -> (array, dtype code)) and the manifest.

    Every array has shape ``leading + shape``.  Extra keyword arguments are
    stored verbatim in the manifest.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    shape = tuple(int(n) for n in shape)
    files, layout = {}, {}
    for name, (arr, code) in arrays.items():
        if code not in DTYPES:
            raise ContainerError(f"unknown dtype code {code!r}")
        arr = np.asarray(arr)
        if arr.shape[-3:] != shape:
            raise ContainerError(f"array {name!r} has shape {arr.shape}, expected trailing {shape}")
        lead = list(arr.shape[:-3])
        fname = f"{name}.{code}"
        payload = flatten(arr).astype(DTYPES[code], copy=False)
        (directory / fname).write_bytes(np.ascontiguousarray(payload).tobytes())
        files[name] = fname
        layout[name] = {"dtype": code, "leading": lead}
    manifest = {
        "shape": list(shape),
        "n_coils": n_coils,
        "n_echoes": None if echo_times is None else len(echo_times),
        "echo_times_s": None if echo_times is None else [float(v) for v in echo_times],
        "arrays": files,
        "layout": layout,
    }
    manifest.update(meta)
    path = directory / MANIFEST
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def read_manifest(directory) -> dict:
    path = Path(directory) / MANIFEST
    if not path.is_file():
        raise ContainerError(f"no {MANIFEST} in {directory}")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ContainerError(f"{path}: invalid JSON ({exc})") from exc
    for key in ("shape", "arrays", "layout"):
        if key not in manifest:
            raise ContainerError(f"{path}: missing key {key!r}")
    if len(manifest["shape"]) != 3:
        raise ContainerError(f"{path}: shape must be [nx, ny, nz]")
    return manifest


def read_array(directory, name: str, manifest=None) -> np.ndarray:
    """Load one array, returned with shape ``leading + (nx, ny, nz)``."""
    manifest = manifest or read_manifest(directory)
    if name not in manifest["arrays"]:
        raise ContainerError(f"array {name!r} not in container {directory}")
    info = manifest["layout"][name]
    dt = DTYPES.get(info["dtype"])
    if dt is None:
        raise ContainerError(f"array {name!r}: unknown dtype {info['dtype']!r}")
    shape = tuple(manifest["shape"])
    lead = tuple(info["leading"])
    count = int(np.prod(lead, dtype=np.int64)) * int(np.prod(shape))
    path = Path(directory) / manifest["arrays"][name]
    raw = path.read_bytes()
    if len(raw) != count * dt.itemsize:
        raise ContainerError(
            f"{path}: expected {count * dt.itemsize} bytes for {lead + shape} {info['dtype']}, found {len(raw)}"
        )
    flat = np.frombuffer(raw, dtype=dt).reshape(lead + (int(np.prod(shape)),))
    return unflatten(flat, shape)


def read_container(directory):
    manifest = read_manifest(directory)
    return manifest, {name: read_array(directory, name, manifest) for name in manifest["arrays"]}

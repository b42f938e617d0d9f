"""Binary model file: one text line, a JSON header, then raw float64 parameters.

Layout:
    #deeponet-model header-bytes=<L>\n
    <L bytes of UTF-8 JSON>
    <little-endian float64 parameters, branch then trunk, W then b per layer>
"""

from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np

from ..errors import ModelFormatError, UnsupportedVersion
from .model import ACTIVATION, MLP, DeepONetModel

FORMAT_VERSION = 1
MAGIC = b"#deeponet-model "
_FIRST_LINE = re.compile(rb"#deeponet-model header-bytes=(\d+)\n")
_DTYPE = np.dtype("<f8")


def _header(model: DeepONetModel) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "activation": model.activation,
        "p": model.p,
        "m": model.m,
        "branch_layers": model.branch.sizes,
        "trunk_layers": model.trunk.sizes,
        "input_mean": model.input_mean.tolist(),
        "input_std": model.input_std.tolist(),
        "output_scale": float(model.output_scale),
        "dtype": "float64-le",
    }


def dumps(model: DeepONetModel) -> bytes:
    header = json.dumps(_header(model), indent=1).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(a, dtype=_DTYPE).tobytes() for a in model.params())
    first = b"#deeponet-model header-bytes=%d\n" % len(header)
    return first + header + payload


def save_model(model: DeepONetModel, path) -> None:
    Path(path).write_bytes(dumps(model))


def _layer_shapes(sizes):
    shapes = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        shapes.extend([(fan_in, fan_out), (fan_out,)])
    return shapes


def loads(data: bytes) -> DeepONetModel:
    if not data.startswith(MAGIC):
        raise ModelFormatError("missing model magic line", 0)
    match = _FIRST_LINE.match(data)
    if match is None:
        raise ModelFormatError("malformed first line", len(MAGIC))
    start = match.end()
    length = int(match.group(1))
    if start + length > len(data):
        raise ModelFormatError("header truncated", len(data))
    try:
        header = json.loads(data[start:start + length].decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise ModelFormatError("header is not UTF-8", start + exc.start) from None
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"header JSON invalid: {exc.msg}", start + exc.pos) from None
    if not isinstance(header, dict):
        raise ModelFormatError("header must be a JSON object", start)

    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"unsupported format_version {version!r}", start)
    try:
        branch_sizes = [int(s) for s in header["branch_layers"]]
        trunk_sizes = [int(s) for s in header["trunk_layers"]]
        activation = header["activation"]
        mean = np.asarray(header["input_mean"], dtype=np.float64)
        std = np.asarray(header["input_std"], dtype=np.float64)
        scale = float(header["output_scale"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"header field invalid: {exc}", start) from None
    if activation != ACTIVATION:
        raise ModelFormatError(f"unknown activation {activation!r}", start)
    if header.get("dtype", "float64-le") != "float64-le":
        raise ModelFormatError(f"unknown dtype {header.get('dtype')!r}", start)

    offset = start + length
    arrays = []
    for shape in _layer_shapes(branch_sizes) + _layer_shapes(trunk_sizes):
        nbytes = int(np.prod(shape)) * _DTYPE.itemsize
        if offset + nbytes > len(data):
            raise ModelFormatError("parameter payload truncated", len(data))
        arr = np.frombuffer(data, dtype=_DTYPE, count=nbytes // 8, offset=offset)
        arrays.append(arr.reshape(shape).astype(np.float64))
        offset += nbytes
    if offset != len(data):
        raise ModelFormatError(f"{len(data) - offset} trailing bytes after payload", offset)

    nb = 2 * (len(branch_sizes) - 1)
    branch = MLP(arrays[0:nb:2], arrays[1:nb:2])
    trunk = MLP(arrays[nb::2], arrays[nb + 1::2])
    try:
        return DeepONetModel(branch, trunk, mean, std, scale, activation)
    except ValueError as exc:
        raise ModelFormatError(f"inconsistent header: {exc}", start) from None


def load_model(path) -> DeepONetModel:
    return loads(Path(path).read_bytes())

"""On-disk formats: tensor containers, weight bundles, PPM/PGM images, configs.

Tensor container layout (all integers little-endian)::

    b"PKIT" | version u32 | dtype u32 (0=f32, 1=f64) | rank u32 | dims u64 * rank | payload

Weight bundles wrap named containers::

    b"PKIW" | version u32 | count u32 | (name_len u32 | utf-8 name | container) * count
"""

from __future__ import annotations

import ast
import re
import struct
from contextlib import contextmanager
from dataclasses import fields
from pathlib import Path
from typing import BinaryIO, Union

import numpy as np

from .config import VARIANTS, ConfigError, ModelConfig, variant

TENSOR_MAGIC = b"PKIT"
BUNDLE_MAGIC = b"PKIW"
VERSION = 1
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
DTYPE_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


class FormatError(ValueError):
    pass


class BadMagicError(FormatError):
    pass


class UnsupportedDtypeError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class UnsupportedVersionError(FormatError):
    pass


PathOrFile = Union[str, Path, BinaryIO]


@contextmanager
def _open(target: PathOrFile, mode: str):
    if isinstance(target, (str, Path)):
        with open(target, mode) as fh:
            yield fh
    else:
        yield target


def _read_exact(fh: BinaryIO, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise TruncatedError(f"truncated {what}: expected {n} bytes, got {len(data)}")
    return data


def encode_tensor(t: np.ndarray) -> bytes:
    code = DTYPE_CODES.get(t.dtype)
    if code is None:
        raise UnsupportedDtypeError(f"cannot store dtype {t.dtype}; only float32 and float64")
    if not 1 <= t.ndim <= 4:
        raise FormatError(f"container holds ranks 1-4, got rank {t.ndim}")
    header = TENSOR_MAGIC + struct.pack("<III", VERSION, code, t.ndim) + struct.pack(f"<{t.ndim}Q", *t.shape)
    return header + np.ascontiguousarray(t, dtype=DTYPES[code]).tobytes()


def write_tensor(t: np.ndarray, sink: PathOrFile) -> None:
    with _open(sink, "wb") as fh:
        fh.write(encode_tensor(t))


def _read_tensor(fh: BinaryIO) -> np.ndarray:
    magic = _read_exact(fh, 4, "magic")
    if magic != TENSOR_MAGIC:
        raise BadMagicError(f"bad tensor magic {magic!r}, expected {TENSOR_MAGIC!r}")
    version, code, rank = struct.unpack("<III", _read_exact(fh, 12, "header"))
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported container version {version}")
    if code not in DTYPES:
        raise UnsupportedDtypeError(f"unknown dtype code {code}")
    if not 1 <= rank <= 4:
        raise FormatError(f"unsupported rank {rank}")
    dims = struct.unpack(f"<{rank}Q", _read_exact(fh, 8 * rank, "dims"))
    dtype = DTYPES[code]
    count = int(np.prod(dims))
    payload = _read_exact(fh, count * dtype.itemsize, "payload")
    return np.frombuffer(payload, dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))


def read_tensor(source: PathOrFile) -> np.ndarray:
    with _open(source, "rb") as fh:
        return _read_tensor(fh)


def write_bundle(tensors: dict[str, np.ndarray], sink: PathOrFile) -> None:
    with _open(sink, "wb") as fh:
        fh.write(BUNDLE_MAGIC + struct.pack("<II", VERSION, len(tensors)))
        for name, t in tensors.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)) + raw)
            fh.write(encode_tensor(t))


def read_bundle(source: PathOrFile) -> dict[str, np.ndarray]:
    with _open(source, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != BUNDLE_MAGIC:
            raise BadMagicError(f"bad bundle magic {magic!r}, expected {BUNDLE_MAGIC!r}")
        version, count = struct.unpack("<II", _read_exact(fh, 8, "header"))
        if version != VERSION:
            raise UnsupportedVersionError(f"unsupported bundle version {version}")
        out = {}
        for _ in range(count):
            (n,) = struct.unpack("<I", _read_exact(fh, 4, "name length"))
            name = _read_exact(fh, n, "name").decode("utf-8")
            out[name] = _read_tensor(fh)
        return out


# -- images -----------------------------------------------------------------


def _pnm_header(data: bytes) -> tuple[bytes, list[int], int]:
    """Parse magic and three integers, skipping comments; return data offset."""
    tokens: list[bytes] = []
    i = 0
    while len(tokens) < 4:
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if i < len(data) and data[i : i + 1] == b"#":
            while i < len(data) and data[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < len(data) and not data[i : i + 1].isspace() and data[i : i + 1] != b"#":
            i += 1
        if start == i:
            raise TruncatedError("truncated image header")
        tokens.append(data[start:i])
    # exactly one whitespace byte separates the header from the raster
    if i >= len(data) or not data[i : i + 1].isspace():
        raise FormatError("malformed image header")
    try:
        numbers = [int(t) for t in tokens[1:]]
    except ValueError as exc:
        raise FormatError(f"malformed image header: {exc}") from exc
    return tokens[0], numbers, i + 1


def load_image(path) -> np.ndarray:
    """Binary PPM (P6) -> (1, 3, H, W), PGM (P5) -> (1, 1, H, W), scaled to [0, 1]."""
    data = Path(path).read_bytes()
    magic, (width, height, maxval), offset = _pnm_header(data)
    if magic not in (b"P5", b"P6"):
        raise BadMagicError(f"{path}: unsupported image magic {magic!r}; need P5 or P6")
    if maxval != 255:
        raise FormatError(f"{path}: maxval must be 255, got {maxval}")
    channels = 3 if magic == b"P6" else 1
    need = width * height * channels
    raster = data[offset : offset + need]
    if len(raster) != need:
        raise TruncatedError(f"{path}: raster has {len(raster)} bytes, expected {need}")
    pixels = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, channels)
    return (pixels.transpose(2, 0, 1)[None].astype(np.float64) / 255.0).copy()


def encode_image(pixels: np.ndarray) -> bytes:
    """uint8 array (H, W) or (H, W, 3) -> PGM/PPM bytes."""
    if pixels.dtype != np.uint8:
        raise FormatError(f"image pixels must be uint8, got {pixels.dtype}")
    if pixels.ndim == 2:
        magic = b"P5"
    elif pixels.ndim == 3 and pixels.shape[2] == 3:
        magic = b"P6"
    else:
        raise FormatError(f"image must be (H, W) or (H, W, 3), got {pixels.shape}")
    h, w = pixels.shape[:2]
    return magic + f"\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(pixels).tobytes()


def save_image(path, pixels: np.ndarray) -> None:
    Path(path).write_bytes(encode_image(pixels))


# -- config files -------------------------------------------------------------

# key -> (kind, fixed length or None)
_SCHEMA = {
    "variant": ("str", None),
    "in_channels": ("int", None),
    "stem_channels": ("int", None),
    "stem_hidden": ("ints", 2),
    "stage_channels": ("ints", 4),
    "blocks": ("ints", 4),
    "pki_kernels": ("ints", None),
    "dilations": ("ints", None),
    "caa_schedule": ("str", None),
    "caa_kernel": ("int", None),
    "caa_growth": ("int", None),
    "caa_pool": ("int", None),
    "caa_stage_mask": ("bools", 4),
    "ffn_ratio": ("float", None),
    "csp": ("bool", None),
    "block_residual": ("bool", None),
    "norm_act": ("bool", None),
}
_FIELD = {"caa_stage_mask": "caa_stages"}
_WORDS = {"true": True, "false": False, "yes": True, "no": False}


def _literal(text: str):
    lowered = text.lower()
    if lowered in _WORDS:
        return _WORDS[lowered]
    if text[:1] in "([":
        text = re.sub(r"\b(true|false)\b", lambda m: m.group(1).capitalize(), text)
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def _coerce(key: str, raw, where: str):
    kind, length = _SCHEMA[key]

    def bad(expected):
        return ConfigError(f"{where}: {key}: expected {expected}, got {raw!r}")

    if kind == "str":
        if not isinstance(raw, str):
            raise bad("a string")
        return raw
    if kind == "int":
        if isinstance(raw, bool) or not isinstance(raw, int):
            raise bad("an integer")
        return raw
    if kind == "float":
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            raise bad("a number")
        return float(raw)
    if kind == "bool":
        if not isinstance(raw, bool):
            raise bad("true or false")
        return raw
    if isinstance(raw, int) and not isinstance(raw, bool):
        raw = (raw,)
    if not isinstance(raw, (tuple, list)):
        raise bad("a list")
    if length is not None and len(raw) != length:
        raise ConfigError(f"{where}: {key}: expected {length} entries, got {len(raw)}")
    if kind == "ints":
        if not all(isinstance(v, int) and not isinstance(v, bool) for v in raw):
            raise bad("a list of integers")
        return tuple(raw)
    if not all(isinstance(v, bool) or v in (0, 1) for v in raw):
        raise bad("a list of booleans")
    return tuple(bool(v) for v in raw)


def parse_config(text: str, source: str = "<config>") -> ModelConfig:
    """Parse ``key = value`` lines; unspecified keys default to the named variant (S)."""
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'key = value', got {line!r}")
        key, _, raw = (part.strip() for part in line.partition("="))
        if key not in _SCHEMA:
            raise ConfigError(f"{where}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{where}: duplicate key {key!r}")
        values[key] = _coerce(key, _literal(raw), where)
    base = variant(values.pop("variant", "S"))
    changes = {_FIELD.get(k, k): v for k, v in values.items()}
    if "pki_kernels" in changes and "dilations" not in changes:
        changes["dilations"] = (1,) * len(changes["pki_kernels"])
    try:
        return base.replace(**changes)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def load_config(path) -> ModelConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"), str(path))


def dump_config(cfg: ModelConfig) -> str:
    inverse = {v: k for k, v in _FIELD.items()}
    lines = []
    for f in fields(cfg):
        key = inverse.get(f.name, f.name)
        value = getattr(cfg, f.name)
        if value is None:
            continue
        if key == "variant" and value not in VARIANTS:
            lines.append(f"# variant: {value}")
            continue
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, tuple):
            value = "(" + ", ".join(("true" if v else "false") if isinstance(v, bool) else str(v) for v in value) + ")"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"

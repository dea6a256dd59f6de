"""Synthetic lens phantoms, image/mask files, dataset folders and checkpoints.

A phantom is three concentric, rotated ellipses over a dark background:
capsule (thin outer ring), cortex (ring) and nucleus (core).  The mask is the
noiseless class map; the image repeats one noisy gray channel three times.

Checkpoint layout (all integers little-endian)::

    b"MMUN" | u32 version=1 | u32 tensor_count
    per tensor: u16 name_len | name (utf-8) | u8 ndim | ndim x u64 extents
                | u8 dtype (0=f32, 1=f64) | raw payload
"""

import io
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError, UsageError

BACKGROUND, CAPSULE, CORTEX, NUCLEUS = range(4)
INTENSITY = {BACKGROUND: 0.1, CAPSULE: 0.9, CORTEX: 0.45, NUCLEUS: 0.7}
CLASS_NAMES = ("background", "capsule", "cortex", "nucleus")


@dataclass
class PhantomSpec:
    count: int = 100
    size: int = 64
    num_classes: int = 4
    seed: int = 0
    noise_sigma: float = 0.05
    center_jitter: float = 0.10
    semi_axis_range: tuple = (0.30, 0.45)
    capsule_range: tuple = (0.04, 0.08)
    cortex_range: tuple = (0.15, 0.25)
    rotation_deg: float = 20.0

    def validate(self):
        if self.count < 1 or self.size < 4:
            raise UsageError("phantom count must be >= 1 and size >= 4")
        if self.num_classes != 4:
            raise UsageError("phantoms always have 4 classes")
        if self.noise_sigma < 0:
            raise UsageError("noise_sigma must be >= 0")
        return self


@dataclass
class Sample:
    image: np.ndarray  # float32 [3, S, S] in [0, 1]
    mask: np.ndarray  # uint8 [S, S] class ids
    geometry: dict = field(default=None, repr=False)


def _ellipse(size, cx, cy, a, b, theta):
    c = np.arange(size) + 0.5
    yy, xx = np.meshgrid(c, c, indexing="ij")
    dx, dy = xx - cx, yy - cy
    u = dx * np.cos(theta) + dy * np.sin(theta)
    v = -dx * np.sin(theta) + dy * np.cos(theta)
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def render_phantom(spec, index):
    rng = np.random.default_rng([int(spec.seed), int(index)])
    S = spec.size
    cx, cy = S / 2 + rng.uniform(-spec.center_jitter, spec.center_jitter, 2) * S
    a, b = rng.uniform(*spec.semi_axis_range, 2) * S
    t_cap = rng.uniform(*spec.capsule_range)
    t_cor = rng.uniform(*spec.cortex_range)
    theta = np.deg2rad(rng.uniform(-spec.rotation_deg, spec.rotation_deg))
    geometry = dict(cx=cx, cy=cy, a=a, b=b, capsule=t_cap, cortex=t_cor, theta=theta)

    mask = np.zeros((S, S), dtype=np.uint8)
    mask[_ellipse(S, cx, cy, a, b, theta)] = CAPSULE
    mask[_ellipse(S, cx, cy, a * (1 - t_cap), b * (1 - t_cap), theta)] = CORTEX
    k = 1 - t_cap - t_cor
    mask[_ellipse(S, cx, cy, a * k, b * k, theta)] = NUCLEUS

    levels = np.array([INTENSITY[c] for c in range(4)])
    gray = levels[mask] + rng.normal(0.0, spec.noise_sigma, (S, S)) if spec.noise_sigma else levels[mask]
    gray = np.clip(gray, 0.0, 1.0).astype(np.float32)
    return Sample(np.repeat(gray[None], 3, axis=0), mask, geometry)


def gen_phantom(spec):
    spec.validate()
    return [render_phantom(spec, i) for i in range(spec.count)]


def threshold_segment(image):
    """Nearest-intensity classification of the gray channel (no spatial context)."""
    gray = np.asarray(image)[0] if np.ndim(image) == 3 else np.asarray(image)
    levels = np.array([INTENSITY[c] for c in range(4)], dtype=np.float64)
    return np.abs(gray[..., None] - levels).argmin(axis=-1).astype(np.uint8)


def stack(samples):
    images = np.stack([s.image for s in samples]).astype(np.float32)
    masks = np.stack([s.mask for s in samples]).astype(np.int64)
    return images, masks


def split(samples, ratios=(6, 2, 2), seed=0):
    """Seeded shuffle, then contiguous train/val/test partition by ``ratios``."""
    samples = list(samples)
    n = len(samples)
    if n < 10:
        raise UsageError(f"need at least 10 samples to split, got {n}")
    if len(ratios) != 3 or min(ratios) < 0 or sum(ratios) <= 0:
        raise UsageError(f"ratios must be three non-negative numbers, got {ratios}")
    total = sum(ratios)
    n_val = int(n * ratios[1] // total)
    n_test = int(n * ratios[2] // total)
    n_train = n - n_val - n_test
    order = np.random.default_rng(seed).permutation(n)
    picked = [samples[i] for i in order]
    return picked[:n_train], picked[n_train : n_train + n_val], picked[n_train + n_val :]


# ------------------------------------------------------------------ PPM / PGM


def _read_netpbm(path, magic):
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated header", offset=pos)
        tokens.append(raw[start:pos])
    if tokens[0] != magic:
        raise FormatError(f"{path}: expected {magic.decode()} magic, got {tokens[0][:8]!r}", offset=0)
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError(f"{path}: non-numeric header field", offset=pos) from None
    if w < 1 or h < 1 or maxval != 255:
        raise FormatError(f"{path}: unsupported header {w}x{h} maxval {maxval}", offset=pos)
    pos += 1  # single whitespace byte after maxval
    return w, h, raw[pos:], pos


def write_image(path, image):
    """Write a ``[3, H, W]`` array in [0, 1] as binary PPM."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise DataError(f"image must be 3 x H x W, got {image.shape}")
    _, h, w = image.shape
    pixels = np.round(np.clip(image, 0.0, 1.0) * 255).astype(np.uint8).transpose(1, 2, 0)
    Path(path).write_bytes(f"P6 {w} {h} 255\n".encode("ascii") + pixels.tobytes())


def read_image(path):
    w, h, payload, pos = _read_netpbm(path, b"P6")
    if len(payload) != 3 * w * h:
        raise FormatError(f"{path}: expected {3 * w * h} payload bytes, got {len(payload)}", offset=pos)
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3)
    return (pixels.transpose(2, 0, 1) / np.float32(255)).astype(np.float32)


def write_mask(path, mask):
    mask = np.asarray(mask)
    if mask.ndim != 2 or mask.min(initial=0) < 0 or mask.max(initial=0) > 255:
        raise DataError(f"mask must be 2-D with ids in [0, 255], got shape {mask.shape}")
    h, w = mask.shape
    Path(path).write_bytes(f"P5 {w} {h} 255\n".encode("ascii") + mask.astype(np.uint8).tobytes())


def read_mask(path):
    w, h, payload, pos = _read_netpbm(path, b"P5")
    if len(payload) != w * h:
        raise FormatError(f"{path}: expected {w * h} payload bytes, got {len(payload)}", offset=pos)
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w).copy()


# ------------------------------------------------------------ dataset folders

MANIFEST = "manifest.txt"


def write_dataset(directory, samples, spec=None):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    lines = []
    if spec is not None:
        for key, value in asdict(spec).items():
            if isinstance(value, tuple):
                value = ",".join(repr(v) for v in value)
            lines.append(f"# {key}={value}")
    for i, s in enumerate(samples):
        img, msk = f"img_{i:05d}.ppm", f"msk_{i:05d}.pgm"
        write_image(d / img, s.image)
        write_mask(d / msk, s.mask)
        lines.append(f"{img} {msk}")
    (d / MANIFEST).write_text("\n".join(lines) + "\n")


def read_dataset(directory):
    d = Path(directory)
    manifest = d / MANIFEST
    if not manifest.exists():
        raise FileNotFoundError(f"{manifest} not found")
    samples = []
    for lineno, line in enumerate(manifest.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise FormatError(f"{manifest}:{lineno}: expected '<image> <mask>'")
        samples.append(Sample(read_image(d / parts[0]), read_mask(d / parts[1])))
    return samples


# ---------------------------------------------------------------- checkpoints

MAGIC = b"MMUN"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def dumps_checkpoint(state):
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(state)))
    for name, value in state.items():
        arr = np.asarray(value)
        if arr.dtype not in _TAGS:
            raise FormatError(f"{name}: unsupported dtype {arr.dtype}")
        encoded = name.encode("utf-8")
        buf.write(struct.pack("<H", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(struct.pack("<B", _TAGS[arr.dtype]))
        buf.write(np.ascontiguousarray(arr).astype(_DTYPES[_TAGS[arr.dtype]], copy=False).tobytes())
    return buf.getvalue()


def loads_checkpoint(blob, expected=None):
    """Parse a checkpoint.

    ``expected`` (name -> shape) rejects a file written for a different model;
    nothing is returned unless the whole blob parses.
    """
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(blob):
            raise FormatError(f"truncated checkpoint while reading {what}", offset=pos)
        chunk = blob[pos : pos + n]
        pos += n
        return chunk

    if take(4, "magic") != MAGIC:
        raise FormatError("bad magic, not an MMUN checkpoint", offset=0)
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    state = {}
    for _ in range(count):
        start = pos
        (nlen,) = struct.unpack("<H", take(2, "name length"))
        try:
            name = take(nlen, "name").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("tensor name is not valid utf-8", offset=start) from None
        (ndim,) = struct.unpack("<B", take(1, "ndim"))
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim, "extents"))
        (tag,) = struct.unpack("<B", take(1, "dtype"))
        if tag not in _DTYPES:
            raise FormatError(f"{name}: unknown dtype tag {tag}", offset=pos - 1)
        dtype = _DTYPES[tag]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        payload = take(nbytes, f"payload of {name}")
        if expected is not None:
            if name not in expected:
                raise FormatError(f"unexpected tensor {name!r}", offset=start)
            if tuple(expected[name]) != tuple(shape):
                raise FormatError(
                    f"{name}: shape {tuple(shape)} does not match model {tuple(expected[name])}",
                    offset=start,
                )
        state[name] = np.frombuffer(payload, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
    if pos != len(blob):
        raise FormatError(f"{len(blob) - pos} trailing bytes after last tensor", offset=pos)
    if expected is not None and set(expected) != set(state):
        missing = sorted(set(expected) - set(state))
        raise FormatError(f"checkpoint lacks tensors {missing[:3]}", offset=pos)
    return state


def save_checkpoint(model_or_state, path):
    state = model_or_state if isinstance(model_or_state, dict) else model_or_state.state_dict()
    Path(path).write_bytes(dumps_checkpoint(state))


def load_checkpoint(path, model=None):
    """Read parameters from ``path``; with ``model`` given, validate and load them into it."""
    expected = None
    if model is not None:
        expected = {name: p.shape for name, p in model.named_parameters()}
    state = loads_checkpoint(Path(path).read_bytes(), expected)
    if model is not None:
        model.load_state_dict(state)
    return state

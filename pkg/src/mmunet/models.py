"""UNet, MM-UNet and the global-token-mixing ablation.

All three share one five-level encoder/decoder:

* encoder level l: two 3x3 conv + ReLU layers at width ``base_width * 2**(l-1)``,
  2x2 max-pool between levels;
* MM variants insert an MMLP block after each encoder level's double conv;
  its output feeds both the skip connection and the pooling path;
* decoder: bilinear 2x upsample, concat with the skip, two 3x3 conv + ReLU;
* a 1x1 conv to class logits.

Parameter counts come from :func:`param_shapes`, a closed-form enumeration
that never allocates, so very large configurations can be costed cheaply.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .mixer import hidden_width
from .mmlp import GroupSpec, MMLPBlock, ltm_param_count
from .nn import Module, he_uniform, substream, zeros

LEVELS = 5
VARIANTS = ("unet", "mm_unet", "mm_unet_global")

# (channel groups, block counts n, patch size s) per level at width 64, input 256
REFERENCE_LEVELS = (
    ((32, 16, 16), (32, 16, 8), 4),
    ((64, 32, 32), (16, 8, 4), 4),
    ((128, 64, 64), (8, 4, 2), 4),
    ((256, 128, 128), (8, 4, 2), 4),
    ((512, 256, 256), (4, 2, 1), 4),
)
REFERENCE_INPUT = 256


def normalize_variant(name):
    v = name.strip().lower().replace("-", "_")
    if v not in VARIANTS:
        raise ConfigError(f"unknown variant {name!r}; choose from {', '.join(VARIANTS)}")
    return v


@dataclass
class ModelSpec:
    variant: str = "mm_unet"
    base_width: int = 64
    input_size: int = 256
    num_classes: int = 4
    ltm_expansion: float = 1.0
    in_channels: int = 3
    # "zeros": LTM output weight starts at 0 (block = identity); "he": He-uniform like W3
    ltm_out_init: str = "zeros"
    levels: list = field(default=None)

    def __post_init__(self):
        self.variant = normalize_variant(self.variant)
        if self.ltm_out_init not in ("zeros", "he"):
            raise ConfigError(f"ltm_out_init must be 'zeros' or 'he', got {self.ltm_out_init!r}")

    def widths(self):
        return [self.base_width * 2**i for i in range(LEVELS)]

    def resolutions(self):
        return [self.input_size // 2**i for i in range(LEVELS)]

    def level_groups(self):
        """Per-level lists of :class:`GroupSpec` (empty lists for plain UNet)."""
        if self.variant == "unet":
            return [[] for _ in range(LEVELS)]
        if self.levels is not None:
            groups = [list(g) for g in self.levels]
        else:
            groups = default_groups(self.base_width, self.input_size)
        if self.variant == "mm_unet_global":
            groups = [[replace(g, block_count=1) for g in level] for level in groups]
        return groups

    def validate(self):
        if self.base_width < 1 or self.num_classes < 1 or self.in_channels < 1:
            raise ConfigError("base_width, num_classes and in_channels must be positive")
        if self.input_size % 2 ** (LEVELS - 1) or self.input_size < 2 ** (LEVELS - 1):
            raise ConfigError(
                f"input_size {self.input_size} must be a positive multiple of {2 ** (LEVELS - 1)}"
            )
        groups = self.level_groups()
        if len(groups) != LEVELS:
            raise ConfigError(f"need {LEVELS} levels of MMLP groups, got {len(groups)}")
        if self.variant != "unet" and not all(groups):
            raise ConfigError("MM variants need MMLP groups at every level")
        for lvl, (level, c, r) in enumerate(zip(groups, self.widths(), self.resolutions()), 1):
            if not level:
                continue
            if sum(g.channels for g in level) != c:
                raise ConfigError(
                    f"level {lvl}: groups {[g.channels for g in level]} do not sum to width {c}"
                )
            for g in level:
                try:
                    g.validate(r)
                except ConfigError as exc:
                    raise ConfigError(f"level {lvl}: {exc}") from None
        return self


def default_groups(base_width, input_size):
    """Reference per-level schedule, generalised to other widths and input sizes.

    Groups take 1/2, 1/4, 1/4 of the level width.  Block counts scale with
    ``input_size / 256`` (keeping block size in tokens fixed) and floor at 1;
    the patch size is capped at the map side.
    """
    if base_width % 4:
        raise ConfigError(f"base_width {base_width} must be divisible by 4 for the 1/2,1/4,1/4 split")
    out = []
    for i, (_, blocks, s) in enumerate(REFERENCE_LEVELS):
        c = base_width * 2**i
        r = input_size // 2**i
        ns = [max(1, n * input_size // REFERENCE_INPUT) for n in blocks]
        ps = min(s, r)
        out.append([GroupSpec(c // 2, ps, ns[0]), GroupSpec(c // 4, ps, ns[1]), GroupSpec(c // 4, ps, ns[2])])
    return out


class Conv2d(Module):
    def __init__(self, cin, cout, k, seed, name, dtype=np.float32):
        rng = substream(seed, name)
        self.pad = k // 2
        self.weight = he_uniform((cout, cin, k, k), cin * k * k, rng, dtype)
        self.bias = zeros(cout, dtype)

    def __call__(self, x):
        return T.conv2d(x, self.weight, self.bias, stride=1, pad=self.pad)


class DoubleConv(Module):
    def __init__(self, cin, cout, seed, name, dtype=np.float32):
        self.conv1 = Conv2d(cin, cout, 3, seed, f"{name}.conv1", dtype)
        self.conv2 = Conv2d(cout, cout, 3, seed, f"{name}.conv2", dtype)

    def __call__(self, x):
        return T.relu(self.conv2(T.relu(self.conv1(x))))


class UNet(Module):
    """Five-level UNet, optionally with an MMLP block after every encoder level."""

    def __init__(self, spec, seed=0, dtype=np.float32):
        spec.validate()
        self.spec = spec
        widths, sizes = spec.widths(), spec.resolutions()
        groups = spec.level_groups()
        cin = spec.in_channels
        self.enc = []
        for i, c in enumerate(widths):
            self.enc.append(DoubleConv(cin, c, seed, f"enc.{i}", dtype))
            cin = c
        self.mmlp = [
            MMLPBlock(
                g, r, spec.ltm_expansion, seed, dtype, name=f"mmlp.{i}",
                zero_out=spec.ltm_out_init == "zeros",
            )
            for i, (g, r) in enumerate(zip(groups, sizes))
            if g
        ]
        self.dec = [
            DoubleConv(widths[i] + widths[i + 1], widths[i], seed, f"dec.{i}", dtype)
            for i in range(LEVELS - 1)
        ]
        self.head = Conv2d(widths[0], spec.num_classes, 1, seed, "head", dtype)

    def __call__(self, x):
        skips = []
        h = x
        for i, block in enumerate(self.enc):
            if i:
                h = T.maxpool2(h)
            h = block(h)
            if self.mmlp:
                h = self.mmlp[i](h)
            skips.append(h)
        for i in reversed(range(LEVELS - 1)):
            h = T.upsample_bilinear2(h)
            h = T.concat_channels([skips[i], h])
            h = self.dec[i](h)
        return self.head(h)

    def zero_mmlp_(self):
        for block in self.mmlp:
            block.zero_()
        return self


def build(spec, seed=0, dtype=np.float32):
    return UNet(spec, seed=seed, dtype=dtype)


def forward(model, batch):
    if not isinstance(batch, T.Tensor):
        batch = T.Tensor(np.asarray(batch, dtype=model.head.weight.dtype))
    S = model.spec.input_size
    if batch.ndim != 4 or batch.shape[1] != model.spec.in_channels or batch.shape[2:] != (S, S):
        raise ShapeError(
            f"model expects B x {model.spec.in_channels} x {S} x {S} input, got {batch.shape}"
        )
    return model(batch)


def param_shapes(spec):
    """Ordered ``(name, shape)`` for every parameter :func:`build` allocates."""
    spec.validate()
    widths, sizes = spec.widths(), spec.resolutions()
    out = []

    def conv(name, cin, cout, k):
        out.append((f"{name}.weight", (cout, cin, k, k)))
        out.append((f"{name}.bias", (cout,)))

    cin = spec.in_channels
    for i, c in enumerate(widths):
        conv(f"enc.{i}.conv1", cin, c, 3)
        conv(f"enc.{i}.conv2", c, c, 3)
        cin = c
    for i, level in enumerate(spec.level_groups()):
        for j, g in enumerate(level):
            t, d = g.tokens_per_block(sizes[i]), g.lanes()
            h = hidden_width(t, spec.ltm_expansion)
            p = f"mmlp.{i}.groups.{j}"
            out += [
                (f"{p}.gamma", (d,)),
                (f"{p}.delta", (d,)),
                (f"{p}.w3", (t, h)),
                (f"{p}.b3", (h,)),
                (f"{p}.w4", (h, t)),
                (f"{p}.b4", (t,)),
            ]
    for i in range(LEVELS - 1):
        conv(f"dec.{i}.conv1", widths[i] + widths[i + 1], widths[i], 3)
        conv(f"dec.{i}.conv2", widths[i], widths[i], 3)
    conv("head", widths[0], spec.num_classes, 1)
    return out


@dataclass
class ParamReport:
    total: int
    breakdown: list
    mmlp_overhead: int

    def __str__(self):
        return f"total={self.total} overhead={self.mmlp_overhead}"


def count_params(spec):
    parts = {}
    for name, shape in param_shapes(spec):
        kind, idx = name.split(".")[:2]
        key = "head" if kind == "head" else f"{kind}{int(idx) + 1}"
        parts[key] = parts.get(key, 0) + int(np.prod(shape))
    breakdown = list(parts.items())
    overhead = sum(n for k, n in breakdown if k.startswith("mmlp"))
    return ParamReport(sum(n for _, n in breakdown), breakdown, overhead)


def mmlp_closed_form(spec):
    """Sum of :func:`ltm_param_count` over every group of every level."""
    return sum(
        ltm_param_count(g, r, spec.ltm_expansion)
        for level, r in zip(spec.level_groups(), spec.resolutions())
        for g in level
    )

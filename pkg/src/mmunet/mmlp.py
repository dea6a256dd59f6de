"""Multi-scale MLP block with grouped local token mixing.

The block cuts the channels of a square feature map into groups.  Each group
is cropped into ``s x s`` patches (tokens whose lanes run over
(channel, dy, dx)), the token grid is partitioned into ``n x n`` contiguous
blocks, and a residual token-mixing MLP runs inside every block with weights
shared across blocks and lanes.  Group outputs are folded back to maps and
concatenated along channels.

``n = 1`` is plain global token mixing; larger ``n`` keeps the mixing local.
"""

from dataclasses import dataclass, field
from math import isqrt

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .mixer import TokenMixParams, extract_patches, hidden_width, token_mix
from .nn import Module, substream


@dataclass(frozen=True)
class GroupSpec:
    channels: int
    patch_size: int
    block_count: int

    def grid(self, resolution):
        """Patch-grid side G for a ``resolution x resolution`` map."""
        self.validate(resolution)
        return resolution // self.patch_size

    def lanes(self):
        return self.channels * self.patch_size**2

    def tokens_per_block(self, resolution):
        g = self.grid(resolution)
        return (g // self.block_count) ** 2

    def validate(self, resolution):
        s, n = self.patch_size, self.block_count
        if self.channels < 1 or s < 1 or n < 1:
            raise ConfigError(f"group {self}: channels, patch size and block count must be >= 1")
        if resolution % s:
            raise ConfigError(f"group {self}: map side {resolution} not divisible by patch size {s}")
        if (resolution // s) % n:
            raise ConfigError(
                f"group {self}: patch grid {resolution // s} not divisible by block count {n}"
            )


# per-group weights have exactly the token-mixing layout
LTMParams = TokenMixParams


@dataclass
class MMLPConfig:
    groups: list
    ratio: float = 1.0
    params: list = field(default=None, repr=False)

    @property
    def channels(self):
        return sum(g.channels for g in self.groups)

    @property
    def boundaries(self):
        return [int(b) for b in np.cumsum([g.channels for g in self.groups])[:-1]]

    def validate(self, channels, resolution):
        if not self.groups:
            raise ConfigError("MMLP config needs at least one group")
        if self.channels != channels:
            raise ConfigError(
                f"group channels {[g.channels for g in self.groups]} sum to {self.channels}, "
                f"map has {channels}"
            )
        for i, g in enumerate(self.groups):
            try:
                g.validate(resolution)
            except ConfigError as exc:
                raise ConfigError(f"group {i}: {exc}") from None
        if self.params is not None:
            if len(self.params) != len(self.groups):
                raise ConfigError("one LTMParams per group is required")
            for i, (g, p) in enumerate(zip(self.groups, self.params)):
                t, d = g.tokens_per_block(resolution), g.lanes()
                if p.tokens != t or p.lanes != d:
                    raise ConfigError(
                        f"group {i}: params sized for T={p.tokens}, d={p.lanes}; need T={t}, d={d}"
                    )

    def init_params(self, resolution, rng=None, seed=0, dtype=np.float32, prefix="mmlp", zero_out=False):
        """Allocate one LTMParams per group (drawn from per-group substreams)."""
        params = []
        for i, g in enumerate(self.groups):
            r = rng if rng is not None else substream(seed, f"{prefix}.groups.{i}")
            t = g.tokens_per_block(resolution)
            params.append(LTMParams(t, g.lanes(), self.ratio, r, dtype, zero_out=zero_out))
        self.params = params
        return self


def patchify(g, s):
    """``g[B, C, R, R]`` -> tokens ``[B, (R/s)^2, C*s*s]``."""
    if g.ndim != 4 or g.shape[2] != g.shape[3]:
        raise ShapeError(f"patchify expects a square B x C x R x R map, got {g.shape}")
    return extract_patches(g, s)


def unpatchify(tokens, channels, s):
    """Exact inverse of :func:`patchify`."""
    B, n, d = tokens.shape
    G = isqrt(n)
    if G * G != n or d != channels * s * s:
        raise ShapeError(f"cannot fold {tokens.shape} into {channels} channels of {s}x{s} patches")
    t = T.reshape(tokens, (B, G, G, channels, s, s))
    t = T.transpose(t, (0, 3, 1, 4, 2, 5))
    return T.reshape(t, (B, channels, G * s, G * s))


def _to_blocks(tokens, n):
    B, N, d = tokens.shape
    G = isqrt(N)
    b = G // n
    t = T.reshape(tokens, (B, n, b, n, b, d))
    t = T.transpose(t, (0, 1, 3, 2, 4, 5))
    return T.reshape(t, (B * n * n, b * b, d))


def _from_blocks(blocks, batch, n):
    _, bb, d = blocks.shape
    b = isqrt(bb)
    t = T.reshape(blocks, (batch, n, n, b, b, d))
    t = T.transpose(t, (0, 1, 3, 2, 4, 5))
    return T.reshape(t, (batch, n * b * n * b, d))


def ltm(tokens, spec, params):
    """Local token mixing over ``spec.block_count``^2 blocks of the token grid."""
    if isinstance(spec, GroupSpec):
        n = spec.block_count
    else:
        n = int(spec)
    B, N, d = tokens.shape
    G = isqrt(N)
    if G * G != N:
        raise ShapeError(f"ltm needs a square token grid, got {N} tokens")
    if n < 1 or G % n:
        raise ConfigError(f"ltm: token grid {G}x{G} cannot be cut into {n}x{n} blocks")
    mixed = token_mix(_to_blocks(tokens, n), params)
    return _from_blocks(mixed, B, n)


def mmlp_block(x, config):
    if x.ndim != 4 or x.shape[2] != x.shape[3]:
        raise ShapeError(f"mmlp_block expects a square B x C x R x R map, got {x.shape}")
    if config.params is None:
        raise ConfigError("MMLP config has no parameters; call init_params first")
    C, R = x.shape[1], x.shape[2]
    config.validate(C, R)
    parts = T.split_channels(x, config.boundaries) if len(config.groups) > 1 else [x]
    outs = []
    for g, spec, params in zip(parts, config.groups, config.params):
        tokens = patchify(g, spec.patch_size)
        tokens = ltm(tokens, spec, params)
        outs.append(unpatchify(tokens, spec.channels, spec.patch_size))
    return T.concat_channels(outs) if len(outs) > 1 else outs[0]


def ltm_param_count(spec, resolution, ratio=1.0):
    """Closed-form size of one group's LTM weights at the given map side."""
    d = spec.lanes()
    t = spec.tokens_per_block(resolution)
    h = hidden_width(t, ratio)
    return 2 * d + t * h + h + h * t + t


class MMLPBlock(Module):
    """Stateful wrapper: an :class:`MMLPConfig` bound to one map resolution."""

    def __init__(self, groups, resolution, ratio=1.0, seed=0, dtype=np.float32, name="mmlp", zero_out=False):
        self.resolution = resolution
        self.config = MMLPConfig(list(groups), ratio)
        self.config.validate(self.config.channels, resolution)
        self.config.init_params(resolution, seed=seed, dtype=dtype, prefix=name, zero_out=zero_out)
        self.groups = self.config.params

    def __call__(self, x):
        return mmlp_block(x, self.config)

    def zero_(self):
        for p in self.groups:
            p.zero_()
        return self

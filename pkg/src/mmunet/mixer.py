"""MLP-Mixer building blocks: patch embedding, channel/token mixing, GAP head.

Tensors are laid out token-major, ``x[B, n, C]``.  A mixer layer applies
channel mixing first and token mixing second, both as pre-norm residual MLPs:

    U = X + W2 . gelu(W1 . LN(X))            (per token, along C)
    Y = U + gelu(LN(U)^T W3) W4              (per channel, along n)

Token-mixing weights are shared by every channel, which is what makes the
operation a building block for the local variant in :mod:`mmunet.mmlp`.
"""

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .nn import Module, he_uniform, ones, zeros


def hidden_width(width, ratio):
    """Width of the expanded hidden layer for a mixing MLP."""
    if ratio <= 0:
        raise ConfigError(f"expansion ratio must be positive, got {ratio}")
    return max(1, int(round(ratio * width)))


class EmbeddingParams(Module):
    def __init__(self, patch_size, hidden_dim, in_channels=3, rng=None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.patch_size = patch_size
        self.in_channels = in_channels
        self.hidden_dim = hidden_dim
        fan_in = in_channels * patch_size * patch_size
        self.weight = he_uniform((fan_in, hidden_dim), fan_in, rng, dtype)
        self.bias = zeros(hidden_dim, dtype)


class ChannelMixParams(Module):
    def __init__(self, channels, ratio=1.0, rng=None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        hidden = hidden_width(channels, ratio)
        self.gamma = ones(channels, dtype)
        self.delta = zeros(channels, dtype)
        self.w1 = he_uniform((channels, hidden), channels, rng, dtype)
        self.b1 = zeros(hidden, dtype)
        self.w2 = he_uniform((hidden, channels), hidden, rng, dtype)
        self.b2 = zeros(channels, dtype)

    def zero_(self):
        for p in (self.w1, self.b1, self.w2, self.b2):
            p.data[...] = 0
        return self


class TokenMixParams(Module):
    """Weights of a token-mixing MLP over ``tokens`` positions.

    ``lanes`` is the width of each token (the normalised axis); the two
    weight matrices act on the token axis and are shared by every lane.
    """

    def __init__(self, tokens, lanes, ratio=1.0, rng=None, dtype=np.float32, zero_out=False):
        rng = rng if rng is not None else np.random.default_rng(0)
        hidden = hidden_width(tokens, ratio)
        self.tokens = tokens
        self.lanes = lanes
        self.gamma = ones(lanes, dtype)
        self.delta = zeros(lanes, dtype)
        self.w3 = he_uniform((tokens, hidden), tokens, rng, dtype)
        self.b3 = zeros(hidden, dtype)
        self.w4 = he_uniform((hidden, tokens), hidden, rng, dtype)
        if zero_out:
            # residual branch starts closed; the block begins as an exact identity
            self.w4.data[...] = 0
        self.b4 = zeros(tokens, dtype)

    def zero_(self):
        for p in (self.w3, self.b3, self.w4, self.b4):
            p.data[...] = 0
        return self


class MixerLayerParams(Module):
    def __init__(self, tokens, channels, ratio=1.0, rng=None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channel = ChannelMixParams(channels, ratio, rng, dtype)
        self.token = TokenMixParams(tokens, channels, ratio, rng, dtype)

    def zero_(self):
        self.channel.zero_()
        self.token.zero_()
        return self


def extract_patches(x, p):
    """``x[B, C, H, W]`` -> ``[B, (H/p)*(W/p), C*p*p]``.

    Patches are enumerated row-major over the patch grid; inside a patch the
    features run over (channel, dy, dx).
    """
    if x.ndim != 4:
        raise ShapeError(f"expected B x C x H x W, got {x.shape}")
    B, C, H, W = x.shape
    if p < 1 or H % p or W % p:
        raise ConfigError(f"{H}x{W} map is not divisible into {p}x{p} patches")
    gh, gw = H // p, W // p
    t = T.reshape(x, (B, C, gh, p, gw, p))
    t = T.transpose(t, (0, 2, 4, 1, 3, 5))
    return T.reshape(t, (B, gh * gw, C * p * p))


def patch_embed(image, params):
    if image.ndim != 4 or image.shape[1] != params.in_channels:
        raise ShapeError(
            f"patch_embed expects B x {params.in_channels} x H x W, got {image.shape}"
        )
    tokens = extract_patches(image, params.patch_size)
    return T.linear(tokens, params.weight, params.bias)


def channel_mix(x, params):
    if x.ndim != 3 or x.shape[-1] != params.gamma.shape[0]:
        raise ShapeError(f"channel_mix: expected B x n x {params.gamma.shape[0]}, got {x.shape}")
    h = T.layernorm(x, params.gamma, params.delta)
    h = T.gelu(T.linear(h, params.w1, params.b1))
    return T.add(x, T.linear(h, params.w2, params.b2))


def token_mix(x, params):
    if x.ndim != 3 or x.shape[1] != params.w3.shape[0] or x.shape[2] != params.gamma.shape[0]:
        raise ShapeError(
            f"token_mix: expected B x {params.w3.shape[0]} x {params.gamma.shape[0]}, got {x.shape}"
        )
    h = T.layernorm(x, params.gamma, params.delta)
    h = T.transpose(h, (0, 2, 1))
    h = T.gelu(T.linear(h, params.w3, params.b3))
    h = T.linear(h, params.w4, params.b4)
    return T.add(x, T.transpose(h, (0, 2, 1)))


def mixer_layer(x, params):
    return token_mix(channel_mix(x, params.channel), params.token)


def classifier_head(y, weight, bias=None):
    """Global average pool over tokens, then a linear map to class scores."""
    if y.ndim != 3 or weight.ndim != 2 or weight.shape[0] != y.shape[-1]:
        raise ShapeError(f"classifier_head: {y.shape} incompatible with weight {weight.shape}")
    return T.linear(T.mean(y, axis=1), weight, bias)

"""Central finite-difference checks of analytic gradients.

Each check contracts the operator output with a fixed random tensor R, so the
scalar probed is ``sum(op(inputs) * R)``.  The analytic gradient comes from
:func:`mmunet.tensor.backward`; the numeric one from ``(L(x+h) - L(x-h)) / 2h``
evaluated with plain forward passes.

Per element, the relative error is ``|a - n| / max(|a|, |n|, floor)``; the
floor keeps near-zero gradients from dominating through roundoff alone.
"""

from dataclasses import dataclass

import numpy as np

from . import mixer, mmlp
from . import tensor as T
from .models import ModelSpec, build, forward

OP_TOL = 1e-4
COMPOSITE_TOL = 1e-3


@dataclass
class GradCheckResult:
    name: str
    max_rel_err: float
    checked: int
    tol: float

    @property
    def passed(self):
        return bool(self.max_rel_err < self.tol)

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{self.name:<20s} max_rel_err={self.max_rel_err:.3e} n={self.checked:<5d} {status}"


def gradcheck(fn, inputs, seed=0, h=1e-5, floor=1e-6, max_per_input=None, name="op", tol=OP_TOL):
    """Compare analytic and numeric gradients of ``fn(*inputs)`` for every grad-requiring input."""
    rng = np.random.default_rng(seed)
    out = fn(*inputs)
    R = rng.standard_normal(out.shape).astype(out.dtype)

    def scalar():
        return float(np.sum(fn(*inputs).data * R))

    loss = T.tsum(T.mul(out, T.Tensor(R)))
    for x in inputs:
        if isinstance(x, T.Tensor):
            x.grad = None
    T.backward(loss)

    worst, count = 0.0, 0
    for x in inputs:
        if not (isinstance(x, T.Tensor) and x.requires_grad):
            continue
        flat = x.data.reshape(-1)
        analytic = x.grad.reshape(-1)
        idx = np.arange(flat.size)
        if max_per_input is not None and flat.size > max_per_input:
            idx = np.sort(rng.choice(flat.size, max_per_input, replace=False))
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            up = scalar()
            flat[i] = orig - h
            down = scalar()
            flat[i] = orig
            num = (up - down) / (2 * h)
            a = float(analytic[i])
            err = abs(a - num) / max(abs(a), abs(num), floor)
            worst = max(worst, err)
            count += 1
    return GradCheckResult(name, worst, count, tol)


def _param(rng, *shape, low=-1.0, high=1.0):
    return T.Tensor(rng.uniform(low, high, size=shape), requires_grad=True)


def _separated(rng, *shape):
    # distinct values spaced far beyond the FD step, so no max-pool ties
    n = int(np.prod(shape))
    vals = np.linspace(-1.0, 1.0, n)
    return T.Tensor(rng.permutation(vals).reshape(shape), requires_grad=True)


def _away_from_zero(rng, *shape):
    x = rng.uniform(0.05, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)
    return T.Tensor(x, requires_grad=True)


def _case_matmul(rng):
    return T.matmul, [_param(rng, 3, 4), _param(rng, 4, 2)]


def _case_matmul_batched(rng):
    return T.matmul, [_param(rng, 2, 3, 4), _param(rng, 4, 5)]


def _case_conv2d(rng):
    return (lambda x, w, b: T.conv2d(x, w, b, stride=1, pad=1)), [
        _param(rng, 2, 3, 8, 8),
        _param(rng, 4, 3, 3, 3),
        _param(rng, 4),
    ]


def _case_conv2d_strided(rng):
    return (lambda x, w, b: T.conv2d(x, w, b, stride=2, pad=0)), [
        _param(rng, 1, 2, 7, 7),
        _param(rng, 3, 2, 3, 3),
        _param(rng, 3),
    ]


def _case_maxpool2(rng):
    return T.maxpool2, [_separated(rng, 1, 1, 4, 4)]


def _case_upsample(rng):
    return T.upsample_bilinear2, [_param(rng, 1, 1, 3, 3)]


def _case_layernorm(rng):
    return (lambda x, g, d: T.layernorm(x, g, d)), [_param(rng, 8), _param(rng, 8), _param(rng, 8)]


def _case_gelu(rng):
    return T.gelu, [_param(rng, 4, 5)]


def _case_relu(rng):
    return T.relu, [_away_from_zero(rng, 4, 5)]


def _case_softmax_ce(rng):
    target = rng.integers(0, 3, size=(1, 2, 2))
    return (lambda z: T.softmax_ce(z, target)), [_param(rng, 1, 3, 2, 2)]


def _case_split_concat(rng):
    def fn(x):
        a, b, c = T.split_channels(x, [2, 3])
        return T.concat_channels([T.mul(c, 2.0), a, T.gelu(b)])

    return fn, [_param(rng, 2, 5, 2, 2)]


def _case_patch_embed(rng):
    p = mixer.EmbeddingParams(4, 5, rng=rng, dtype=np.float64)
    return (lambda img, w, b: mixer.patch_embed(img, p)), [_param(rng, 1, 3, 8, 8), p.weight, p.bias]


def _case_channel_mix(rng):
    p = mixer.ChannelMixParams(4, 2.0, rng=rng, dtype=np.float64)
    _jitter(rng, p)
    return (lambda x, *_: mixer.channel_mix(x, p)), [_param(rng, 2, 3, 4)] + p.parameters()


def _case_token_mix(rng):
    p = mixer.TokenMixParams(5, 3, 1.0, rng=rng, dtype=np.float64)
    _jitter(rng, p)
    return (lambda x, *_: mixer.token_mix(x, p)), [_param(rng, 2, 5, 3)] + p.parameters()


def _case_mixer_layer(rng):
    p = mixer.MixerLayerParams(4, 3, 1.0, rng=rng, dtype=np.float64)
    _jitter(rng, p)
    return (lambda x, *_: mixer.mixer_layer(x, p)), [_param(rng, 2, 4, 3)] + p.parameters()


def _case_classifier_head(rng):
    return (lambda y, w, b: mixer.classifier_head(y, w, b)), [
        _param(rng, 2, 3, 4),
        _param(rng, 4, 2),
        _param(rng, 2),
    ]


def _case_ltm(rng):
    spec = mmlp.GroupSpec(channels=2, patch_size=2, block_count=2)
    p = mmlp.LTMParams(spec.tokens_per_block(8), spec.lanes(), 1.0, rng=rng, dtype=np.float64)
    _jitter(rng, p)
    return (lambda t, *_: mmlp.ltm(t, spec, p)), [_param(rng, 2, 16, 8)] + p.parameters()


def _case_mmlp_block(rng):
    groups = [mmlp.GroupSpec(4, 2, 4), mmlp.GroupSpec(2, 2, 2), mmlp.GroupSpec(2, 2, 1)]
    cfg = mmlp.MMLPConfig(groups).init_params(8, rng=rng, dtype=np.float64)
    params = [q for p in cfg.params for q in p.parameters()]
    for p in cfg.params:
        _jitter(rng, p)
    return (lambda x, *_: mmlp.mmlp_block(x, cfg)), [_param(rng, 2, 8, 8, 8)] + params


def _jitter(rng, module):
    # move norm affines and biases off their 1/0 defaults so their gradients are exercised
    for name, p in module.named_parameters():
        if p.ndim == 1:
            p.data += rng.uniform(-0.5, 0.5, size=p.shape)


OPS = {
    "matmul": (_case_matmul, OP_TOL),
    "matmul_batched": (_case_matmul_batched, OP_TOL),
    "conv2d": (_case_conv2d, OP_TOL),
    "conv2d_strided": (_case_conv2d_strided, OP_TOL),
    "maxpool2": (_case_maxpool2, OP_TOL),
    "upsample_bilinear2": (_case_upsample, OP_TOL),
    "layernorm": (_case_layernorm, OP_TOL),
    "gelu": (_case_gelu, OP_TOL),
    "relu": (_case_relu, OP_TOL),
    "softmax_ce": (_case_softmax_ce, OP_TOL),
    "split_concat": (_case_split_concat, OP_TOL),
    "patch_embed": (_case_patch_embed, OP_TOL),
    "channel_mix": (_case_channel_mix, OP_TOL),
    "token_mix": (_case_token_mix, OP_TOL),
    "mixer_layer": (_case_mixer_layer, OP_TOL),
    "classifier_head": (_case_classifier_head, OP_TOL),
    "ltm": (_case_ltm, OP_TOL),
    "mmlp_block": (_case_mmlp_block, COMPOSITE_TOL),
}


def check_op(name, seed=0):
    case, tol = OPS[name]
    rng = np.random.default_rng([int(seed), len(name)])
    fn, inputs = case(rng)
    return gradcheck(fn, inputs, seed=seed, name=name, tol=tol)


def check_model_ltm(seed=0, entries=8):
    """FD check of the mean logit w.r.t. one mid-level LTM weight of a tiny f64 MM-UNet."""
    # He-initialised output weight, otherwise dL/dW3 is identically zero at init
    spec = ModelSpec("mm_unet", base_width=8, input_size=32, ltm_out_init="he")
    model = build(spec, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed)
    x = T.Tensor(rng.uniform(-1, 1, size=(1, 3, 32, 32)))
    w = model.mmlp[2].groups[0].w3
    return gradcheck(
        lambda *_: T.mean(forward(model, x)),
        [w],
        seed=seed,
        max_per_input=entries,
        name="mm_unet_ltm_w3",
        tol=COMPOSITE_TOL,
    )


def run_all(seed=0, only=None):
    names = [only] if only else list(OPS)
    results = [check_op(n, seed) for n in names if n in OPS]
    if only in (None, "mm_unet"):
        results.append(check_model_ltm(seed))
    return results

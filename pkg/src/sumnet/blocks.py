"""Network building blocks: norms, depthwise conv, patch resampling, the
gated scan block, and its feature-modulated (conditional) variant.

Grids are channels-last: [H, W, C] or [B, H, W, C].  Every learnable array is
a float64 Tensor initialized from a seed derived from its name, so two models
that share a parameter name and seed start from identical values regardless
of what other parameters exist around them.

The conditional block applies five scalars (a1, b1, a2, b2, a3) produced by a
small MLP from a per-domain prompt token.  The vanilla block and the
conditional block at identity modulation (1, 0, 1, 0, 1) are required to be
bit-identical, which is why layer_norm is built on top of ln_core: the a3
scale slots in between the normalize and the affine without re-deriving
either.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .rng import derive
from .scan import SS2DParams, init_ss2d_params, ss2d
from .tensor import ShapeError, Tensor

LN_EPS = 1e-6


class DomainLabel(enum.IntEnum):
    """Dataset-domain codes; the order fixes prompt-table rows."""

    NATURAL_MOUSE = 0
    NATURAL_EYE = 1
    ECOMMERCE = 2
    UI = 3


# ---------------------------------------------------------------------------
# affine + norm primitives


@dataclass
class Linear:
    weight: Tensor  # [in, out]
    bias: Tensor  # [out]


def init_linear(n_in: int, n_out: int, seed: int, name: str, zero: bool = False) -> Linear:
    if zero:
        w = T.zeros((n_in, n_out), requires_grad=True)
    else:
        a = float(np.sqrt(6.0 / (n_in + n_out)))
        w = T.uniform((n_in, n_out), -a, a, derive(seed, name, "weight"), requires_grad=True)
    return Linear(w, T.zeros((n_out,), requires_grad=True))


def linear(x: Tensor, p: Linear) -> Tensor:
    """Affine map over the trailing channel axis of any-rank input."""
    x = T.as_tensor(x)
    n_in, n_out = p.weight.shape
    if x.shape[-1] != n_in:
        raise ShapeError(f"linear expects trailing dim {n_in}, got {x.shape}")
    lead = x.shape[:-1]
    flat = T.reshape(x, (-1, n_in))
    out = T.add(T.matmul(flat, p.weight), p.bias)
    return T.reshape(out, lead + (n_out,))


@dataclass
class LayerNormParams:
    gamma: Tensor  # [C]
    beta: Tensor  # [C]


def init_layer_norm(channels: int) -> LayerNormParams:
    return LayerNormParams(
        T.full((channels,), 1.0, requires_grad=True),
        T.zeros((channels,), requires_grad=True),
    )


def ln_core(x: Tensor, eps: float = LN_EPS) -> Tensor:
    """Normalize the trailing channel axis to zero mean, unit variance."""
    mu = T.reduce_mean(x, -1, keepdims=True)
    centered = T.sub(x, mu)
    var = T.reduce_mean(T.mul(centered, centered), -1, keepdims=True)
    return T.div(centered, T.sqrt(T.add(var, eps)))


def layer_norm(x: Tensor, p: LayerNormParams, eps: float = LN_EPS) -> Tensor:
    return T.add(T.mul(ln_core(x, eps), p.gamma), p.beta)


# ---------------------------------------------------------------------------
# depthwise conv


@dataclass
class DWConvParams:
    kernel: Tensor  # [C, 3, 3]
    bias: Tensor  # [C]


def init_dwconv(channels: int, seed: int, name: str) -> DWConvParams:
    a = float(np.sqrt(6.0 / 18.0))  # per-channel fan: 9 in, 9 out
    return DWConvParams(
        T.uniform((channels, 3, 3), -a, a, derive(seed, name, "kernel"), requires_grad=True),
        T.zeros((channels,), requires_grad=True),
    )


def depthwise_conv3x3(x: Tensor, p: DWConvParams) -> Tensor:
    """Per-channel 3x3 conv, zero-padded, stride 1; no cross-channel mixing."""
    x = T.as_tensor(x)
    if x.ndim not in (3, 4):
        raise ShapeError(f"expected a grid, got {x.shape}")
    if x.shape[-1] != p.kernel.shape[0]:
        raise ShapeError(f"grid has {x.shape[-1]} channels, kernel has {p.kernel.shape[0]}")
    h_ax, w_ax = x.ndim - 3, x.ndim - 2
    h, w = x.shape[h_ax], x.shape[w_ax]
    pw = [(0, 0)] * x.ndim
    pw[h_ax] = (1, 1)
    pw[w_ax] = (1, 1)
    padded = T.pad(x, pw)
    lead = (slice(None),) * (x.ndim - 3)
    acc = None
    for dy in range(3):
        for dx in range(3):
            window = padded[lead + (slice(dy, dy + h), slice(dx, dx + w), slice(None))]
            term = T.mul(window, p.kernel[:, dy, dx])
            acc = term if acc is None else T.add(acc, term)
    return T.add(acc, p.bias)


# ---------------------------------------------------------------------------
# patch resampling


@dataclass
class PatchEmbedParams:
    proj: Linear  # 48 -> C
    norm: LayerNormParams


def init_patch_embed(channels: int, seed: int, name: str = "embed") -> PatchEmbedParams:
    return PatchEmbedParams(init_linear(48, channels, seed, f"{name}.proj"),
                            init_layer_norm(channels))


def _space_to_depth(x: Tensor, factor: int) -> Tensor:
    """[.., H, W, C] -> [.., H/f, W/f, f*f*C] by stacking each f x f tile."""
    h_ax, w_ax = x.ndim - 3, x.ndim - 2
    h, w, c = x.shape[h_ax], x.shape[w_ax], x.shape[-1]
    if h % factor or w % factor:
        raise ShapeError(f"grid {h}x{w} not divisible by patch factor {factor}")
    lead = x.shape[:-3]
    r = T.reshape(x, lead + (h // factor, factor, w // factor, factor, c))
    nl = len(lead)
    r = T.transpose(r, tuple(range(nl)) + (nl, nl + 2, nl + 1, nl + 3, nl + 4))
    return T.reshape(r, lead + (h // factor, w // factor, factor * factor * c))


def patch_embed(img: Tensor, p: PatchEmbedParams) -> Tensor:
    """RGB grid -> 4x-downsampled embedded grid (affine on 4x4x3 tiles + LN)."""
    img = T.as_tensor(img)
    if img.ndim not in (3, 4) or img.shape[-1] != 3:
        raise ShapeError(f"expected [.., H, W, 3] image grid, got {img.shape}")
    tiles = _space_to_depth(img, 4)
    return layer_norm(linear(tiles, p.proj), p.norm)


@dataclass
class DownsampleParams:
    norm: LayerNormParams  # over 4C
    proj: Linear  # 4C -> 2C


def init_downsample(channels: int, seed: int, name: str) -> DownsampleParams:
    return DownsampleParams(init_layer_norm(4 * channels),
                            init_linear(4 * channels, 2 * channels, seed, f"{name}.proj"))


def downsample(x: Tensor, p: DownsampleParams) -> Tensor:
    """2x2 patch merge: concat (TL, TR, BL, BR) channels, LN, affine to 2C."""
    x = T.as_tensor(x)
    h_ax, w_ax = x.ndim - 3, x.ndim - 2
    if x.shape[h_ax] % 2 or x.shape[w_ax] % 2:
        raise ShapeError(f"downsample needs even extent, got {x.shape}")
    lead = (slice(None),) * (x.ndim - 3)
    tl = x[lead + (slice(0, None, 2), slice(0, None, 2), slice(None))]
    tr = x[lead + (slice(0, None, 2), slice(1, None, 2), slice(None))]
    bl = x[lead + (slice(1, None, 2), slice(0, None, 2), slice(None))]
    br = x[lead + (slice(1, None, 2), slice(1, None, 2), slice(None))]
    merged = T.concat([tl, tr, bl, br], axis=x.ndim - 1)
    return linear(layer_norm(merged, p.norm), p.proj)


@dataclass
class PatchExpandParams:
    proj: Linear  # C -> f*f*(C//f)
    factor: int


def init_patch_expand(channels: int, factor: int, seed: int, name: str) -> PatchExpandParams:
    if channels % factor:
        raise ShapeError(f"channels {channels} not divisible by expand factor {factor}")
    out = factor * factor * (channels // factor)
    return PatchExpandParams(init_linear(channels, out, seed, f"{name}.proj"), factor)


def patch_expand(x: Tensor, p: PatchExpandParams) -> Tensor:
    """Affine to f*f*(C/f) channels, then pixel-shuffle to an f-times grid.

    Channel chunk (dy*f + dx) of the projected vector lands at spatial offset
    (dy, dx) inside each f x f output tile.
    """
    x = T.as_tensor(x)
    f = p.factor
    h_ax, w_ax = x.ndim - 3, x.ndim - 2
    h, w = x.shape[h_ax], x.shape[w_ax]
    y = linear(x, p.proj)
    c_out = y.shape[-1] // (f * f)
    lead = y.shape[:-3]
    nl = len(lead)
    r = T.reshape(y, lead + (h, w, f, f, c_out))
    r = T.transpose(r, tuple(range(nl)) + (nl, nl + 2, nl + 1, nl + 3, nl + 4))
    return T.reshape(r, lead + (h * f, w * f, c_out))


# ---------------------------------------------------------------------------
# gated scan block


@dataclass
class VSSWeights:
    """Weights of one gated scan block over C channels."""

    ln1: LayerNormParams
    gate: Linear  # C -> C
    inproj: Linear  # C -> C
    dw: DWConvParams
    ssm: SS2DParams
    ln2: LayerNormParams
    outproj: Linear  # C -> C


def init_vss(channels: int, state_size: int, seed: int, name: str,
             shared_scan: bool = False) -> VSSWeights:
    return VSSWeights(
        ln1=init_layer_norm(channels),
        gate=init_linear(channels, channels, seed, f"{name}.gate"),
        inproj=init_linear(channels, channels, seed, f"{name}.inproj"),
        dw=init_dwconv(channels, seed, f"{name}.dw"),
        ssm=init_ss2d_params(channels, state_size, seed, f"{name}.ssm", shared=shared_scan),
        ln2=init_layer_norm(channels),
        outproj=init_linear(channels, channels, seed, f"{name}.outproj"),
    )


def _scan_branch(x: Tensor, w: VSSWeights) -> Tensor:
    a = linear(x, w.inproj)
    a = T.silu(depthwise_conv3x3(a, w.dw))
    return ss2d(a, w.ssm)


def vss_forward(f: Tensor, w: VSSWeights) -> Tensor:
    """Gated scan block: LN, two branches (gate, scan), fuse, residual."""
    x = T.add(T.mul(ln_core(f), w.ln1.gamma), w.ln1.beta)
    gate = T.silu(linear(x, w.gate))
    attn = _scan_branch(x, w)
    attn = T.add(T.mul(ln_core(attn), w.ln2.gamma), w.ln2.beta)
    fused = linear(T.mul(gate, attn), w.outproj)
    return T.add(fused, f)


# ---------------------------------------------------------------------------
# conditioning


@dataclass
class ModulationParams:
    """Five scalar knobs applied inside a conditional block.

    Each field is a Tensor of shape () for one sample or [B, 1, 1, 1] for a
    batch; both broadcast over [.., H, W, C] grids.
    """

    alpha1: Tensor
    beta1: Tensor
    alpha2: Tensor
    beta2: Tensor
    alpha3: Tensor

    @staticmethod
    def identity() -> "ModulationParams":
        one = Tensor(np.float64(1.0))
        zero = Tensor(np.float64(0.0))
        return ModulationParams(one, zero, Tensor(np.float64(1.0)), Tensor(np.float64(0.0)),
                                Tensor(np.float64(1.0)))


def cvss_forward(f: Tensor, w: VSSWeights, mod: ModulationParams) -> Tensor:
    """Conditional gated scan block.

    Identical wiring to vss_forward with three insertion points: (a1, b1)
    rescale the first normalized features, (a3) scales the second norm's
    core before its affine, (a2, b2) rescale the result.  At identity
    modulation every insertion multiplies by 1.0 or adds 0.0, which IEEE
    arithmetic keeps bit-exact, so the block equals vss_forward exactly.
    """
    x = T.add(T.mul(ln_core(f), w.ln1.gamma), w.ln1.beta)
    x = T.add(T.mul(mod.alpha1, x), mod.beta1)
    gate = T.silu(linear(x, w.gate))
    attn = _scan_branch(x, w)
    attn = T.add(T.mul(T.mul(mod.alpha3, ln_core(attn)), w.ln2.gamma), w.ln2.beta)
    attn = T.add(T.mul(mod.alpha2, attn), mod.beta2)
    fused = linear(T.mul(gate, attn), w.outproj)
    return T.add(fused, f)


@dataclass
class ConditionerParams:
    """Prompt rows + the shared MLP that maps a token to the 5 knobs."""

    tokens: Tensor | None  # [T, D]; None in one-hot mode
    l1: Linear  # D -> 128
    l2: Linear  # 128 -> 64
    l3: Linear  # 64 -> 5, zero-init so training starts at identity
    num_domains: int
    token_dim: int


def init_conditioner(num_domains: int, token_dim: int, seed: int,
                     one_hot: bool = False, name: str = "cond") -> ConditionerParams:
    if one_hot and num_domains > token_dim:
        raise ShapeError(f"{num_domains} one-hot domains cannot pad into dim {token_dim}")
    tokens = None
    if not one_hot:
        a = float(np.sqrt(6.0 / (num_domains + token_dim)))
        tokens = T.uniform((num_domains, token_dim), -a, a,
                           derive(seed, name, "tokens"), requires_grad=True)
    return ConditionerParams(
        tokens=tokens,
        l1=init_linear(token_dim, 128, seed, f"{name}.l1"),
        l2=init_linear(128, 64, seed, f"{name}.l2"),
        l3=init_linear(64, 5, seed, f"{name}.l3", zero=True),
        num_domains=num_domains,
        token_dim=token_dim,
    )


def conditioner_table(p: ConditionerParams) -> Tensor:
    """Run every domain token through the MLP; rows are raw knob vectors."""
    if p.tokens is None:
        eye = np.zeros((p.num_domains, p.token_dim))
        eye[np.arange(p.num_domains), np.arange(p.num_domains)] = 1.0
        tokens = Tensor(eye)
    else:
        tokens = p.tokens
    h = T.gelu(linear(tokens, p.l1))
    h = T.gelu(linear(h, p.l2))
    return linear(h, p.l3)  # [T, 5]


def _check_labels(labels, num_domains: int) -> np.ndarray:
    arr = np.asarray(labels, dtype=np.int64).reshape(-1)
    if arr.size == 0:
        raise ShapeError("empty label list")
    if arr.min() < 0 or arr.max() >= num_domains:
        raise ShapeError(f"domain label out of range 0..{num_domains - 1}: {arr.tolist()}")
    return arr


def modulation_from_raw(raw: Tensor) -> ModulationParams:
    """Map raw rows [B, 5] to knobs: scales pass through 1 + raw, shifts raw.

    Zero raw rows therefore give exact identity modulation.
    """
    b = raw.shape[0]
    cols = [T.reshape(raw[:, j], (b, 1, 1, 1)) for j in range(5)]
    return ModulationParams(
        alpha1=T.add(cols[0], 1.0),
        beta1=cols[1],
        alpha2=T.add(cols[2], 1.0),
        beta2=cols[3],
        alpha3=T.add(cols[4], 1.0),
    )


def conditioner(p: ConditionerParams, labels) -> ModulationParams:
    """Knobs for a batch of domain labels (prompt-table or one-hot tokens)."""
    arr = _check_labels(labels, p.num_domains)
    table = conditioner_table(p)
    return modulation_from_raw(T.take(table, arr, axis=0))


def one_hot_conditioner(p: ConditionerParams, labels) -> ModulationParams:
    """Same MLP fed a one-hot token (padded to token_dim) instead of a prompt."""
    arr = _check_labels(labels, p.num_domains)
    eye = np.zeros((arr.size, p.token_dim))
    eye[np.arange(arr.size), arr] = 1.0
    h = T.gelu(linear(Tensor(eye), p.l1))
    h = T.gelu(linear(h, p.l2))
    return modulation_from_raw(linear(h, p.l3))


def conditioner_param_count(p: ConditionerParams) -> int:
    n = 0 if p.tokens is None else p.tokens.size
    for lin in (p.l1, p.l2, p.l3):
        n += lin.weight.size + lin.bias.size
    return n

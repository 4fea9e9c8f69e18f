"""The conditional U-shaped scan network, its optimizer, and training loop.

Layout for input side S and base width C (S divisible by 32, C by 4):

    embed      4x4 tiles -> [S/4, S/4, C]
    enc0..enc3 gated scan stages at widths C, 2C, 4C, 8C,
               with a 2x patch merge (down0..down2) between stages
    dec0..dec3 mirror stages at widths 8C, 4C, 2C, C, with a 2x pixel
               shuffle (up0..up2) between stages and an additive projected
               skip from the matching encoder stage
    head       4x pixel shuffle to full resolution, affine to one channel,
               then a sigmoid

Conditioning: a per-domain knob vector (scales and shifts) computed once per
forward and applied inside a placement-dependent subset of blocks --
"bottleneck" modulates only dec0 (the deepest decoder stage), "decoder" all
dec stages, "all-blocks" every block.  With the knob head zero-initialized
the modulated network starts bit-identical to the unconditioned one.

Every parameter lives in a flat name -> tensor registry; initialization
draws from a stream derived from (config seed, parameter name), so any two
models agree bit-for-bit on every parameter whose name they share.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields

import numpy as np

from . import blocks as B
from . import tensor as T
from .objective import DEFAULT_WEIGHTS, composite_loss
from .rng import SplitMix64, derive
from .scan import DIRECTION_ORDER, SS2DParams, SSMParams
from .tensor import NumericError, ShapeError, Tensor
from .metrics import evaluate_sample, f_scores, summarize

PLACEMENTS = ("bottleneck", "decoder", "all-blocks")
CONDITIONINGS = ("prompt", "one-hot", "none")


class ConfigError(ValueError):
    """Rejected model or training configuration."""


class NumericAbort(ArithmeticError):
    """Training hit a non-finite value; carries where it happened."""

    def __init__(self, message: str, epoch: int, batch: int):
        super().__init__(f"{message} (epoch {epoch}, batch {batch})")
        self.epoch = epoch
        self.batch = batch


# ---------------------------------------------------------------------------
# configuration


@dataclass
class SumConfig:
    input_size: int = 64
    base_channels: int = 16
    encoder_depths: tuple = (2, 2, 2, 2)
    decoder_depths: tuple = (2, 2, 2, 1)
    state_size: int = 8
    num_domains: int = 4
    token_dim: int = 128
    placement: str = "decoder"
    conditioning: str = "prompt"
    share_scan_params: bool = False
    loss_weights: tuple = DEFAULT_WEIGHTS
    kl_literal: bool = False
    lr: float = 1e-4
    batch_size: int = 16
    epochs: int = 15
    patience: int = 4
    decay_every: int = 4
    decay_factor: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("input_size", "base_channels", "state_size", "num_domains",
                     "token_dim", "batch_size", "epochs", "patience",
                     "decay_every", "seed"):
            setattr(self, name, int(getattr(self, name)))
        self.lr = float(self.lr)
        self.decay_factor = float(self.decay_factor)
        self.encoder_depths = tuple(int(d) for d in self.encoder_depths)
        self.decoder_depths = tuple(int(d) for d in self.decoder_depths)
        self.loss_weights = tuple(float(w) for w in self.loss_weights)
        self.validate()

    def validate(self) -> None:
        if self.input_size < 32 or self.input_size % 32:
            raise ConfigError(f"input_size {self.input_size} must be a positive multiple of 32")
        if self.base_channels < 4 or self.base_channels % 4:
            raise ConfigError(f"base_channels {self.base_channels} must be a multiple of 4")
        if len(self.encoder_depths) != 4 or any(d < 1 for d in self.encoder_depths):
            raise ConfigError(f"encoder_depths must be 4 positive ints, got {self.encoder_depths}")
        if len(self.decoder_depths) != 4 or any(d < 1 for d in self.decoder_depths):
            raise ConfigError(f"decoder_depths must be 4 positive ints, got {self.decoder_depths}")
        if self.state_size < 1:
            raise ConfigError(f"state_size {self.state_size} must be positive")
        if self.num_domains < 1:
            raise ConfigError(f"num_domains {self.num_domains} must be positive")
        if self.token_dim < self.num_domains:
            raise ConfigError(f"token_dim {self.token_dim} below num_domains {self.num_domains}")
        if self.placement not in PLACEMENTS:
            raise ConfigError(f"placement {self.placement!r} not in {PLACEMENTS}")
        if self.conditioning not in CONDITIONINGS:
            raise ConfigError(f"conditioning {self.conditioning!r} not in {CONDITIONINGS}")
        if len(self.loss_weights) != 5:
            raise ConfigError(f"loss_weights needs 5 entries, got {len(self.loss_weights)}")
        if not self.lr > 0.0:
            raise ConfigError(f"lr {self.lr} must be positive")
        for name in ("batch_size", "epochs", "patience", "decay_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0.0 < self.decay_factor <= 1.0:
            raise ConfigError(f"decay_factor {self.decay_factor} must be in (0, 1]")
        if self.seed < 0:
            raise ConfigError(f"seed {self.seed} must be non-negative")

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "SumConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


# checkpoint self-description: scalars as 1-element arrays, enums as codes.
# float32 storage quantizes lr/decay_factor and caps exact seeds at 2**24.
_CONFIG_SCALARS = ("input_size", "base_channels", "state_size", "num_domains",
                   "token_dim", "share_scan_params", "kl_literal", "lr",
                   "batch_size", "epochs", "patience", "decay_every",
                   "decay_factor", "seed")
_CONFIG_INTS = {"input_size", "base_channels", "state_size", "num_domains",
                "token_dim", "batch_size", "epochs", "patience", "decay_every", "seed"}


def config_to_arrays(cfg: SumConfig) -> dict:
    out = {}
    for name in _CONFIG_SCALARS:
        out[f"config.{name}"] = np.array([float(getattr(cfg, name))])
    out["config.encoder_depths"] = np.array([float(d) for d in cfg.encoder_depths])
    out["config.decoder_depths"] = np.array([float(d) for d in cfg.decoder_depths])
    out["config.loss_weights"] = np.array([float(w) for w in cfg.loss_weights])
    out["config.placement"] = np.array([float(PLACEMENTS.index(cfg.placement))])
    out["config.conditioning"] = np.array([float(CONDITIONINGS.index(cfg.conditioning))])
    return out


def config_from_arrays(arrays: dict) -> SumConfig:
    def grab(name):
        key = f"config.{name}"
        if key not in arrays:
            raise ConfigError(f"checkpoint lacks {key}")
        return arrays[key]

    kwargs = {}
    for name in _CONFIG_SCALARS:
        v = float(grab(name)[0])
        if name in ("share_scan_params", "kl_literal"):
            kwargs[name] = bool(v)
        elif name in _CONFIG_INTS:
            kwargs[name] = int(round(v))
        else:
            kwargs[name] = v
    kwargs["encoder_depths"] = tuple(int(round(d)) for d in grab("encoder_depths"))
    kwargs["decoder_depths"] = tuple(int(round(d)) for d in grab("decoder_depths"))
    kwargs["loss_weights"] = tuple(float(w) for w in grab("loss_weights"))
    kwargs["placement"] = PLACEMENTS[int(round(float(grab("placement")[0])))]
    kwargs["conditioning"] = CONDITIONINGS[int(round(float(grab("conditioning")[0])))]
    return SumConfig(**kwargs)


# ---------------------------------------------------------------------------
# parameter registry

_PARAM_HOLDERS = (B.Linear, B.LayerNormParams, B.DWConvParams, B.PatchEmbedParams,
                  B.DownsampleParams, B.PatchExpandParams, B.VSSWeights,
                  B.ConditionerParams, SS2DParams, SSMParams)


def _collect_params(prefix: str, obj, out: dict, seen: dict) -> None:
    """Flatten nested weight dataclasses into name -> tensor.

    Shared objects (e.g. one scan parameter set behind all four directions)
    register once, under the first name that reaches them.
    """
    if isinstance(obj, Tensor):
        if id(obj) not in seen:
            seen[id(obj)] = prefix
            out[prefix] = obj
        return
    if isinstance(obj, SS2DParams):
        # directions live in a list; name them like their init streams, and
        # collapse the shared-parameter variant to a single ".shared" entry
        dirs = obj.directions
        if all(d is dirs[0] for d in dirs):
            _collect_params(f"{prefix}.shared", dirs[0], out, seen)
        else:
            for dname, p in zip(DIRECTION_ORDER, dirs):
                _collect_params(f"{prefix}.{dname}", p, out, seen)
        return
    if isinstance(obj, _PARAM_HOLDERS):
        if id(obj) in seen:
            return
        seen[id(obj)] = prefix
        for f in fields(obj):
            _collect_params(f"{prefix}.{f.name}", getattr(obj, f.name), out, seen)


# ---------------------------------------------------------------------------
# model


class Model:
    """Named-parameter network; forward is a pure function of the registry."""

    def __init__(self, cfg: SumConfig):
        cfg.validate()
        self.cfg = cfg
        c, seed = cfg.base_channels, cfg.seed
        self.embed = B.init_patch_embed(c, seed, "embed")
        self.enc = []
        self.down = []
        for i in range(4):
            width = c * (1 << i)
            self.enc.append([
                B.init_vss(width, cfg.state_size, seed, f"enc{i}.b{j}",
                           shared_scan=cfg.share_scan_params)
                for j in range(cfg.encoder_depths[i])
            ])
            if i < 3:
                self.down.append(B.init_downsample(width, seed, f"down{i}"))
        self.dec = []
        self.up = []
        self.skip = []
        for j in range(4):
            width = c * (1 << (3 - j))
            self.dec.append([
                B.init_vss(width, cfg.state_size, seed, f"dec{j}.b{k}",
                           shared_scan=cfg.share_scan_params)
                for k in range(cfg.decoder_depths[j])
            ])
            if j < 3:
                self.up.append(B.init_patch_expand(width, 2, seed, f"up{j}"))
                self.skip.append(B.init_linear(width // 2, width // 2, seed, f"skip{j}"))
        self.head_expand = B.init_patch_expand(c, 4, seed, "head.expand")
        self.head_out = B.init_linear(c // 4, 1, seed, "head.out")
        self.cond = None
        if cfg.conditioning != "none":
            self.cond = B.init_conditioner(cfg.num_domains, cfg.token_dim, seed,
                                           one_hot=cfg.conditioning == "one-hot")
        self._params = self._build_registry()
        self._conditioned = self._conditioned_stages()

    def _build_registry(self) -> dict:
        out: dict = {}
        seen: dict = {}
        _collect_params("embed", self.embed, out, seen)
        for i, stage in enumerate(self.enc):
            for j, w in enumerate(stage):
                _collect_params(f"enc{i}.b{j}", w, out, seen)
        for i, d in enumerate(self.down):
            _collect_params(f"down{i}", d, out, seen)
        for j, stage in enumerate(self.dec):
            for k, w in enumerate(stage):
                _collect_params(f"dec{j}.b{k}", w, out, seen)
        for j in range(3):
            _collect_params(f"up{j}", self.up[j], out, seen)
            _collect_params(f"skip{j}", self.skip[j], out, seen)
        _collect_params("head.expand", self.head_expand, out, seen)
        _collect_params("head.out", self.head_out, out, seen)
        if self.cond is not None:
            _collect_params("cond", self.cond, out, seen)
        return out

    def _conditioned_stages(self) -> set:
        if self.cfg.conditioning == "none":
            return set()
        if self.cfg.placement == "bottleneck":
            return {"dec0"}
        if self.cfg.placement == "decoder":
            return {f"dec{j}" for j in range(4)}
        return {f"enc{i}" for i in range(4)} | {f"dec{j}" for j in range(4)}

    # -- registry views ----------------------------------------------------

    def params(self) -> dict:
        return dict(self._params)

    def num_parameters(self) -> int:
        return sum(t.size for t in self._params.values())

    def state_arrays(self) -> dict:
        out = {name: t.data.copy() for name, t in self._params.items()}
        out.update(config_to_arrays(self.cfg))
        return out

    def load_state(self, arrays: dict) -> None:
        missing = sorted(set(self._params) - set(arrays))
        if missing:
            raise ConfigError(f"checkpoint lacks parameters: {', '.join(missing[:4])}")
        for name, t in self._params.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ConfigError(
                    f"shape mismatch for {name}: checkpoint {arr.shape}, model {t.data.shape}")
            t.data = np.ascontiguousarray(arr)

    # -- forward -----------------------------------------------------------

    def _modulation(self, labels):
        if self.cfg.conditioning == "prompt":
            return B.conditioner(self.cond, labels)
        if self.cfg.conditioning == "one-hot":
            return B.one_hot_conditioner(self.cond, labels)
        return None

    def _stage(self, x, stage_name: str, weights, mod):
        conditioned = stage_name in self._conditioned
        for w in weights:
            x = B.cvss_forward(x, w, mod) if conditioned and mod is not None \
                else B.vss_forward(x, w)
        return x

    def forward(self, images, labels=None) -> Tensor:
        """[B, S, S, 3] images (+ labels unless unconditioned) -> [B, S, S]."""
        imgs = T.as_tensor(images)
        if imgs.ndim == 3:
            imgs = T.reshape(imgs, (1,) + imgs.shape)
        s = self.cfg.input_size
        if imgs.ndim != 4 or imgs.shape[1:] != (s, s, 3):
            raise ShapeError(f"expected [B, {s}, {s}, 3] images, got {imgs.shape}")
        batch = imgs.shape[0]
        mod = None
        if self.cfg.conditioning != "none":
            if labels is None:
                raise ConfigError("conditioned model needs domain labels")
            labels = np.asarray(labels).reshape(-1)
            if labels.size != batch:
                raise ShapeError(f"{labels.size} labels for batch of {batch}")
            mod = self._modulation(labels)

        x = B.patch_embed(imgs, self.embed)
        skips = []
        for i in range(4):
            x = self._stage(x, f"enc{i}", self.enc[i], mod)
            if i < 3:
                skips.append(x)
                x = B.downsample(x, self.down[i])
        for j in range(4):
            x = self._stage(x, f"dec{j}", self.dec[j], mod)
            if j < 3:
                x = B.patch_expand(x, self.up[j])
                x = T.add(x, B.linear(skips[2 - j], self.skip[j]))
        x = B.patch_expand(x, self.head_expand)
        y = T.sigmoid(B.linear(x, self.head_out))
        return T.reshape(y, (batch, s, s))

    def predict(self, images, labels=None) -> np.ndarray:
        """Forward pass without recording; returns plain arrays."""
        return self.forward(images, labels).data


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Decoupled-state Adam over a named parameter registry.

    Updates walk names in sorted order so the arithmetic sequence (and thus
    the result bytes) never depends on dict construction order.
    """

    def __init__(self, params: dict, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.names = sorted(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = {n: np.zeros_like(params[n].data) for n in self.names}
        self.v = {n: np.zeros_like(params[n].data) for n in self.names}

    def step(self, grads: dict) -> None:
        """Apply one update from {tensor: gradient} as returned by backward."""
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for n in self.names:
            p = self.params[n]
            g = grads.get(p)
            if g is None:
                g = np.zeros_like(p.data)
            self.m[n] = self.beta1 * self.m[n] + (1.0 - self.beta1) * g
            self.v[n] = self.beta2 * self.v[n] + (1.0 - self.beta2) * g * g
            m_hat = self.m[n] / b1t
            v_hat = self.v[n] / b2t
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# ---------------------------------------------------------------------------
# training


@dataclass
class EpochRow:
    epoch: int
    lr: float
    train_loss: float
    val_cc: float
    val_kld: float
    val_sim: float
    val_nss: float
    val_auc: float
    val_excluded: int

    def run_metrics(self) -> dict:
        # a fully-excluded metric (mean nan) must never win the ranking:
        # substitute the worst plausible value for that slot
        def fallback(v, bad):
            return bad if not np.isfinite(v) else v

        return {"cc": fallback(self.val_cc, -1.0), "sim": fallback(self.val_sim, 0.0),
                "nss": fallback(self.val_nss, 0.0), "kld": fallback(self.val_kld, 100.0)}


@dataclass
class TrainingReport:
    """Everything a run produced, with no wall-clock fields: two identical
    configurations must serialize to identical bytes."""

    config: dict
    num_parameters: int
    rows: list = field(default_factory=list)
    f_scores: list = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False

    def to_json(self) -> str:
        payload = {
            "config": self.config,
            "num_parameters": self.num_parameters,
            "rows": [vars(r) for r in self.rows],
            "f_scores": self.f_scores,
            "best_epoch": self.best_epoch,
            "stopped_early": self.stopped_early,
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def _batches(n: int, size: int, seed: int, epoch: int):
    order = list(range(n))
    SplitMix64(derive(seed, "train-shuffle", str(epoch))).shuffle(order)
    for start in range(0, n, size):
        yield order[start : start + size]


def _stack_batch(samples, idxs):
    imgs = np.stack([samples[i].image for i in idxs])
    labels = np.array([samples[i].label for i in idxs], dtype=np.int64)
    return imgs, labels


def batch_loss(model: Model, samples, idxs) -> Tensor:
    """Mean composite loss over one batch (per-sample loss on each slice)."""
    imgs, labels = _stack_batch(samples, idxs)
    pred = model.forward(imgs, labels)
    total = None
    for row, i in enumerate(idxs):
        s = samples[i]
        term = composite_loss(s.smap, s.fmap, pred[row],
                              weights=model.cfg.loss_weights,
                              kl_literal=model.cfg.kl_literal)
        total = term if total is None else T.add(total, term)
    return T.mul(total, 1.0 / len(idxs))


def evaluate(model: Model, samples, batch_size: int = 16):
    """Metric reports + summary over samples, without recording gradients."""
    reports = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        imgs, labels = _stack_batch(chunk, range(len(chunk)))
        preds = model.predict(imgs, labels)
        for row, s in enumerate(chunk):
            reports.append(evaluate_sample(preds[row], s.smap, s.fmap, s.sid))
    return reports, summarize(reports)


def train(model: Model, train_samples, val_samples) -> TrainingReport:
    """Adam + stepped decay + patience stopping on the re-ranked F-score.

    After every epoch all epochs so far are re-ranked together (min-max
    scaling is relative, so adding a run can move earlier scores); the best
    epoch is the argmax, ties to the earliest, and training stops once the
    current epoch trails it by the patience.  The best epoch's parameters
    are restored before returning.
    """
    cfg = model.cfg
    if not train_samples:
        raise ConfigError("no training samples")
    if not val_samples:
        raise ConfigError("no validation samples")
    opt = Adam(model.params(), cfg.lr)
    report = TrainingReport(config=cfg.to_dict(), num_parameters=model.num_parameters())
    snapshots = []
    rows = []
    best = -1
    for epoch in range(cfg.epochs):
        opt.lr = cfg.lr * cfg.decay_factor ** (epoch // cfg.decay_every)
        losses = []
        for b, idxs in enumerate(_batches(len(train_samples), cfg.batch_size,
                                          cfg.seed, epoch)):
            try:
                with T.Tape() as tape:
                    loss = batch_loss(model, train_samples, idxs)
                    value = float(loss.data)
                    if not np.isfinite(value):
                        raise NumericAbort(f"non-finite loss {value}", epoch, b)
                    grads = T.backward(tape, loss)
            except NumericError as exc:
                raise NumericAbort(str(exc), epoch, b) from exc
            for g in grads.values():
                if not np.all(np.isfinite(g)):
                    raise NumericAbort("non-finite gradient", epoch, b)
            opt.step(grads)
            losses.append(value)

        _, summary = evaluate(model, val_samples, cfg.batch_size)
        excluded = sum(summary[k]["excluded"] for k in ("cc", "kld", "sim", "nss", "auc"))
        rows.append(EpochRow(
            epoch=epoch,
            lr=opt.lr,
            train_loss=float(np.mean(losses)),
            val_cc=_mean_or_nan(summary, "cc"),
            val_kld=_mean_or_nan(summary, "kld"),
            val_sim=_mean_or_nan(summary, "sim"),
            val_nss=_mean_or_nan(summary, "nss"),
            val_auc=_mean_or_nan(summary, "auc"),
            val_excluded=excluded,
        ))
        snapshots.append({n: t.data.copy() for n, t in model.params().items()})
        scores = f_scores([(f"epoch{r.epoch}", r.run_metrics()) for r in rows])
        best = int(np.argmax([s.f_score for s in scores]))
        if epoch - best >= cfg.patience:
            report.stopped_early = True
            break

    report.rows = rows
    report.f_scores = [s.f_score for s in scores]
    report.best_epoch = best
    for name, t in model.params().items():
        t.data = snapshots[best][name].copy()
    return report


def _mean_or_nan(summary: dict, key: str) -> float:
    mean = summary[key]["mean"]
    return float("nan") if mean is None else float(mean)

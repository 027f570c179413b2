"""GRU recurrent autoencoder with hand-written BPTT and Adam.

Architecture (``INDRA``)::

    x (k, f) -> linear(f->h) -> tanh -> GRU encoder(h->h) -> tanh
             -> GRU decoder(h->h) -> tanh -> linear(h->f) -> tanh -> x_hat

The encoder emits its hidden state at every step; that sequence is the
message context and the decoder consumes it step-aligned.  ``LED`` drops the
output linear layer (decoder GRU maps h->f and its hidden state is the
output).  ``LD`` replaces decoder GRU + output linear with two linear layers
(h->h, h->f) with tanh after each.

Everything runs in float64 on (batch, time, feature) arrays.
"""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .dataset import ScalingParams

log = logging.getLogger(__name__)

INDRA = "INDRA"
LED = "LED"
LD = "LD"
VARIANTS = (INDRA, LED, LD)

MODEL_FORMAT = "canids-model"
MODEL_VERSION = 1


class ModelFormatError(ValueError):
    pass


class StaleCacheError(RuntimeError):
    pass


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, name: str):
        self.param = name
        super().__init__(f"non-finite gradient for parameter {name!r}")


class TrainingDivergedError(FloatingPointError):
    def __init__(self, epoch: int, loss: float):
        self.epoch = epoch
        super().__init__(f"loss became non-finite ({loss}) at epoch {epoch}")


def sigmoid(x):
    # tanh identity: no overflow for large |x|
    out = np.tanh(0.5 * np.asarray(x, dtype=np.float64))
    out *= 0.5
    out += 0.5
    return out


# --------------------------------------------------------------------------
# Parameter containers


@dataclass
class LinearParams:
    W: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)

    def __post_init__(self):
        if self.b.shape != (self.W.shape[0],):
            raise ValueError("bias length must equal output dimension")

    @property
    def in_dim(self) -> int:
        return self.W.shape[1]

    @property
    def out_dim(self) -> int:
        return self.W.shape[0]

    def arrays(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "b": self.b}


@dataclass
class GruParams:
    """Gate weights stacked in (update, reset, candidate) order.

    ``W`` maps input to hidden (3h, in), ``U`` maps hidden to hidden (3h, h),
    ``b`` is the (3h,) bias.
    """

    W: np.ndarray
    U: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        h3 = self.W.shape[0]
        if h3 % 3 or self.U.shape != (h3, h3 // 3) or self.b.shape != (h3,):
            raise ValueError("inconsistent GRU parameter dimensions")

    @property
    def hidden_dim(self) -> int:
        return self.U.shape[1]

    @property
    def input_dim(self) -> int:
        return self.W.shape[1]

    def gate(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        h = self.hidden_dim
        i = {"z": 0, "r": 1, "h": 2}[name]
        s = slice(i * h, (i + 1) * h)
        return self.W[s], self.U[s], self.b[s]

    def arrays(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "U": self.U, "b": self.b}


def _layer_plan(variant: str, f: int, h: int) -> list[tuple[str, str, int, int]]:
    """(name, kind, in_dim, out_dim) for each layer, in forward order."""
    plan = [("in", "linear", f, h), ("enc", "gru", h, h)]
    if variant == INDRA:
        plan += [("dec", "gru", h, h), ("out", "linear", h, f)]
    elif variant == LED:
        plan += [("dec", "gru", h, f)]
    elif variant == LD:
        plan += [("dec1", "linear", h, h), ("dec2", "linear", h, f)]
    else:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    return plan


@dataclass
class AutoencoderModel:
    variant: str
    n_features: int
    hidden_dim: int
    layers: dict[str, LinearParams | GruParams]
    scaler: ScalingParams | None = None
    trained: bool = False
    seed: int | None = None
    threshold: dict | None = None
    message_id: int | None = None
    # bumped on every in-place parameter update; guards backward caches
    version: int = field(default=0, compare=False)

    def parameters(self) -> Iterator[tuple[str, np.ndarray]]:
        for lname, layer in self.layers.items():
            for pname, arr in layer.arrays().items():
                yield f"{lname}.{pname}", arr

    def param_dict(self) -> dict[str, np.ndarray]:
        return dict(self.parameters())

    def n_parameters(self) -> int:
        return sum(a.size for _, a in self.parameters())

    def copy(self) -> "AutoencoderModel":
        return copy.deepcopy(self)

    def forward(self, x):
        return forward(self, x)

    def reconstruct(self, x) -> np.ndarray:
        return forward(self, x)[0]


def expected_parameter_count(variant: str, f: int, h: int) -> int:
    total = 0
    for _, kind, i, o in _layer_plan(variant, f, h):
        total += (o * i + o) if kind == "linear" else (3 * o * i + 3 * o * o + 3 * o)
    return total


def init_model(variant: str, n_features: int, hidden_dim: int = 64, seed: int = 0) -> AutoencoderModel:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases, deterministic per seed."""
    if n_features < 1 or hidden_dim < 1:
        raise ValueError("n_features and hidden_dim must be >= 1")
    rng = np.random.default_rng(seed)
    layers: dict[str, LinearParams | GruParams] = {}
    for name, kind, i, o in _layer_plan(variant, n_features, hidden_dim):
        if kind == "linear":
            bound = 1.0 / math.sqrt(i)
            layers[name] = LinearParams(rng.uniform(-bound, bound, (o, i)), np.zeros(o))
        else:
            bw, bu = 1.0 / math.sqrt(i), 1.0 / math.sqrt(o)
            layers[name] = GruParams(
                rng.uniform(-bw, bw, (3 * o, i)),
                rng.uniform(-bu, bu, (3 * o, o)),
                np.zeros(3 * o),
            )
    return AutoencoderModel(variant, n_features, hidden_dim, layers, seed=seed)


# --------------------------------------------------------------------------
# GRU


def gru_cell_forward(x, h_prev, params: GruParams) -> np.ndarray:
    """One GRU step; ``x`` is (..., in) and ``h_prev`` is (..., h)."""
    x = np.asarray(x, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    if x.shape[-1] != params.input_dim or h_prev.shape[-1] != params.hidden_dim:
        raise ValueError(
            f"GRU expects input {params.input_dim} / hidden {params.hidden_dim}, "
            f"got {x.shape[-1]} / {h_prev.shape[-1]}"
        )
    Wz, Uz, bz = params.gate("z")
    Wr, Ur, br = params.gate("r")
    Wh, Uh, bh = params.gate("h")
    z = sigmoid(x @ Wz.T + h_prev @ Uz.T + bz)
    r = sigmoid(x @ Wr.T + h_prev @ Ur.T + br)
    cand = np.tanh(x @ Wh.T + (r * h_prev) @ Uh.T + bh)
    return (1.0 - z) * h_prev + z * cand


def _gru_seq_forward(x: np.ndarray, p: GruParams):
    """Run a GRU over time-major input ``x`` (T, B, in) from a zero state."""
    T, B, _ = x.shape
    H = p.hidden_dim
    A = x @ p.W.T + p.b  # (T, B, 3H) input projections for all steps
    U_zr, U_c = p.U[: 2 * H], p.U[2 * H:]
    hs = np.empty((T + 1, B, H))  # hs[0] is the initial state
    hs[0] = 0.0
    zrs = np.empty((T, B, 2 * H))
    rhs = np.empty((T, B, H))
    cs = np.empty((T, B, H))
    for t in range(T):
        hp = hs[t]
        zr = sigmoid(A[t, :, :2 * H] + hp @ U_zr.T)
        z = zr[:, :H]
        rh = np.multiply(zr[:, H:], hp, out=rhs[t])
        c = np.tanh(A[t, :, 2 * H:] + rh @ U_c.T, out=cs[t])
        hs[t + 1] = hp + z * (c - hp)
        zrs[t] = zr
    return hs[1:], (x, hs, zrs, rhs, cs)


def _gru_seq_backward(dhs: np.ndarray, p: GruParams, cache):
    x, hs, zrs, rhs, cs = cache
    T, B, H = cs.shape
    U_zr, U_c = p.U[: 2 * H], p.U[2 * H:]
    dA = np.empty((T, B, 3 * H))
    dh_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        hp = hs[t]
        z, r, c = zrs[t, :, :H], zrs[t, :, H:], cs[t]
        dh = dhs[t] + dh_next
        dac = dh * z * (1.0 - c * c)
        drh = dac @ U_c
        dzr = dA[t, :, :2 * H]
        np.multiply(dh * (c - hp), z * (1.0 - z), out=dzr[:, :H])
        np.multiply(drh * hp, r * (1.0 - r), out=dzr[:, H:])
        dA[t, :, 2 * H:] = dac
        dh_next = dh * (1.0 - z) + drh * r + dzr @ U_zr
    flatA = dA.reshape(-1, 3 * H)
    dU = np.empty_like(p.U)
    dU[: 2 * H] = flatA[:, :2 * H].T @ hs[:-1].reshape(-1, H)
    dU[2 * H:] = flatA[:, 2 * H:].T @ rhs.reshape(-1, H)
    dW = flatA.T @ x.reshape(-1, x.shape[-1])
    db = flatA.sum(axis=0)
    dx = dA @ p.W
    return dx, {"W": dW, "U": dU, "b": db}


def _linear_forward(x, p: LinearParams):
    return np.tanh(x @ p.W.T + p.b)


def _linear_backward(dy, x, y, p: LinearParams):
    da = dy * (1.0 - y * y)
    flat = da.reshape(-1, da.shape[-1])
    grads = {"W": flat.T @ x.reshape(-1, x.shape[-1]), "b": flat.sum(axis=0)}
    return da @ p.W, grads


# --------------------------------------------------------------------------
# Forward / backward


@dataclass
class ForwardCache:
    x: np.ndarray
    version: int
    model_id: int
    steps: list


def _as_batch(x, f: int) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 2
    if single:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[-1] != f:
        raise ValueError(f"expected (k, {f}) or (batch, k, {f}) input, got shape {np.shape(x)}")
    return arr, single


def forward(model: AutoencoderModel, x):
    """Reconstruct ``x`` ((k, f) or (batch, k, f)); returns (x_hat, cache)."""
    xb, single = _as_batch(x, model.n_features)
    steps = []
    act = np.ascontiguousarray(xb.transpose(1, 0, 2))  # time-major inside the network
    for name, kind, _, _ in _layer_plan(model.variant, model.n_features, model.hidden_dim):
        p = model.layers[name]
        if kind == "linear":
            out = _linear_forward(act, p)
            steps.append((name, kind, act, out))
        else:
            hs, gcache = _gru_seq_forward(act, p)
            is_output = model.variant == LED and name == "dec"
            # GRU hidden states are already in (-1, 1); the output GRU emits them as is
            out = hs if is_output else np.tanh(hs)
            steps.append((name, kind, gcache, (out, is_output)))
        act = out
    cache = ForwardCache(xb, model.version, id(model), steps)
    out = act.transpose(1, 0, 2)
    return (out[0] if single else out), cache


def mse_loss(x, x_hat) -> float:
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {x_hat.shape}")
    return float(np.mean((x - x_hat) ** 2))


def backward(model: AutoencoderModel, x, cache: ForwardCache, loss_scale: float = 1.0):
    """Gradients of ``loss_scale * mse(x, forward(x))`` for every parameter.

    Full BPTT over all window steps.  Returns a dict keyed like
    :meth:`AutoencoderModel.parameters`.
    """
    if cache.version != model.version or cache.model_id != id(model):
        raise StaleCacheError("forward cache does not match the current model parameters")
    xb, _ = _as_batch(x, model.n_features)
    if xb.shape != cache.x.shape or not np.array_equal(xb, cache.x):
        raise StaleCacheError("backward called with an input different from the cached forward pass")

    last = cache.steps[-1]
    y = last[3][0] if last[1] == "gru" else last[3]
    d = loss_scale * 2.0 * (y - xb.transpose(1, 0, 2)) / y.size
    grads: dict[str, np.ndarray] = {}
    for name, kind, inp, out in reversed(cache.steps):
        p = model.layers[name]
        if kind == "linear":
            d, g = _linear_backward(d, inp, out, p)
        else:
            act, is_output = out
            dhs = d if is_output else d * (1.0 - act * act)
            d, g = _gru_seq_backward(dhs, p, inp)
        for k, v in g.items():
            grads[f"{name}.{k}"] = v
    return {k: grads[k] for k, _ in model.parameters()}


def subsequence_losses(model: AutoencoderModel, batch) -> np.ndarray:
    """Per-subsequence MSE for a (b, k, f) batch."""
    xb, _ = _as_batch(batch, model.n_features)
    y, _ = forward(model, xb)
    return np.mean((y - xb) ** 2, axis=(1, 2))


def validate(model: AutoencoderModel, val_batches) -> np.ndarray:
    """Forward-only pass; one MSE per subsequence in input order."""
    if len(val_batches) == 0:
        raise ValueError("no validation batches")
    return np.concatenate([subsequence_losses(model, b) for b in val_batches])


# --------------------------------------------------------------------------
# Optimiser


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """Bias-corrected Adam update applied to ``params`` in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(name)
    state.step += 1
    c1 = 1.0 - beta1 ** state.step
    c2 = 1.0 - beta2 ** state.step
    for name, p in params.items():
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


# --------------------------------------------------------------------------
# Training


@dataclass
class TrainConfig:
    epochs: int = 500
    k: int = 20
    batch_size: int = 128
    lr: float = 1e-4
    patience: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    hidden_dim: int = 64
    variant: str = INDRA
    val_fraction: float = 0.85
    shuffle_batches: bool = True

    def __post_init__(self):
        for name in ("epochs", "k", "batch_size", "patience", "hidden_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not self.lr > 0 or not self.eps > 0:
            raise ValueError("lr and eps must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")


@dataclass
class TrainReport:
    train_losses: list[float] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)
    best_epoch: int = -1  # 0-based index into val_losses
    best_val_losses: list[float] = field(default_factory=list)
    stopped_early: bool = False

    @property
    def epochs_run(self) -> int:
        return len(self.val_losses)

    def to_dict(self) -> dict:
        return {
            "train_losses": self.train_losses,
            "val_losses": self.val_losses,
            "best_epoch": self.best_epoch,
            "epochs_run": self.epochs_run,
            "stopped_early": self.stopped_early,
            "best_val_losses": self.best_val_losses,
        }


def train(model: AutoencoderModel, train_batches, val_batches, cfg: TrainConfig,
          progress=None) -> tuple[AutoencoderModel, TrainReport]:
    """Adam + early stopping on mean validation loss.

    The input model is trained in place; the returned model is a copy holding
    the parameters of the best validation epoch.
    """
    if len(train_batches) == 0 or len(val_batches) == 0:
        raise ValueError("training and validation sets must be non-empty")
    rng = np.random.default_rng(cfg.seed)
    params = model.param_dict()
    state = AdamState()
    report = TrainReport()
    best_model = None
    best_val = math.inf
    stale = 0
    order = np.arange(len(train_batches))

    for epoch in range(cfg.epochs):
        if cfg.shuffle_batches:
            rng.shuffle(order)
        total, count = 0.0, 0
        for bi in order:
            batch = train_batches[bi]
            y, cache = forward(model, batch)
            loss = mse_loss(batch, y)
            if not math.isfinite(loss):
                raise TrainingDivergedError(epoch, loss)
            grads = backward(model, batch, cache)
            adam_step(params, grads, state, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
            model.version += 1
            total += loss * len(batch)
            count += len(batch)
        val = validate(model, val_batches)
        val_mean = float(val.mean())
        if not math.isfinite(val_mean):
            raise TrainingDivergedError(epoch, val_mean)
        report.train_losses.append(total / count)
        report.val_losses.append(val_mean)
        if progress is not None:
            progress(epoch, total / count, val_mean)
        if val_mean < best_val:
            best_val = val_mean
            best_model = model.copy()
            report.best_epoch = epoch
            report.best_val_losses = val.tolist()
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                report.stopped_early = True
                break

    log.debug("training stopped after %d epochs, best epoch %d (val %.3g)",
              report.epochs_run, report.best_epoch, best_val)
    best_model.trained = True
    best_model.version = 0
    return best_model, report


# --------------------------------------------------------------------------
# Persistence


def model_to_dict(model: AutoencoderModel) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "variant": model.variant,
        "n_features": model.n_features,
        "hidden_dim": model.hidden_dim,
        "seed": model.seed,
        "message_id": model.message_id,
        "trained": model.trained,
        "scaler": model.scaler.to_dict() if model.scaler is not None else None,
        "threshold": model.threshold,
        "params": {
            name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
            for name, arr in model.parameters()
        },
    }


def model_from_dict(doc: dict, n_features: int | None = None) -> AutoencoderModel:
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise ModelFormatError("not a model artifact (bad format marker)")
    if doc.get("version") != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model format version {doc.get('version')!r}")
    try:
        variant = doc["variant"]
        f = int(doc["n_features"])
        h = int(doc["hidden_dim"])
        raw = doc["params"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"incomplete model artifact: {exc}") from exc
    if n_features is not None and f != n_features:
        raise ModelFormatError(f"model has {f} input features, expected {n_features}")
    try:
        plan = _layer_plan(variant, f, h)
    except ValueError as exc:
        raise ModelFormatError(str(exc)) from exc

    skeleton = init_model(variant, f, h, seed=0)
    arrays = {}
    for name, ref in skeleton.parameters():
        entry = raw.get(name)
        if entry is None:
            raise ModelFormatError(f"missing parameter {name}")
        arr = np.asarray(entry["data"], dtype=np.float64)
        if list(ref.shape) != list(entry["shape"]) or arr.size != ref.size:
            raise ModelFormatError(f"parameter {name} has shape {entry['shape']}, expected {list(ref.shape)}")
        arrays[name] = arr.reshape(ref.shape)
    if set(raw) != set(arrays):
        raise ModelFormatError(f"unexpected parameters: {sorted(set(raw) - set(arrays))}")

    layers: dict[str, LinearParams | GruParams] = {}
    for name, kind, _, _ in plan:
        if kind == "linear":
            layers[name] = LinearParams(arrays[f"{name}.W"], arrays[f"{name}.b"])
        else:
            layers[name] = GruParams(arrays[f"{name}.W"], arrays[f"{name}.U"], arrays[f"{name}.b"])
    scaler = ScalingParams.from_dict(doc["scaler"]) if doc.get("scaler") else None
    if scaler is not None and scaler.n_signals != f:
        raise ModelFormatError("scaler dimension does not match model features")
    return AutoencoderModel(
        variant, f, h, layers,
        scaler=scaler,
        trained=bool(doc.get("trained", False)),
        seed=doc.get("seed"),
        threshold=doc.get("threshold"),
        message_id=doc.get("message_id"),
    )


def save_model(model: AutoencoderModel, path: str, force: bool = False) -> None:
    if not model.trained and not force:
        raise ValueError("refusing to save an untrained model (pass force=True)")
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh)
        fh.write("\n")


def load_model(path: str, n_features: int | None = None) -> AutoencoderModel:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ModelFormatError(f"{path}: not a model artifact ({exc})") from exc
    return model_from_dict(doc, n_features)

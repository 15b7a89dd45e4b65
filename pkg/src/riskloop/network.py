"""Attention-gated two-hidden-layer classifier with manual backpropagation.

Forward pass:

    a  = sigmoid(W_attn x)           per-feature gate, full matrix or diagonal
    z  = a * x
    h1 = dropout(relu(batchnorm(W1 z + b1)))
    h2 = dropout(relu(batchnorm(W2 h1 + b2)))
    p  = softmax(W_out h2 + b_out)

trained full-batch on mean cross-entropy.  All math is float64 numpy; the
backward pass is exact (batchnorm batch-statistic terms included) and is
verified against central finite differences by :func:`gradient_check`.

Forward never mutates the model: train-mode traces carry the updated
batchnorm running statistics, and only :func:`train` applies them.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterator, Literal, Optional, Sequence, Union

import numpy as np

from .featurizer import TOTAL_DIMS, FeatureVector

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
PROB_FLOOR = 1e-12
GATE_CLIP = 1e-12

CHECKPOINT_MAGIC = b"RLCKPT1\n"


class ShapeError(ValueError):
    """Input dimensions do not match the model."""


class InvalidTraceError(ValueError):
    """Backward pass asked for on an eval-mode trace."""


class TrainingError(ValueError):
    """Bad training inputs (empty set or labels outside {0, 1})."""


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = TOTAL_DIMS
    hidden1: int = 64
    hidden2: int = 32
    classes: int = 2
    dropout_rate: float = 0.3
    bn_epsilon: float = 1e-5
    bn_momentum: float = 0.1
    attention: Literal["full", "diagonal"] = "full"
    optimizer: Literal["adam", "sgd"] = "adam"
    learning_rate: float = 1e-3
    epochs: int = 200
    seed: int = 0

    def __post_init__(self):
        if min(self.input_dim, self.hidden1, self.hidden2, self.classes) <= 0:
            raise ValueError("all dimensions must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.attention not in ("full", "diagonal"):
            raise ValueError(f"unknown attention kind: {self.attention}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer: {self.optimizer}")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")


@dataclass
class BatchNorm:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray


@dataclass
class Model:
    w_attn: np.ndarray  # (D, D) full or (D,) diagonal
    w1: np.ndarray  # (hidden1, D)
    b1: np.ndarray
    bn1: BatchNorm
    w2: np.ndarray  # (hidden2, hidden1)
    b2: np.ndarray
    bn2: BatchNorm
    w_out: np.ndarray  # (classes, hidden2)
    b_out: np.ndarray
    config: ModelConfig
    rng_state: dict = field(default_factory=dict)

    def copy(self) -> "Model":
        return copy.deepcopy(self)

    def parameters(self) -> Iterator[tuple[str, np.ndarray]]:
        """Learnable tensors only; batchnorm running stats are excluded."""
        yield "w_attn", self.w_attn
        yield "w1", self.w1
        yield "b1", self.b1
        yield "bn1.gamma", self.bn1.gamma
        yield "bn1.beta", self.bn1.beta
        yield "w2", self.w2
        yield "b2", self.b2
        yield "bn2.gamma", self.bn2.gamma
        yield "bn2.beta", self.bn2.beta
        yield "w_out", self.w_out
        yield "b_out", self.b_out

    def set_parameter(self, name: str, value: np.ndarray) -> None:
        if name.startswith("bn1."):
            setattr(self.bn1, name.split(".", 1)[1], value)
        elif name.startswith("bn2."):
            setattr(self.bn2, name.split(".", 1)[1], value)
        else:
            setattr(self, name, value)


Gradients = dict[str, np.ndarray]


def _glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_model(config: ModelConfig) -> Model:
    """Seeded scaled-uniform weights, zero biases, identity batchnorm."""
    seeds = np.random.SeedSequence(config.seed).spawn(2)
    rng = np.random.default_rng(seeds[0])
    d, h1, h2, c = config.input_dim, config.hidden1, config.hidden2, config.classes

    if config.attention == "full":
        w_attn = _glorot_uniform(rng, (d, d), d, d)
    else:
        w_attn = _glorot_uniform(rng, (d,), 1, 1)
    w1 = _glorot_uniform(rng, (h1, d), d, h1)
    w2 = _glorot_uniform(rng, (h2, h1), h1, h2)
    w_out = _glorot_uniform(rng, (c, h2), h2, c)

    def bn(n: int) -> BatchNorm:
        return BatchNorm(
            gamma=np.ones(n), beta=np.zeros(n), running_mean=np.zeros(n), running_var=np.ones(n)
        )

    train_rng = np.random.default_rng(seeds[1])
    return Model(
        w_attn=w_attn,
        w1=w1,
        b1=np.zeros(h1),
        bn1=bn(h1),
        w2=w2,
        b2=np.zeros(h2),
        bn2=bn(h2),
        w_out=w_out,
        b_out=np.zeros(c),
        config=config,
        rng_state=train_rng.bit_generator.state,
    )


def _sigmoid(u: np.ndarray) -> np.ndarray:
    out = np.empty_like(u)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    eu = np.exp(u[~pos])
    out[~pos] = eu / (1.0 + eu)
    return out


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def as_matrix(batch: Union[np.ndarray, Sequence[FeatureVector]]) -> np.ndarray:
    if isinstance(batch, np.ndarray):
        x = np.atleast_2d(batch)
        if x.dtype != np.longdouble:
            x = x.astype(np.float64)
    else:
        x = np.stack([fv.values for fv in batch]).astype(np.float64)
    return x


@dataclass
class _BnCache:
    xhat: np.ndarray
    xmu: np.ndarray
    inv_std: np.ndarray


@dataclass
class ForwardTrace:
    mode: Literal["train", "eval"]
    model: "Model"
    x: np.ndarray
    a: np.ndarray
    z: np.ndarray
    pre1: np.ndarray
    bn1_cache: Optional[_BnCache]
    relu1: np.ndarray
    mask1: Optional[np.ndarray]
    h1: np.ndarray
    pre2: np.ndarray
    bn2_cache: Optional[_BnCache]
    relu2: np.ndarray
    mask2: Optional[np.ndarray]
    h2: np.ndarray
    logits: np.ndarray
    probs: np.ndarray
    new_running: Optional[dict[str, np.ndarray]]


def _bn_forward_train(x: np.ndarray, bn: BatchNorm, eps: float, momentum: float):
    mu = x.mean(axis=0)
    var = ((x - mu) ** 2).mean(axis=0)
    inv_std = 1.0 / np.sqrt(var + eps)
    xmu = x - mu
    xhat = xmu * inv_std
    y = bn.gamma * xhat + bn.beta
    new_mean = (1.0 - momentum) * bn.running_mean + momentum * mu
    new_var = (1.0 - momentum) * bn.running_var + momentum * var
    return y, _BnCache(xhat=xhat, xmu=xmu, inv_std=inv_std), new_mean, new_var


def _bn_forward_eval(x: np.ndarray, bn: BatchNorm, eps: float) -> np.ndarray:
    return bn.gamma * (x - bn.running_mean) / np.sqrt(bn.running_var + eps) + bn.beta


def forward(
    model: Model,
    batch: Union[np.ndarray, Sequence[FeatureVector]],
    mode: Literal["train", "eval"] = "eval",
    rng: Optional[np.random.Generator] = None,
) -> ForwardTrace:
    """One forward pass.  Train mode uses batch statistics and fresh inverted
    dropout masks drawn from ``rng``; eval mode uses running statistics and
    identity dropout and is side-effect free.
    """
    x = as_matrix(batch)
    cfg = model.config
    if x.shape[1] != cfg.input_dim:
        raise ShapeError(f"input width {x.shape[1]} != model input_dim {cfg.input_dim}")
    if x.shape[0] == 0:
        raise ShapeError("empty batch")

    if cfg.attention == "full":
        u = x @ model.w_attn.T
    else:
        u = x * model.w_attn
    # clip keeps the gate strictly inside (0, 1) even when sigmoid saturates
    a = np.clip(_sigmoid(u), GATE_CLIP, 1.0 - GATE_CLIP)
    z = a * x

    train = mode == "train"
    rate = cfg.dropout_rate if train else 0.0
    if train and rate > 0.0 and rng is None:
        raise ValueError("train-mode forward with dropout requires an rng")

    def dropout(h: np.ndarray):
        if not train or rate == 0.0:
            return h, None
        mask = (rng.random(h.shape) >= rate).astype(np.float64)
        return h * mask / (1.0 - rate), mask

    pre1 = z @ model.w1.T + model.b1
    if train:
        y1, bn1_cache, rm1, rv1 = _bn_forward_train(pre1, model.bn1, cfg.bn_epsilon, cfg.bn_momentum)
    else:
        y1, bn1_cache = _bn_forward_eval(pre1, model.bn1, cfg.bn_epsilon), None
    relu1 = np.maximum(y1, 0.0)
    h1, mask1 = dropout(relu1)

    pre2 = h1 @ model.w2.T + model.b2
    if train:
        y2, bn2_cache, rm2, rv2 = _bn_forward_train(pre2, model.bn2, cfg.bn_epsilon, cfg.bn_momentum)
    else:
        y2, bn2_cache = _bn_forward_eval(pre2, model.bn2, cfg.bn_epsilon), None
    relu2 = np.maximum(y2, 0.0)
    h2, mask2 = dropout(relu2)

    logits = h2 @ model.w_out.T + model.b_out
    probs = _softmax(logits)

    new_running = None
    if train:
        new_running = {
            "bn1.running_mean": rm1,
            "bn1.running_var": rv1,
            "bn2.running_mean": rm2,
            "bn2.running_var": rv2,
        }
    return ForwardTrace(
        mode=mode,
        model=model,
        x=x,
        a=a,
        z=z,
        pre1=pre1,
        bn1_cache=bn1_cache,
        relu1=relu1,
        mask1=mask1,
        h1=h1,
        pre2=pre2,
        bn2_cache=bn2_cache,
        relu2=relu2,
        mask2=mask2,
        h2=h2,
        logits=logits,
        probs=probs,
        new_running=new_running,
    )


def loss(probs: np.ndarray, labels: Sequence[int]) -> float:
    """Mean negative log-probability of the true class, floored at 1e-12."""
    probs = np.atleast_2d(probs)
    y = np.asarray(labels)
    if probs.shape[0] != y.shape[0]:
        raise ShapeError(f"{probs.shape[0]} prob rows vs {y.shape[0]} labels")
    p_true = probs[np.arange(len(y)), y]
    return float(-np.mean(np.log(np.maximum(p_true, PROB_FLOOR))))


def _bn_backward(dy: np.ndarray, cache: _BnCache, gamma: np.ndarray):
    n = dy.shape[0]
    dgamma = (dy * cache.xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma
    dvar = (dxhat * cache.xmu).sum(axis=0) * (-0.5) * cache.inv_std**3
    dxmu = dxhat * cache.inv_std + dvar * 2.0 * cache.xmu / n
    dmu = -dxmu.sum(axis=0)
    dx = dxmu + dmu / n
    return dx, dgamma, dbeta


def backward(trace: ForwardTrace, labels: Sequence[int]) -> Gradients:
    """Exact analytic gradients of the mean cross-entropy for a train-mode trace.

    Assumes the probability floor in :func:`loss` is inactive, which holds
    whenever no true-class probability has saturated below 1e-12.
    """
    if trace.mode != "train":
        raise InvalidTraceError("backward requires a train-mode trace")
    model = trace.model
    rate = model.config.dropout_rate
    y = np.asarray(labels)
    n = trace.probs.shape[0]
    if y.shape[0] != n:
        raise ShapeError(f"{n} prob rows vs {y.shape[0]} labels")

    onehot = np.zeros_like(trace.probs)
    onehot[np.arange(n), y] = 1.0
    dlogits = (trace.probs - onehot) / n

    grads: Gradients = {}
    grads["w_out"] = dlogits.T @ trace.h2
    grads["b_out"] = dlogits.sum(axis=0)
    dh2 = dlogits @ model.w_out

    drelu2 = dh2 if trace.mask2 is None else dh2 * trace.mask2 / (1.0 - rate)
    dy2 = drelu2 * (trace.relu2 > 0.0)
    dpre2, grads["bn2.gamma"], grads["bn2.beta"] = _bn_backward(
        dy2, trace.bn2_cache, model.bn2.gamma
    )
    grads["w2"] = dpre2.T @ trace.h1
    grads["b2"] = dpre2.sum(axis=0)
    dh1 = dpre2 @ model.w2

    drelu1 = dh1 if trace.mask1 is None else dh1 * trace.mask1 / (1.0 - rate)
    dy1 = drelu1 * (trace.relu1 > 0.0)
    dpre1, grads["bn1.gamma"], grads["bn1.beta"] = _bn_backward(
        dy1, trace.bn1_cache, model.bn1.gamma
    )
    grads["w1"] = dpre1.T @ trace.z
    grads["b1"] = dpre1.sum(axis=0)
    dz = dpre1 @ model.w1

    da = dz * trace.x
    du = da * trace.a * (1.0 - trace.a)
    if model.config.attention == "full":
        grads["w_attn"] = du.T @ trace.x
    else:
        grads["w_attn"] = (du * trace.x).sum(axis=0)
    return grads


def _check_arch_match(model_cfg: ModelConfig, cfg: ModelConfig) -> None:
    for name in ("input_dim", "hidden1", "hidden2", "classes", "attention"):
        if getattr(model_cfg, name) != getattr(cfg, name):
            raise ShapeError(f"training config changes architecture field {name!r}")


def train(
    model: Model,
    features: Union[np.ndarray, Sequence[FeatureVector]],
    labels: Sequence[int],
    config: Optional[ModelConfig] = None,
) -> tuple[Model, list[float]]:
    """Full-batch training for ``config.epochs`` epochs; returns a new model
    and the per-epoch loss history.  Deterministic: dropout masks come from
    the model's stored rng state, which advances with the returned model.
    """
    x = as_matrix(features)
    y = np.asarray(labels)
    if y.size == 0:
        raise TrainingError("empty training set")
    if y.shape[0] != x.shape[0]:
        raise ShapeError(f"{x.shape[0]} samples vs {y.shape[0]} labels")
    if not np.isin(y, (0, 1)).all():
        raise TrainingError(f"labels outside {{0, 1}}: {sorted(set(y.tolist()) - {0, 1})}")

    m = model.copy()
    if config is not None and config != m.config:
        _check_arch_match(m.config, config)
        m.config = config
    cfg = m.config

    rng = np.random.default_rng()
    rng.bit_generator.state = m.rng_state

    adam_m = {name: np.zeros_like(p) for name, p in m.parameters()}
    adam_v = {name: np.zeros_like(p) for name, p in m.parameters()}

    history: list[float] = []
    for epoch in range(cfg.epochs):
        trace = forward(m, x, "train", rng=rng)
        history.append(loss(trace.probs, y))
        grads = backward(trace, y)

        if cfg.optimizer == "adam":
            t = epoch + 1
            for name, p in m.parameters():
                g = grads[name]
                adam_m[name] = ADAM_BETA1 * adam_m[name] + (1.0 - ADAM_BETA1) * g
                adam_v[name] = ADAM_BETA2 * adam_v[name] + (1.0 - ADAM_BETA2) * g * g
                m_hat = adam_m[name] / (1.0 - ADAM_BETA1**t)
                v_hat = adam_v[name] / (1.0 - ADAM_BETA2**t)
                p -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        else:
            for name, p in m.parameters():
                p -= cfg.learning_rate * grads[name]

        m.bn1.running_mean = trace.new_running["bn1.running_mean"]
        m.bn1.running_var = trace.new_running["bn1.running_var"]
        m.bn2.running_mean = trace.new_running["bn2.running_mean"]
        m.bn2.running_var = trace.new_running["bn2.running_var"]

    m.rng_state = rng.bit_generator.state
    return m, history


def predict_probs(model: Model, features: Union[np.ndarray, Sequence[FeatureVector]]) -> np.ndarray:
    return forward(model, features, "eval").probs


def gradient_check(config: ModelConfig, seed: int, batch: int = 3, step: float = 1e-4) -> float:
    """Max relative error between analytic and central finite-difference
    gradients over every parameter of a randomly initialized model.

    Dropout is forced off and batchnorm runs in train mode so the loss is a
    deterministic differentiable function of the parameters.  The difference
    quotients are evaluated in extended precision: biases feeding batchnorm
    have an exactly-zero gradient (mean subtraction cancels any shift), and
    float64 cancellation noise at those points would otherwise dominate the
    relative error.
    """
    cfg = replace(config, dropout_rate=0.0)
    model = init_model(cfg)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((batch, cfg.input_dim))
    y = rng.integers(0, cfg.classes, size=batch)

    analytic = backward(forward(model, x, "train"), y)

    ld = model.copy()
    for name, tensor in model.parameters():
        ld.set_parameter(name, tensor.astype(np.longdouble))
    x_ld = x.astype(np.longdouble)
    idx_rows = np.arange(batch)

    def loss_at() -> np.longdouble:
        probs = forward(ld, x_ld, "train").probs
        return -np.log(np.maximum(probs[idx_rows, y], PROB_FLOOR)).mean()

    worst = 0.0
    for name, _ in model.parameters():
        ga = analytic[name]
        tensor = dict(ld.parameters())[name]
        it = np.nditer(tensor, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = tensor[idx]
            tensor[idx] = orig + step
            up = loss_at()
            tensor[idx] = orig - step
            down = loss_at()
            tensor[idx] = orig
            gn = float((up - down) / (2.0 * step))
            rel = abs(ga[idx] - gn) / max(1e-8, abs(ga[idx]) + abs(gn))
            worst = max(worst, rel)
    return worst


def _jsonable_rng_state(state: dict) -> dict:
    def conv(v):
        if isinstance(v, dict):
            return {k: conv(u) for k, u in v.items()}
        if isinstance(v, np.integer):
            return int(v)
        return v

    return conv(state)


def _all_tensors(model: Model) -> list[tuple[str, np.ndarray]]:
    tensors = list(model.parameters())
    tensors.append(("bn1.running_mean", model.bn1.running_mean))
    tensors.append(("bn1.running_var", model.bn1.running_var))
    tensors.append(("bn2.running_mean", model.bn2.running_mean))
    tensors.append(("bn2.running_var", model.bn2.running_var))
    return tensors


def save_model(model: Model, path: Union[str, Path]) -> None:
    """Versioned checkpoint: magic, JSON header line, raw float64 tensor bytes.

    Fully deterministic, so save -> load -> save is byte-identical.
    """
    tensors = _all_tensors(model)
    header = {
        "version": 1,
        "config": asdict(model.config),
        "rng_state": _jsonable_rng_state(model.rng_state),
        "tensors": [{"name": n, "shape": list(t.shape)} for n, t in tensors],
    }
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for _, t in tensors:
            fh.write(np.ascontiguousarray(t, dtype="<f8").tobytes())


def load_model(path: Union[str, Path]) -> Model:
    raw = Path(path).read_bytes()
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not a model checkpoint")
    body = raw[len(CHECKPOINT_MAGIC) :]
    header_line, _, blob = body.partition(b"\n")
    header = json.loads(header_line)
    if header.get("version") != 1:
        raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
    config = ModelConfig(**header["config"])

    offset = 0
    arrays: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(shape)
        arrays[entry["name"]] = arr.astype(np.float64, copy=True)
        offset += count * 8

    def bn(prefix: str) -> BatchNorm:
        return BatchNorm(
            gamma=arrays[f"{prefix}.gamma"],
            beta=arrays[f"{prefix}.beta"],
            running_mean=arrays[f"{prefix}.running_mean"],
            running_var=arrays[f"{prefix}.running_var"],
        )

    return Model(
        w_attn=arrays["w_attn"],
        w1=arrays["w1"],
        b1=arrays["b1"],
        bn1=bn("bn1"),
        w2=arrays["w2"],
        b2=arrays["b2"],
        bn2=bn("bn2"),
        w_out=arrays["w_out"],
        b_out=arrays["b_out"],
        config=config,
        rng_state=header["rng_state"],
    )

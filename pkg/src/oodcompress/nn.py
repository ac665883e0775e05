"""Minimal deterministic neural-network engine on numpy arrays.

Tensors are plain float64 ndarrays, batch-first. A :class:`Network` is an
ordered stack of :class:`LayerSpec` entries plus a per-layer parameter store;
``forward`` can record every intermediate activation so that channel scoring
and backprop reuse one pass. Layer kinds: ``dense``, ``conv2d``, ``relu``,
``max-pool``, ``flatten``, ``softmax-head`` (a dense classification head whose
probabilities are produced downstream by :func:`softmax`).

All backward passes are analytic and are validated against central finite
differences in the test suite. Every public entry point is deterministic:
identical (spec, input, seed) triples give bitwise-identical results.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NumericError, ShapeError

EPS = 1e-12  # lower clamp for probabilities inside log terms

PARAMETRIC_KINDS = ("dense", "conv2d", "softmax-head")
PRUNABLE_KINDS = ("dense", "conv2d")
LAYER_KINDS = ("dense", "conv2d", "relu", "max-pool", "flatten", "softmax-head")


# ---------------------------------------------------------------------------
# Layer specifications
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a feed-forward stack; which fields matter depends on kind."""

    kind: str
    in_features: int = 0
    out_features: int = 0
    in_channels: int = 0
    out_channels: int = 0
    kernel_size: int = 0
    stride: int = 1
    pool_size: int = 0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise DomainError(f"unknown layer kind {self.kind!r}")


def dense(in_features: int, out_features: int) -> LayerSpec:
    """Affine layer, input [n, in_features] -> [n, out_features]."""
    return LayerSpec("dense", in_features=in_features, out_features=out_features)


def conv2d(in_channels: int, out_channels: int, kernel_size: int, stride: int = 1) -> LayerSpec:
    """Valid (unpadded) 2-D convolution, input [n, C, H, W]."""
    return LayerSpec(
        "conv2d",
        in_channels=in_channels,
        out_channels=out_channels,
        kernel_size=kernel_size,
        stride=stride,
    )


def relu() -> LayerSpec:
    """Elementwise max(0, x)."""
    return LayerSpec("relu")


def max_pool(pool_size: int) -> LayerSpec:
    """Non-overlapping max pooling with window = stride = pool_size."""
    return LayerSpec("max-pool", pool_size=pool_size)


def flatten() -> LayerSpec:
    """Collapse [n, C, H, W] (or any trailing dims) to [n, -1], C order."""
    return LayerSpec("flatten")


def softmax_head(in_features: int, classes: int) -> LayerSpec:
    """Dense classification head producing one logit per class; never pruned."""
    return LayerSpec("softmax-head", in_features=in_features, out_features=classes)


def _output_shape(spec: LayerSpec, in_shape: tuple, index: int) -> tuple:
    """Per-sample output shape of one layer, raising ShapeError on mismatch."""
    kind = spec.kind
    if kind in ("dense", "softmax-head"):
        if len(in_shape) != 1 or in_shape[0] != spec.in_features:
            raise ShapeError(
                f"layer {index} ({kind}): expects [n, {spec.in_features}], got per-sample shape {in_shape}"
            )
        return (spec.out_features,)
    if kind == "conv2d":
        if len(in_shape) != 3 or in_shape[0] != spec.in_channels:
            raise ShapeError(
                f"layer {index} (conv2d): expects [n, {spec.in_channels}, H, W], got per-sample shape {in_shape}"
            )
        _, h, w = in_shape
        k, s = spec.kernel_size, spec.stride
        if h < k or w < k:
            raise ShapeError(f"layer {index} (conv2d): kernel {k} larger than input {h}x{w}")
        return (spec.out_channels, (h - k) // s + 1, (w - k) // s + 1)
    if kind == "relu":
        return in_shape
    if kind == "max-pool":
        if len(in_shape) != 3:
            raise ShapeError(f"layer {index} (max-pool): expects [n, C, H, W], got per-sample shape {in_shape}")
        c, h, w = in_shape
        k = spec.pool_size
        if h < k or w < k:
            raise ShapeError(f"layer {index} (max-pool): window {k} larger than input {h}x{w}")
        return (c, (h - k) // k + 1, (w - k) // k + 1)
    if kind == "flatten":
        return (int(np.prod(in_shape)),)
    raise DomainError(f"unknown layer kind {kind!r}")


# ---------------------------------------------------------------------------
# Parameter initialization
# ---------------------------------------------------------------------------


def _init_params(spec: LayerSpec, rng: np.random.Generator) -> dict:
    """Fan-in-scaled uniform weights, zero biases (seeded, deterministic)."""
    if spec.kind in ("dense", "softmax-head"):
        limit = 1.0 / np.sqrt(spec.in_features)
        return {
            "W": rng.uniform(-limit, limit, (spec.in_features, spec.out_features)),
            "b": np.zeros(spec.out_features),
        }
    if spec.kind == "conv2d":
        fan_in = spec.in_channels * spec.kernel_size * spec.kernel_size
        limit = 1.0 / np.sqrt(fan_in)
        shape = (spec.out_channels, spec.in_channels, spec.kernel_size, spec.kernel_size)
        return {"W": rng.uniform(-limit, limit, shape), "b": np.zeros(spec.out_channels)}
    return {}


# ---------------------------------------------------------------------------
# Forward / backward kernels
# ---------------------------------------------------------------------------


def _conv_windows(x: np.ndarray, k: int, s: int) -> np.ndarray:
    """Sliding windows of x [n, C, H, W] -> [n, C, Ho, Wo, k, k]."""
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    return win[:, :, ::s, ::s, :, :]


def _conv_forward(x, W, b, stride):
    win = _conv_windows(x, W.shape[2], stride)
    return np.einsum("nchwij,fcij->nfhw", win, W, optimize=True) + b[None, :, None, None]


def _conv_backward(x, W, stride, dout):
    k = W.shape[2]
    win = _conv_windows(x, k, stride)
    dW = np.einsum("nchwij,nfhw->fcij", win, dout, optimize=True)
    db = dout.sum(axis=(0, 2, 3))
    dx = np.zeros_like(x)
    ho, wo = dout.shape[2], dout.shape[3]
    for i in range(k):
        for j in range(k):
            dx[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += np.einsum(
                "nfhw,fc->nchw", dout, W[:, :, i, j], optimize=True
            )
    return dW, db, dx


def _pool_split(x: np.ndarray, k: int):
    """Windows of x [n, C, H, W] as [n, C, Ho, Wo, k*k] (trailing rows dropped)."""
    n, c, h, w = x.shape
    ho, wo = (h - k) // k + 1, (w - k) // k + 1
    xs = x[:, :, : ho * k, : wo * k]
    win = xs.reshape(n, c, ho, k, wo, k).transpose(0, 1, 2, 4, 3, 5)
    return win.reshape(n, c, ho, wo, k * k), ho, wo


def _pool_forward(x, k):
    win, _, _ = _pool_split(x, k)
    return win.max(axis=-1)


def _pool_backward(x, k, dout):
    win, ho, wo = _pool_split(x, k)
    idx = win.argmax(axis=-1)  # first max wins on ties
    dwin = np.zeros_like(win)
    np.put_along_axis(dwin, idx[..., None], dout[..., None], axis=-1)
    n, c = x.shape[0], x.shape[1]
    dx = np.zeros_like(x)
    block = dwin.reshape(n, c, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho * k, wo * k)
    dx[:, :, : ho * k, : wo * k] = block
    return dx


# ---------------------------------------------------------------------------
# Network
# ---------------------------------------------------------------------------


@dataclass
class Trace:
    """Activations recorded by a forward pass: activations[0] is the input,
    activations[i+1] the output of layer i; logits aliases the last entry."""

    activations: list

    @property
    def logits(self) -> np.ndarray:
        return self.activations[-1]


class Network:
    """Ordered layer stack with a parameter store and a role tag.

    Args:
        specs: layer list; adjacent shapes must compose for `input_shape`.
        input_shape: per-sample input shape, e.g. (16,) or (1, 8, 8).
        seed: parameter-initialization seed.
        role: metadata tag, "teacher" or "student".
        params: optional pre-built parameter store (bypasses initialization).
    """

    def __init__(self, specs, input_shape, seed: int = 0, role: str = "teacher", params=None):
        self.specs = tuple(specs)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.role = role
        shapes = []
        shape = self.input_shape
        for i, spec in enumerate(self.specs):
            shape = _output_shape(spec, shape, i)
            shapes.append(shape)
        self.shapes = tuple(shapes)  # per-layer output shapes, sans batch dim
        if params is not None:
            self.params = [{k: np.array(v, dtype=float) for k, v in p.items()} for p in params]
            for i, spec in enumerate(self.specs):
                expected = _init_params(spec, np.random.default_rng(0))
                for name, ref in expected.items():
                    if self.params[i][name].shape != ref.shape:
                        raise ShapeError(
                            f"layer {i} ({spec.kind}): parameter {name} has shape "
                            f"{self.params[i][name].shape}, expected {ref.shape}"
                        )
        else:
            rng = np.random.default_rng(seed)
            self.params = [_init_params(spec, rng) for spec in self.specs]

    @property
    def num_classes(self) -> int:
        return int(self.shapes[-1][0])

    def param_count(self) -> int:
        return int(sum(a.size for p in self.params for a in p.values()))

    def copy(self, role: str | None = None) -> "Network":
        return Network(self.specs, self.input_shape, role=role or self.role, params=self.params)

    def forward(self, batch: np.ndarray, record: bool = False):
        """Run the stack on a batch; returns logits, or (logits, Trace).

        Raises ShapeError (naming the layer) on mismatched shapes and
        NumericError if the logits come out non-finite.
        """
        x = np.asarray(batch, dtype=float)
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"input: expected per-sample shape {self.input_shape}, got {x.shape[1:]}")
        acts = [x]
        for i, spec in enumerate(self.specs):
            p = self.params[i]
            if spec.kind in ("dense", "softmax-head"):
                x = x @ p["W"] + p["b"]
            elif spec.kind == "conv2d":
                x = _conv_forward(x, p["W"], p["b"], spec.stride)
            elif spec.kind == "relu":
                x = np.maximum(x, 0.0)
            elif spec.kind == "max-pool":
                x = _pool_forward(x, spec.pool_size)
            elif spec.kind == "flatten":
                x = x.reshape(x.shape[0], -1)
            acts.append(x)
        if not np.all(np.isfinite(x)):
            raise NumericError("forward produced non-finite logits")
        if record:
            return x, Trace(acts)
        return x

    def backward(self, trace: Trace | None, dlogits: np.ndarray) -> list:
        """Gradients of a scalar loss w.r.t. every parameter, given dloss/dlogits.

        Requires the Trace recorded by ``forward(..., record=True)``.
        """
        if trace is None:
            raise RuntimeError("backward requires the trace recorded by forward(record=True)")
        grads: list[dict] = [{} for _ in self.specs]
        d = np.asarray(dlogits, dtype=float)
        for i in reversed(range(len(self.specs))):
            spec = self.specs[i]
            x = trace.activations[i]
            p = self.params[i]
            if spec.kind in ("dense", "softmax-head"):
                grads[i] = {"W": x.T @ d, "b": d.sum(axis=0)}
                d = d @ p["W"].T
            elif spec.kind == "conv2d":
                dW, db, d = _conv_backward(x, p["W"], spec.stride, d)
                grads[i] = {"W": dW, "b": db}
            elif spec.kind == "relu":
                d = d * (x > 0)
            elif spec.kind == "max-pool":
                d = _pool_backward(x, spec.pool_size, d)
            elif spec.kind == "flatten":
                d = d.reshape(x.shape)
        return grads

    # -- serialization ------------------------------------------------------

    def save(self, path) -> None:
        meta = {
            "specs": [dataclasses.asdict(s) for s in self.specs],
            "input_shape": list(self.input_shape),
            "role": self.role,
        }
        arrays = {}
        for i, p in enumerate(self.params):
            for name, a in p.items():
                arrays[f"p{i}_{name}"] = a
        np.savez(path, meta=np.array(json.dumps(meta)), **arrays)

    @classmethod
    def load(cls, path) -> "Network":
        data = np.load(path)
        meta = json.loads(str(data["meta"].item()))
        specs = [LayerSpec(**d) for d in meta["specs"]]
        params = []
        for i, spec in enumerate(specs):
            if spec.kind in PARAMETRIC_KINDS:
                params.append({"W": data[f"p{i}_W"], "b": data[f"p{i}_b"]})
            else:
                params.append({})
        return cls(specs, meta["input_shape"], role=meta["role"], params=params)


# ---------------------------------------------------------------------------
# Probabilities and losses
# ---------------------------------------------------------------------------


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Max-shifted softmax; rows sum to 1 and never overflow for finite input."""
    z = np.asarray(logits, dtype=float)
    if not np.all(np.isfinite(z)):
        raise DomainError("softmax requires finite logits")
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def cross_entropy(probabilities: np.ndarray, label: int) -> float:
    """-log p[label] with p clamped to [EPS, 1]."""
    p = np.asarray(probabilities, dtype=float)
    if p.ndim != 1:
        raise ShapeError(f"cross_entropy expects a probability vector, got shape {p.shape}")
    if not 0 <= label < p.shape[0]:
        raise IndexError(f"label {label} out of range for {p.shape[0]} classes")
    return float(-np.log(np.clip(p[label], EPS, 1.0)))


def kl_divergence(p_teacher: np.ndarray, p_student: np.ndarray) -> float:
    """sum p_t * log(p_t / p_s), both arguments clamped below at EPS."""
    p = np.asarray(p_teacher, dtype=float)
    q = np.asarray(p_student, dtype=float)
    if p.shape != q.shape or p.ndim != 1:
        raise ShapeError(f"kl_divergence expects equal-length vectors, got {p.shape} and {q.shape}")
    pc = np.clip(p, EPS, None)
    qc = np.clip(q, EPS, None)
    return float(np.sum(pc * (np.log(pc) - np.log(qc))))


def ce_loss_and_grad(logits: np.ndarray, labels: np.ndarray, weights: np.ndarray | None = None):
    """Mean (optionally per-sample weighted) cross-entropy over a logit batch.

    Returns (loss, dloss/dlogits); the gradient carries the 1/n factor.
    """
    z = np.asarray(logits, dtype=float)
    y = np.asarray(labels)
    n = z.shape[0]
    p = softmax(z)
    picked = np.clip(p[np.arange(n), y], EPS, 1.0)
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    loss = float(np.mean(w * -np.log(picked)))
    dlogits = p.copy()
    dlogits[np.arange(n), y] -= 1.0
    dlogits *= (w / n)[:, None]
    return loss, dlogits


def kd_loss_and_grad(teacher_logits: np.ndarray, student_logits: np.ndarray, temperature: float = 1.0):
    """Mean temperature-softened KL(teacher || student) over a batch, scaled by T^2.

    Returns (loss, dloss/dstudent_logits). The teacher side is a constant.
    """
    if temperature <= 0:
        raise DomainError("temperature must be positive")
    t = float(temperature)
    pt = softmax(np.asarray(teacher_logits, dtype=float) / t)
    ps = softmax(np.asarray(student_logits, dtype=float) / t)
    n = pt.shape[0]
    if ps.shape != pt.shape:
        raise ShapeError(f"teacher/student logits differ in shape: {pt.shape} vs {ps.shape}")
    ptc = np.clip(pt, EPS, None)
    psc = np.clip(ps, EPS, None)
    loss = float(t * t * np.mean(np.sum(ptc * (np.log(ptc) - np.log(psc)), axis=1)))
    dlogits = t * (ps - pt) / n
    return loss, dlogits


# ---------------------------------------------------------------------------
# Optimizer and training loop
# ---------------------------------------------------------------------------


class SgdOptimizer:
    """SGD with momentum: v <- mu*v - lr*g; theta <- theta + v.

    Velocity buffers shape-match the network's parameters. A step with any
    non-finite gradient is refused (NumericError) before touching parameters.
    """

    def __init__(self, net: Network, learning_rate: float, momentum: float = 0.9):
        if learning_rate < 0:
            raise DomainError("learning rate must be nonnegative")
        if not 0 <= momentum < 1:
            raise DomainError("momentum must lie in [0, 1)")
        self.learning_rate = float(learning_rate)
        self.momentum = float(momentum)
        self.velocities = [{k: np.zeros_like(v) for k, v in p.items()} for p in net.params]

    def step(self, net: Network, grads: list) -> None:
        for i, g in enumerate(grads):
            for name, arr in g.items():
                if not np.all(np.isfinite(arr)):
                    raise NumericError(f"non-finite gradient at layer {i} parameter {name}; step refused")
        for i, g in enumerate(grads):
            for name, arr in g.items():
                v = self.velocities[i][name]
                v *= self.momentum
                v -= self.learning_rate * arr
                net.params[i][name] += v


def train_classifier(
    net: Network,
    features: np.ndarray,
    labels: np.ndarray,
    epochs: int,
    batch_size: int,
    learning_rate: float,
    momentum: float = 0.9,
    seed: int = 0,
) -> list:
    """Mini-batch cross-entropy training, in place; returns per-epoch mean loss."""
    rng = np.random.default_rng(seed)
    opt = SgdOptimizer(net, learning_rate, momentum)
    n = features.shape[0]
    history = []
    for _ in range(epochs):
        perm = rng.permutation(n)
        losses = []
        for start in range(0, n, batch_size):
            idx = perm[start : start + batch_size]
            logits, trace = net.forward(features[idx], record=True)
            loss, dlogits = ce_loss_and_grad(logits, labels[idx])
            opt.step(net, net.backward(trace, dlogits))
            losses.append(loss)
        history.append(float(np.mean(losses)))
    return history

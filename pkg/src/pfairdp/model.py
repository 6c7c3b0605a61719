"""Dense ReLU/sigmoid binary classifiers with hand-written backprop.

Parameters live in one flat float64 vector; ``Mlp.layers`` holds
``(W, b)`` views into it, with ``W`` of shape ``(fan_in, fan_out)``. The
flat order is ``W0, b0, W1, b1, ...`` (row-major), which is also the
column order of :func:`per_sample_gradients`.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset
from .privacy import DpParams, PrivacySpend, compute_epsilon

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    """Raised when training produces a non-finite loss or parameters."""


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple[int, ...]
    init_seed: int = 0

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 3:
            raise ValueError("need an input layer, at least one hidden layer and an output layer")
        if sizes[-1] != 1:
            raise ValueError("final layer width must be 1")
        if min(sizes) < 1:
            raise ValueError("layer sizes must be positive")
        object.__setattr__(self, "layer_sizes", sizes)

    @classmethod
    def adult_6_6_1(cls, n_inputs: int, init_seed: int = 0) -> "MlpSpec":
        return cls((n_inputs, 6, 6, 1), init_seed)

    @classmethod
    def dense_30_30_1(cls, n_inputs: int, init_seed: int = 0) -> "MlpSpec":
        return cls((n_inputs, 30, 30, 1), init_seed)


@dataclass(frozen=True)
class TrainSpec:
    epochs: int = 20
    batch_size: int = 20
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    dp: DpParams | None = None
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


class Mlp:
    def __init__(self, spec: MlpSpec, params: np.ndarray | None = None):
        self.spec = spec
        sizes = spec.layer_sizes
        self.shapes = [(sizes[i], sizes[i + 1]) for i in range(len(sizes) - 1)]
        self.n_params = sum(a * b + b for a, b in self.shapes)
        if params is None:
            params = self._init_params()
        params = np.array(params, dtype=np.float64)
        if params.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {params.shape}")
        self.params = params
        self.layers = self._views(self.params)

    def _init_params(self) -> np.ndarray:
        rng = np.random.default_rng(self.spec.init_seed)
        chunks = []
        for fan_in, fan_out in self.shapes:
            bound = 1.0 / math.sqrt(fan_in)
            chunks.append(rng.uniform(-bound, bound, fan_in * fan_out))
            chunks.append(rng.uniform(-bound, bound, fan_out))
        return np.concatenate(chunks)

    def _views(self, flat: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        views = []
        offset = 0
        for fan_in, fan_out in self.shapes:
            w = flat[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
            offset += fan_in * fan_out
            b = flat[offset : offset + fan_out]
            offset += fan_out
            views.append((w, b))
        return views

    def set_params(self, params: np.ndarray) -> None:
        self.params[:] = params

    def copy(self) -> "Mlp":
        return Mlp(self.spec, self.params.copy())

    # -- forward / backward ------------------------------------------------

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[1] != self.spec.layer_sizes[0]:
            raise ValueError(
                f"feature width {x.shape[1]} does not match input layer {self.spec.layer_sizes[0]}"
            )
        return x

    def logits(self, x: np.ndarray) -> np.ndarray:
        h = self._check_input(x)
        last = len(self.layers) - 1
        for i, (w, b) in enumerate(self.layers):
            h = h @ w + b
            if i < last:
                h = np.maximum(h, 0.0)
        return h[:, 0]

    def forward(self, x: np.ndarray) -> np.ndarray:
        return _sigmoid(self.logits(x))

    def _forward_cache(self, x: np.ndarray):
        acts = [x]
        h = x
        last = len(self.layers) - 1
        for i, (w, b) in enumerate(self.layers):
            h = h @ w + b
            if i < last:
                h = np.maximum(h, 0.0)
            acts.append(h)
        return acts

    def _deltas(self, x: np.ndarray, y: np.ndarray):
        """Layer inputs and per-record dLoss/dPreactivation for every layer."""
        acts = self._forward_cache(x)
        z = acts[-1][:, 0]
        delta = (_sigmoid(z) - y)[:, None]
        deltas = [delta]
        for i in range(len(self.layers) - 1, 0, -1):
            w = self.layers[i][0]
            delta = (delta @ w.T) * (acts[i] > 0)
            deltas.append(delta)
        deltas.reverse()
        return acts[:-1], deltas, z

    def loss(self, x: np.ndarray, y: np.ndarray) -> float:
        z = self.logits(x)
        return float(np.mean(bce_with_logits(z, np.asarray(y, dtype=np.float64))))

    def batch_gradient(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Gradient of the mean BCE loss over the batch."""
        x = self._check_input(x)
        inputs, deltas, _ = self._deltas(x, np.asarray(y, dtype=np.float64))
        grad = np.empty(self.n_params)
        offset = 0
        for a, d in zip(inputs, deltas):
            gw = a.T @ d
            gb = d.sum(axis=0)
            offset = _put(grad, offset, gw, gb)
        return grad / x.shape[0]

    def clipped_gradient_sum(
        self, x: np.ndarray, y: np.ndarray, clipping_norm: float
    ) -> tuple[np.ndarray, np.ndarray]:
        """Sum of per-record gradients each clipped to ``clipping_norm``.

        Uses ``||outer(a, d)|| = ||a|| * ||d||`` so per-record gradients
        are never materialised. Returns ``(sum, per_record_norms)``.
        """
        inputs, deltas, _ = self._deltas(x, np.asarray(y, dtype=np.float64))
        sq = np.zeros(x.shape[0])
        for a, d in zip(inputs, deltas):
            d_sq = np.einsum("ij,ij->i", d, d)
            sq += d_sq * (np.einsum("ij,ij->i", a, a) + 1.0)
        norms = np.sqrt(sq)
        if math.isinf(clipping_norm):
            scale = np.ones_like(norms)
        else:
            scale = np.minimum(1.0, clipping_norm / np.maximum(norms, 1e-300))
        total = np.empty(self.n_params)
        offset = 0
        for a, d in zip(inputs, deltas):
            ds = d * scale[:, None]
            offset = _put(total, offset, a.T @ ds, ds.sum(axis=0))
        return total, norms


def _put(flat: np.ndarray, offset: int, gw: np.ndarray, gb: np.ndarray) -> int:
    n = gw.size
    flat[offset : offset + n] = gw.ravel()
    offset += n
    flat[offset : offset + gb.size] = gb
    return offset + gb.size


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def bce_with_logits(z: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-record binary cross-entropy computed from logits."""
    return np.logaddexp(0.0, z) - y * z


def forward(model: Mlp, features: np.ndarray) -> np.ndarray:
    return model.forward(features)


def per_sample_gradients(model: Mlp, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``(batch, n_params)`` matrix of per-record BCE loss gradients."""
    x = model._check_input(x)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    if y.shape != (x.shape[0],):
        raise ValueError("labels do not match the batch")
    inputs, deltas, _ = model._deltas(x, y)
    blocks = []
    for a, d in zip(inputs, deltas):
        blocks.append(np.einsum("bi,bj->bij", a, d).reshape(x.shape[0], -1))
        blocks.append(d)
    return np.hstack(blocks)


# ---------------------------------------------------------------------------
# Optimizers


class Sgd:
    def __init__(self, n_params: int):
        self.n_params = n_params

    def step(self, params: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
        if grad.shape != params.shape or params.shape != (self.n_params,):
            raise ValueError("gradient / parameter shape mismatch")
        return params - lr * grad


class Adam:
    def __init__(self, n_params: int, beta1=0.9, beta2=0.999, eps=1e-8):
        self.n_params = n_params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
        if grad.shape != params.shape or params.shape != (self.n_params,):
            raise ValueError("gradient / parameter shape mismatch")
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        return params - lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(name: str, n_params: int):
    if name == "sgd":
        return Sgd(n_params)
    if name == "adam":
        return Adam(n_params)
    raise ValueError(f"unknown optimizer {name!r}")


def optimizer_step(state, params: np.ndarray, grads: np.ndarray, learning_rate: float) -> np.ndarray:
    return state.step(np.asarray(params, dtype=np.float64), np.asarray(grads, dtype=np.float64), learning_rate)


# ---------------------------------------------------------------------------
# Training


@dataclass
class TrainedModel:
    model: Mlp
    train_spec: TrainSpec
    loss_history: list[float] = field(default_factory=list)
    privacy: PrivacySpend | None = None
    steps: int = 0

    @property
    def weights(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return self.model.layers

    def predict_scores(self, features: np.ndarray) -> np.ndarray:
        return self.model.forward(features)


def steps_per_epoch(n: int, batch_size: int) -> int:
    return math.ceil(n / batch_size)


def train(data: Dataset, mlp: MlpSpec, spec: TrainSpec, *, reference: bool = False) -> TrainedModel:
    """Minibatch training with optional DP (clip, noise, then step).

    Each epoch reshuffles the records and visits every minibatch, keeping
    the last short one. With ``spec.dp`` set, the privacy spend is the RDP
    accountant's value for ``epochs * ceil(n / batch_size)`` steps at
    sampling rate ``batch_size / n``.

    ``reference=True`` runs the pure-numpy loop instead of the compiled
    epoch kernel; both consume the same random streams.

    Raises:
        TrainingError: if the loss or parameters become non-finite.
    """
    n = len(data)
    if n == 0:
        raise ValueError("empty training set")
    if spec.batch_size > n:
        raise ValueError("batch_size exceeds the training-set size")
    model = Mlp(mlp)
    x = np.ascontiguousarray(data.features)
    y = data.labels.astype(np.float64)
    model._check_input(x[:1])
    opt = make_optimizer(spec.optimizer, model.n_params)
    shuffle_seq, noise_seq = np.random.SeedSequence(spec.seed).spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    noise_rng = np.random.default_rng(noise_seq)
    dp = spec.dp
    if dp is not None:
        dp.check_dataset_size(n)
    sigma_c = 0.0 if dp is None else dp.noise_multiplier * dp.clipping_norm
    use_clip = dp is not None and not math.isinf(dp.clipping_norm)
    per_epoch = steps_per_epoch(n, spec.batch_size)

    history = []
    steps = 0
    for epoch in range(spec.epochs):
        perm = shuffle_rng.permutation(n)
        if sigma_c > 0:
            noise = noise_rng.normal(0.0, sigma_c, size=(per_epoch, model.n_params))
        else:
            noise = np.zeros((1, 1))
        if reference:
            _reference_epoch(model, opt, x, y, perm, spec, dp, noise if sigma_c > 0 else None)
        else:
            _compiled_epoch(model, opt, x, y, perm, spec, use_clip, dp, noise, sigma_c > 0)
        steps += per_epoch
        with np.errstate(all="ignore"):
            loss = model.loss(x, y)
        if not np.isfinite(loss) or not np.all(np.isfinite(model.params)):
            raise TrainingError(f"non-finite loss at epoch {epoch}")
        history.append(loss)

    privacy = None
    if dp is not None:
        q = spec.batch_size / n
        if dp.noise_multiplier > 0:
            privacy = compute_epsilon(dp.noise_multiplier, q, steps, dp.delta)
        else:
            privacy = PrivacySpend(float("inf"), dp.delta, steps, q, 0.0, None)
    return TrainedModel(model=model, train_spec=spec, loss_history=history, privacy=privacy, steps=steps)


def _reference_epoch(model, opt, x, y, perm, spec, dp, noise):
    for step, start in enumerate(range(0, perm.size, spec.batch_size)):
        idx = perm[start : start + spec.batch_size]
        xb, yb = x[idx], y[idx]
        if dp is None:
            grad = model.batch_gradient(xb, yb)
        else:
            total, _ = model.clipped_gradient_sum(xb, yb, dp.clipping_norm)
            if noise is not None:
                total += noise[step]
            grad = total / idx.size
        model.set_params(opt.step(model.params, grad, spec.learning_rate))


def _layout(model: Mlp):
    fan_in = np.array([a for a, _ in model.shapes], dtype=np.int64)
    fan_out = np.array([b for _, b in model.shapes], dtype=np.int64)
    w_off, b_off = [], []
    offset = 0
    for a, b in model.shapes:
        w_off.append(offset)
        b_off.append(offset + a * b)
        offset += a * b + b
    return fan_in, fan_out, np.array(w_off, dtype=np.int64), np.array(b_off, dtype=np.int64)


def _compiled_epoch(model, opt, x, y, perm, spec, use_clip, dp, noise, use_noise):
    from ._kernels import run_epoch

    fan_in, fan_out, w_off, b_off = _layout(model)
    adam = isinstance(opt, Adam)
    m = opt.m if adam else np.zeros(1)
    v = opt.v if adam else np.zeros(1)
    t0 = opt.t if adam else 0
    beta1, beta2, eps = (opt.beta1, opt.beta2, opt.eps) if adam else (0.9, 0.999, 1e-8)
    t = run_epoch(
        model.params, fan_in, fan_out, w_off, b_off, x, y, perm.astype(np.int64),
        spec.batch_size, float(dp.clipping_norm) if use_clip else 1.0, use_clip,
        noise, use_noise, adam, float(spec.learning_rate), m, v, t0, beta1, beta2, eps,
    )
    if adam:
        opt.t = int(t)


def evaluate_accuracy(model, data: Dataset, threshold: float = 0.5) -> float:
    """Fraction of records whose ``score >= threshold`` decision matches the label."""
    if len(data) == 0:
        raise ValueError("empty dataset")
    net = model.model if isinstance(model, TrainedModel) else model
    preds = (net.forward(data.features) >= threshold).astype(np.int8)
    return float(np.mean(preds == data.labels))


# ---------------------------------------------------------------------------
# Weight dump: "# pfairdp-weights" line, "shapes: 102x6 6 6x6 6 6x1 1", then one value per line


def save_weights(model: Mlp, path: str | Path) -> None:
    shapes = []
    for fan_in, fan_out in model.shapes:
        shapes += [f"{fan_in}x{fan_out}", f"{fan_out}"]
    lines = ["# pfairdp-weights", "shapes: " + " ".join(shapes)]
    lines += [repr(float(v)) for v in model.params]
    Path(path).write_text("\n".join(lines) + "\n")


def load_weights(path: str | Path, init_seed: int = 0) -> Mlp:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != "# pfairdp-weights" or not lines[1].startswith("shapes: "):
        raise ValueError(f"{path}: not a weight dump")
    shapes = lines[1].split()[1:]
    sizes = [int(shapes[0].split("x")[0])] + [int(s.split("x")[1]) for s in shapes[0::2]]
    params = np.array([float(v) for v in lines[2:]])
    return Mlp(MlpSpec(tuple(sizes), init_seed), params)

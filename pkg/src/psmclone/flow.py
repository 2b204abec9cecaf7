"""Affine-coupling flow density model for one executable.

The flow ``f`` maps an encoded observation ``x`` to a latent ``z`` that is
trained to be isotropic unit Gaussian, so that

    log p(x) = log N(f(x); 0, I) + log |det df/dx|.

Each coupling layer keeps the dimensions selected by its mask and moves the
others::

    z_keep = x_keep
    z_move = x_move * exp(s(x_keep)) + t(x_keep)

``s`` and ``t`` are one-hidden-layer tanh networks. The scale is squashed to
``s_max * tanh(raw / s_max)`` so every layer's log-determinant is bounded.
Gradients (with respect to parameters and inputs) are derived by hand in
:meth:`FlowModel.backward`; no autodiff framework is involved.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .encoding import ColumnEncoder
from .errors import (
    AllDimsConstrained,
    ModelFormatError,
    NonFiniteInput,
    NonFiniteLoss,
    TooFewRows,
)
from .seeding import derive_seed
from .trace import ExecutableSchema

LOG_2PI = math.log(2.0 * math.pi)
FORMAT = "psmclone-flow/1"


@dataclass(frozen=True)
class FlowConfig:
    layers: int = 4
    hidden_width: int = 16
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 5e-3
    s_max: float = 1.5

    def __post_init__(self):
        if self.layers < 1 or self.hidden_width < 1 or self.epochs < 0 or self.batch_size < 1:
            raise ValueError(f"invalid flow configuration {self}")
        if not (self.learning_rate > 0 and self.s_max > 0):
            raise ValueError(f"invalid flow configuration {self}")


@dataclass(frozen=True)
class ConditionalOptions:
    steps: int = 100
    step_size: float = 0.05
    restarts: int = 3


class Origin(enum.Enum):
    MARGINAL = "marginal"
    CONDITIONAL = "conditional"


@dataclass(frozen=True)
class SampleMatrix:
    values: np.ndarray
    origin: Origin

    def __len__(self) -> int:
        return self.values.shape[0]


def alternating_masks(dim: int, layers: int) -> list[np.ndarray]:
    """Parity masks, flipped every layer; both halves are non-empty for dim >= 2."""
    if dim < 2:
        raise ValueError("coupling layers need at least two dimensions")
    base = np.arange(dim) % 2 == 0
    return [base if k % 2 == 0 else ~base for k in range(layers)]


def _layer_shapes(n_keep: int, n_move: int, width: int) -> list[tuple[str, tuple[int, ...]]]:
    shapes = []
    for net in ("s", "t"):
        shapes += [
            (f"{net}_w1", (n_keep, width)),
            (f"{net}_b1", (width,)),
            (f"{net}_w2", (width, n_move)),
            (f"{net}_b2", (n_move,)),
        ]
    return shapes


class CouplingLayer:
    """One affine coupling layer; its parameters are views into the flow's flat vector."""

    def __init__(self, mask: np.ndarray, width: int):
        mask = np.asarray(mask, dtype=bool)
        if mask.all() or not mask.any():
            raise ValueError("coupling mask needs both kept and moved dimensions")
        self.mask = mask
        self.keep = np.flatnonzero(mask)
        self.move = np.flatnonzero(~mask)
        self.shapes = _layer_shapes(len(self.keep), len(self.move), width)
        self.size = sum(int(np.prod(s)) for _, s in self.shapes)

    def bind(self, flat: np.ndarray) -> dict[str, np.ndarray]:
        views, pos = {}, 0
        for name, shape in self.shapes:
            n = int(np.prod(shape))
            views[name] = flat[pos : pos + n].reshape(shape)
            pos += n
        return views


class FlowModel:
    """Invertible map from encoded observations to a standard-normal latent."""

    def __init__(
        self,
        dim: int,
        config: FlowConfig = FlowConfig(),
        params: np.ndarray | None = None,
        schema: ExecutableSchema | None = None,
        encoders: tuple[ColumnEncoder, ...] = (),
        padded: bool = False,
        train_log: dict | None = None,
    ):
        self.dim = int(dim)
        self.config = config
        self.masks = alternating_masks(self.dim, config.layers)
        self.layers = [CouplingLayer(m, config.hidden_width) for m in self.masks]
        self.n_params = sum(layer.size for layer in self.layers)
        if params is None:
            params = np.zeros(self.n_params)
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {params.shape}")
        self.params = params.copy()
        self.schema = schema
        self.encoders = tuple(encoders)
        self.padded = bool(padded)
        self.train_log = dict(train_log or {})
        self._bind()

    def _bind(self):
        self._views, pos = [], 0
        for layer in self.layers:
            self._views.append(layer.bind(self.params[pos : pos + layer.size]))
            pos += layer.size

    def _grad_views(self, flat: np.ndarray) -> list[dict[str, np.ndarray]]:
        out, pos = [], 0
        for layer in self.layers:
            out.append(layer.bind(flat[pos : pos + layer.size]))
            pos += layer.size
        return out

    @property
    def modeled_dims(self) -> int:
        return self.dim - (1 if self.padded else 0)

    def copy(self) -> "FlowModel":
        return FlowModel(
            self.dim, self.config, self.params, self.schema, self.encoders, self.padded, self.train_log
        )

    # -- evaluation -------------------------------------------------------

    def _check(self, x) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        x2 = x[None, :] if single else x
        if x2.ndim != 2 or x2.shape[1] != self.dim:
            raise ValueError(f"expected rows of length {self.dim}, got shape {x.shape}")
        if not np.all(np.isfinite(x2)):
            raise NonFiniteInput("flow input contains NaN or infinity")
        return x2, single

    def _forward(self, x: np.ndarray, keep_cache: bool = False):
        s_max = self.config.s_max
        z = x.copy()
        log_det = np.zeros(x.shape[0])
        caches = []
        for layer, p in zip(self.layers, self._views):
            xa, xb = z[:, layer.keep], z[:, layer.move]
            hs = np.tanh(xa @ p["s_w1"] + p["s_b1"])
            u = np.tanh((hs @ p["s_w2"] + p["s_b2"]) / s_max)
            s = s_max * u
            ht = np.tanh(xa @ p["t_w1"] + p["t_b1"])
            t = ht @ p["t_w2"] + p["t_b2"]
            es = np.exp(s)
            z[:, layer.move] = xb * es + t
            ld = s.sum(axis=1)
            assert np.all(np.abs(ld) <= s_max * self.dim), "coupling log-det out of bounds"
            log_det += ld
            if keep_cache:
                caches.append((xa, xb, hs, u, es, ht))
        return z, log_det, caches

    def forward(self, x) -> tuple[np.ndarray, np.ndarray | float]:
        """Map ``x`` (a row or a batch of rows) to ``(z, log_det)``."""
        x2, single = self._check(x)
        z, log_det, _ = self._forward(x2)
        return (z[0], float(log_det[0])) if single else (z, log_det)

    def inverse(self, z) -> np.ndarray:
        z2, single = self._check(z)
        s_max = self.config.s_max
        x = z2.copy()
        for layer, p in zip(reversed(self.layers), reversed(self._views)):
            xa = x[:, layer.keep]
            hs = np.tanh(xa @ p["s_w1"] + p["s_b1"])
            s = s_max * np.tanh((hs @ p["s_w2"] + p["s_b2"]) / s_max)
            ht = np.tanh(xa @ p["t_w1"] + p["t_b1"])
            t = ht @ p["t_w2"] + p["t_b2"]
            x[:, layer.move] = (x[:, layer.move] - t) * np.exp(-s)
        return x[0] if single else x

    def log_likelihood(self, x):
        x2, single = self._check(x)
        z, log_det, _ = self._forward(x2)
        ll = -0.5 * self.dim * LOG_2PI - 0.5 * np.sum(z * z, axis=1) + log_det
        return float(ll[0]) if single else ll

    # -- gradients --------------------------------------------------------

    def backward(self, x: np.ndarray, grad_z: np.ndarray, grad_log_det: np.ndarray):
        """Back-propagate ``dL/dz`` and ``dL/dlog_det`` through the flow.

        Returns ``(grad_params, grad_x)``: the flat parameter gradient and
        the gradient with respect to the inputs ``x``.
        """
        s_max = self.config.s_max
        _, _, caches = self._forward(x, keep_cache=True)
        grad = np.zeros_like(self.params)
        gviews = self._grad_views(grad)
        g = np.array(grad_z, dtype=np.float64, copy=True)
        gld = np.asarray(grad_log_det, dtype=np.float64)[:, None]
        for layer, p, gp, cache in zip(
            reversed(self.layers), reversed(self._views), reversed(gviews), reversed(caches)
        ):
            xa, xb, hs, u, es, ht = cache
            gzb = g[:, layer.move]
            # scale branch: z_move depends on s through xb*exp(s), log_det through sum(s)
            gr = (gzb * xb * es + gld) * (1.0 - u * u)
            gp["s_w2"][...] = hs.T @ gr
            gp["s_b2"][...] = gr.sum(axis=0)
            ghs = (gr @ p["s_w2"].T) * (1.0 - hs * hs)
            gp["s_w1"][...] = xa.T @ ghs
            gp["s_b1"][...] = ghs.sum(axis=0)
            # translation branch
            gp["t_w2"][...] = ht.T @ gzb
            gp["t_b2"][...] = gzb.sum(axis=0)
            ght = (gzb @ p["t_w2"].T) * (1.0 - ht * ht)
            gp["t_w1"][...] = xa.T @ ght
            gp["t_b1"][...] = ght.sum(axis=0)
            gx = np.empty_like(g)
            gx[:, layer.keep] = g[:, layer.keep] + ghs @ p["s_w1"].T + ght @ p["t_w1"].T
            gx[:, layer.move] = gzb * es
            g = gx
        return grad, g

    def mean_nll_and_grad(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        """Mean negative log-likelihood of a batch and its parameter gradient."""
        n = x.shape[0]
        z, log_det, _ = self._forward(x)
        nll = 0.5 * self.dim * LOG_2PI + 0.5 * np.sum(z * z, axis=1) - log_det
        grad, _ = self.backward(x, z / n, np.full(n, -1.0 / n))
        return float(nll.mean()), grad

    def log_likelihood_grad_x(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-row log-likelihood and its gradient with respect to the rows."""
        z, log_det, _ = self._forward(x)
        ll = -0.5 * self.dim * LOG_2PI - 0.5 * np.sum(z * z, axis=1) + log_det
        _, gx = self.backward(x, z, np.full(x.shape[0], -1.0))
        return ll, -gx

    # -- serialization ----------------------------------------------------

    def to_json(self) -> dict:
        layers = []
        for layer, views in zip(self.layers, self._views):
            layers.append(
                {
                    "mask": [bool(b) for b in layer.mask],
                    **{name: views[name].tolist() for name, _ in layer.shapes},
                }
            )
        return {
            "format": FORMAT,
            "schema": None if self.schema is None else self.schema.to_json(),
            "encoders": [enc.to_json() for enc in self.encoders],
            "dim": self.dim,
            "padded": self.padded,
            "config": asdict(self.config),
            "train_log": self.train_log,
            "layers": layers,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FlowModel":
        if obj.get("format") != FORMAT:
            raise ModelFormatError(f"unsupported model format {obj.get('format')!r}")
        try:
            config = FlowConfig(**obj["config"])
            model = cls(
                dim=obj["dim"],
                config=config,
                schema=None if obj["schema"] is None else ExecutableSchema.from_json(obj["schema"]),
                encoders=tuple(ColumnEncoder.from_json(e) for e in obj["encoders"]),
                padded=obj["padded"],
                train_log=obj["train_log"],
            )
            for layer, views, stored in zip(model.layers, model._views, obj["layers"]):
                if [bool(b) for b in layer.mask] != stored["mask"]:
                    raise ModelFormatError("stored mask differs from the alternating layout")
                for name, shape in layer.shapes:
                    views[name][...] = np.asarray(stored[name], dtype=np.float64).reshape(shape)
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelFormatError(f"malformed model record: {exc}") from exc
        return model


def init_flow(dim: int, config: FlowConfig = FlowConfig(), seed: int | None = None) -> FlowModel:
    """A flow that starts as the identity map.

    Output layers of both sub-networks are zero, so ``s = t = 0``. With a
    seed, hidden layers get random weights so that gradients can reach them;
    without one, every parameter is zero.
    """
    model = FlowModel(dim, config)
    if seed is not None:
        rng = np.random.default_rng(seed)
        for layer, views in zip(model.layers, model._views):
            fan_in = len(layer.keep)
            for net in ("s", "t"):
                views[f"{net}_w1"][...] = rng.normal(0.0, 1.0 / math.sqrt(fan_in), views[f"{net}_w1"].shape)
    return model


def fit_flow(matrix, config: FlowConfig = FlowConfig(), seed: int = 0) -> FlowModel:
    """Maximum-likelihood training with mini-batch Adam.

    Deterministic for a fixed ``seed``: the seed drives initialization and
    the epoch shuffles. Raises :class:`NonFiniteLoss` if training diverges.
    """
    x = np.asarray(matrix, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise TooFewRows(f"need at least 2 rows to fit a flow, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput("training matrix contains NaN or infinity")
    n, dim = x.shape
    model = init_flow(dim, config, seed=derive_seed(seed, "init"))
    rng = np.random.default_rng(derive_seed(seed, "shuffle"))

    lr, beta1, beta2, eps = config.learning_rate, 0.9, 0.999, 1e-8
    m = np.zeros_like(model.params)
    v = np.zeros_like(model.params)
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = x[order[start : start + config.batch_size]]
            loss, grad = model.mean_nll_and_grad(batch)
            if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
                raise NonFiniteLoss(
                    f"training diverged at epoch {epoch}; retry with a lower learning rate"
                )
            step += 1
            m = beta1 * m + (1 - beta1) * grad
            v = beta2 * v + (1 - beta2) * grad * grad
            m_hat = m / (1 - beta1**step)
            v_hat = v / (1 - beta2**step)
            model.params -= lr * m_hat / (np.sqrt(v_hat) + eps)

    final = float(-np.mean(model.log_likelihood(x)))
    if not math.isfinite(final):
        raise NonFiniteLoss("final negative log-likelihood is not finite")
    model.train_log = {"final_nll": final, "epochs": config.epochs, "seed": int(seed), "rows": n}
    return model


def sample(model: FlowModel, n: int, seed: int) -> SampleMatrix:
    if n < 1:
        raise ValueError("sample size must be at least 1")
    z = np.random.default_rng(seed).standard_normal((n, model.dim))
    return SampleMatrix(model.inverse(z), Origin.MARGINAL)


def conditional_sample(
    model: FlowModel,
    constraints: Mapping[int, float | np.ndarray],
    n: int,
    seed: int,
    opt: ConditionalOptions = ConditionalOptions(),
) -> SampleMatrix:
    """Draw ``n`` rows with the constrained coordinates pinned to targets.

    ``constraints`` maps a dimension to either one target value or an array
    of ``n`` per-row targets. Free coordinates start from a marginal sample
    and climb the model log-density (Adam steps with a linearly decaying step
    size, constrained coordinates held fixed). Each restart uses a fresh
    marginal initialization; per row the restart with the highest final
    log-likelihood is kept.
    """
    if n < 1:
        raise ValueError("sample size must be at least 1")
    dims = sorted(constraints)
    if any(not 0 <= d < model.dim for d in dims):
        raise ValueError(f"constraint dimension out of range for a {model.dim}-d model: {dims}")
    if len(dims) >= model.dim:
        raise AllDimsConstrained("every dimension is constrained; nothing left to sample")
    restarts = max(1, opt.restarts)
    targets = np.empty((n, len(dims)))
    for k, d in enumerate(dims):
        targets[:, k] = np.broadcast_to(np.asarray(constraints[d], dtype=np.float64), (n,))
    if not np.all(np.isfinite(targets)):
        raise NonFiniteInput("constraint targets contain NaN or infinity")

    x = np.concatenate(
        [sample(model, n, derive_seed(seed, "restart", r)).values for r in range(restarts)]
    )
    x[:, dims] = np.tile(targets, (restarts, 1))
    free = np.ones(model.dim, dtype=bool)
    free[dims] = False

    best_x = x.copy()
    best_ll = model.log_likelihood(x)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    for step in range(1, opt.steps + 1):
        ll, g = model.log_likelihood_grad_x(x)
        better = ll > best_ll
        best_ll = np.where(better, ll, best_ll)
        best_x[better] = x[better]
        g[:, ~free] = 0.0
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**step)
        v_hat = v / (1 - beta2**step)
        lr = opt.step_size * (1.0 - (step - 1) / opt.steps)
        x = x + lr * m_hat / (np.sqrt(v_hat) + eps)
    if opt.steps > 0:
        ll = model.log_likelihood(x)
        better = ll > best_ll
        best_ll = np.where(better, ll, best_ll)
        best_x[better] = x[better]

    pick = np.argmax(best_ll.reshape(restarts, n), axis=0)
    out = best_x.reshape(restarts, n, model.dim)[pick, np.arange(n)]
    out[:, dims] = targets
    return SampleMatrix(out, Origin.CONDITIONAL)


def save_model(model: FlowModel, path, manifest: dict | None = None) -> None:
    obj = model.to_json()
    if manifest is not None:
        obj["manifest"] = manifest
    Path(path).write_text(json.dumps(obj, indent=1) + "\n", encoding="utf-8")


def load_model(path) -> FlowModel:
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: not a JSON model file: {exc}") from None
    try:
        return FlowModel.from_json(obj)
    except ModelFormatError as exc:
        raise ModelFormatError(f"{path}: {exc}") from None

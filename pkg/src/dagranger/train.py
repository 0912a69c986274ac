"""Fitting the full and reduced models of every candidate pair.

Each pair owns its 6L+1 scalar parameters, so the total objective (the sum of
full and reduced squared-error losses over all pairs) decomposes per pair and
per model. Training still runs jointly for efficiency: pairs are shuffled
into minibatches each epoch, a minibatch is evaluated as one batched forward/
backward over shared sparse operators, and every pair in it takes one Adam
step on its own gradient. Gradients are exact reverse accumulation through
the tanh layers: tanh' = 1 - h^2, and the adjoint of each M.T product is the
corresponding non-transposed M product.

Numerics are worker-count independent by construction: batches are processed
in fixed-size column chunks whose per-column results never depend on chunk
composition, so a thread pool over chunks changes wall time only.
"""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, NonFiniteGradient
from .graph import LaggedOperators
from .model import (
    LINKS,
    EncoderParams,
    PairModel,
    _layer_op,
    apply_link,
    encode_history_batch,
)

__all__ = [
    "TrainConfig",
    "Dataset",
    "Gradients",
    "LossReport",
    "AdamState",
    "TrainedPair",
    "glorot_init",
    "adam_step",
    "pair_loss",
    "pair_gradients",
    "train_all",
    "model_to_vector",
    "vector_to_model",
    "save_checkpoint",
    "load_checkpoint",
]

logger = logging.getLogger(__name__)

# Columns processed per vectorized slab. Fixed so that neither minibatch size
# nor worker count changes any floating-point result, only scheduling.
_CHUNK = 256

_GLOROT_BOUND = math.sqrt(3.0)  # sqrt(6 / (fan_in + fan_out)) with both fans 1


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    max_epochs: int = 20
    minibatch_pairs: int = 1024
    n_layers: int = 10
    lag_hops: int = 1
    convergence_numerator: float = 0.1
    seed: int = 0
    link: str = "identity"
    loss: str = "mse"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.minibatch_pairs < 1:
            raise ConfigError("minibatch_pairs must be >= 1")
        if not 1 <= self.lag_hops <= self.n_layers:
            raise ConfigError("lag_hops must be in [1, n_layers]")
        if self.link not in LINKS:
            raise ConfigError(f"link must be one of {LINKS}")
        if self.loss != "mse":
            raise ConfigError("only the mse loss is supported")


@dataclass(frozen=True)
class Dataset:
    """Node-by-variable observations plus the candidate pair set.

    ``pairs[k] = (xi, yi)`` means column xi of x_values putatively drives
    column yi of y_values; k is the pair id used everywhere downstream.
    """

    x_values: np.ndarray
    y_values: np.ndarray
    x_names: tuple[str, ...]
    y_names: tuple[str, ...]
    pairs: tuple[tuple[int, int], ...]

    def __post_init__(self):
        x = np.asarray(self.x_values, dtype=np.float64)
        y = np.asarray(self.y_values, dtype=np.float64)
        object.__setattr__(self, "x_values", x)
        object.__setattr__(self, "y_values", y)
        object.__setattr__(self, "pairs", tuple((int(a), int(b)) for a, b in self.pairs))
        if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
            raise DataError("x and y matrices must be 2-D with equal node counts")
        if len(self.x_names) != x.shape[1] or len(self.y_names) != y.shape[1]:
            raise DataError("variable name counts must match matrix widths")
        for xi, yi in self.pairs:
            if not (0 <= xi < x.shape[1] and 0 <= yi < y.shape[1]):
                raise DataError(f"pair ({xi}, {yi}) references a missing column")

    @property
    def n_nodes(self) -> int:
        return self.x_values.shape[0]


@dataclass(frozen=True)
class Gradients:
    """Exact gradient of rss_full + rss_reduced in the PairModel layout."""

    w_y_full: np.ndarray
    b_y_full: np.ndarray
    w_x_full: np.ndarray
    b_x_full: np.ndarray
    w_y_reduced: np.ndarray
    b_y_reduced: np.ndarray
    c: float

    def __post_init__(self):
        parts = [self.w_y_full, self.b_y_full, self.w_x_full, self.b_x_full,
                 self.w_y_reduced, self.b_y_reduced]
        if not all(np.isfinite(p).all() for p in parts) or not np.isfinite(self.c):
            raise NonFiniteGradient("gradient contains NaN or infinity")

    def as_vector(self) -> np.ndarray:
        return np.concatenate([
            self.w_y_full, self.b_y_full,
            self.w_x_full, self.b_x_full,
            self.w_y_reduced, self.b_y_reduced,
            [self.c],
        ])


@dataclass(frozen=True)
class LossReport:
    """Per-node squared errors of both models with their totals."""

    per_node_full: np.ndarray
    per_node_reduced: np.ndarray
    rss_full: float
    rss_reduced: float

    @classmethod
    def from_per_node(cls, per_node_full, per_node_reduced) -> "LossReport":
        pf = np.asarray(per_node_full, dtype=np.float64)
        pr = np.asarray(per_node_reduced, dtype=np.float64)
        return cls(
            per_node_full=pf,
            per_node_reduced=pr,
            rss_full=float(pf.sum()),
            rss_reduced=float(pr.sum()),
        )


@dataclass(frozen=True)
class TrainedPair:
    model: PairModel
    report: LossReport


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros_like(cls, params: np.ndarray) -> "AdamState":
        return cls(m=np.zeros_like(params), v=np.zeros_like(params))


def adam_step(
    params: np.ndarray,
    grads: np.ndarray,
    state: AdamState,
    t: int,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; ``t`` is the 1-based step count."""
    m = beta1 * state.m + (1.0 - beta1) * grads
    v = beta2 * state.v + (1.0 - beta2) * grads * grads
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new_params, AdamState(m=m, v=v)


def glorot_init(L: int, rng, lag_hops: int = 1, link: str = "identity") -> PairModel:
    """Glorot-uniform weights on scalar layers (both fans 1, bound sqrt(3)).

    Biases and the interaction coefficient start at zero, and the two
    y-encoders share one weight draw, so the full and reduced models start
    out exactly equal: every residual difference that develops during
    training is attributable to the interaction term rather than to
    initialization luck. Draw order is the shared y weights, then x.
    """
    def encoder() -> EncoderParams:
        return EncoderParams(
            w=rng.uniform(-_GLOROT_BOUND, _GLOROT_BOUND, size=L),
            b=np.zeros(L),
        )

    theta_y = encoder()
    theta_x_full = encoder()
    return PairModel(
        theta_y_full=theta_y,
        theta_x_full=theta_x_full,
        c=0.0,
        theta_y_reduced=EncoderParams(w=theta_y.w.copy(), b=theta_y.b.copy()),
        lag_hops=lag_hops,
        link=link,
    )


# --- single-pair loss and gradients ------------------------------------------


def pair_loss(x: np.ndarray, y: np.ndarray, ops: LaggedOperators, m: PairModel) -> LossReport:
    """Per-node squared errors of the full and reduced predictions of one pair."""
    from .model import predict_full, predict_reduced

    y = np.asarray(y, dtype=np.float64)
    yhat_full = predict_full(x, y, ops, m)
    yhat_reduced = predict_reduced(y, ops, m)
    if not (np.isfinite(yhat_full).all() and np.isfinite(yhat_reduced).all()):
        from .errors import NonFinitePrediction

        raise NonFinitePrediction("prediction overflowed (exponential link?)")
    return LossReport.from_per_node((yhat_full - y) ** 2, (yhat_reduced - y) ** 2)


def _encoder_backward(dh_tilde, v, layers, ops, w, lag_hops):
    """Reverse pass of one encoder given d(loss)/d(h_tilde).

    Every layer output feeds both the mean (weight 1/L) and the next layer;
    the adjoint of z = w * M.T h + b sends w * (M @ dz) back to h.
    """
    L = w.shape[0]
    dw = np.zeros(L)
    db = np.zeros(L)
    g = dh_tilde / L
    for ell in range(L, 0, -1):
        h = layers[ell - 1]
        h_prev = v if ell == 1 else layers[ell - 2]
        op = _layer_op(ops, ell, lag_hops)
        dz = g * (1.0 - h * h)
        u = op.T @ h_prev
        dw[ell - 1] = float(dz @ u)
        db[ell - 1] = float(dz.sum())
        if ell > 1:
            g = dh_tilde / L + w[ell - 1] * (op @ dz)
    return dw, db


def pair_gradients(x: np.ndarray, y: np.ndarray, ops: LaggedOperators, m: PairModel) -> Gradients:
    """Gradient of rss_full + rss_reduced w.r.t. all 6L+1 parameters of one pair."""
    from .model import encode_history

    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    out_yf = encode_history(y, ops, m.theta_y_full, m.lag_hops, keep_layers=True)
    out_xf = encode_history(x, ops, m.theta_x_full, m.lag_hops, keep_layers=True)
    out_yr = encode_history(y, ops, m.theta_y_reduced, m.lag_hops, keep_layers=True)

    s_full = out_yf.h_tilde + m.c * out_xf.h_tilde
    yhat_full = apply_link(s_full, m.link)
    yhat_reduced = apply_link(out_yr.h_tilde, m.link)
    d_full = 2.0 * (yhat_full - y)
    d_reduced = 2.0 * (yhat_reduced - y)
    if m.link == "exponential":
        d_full = d_full * yhat_full
        d_reduced = d_reduced * yhat_reduced

    dc = float(d_full @ out_xf.h_tilde)
    dw_yf, db_yf = _encoder_backward(d_full, y, out_yf.layers, ops, m.theta_y_full.w, m.lag_hops)
    dw_xf, db_xf = _encoder_backward(m.c * d_full, x, out_xf.layers, ops, m.theta_x_full.w, m.lag_hops)
    dw_yr, db_yr = _encoder_backward(d_reduced, y, out_yr.layers, ops, m.theta_y_reduced.w, m.lag_hops)
    return Gradients(
        w_y_full=dw_yf, b_y_full=db_yf,
        w_x_full=dw_xf, b_x_full=db_xf,
        w_y_reduced=dw_yr, b_y_reduced=db_yr,
        c=dc,
    )


# --- batched training ---------------------------------------------------------


@dataclass
class _ParamBank:
    """All pairs' parameters as (L, P) arrays plus the (P,) interaction row."""

    w_y_full: np.ndarray
    b_y_full: np.ndarray
    w_x_full: np.ndarray
    b_x_full: np.ndarray
    w_y_reduced: np.ndarray
    b_y_reduced: np.ndarray
    c: np.ndarray

    ENCODERS = ("y_full", "x_full", "y_reduced")

    @classmethod
    def init(cls, n_pairs: int, L: int, rng) -> "_ParamBank":
        # One Glorot draw shared by every pair (common random numbers): pairs
        # are compared against each other downstream, so giving each its own
        # draw would only inject between-pair variance into the ranking.
        model = glorot_init(L, rng)
        bank = cls(
            w_y_full=np.repeat(model.theta_y_full.w[:, None], n_pairs, axis=1),
            b_y_full=np.zeros((L, n_pairs)),
            w_x_full=np.repeat(model.theta_x_full.w[:, None], n_pairs, axis=1),
            b_x_full=np.zeros((L, n_pairs)),
            w_y_reduced=np.repeat(model.theta_y_reduced.w[:, None], n_pairs, axis=1),
            b_y_reduced=np.zeros((L, n_pairs)),
            c=np.zeros(n_pairs),
        )
        return bank

    def arrays(self):
        return (self.w_y_full, self.b_y_full, self.w_x_full, self.b_x_full,
                self.w_y_reduced, self.b_y_reduced, self.c)

    def zeros_like(self) -> "_ParamBank":
        return _ParamBank(*(np.zeros_like(a) for a in self.arrays()))

    def model_for(self, k: int, lag_hops: int, link: str) -> PairModel:
        return PairModel(
            theta_y_full=EncoderParams(w=self.w_y_full[:, k].copy(), b=self.b_y_full[:, k].copy()),
            theta_x_full=EncoderParams(w=self.w_x_full[:, k].copy(), b=self.b_x_full[:, k].copy()),
            c=float(self.c[k]),
            theta_y_reduced=EncoderParams(
                w=self.w_y_reduced[:, k].copy(), b=self.b_y_reduced[:, k].copy()
            ),
            lag_hops=lag_hops,
            link=link,
        )


def _encoder_backward_batch(dh, values, layers, ops, w, lag_hops):
    """Batch variant of the encoder reverse pass; dh and values are (n, m)."""
    L = w.shape[0]
    dw = np.zeros_like(w)
    db = np.zeros_like(w)
    g = dh / L
    for ell in range(L, 0, -1):
        h = layers[ell - 1]
        h_prev = values if ell == 1 else layers[ell - 2]
        op = _layer_op(ops, ell, lag_hops)
        dz = g * (1.0 - h * h)
        u = op.T @ h_prev
        dw[ell - 1] = np.sum(dz * u, axis=0)
        db[ell - 1] = np.sum(dz, axis=0)
        if ell > 1:
            g = dh / L + (op @ (dz * w[ell - 1][None, :]))
    return dw, db


def _chunk_forward_backward(X, Y, bank_cols, ops, lag_hops, link, component, want_grads):
    """Losses (and optionally gradients) for one column chunk of pairs.

    Returns (rss_full, rss_reduced, per_node_full, per_node_reduced, grads, ok)
    where ok flags pairs whose forward pass stayed finite. Untrained
    components still produce losses so reports stay complete.
    """
    w_yf, b_yf, w_xf, b_xf, w_yr, b_yr, c = bank_cols
    m = X.shape[1]
    grads = None

    h_yf, layers_yf = encode_history_batch(Y, ops, w_yf, b_yf, lag_hops, keep_layers=want_grads)
    h_xf, layers_xf = encode_history_batch(X, ops, w_xf, b_xf, lag_hops, keep_layers=want_grads)
    h_yr, layers_yr = encode_history_batch(Y, ops, w_yr, b_yr, lag_hops, keep_layers=want_grads)

    s_full = h_yf + c[None, :] * h_xf
    yhat_full = apply_link(s_full, link)
    yhat_reduced = apply_link(h_yr, link)
    ok = np.isfinite(yhat_full).all(axis=0) & np.isfinite(yhat_reduced).all(axis=0)

    res_full = yhat_full - Y
    res_reduced = yhat_reduced - Y
    per_node_full = res_full * res_full
    per_node_reduced = res_reduced * res_reduced
    rss_full = np.sum(per_node_full, axis=0)
    rss_reduced = np.sum(per_node_reduced, axis=0)

    if want_grads:
        grads = {}
        if component in ("both", "full"):
            d_full = 2.0 * res_full
            if link == "exponential":
                d_full = d_full * yhat_full
            grads["c"] = np.sum(d_full * h_xf, axis=0)
            grads["w_y_full"], grads["b_y_full"] = _encoder_backward_batch(
                d_full, Y, layers_yf, ops, w_yf, lag_hops)
            grads["w_x_full"], grads["b_x_full"] = _encoder_backward_batch(
                c[None, :] * d_full, X, layers_xf, ops, w_xf, lag_hops)
        if component in ("both", "reduced"):
            d_reduced = 2.0 * res_reduced
            if link == "exponential":
                d_reduced = d_reduced * yhat_reduced
            grads["w_y_reduced"], grads["b_y_reduced"] = _encoder_backward_batch(
                d_reduced, Y, layers_yr, ops, w_yr, lag_hops)
        for key, arr in grads.items():
            bad = ~np.isfinite(arr).all(axis=0) if arr.ndim == 2 else ~np.isfinite(arr)
            ok &= ~bad
    return rss_full, rss_reduced, per_node_full, per_node_reduced, grads, ok


def _run_chunks(tasks, workers: int):
    if workers <= 1 or len(tasks) <= 1:
        for task in tasks:
            task()
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(lambda task: task(), tasks))


def train_all(
    dataset: Dataset,
    ops: LaggedOperators,
    config: TrainConfig,
    workers: int = 1,
    component: str = "both",
) -> dict[int, TrainedPair]:
    """Fit every candidate pair and return its final model and loss report.

    Pairs are shuffled into minibatches each epoch (seeded); every pair takes
    one Adam step per epoch. Training stops after ``max_epochs`` epochs or
    when the relative change of the epoch-total loss drops below
    ``convergence_numerator / n_pairs``. ``component`` restricts which model's
    parameters are updated ("both", "full", "reduced"); because the models
    share no parameters the restricted runs reproduce the joint run exactly.
    Pairs whose forward or backward pass goes non-finite are dropped from the
    results with a logged diagnostic.
    """
    if component not in ("both", "full", "reduced"):
        raise ConfigError(f"component must be both/full/reduced, got {component!r}")
    if dataset.n_nodes != ops.n:
        raise DataError("dataset and operators disagree on the node count")

    n_pairs = len(dataset.pairs)
    L = config.n_layers
    rng = np.random.default_rng(config.seed)
    bank = _ParamBank.init(n_pairs, L, rng)
    adam = {name: AdamState.zeros_like(arr) for name, arr in zip(
        ("w_y_full", "b_y_full", "w_x_full", "b_x_full", "w_y_reduced", "b_y_reduced", "c"),
        bank.arrays(),
    )}
    x_cols = np.fromiter((p[0] for p in dataset.pairs), dtype=np.int64, count=n_pairs)
    y_cols = np.fromiter((p[1] for p in dataset.pairs), dtype=np.int64, count=n_pairs)
    active = np.ones(n_pairs, dtype=bool)

    updated = {
        "both": ("w_y_full", "b_y_full", "w_x_full", "b_x_full",
                 "w_y_reduced", "b_y_reduced", "c"),
        "full": ("w_y_full", "b_y_full", "w_x_full", "b_x_full", "c"),
        "reduced": ("w_y_reduced", "b_y_reduced"),
    }[component]

    def gather(cols):
        X = np.ascontiguousarray(dataset.x_values[:, x_cols[cols]])
        Y = np.ascontiguousarray(dataset.y_values[:, y_cols[cols]])
        bank_cols = tuple(
            arr[:, cols] if arr.ndim == 2 else arr[cols] for arr in bank.arrays()
        )
        return X, Y, bank_cols

    prev_loss = None
    for epoch in range(config.max_epochs):
        perm = rng.permutation(n_pairs)
        epoch_loss = 0.0
        for start in range(0, n_pairs, config.minibatch_pairs):
            batch = perm[start : start + config.minibatch_pairs]
            batch = batch[active[batch]]
            if batch.size == 0:
                continue
            grad_slabs: list = [None] * ((batch.size + _CHUNK - 1) // _CHUNK)

            def make_task(slot, cols):
                def task():
                    X, Y, bank_cols = gather(cols)
                    grad_slabs[slot] = (cols, _chunk_forward_backward(
                        X, Y, bank_cols, ops, config.lag_hops, config.link,
                        component, want_grads=True))
                return task

            chunk_list = [batch[i : i + _CHUNK] for i in range(0, batch.size, _CHUNK)]
            _run_chunks([make_task(i, cols) for i, cols in enumerate(chunk_list)], workers)

            t = epoch + 1
            for cols, (rss_f, rss_r, _, _, grads, ok) in grad_slabs:
                if not ok.all():
                    for k in cols[~ok]:
                        logger.warning("pair %d went non-finite; excluded from results", k)
                    active[cols[~ok]] = False
                good = cols[ok]
                if good.size == 0:
                    continue
                if component in ("both", "full"):
                    epoch_loss += float(rss_f[ok].sum())
                if component in ("both", "reduced"):
                    epoch_loss += float(rss_r[ok].sum())
                keep = ok  # alignment between chunk columns and grad columns
                for name in updated:
                    params = getattr(bank, name)
                    state = adam[name]
                    g = grads[name]
                    if params.ndim == 2:
                        new_p, new_s = adam_step(
                            params[:, good], g[:, keep],
                            AdamState(m=state.m[:, good], v=state.v[:, good]),
                            t, config.learning_rate)
                        params[:, good] = new_p
                        state.m[:, good] = new_s.m
                        state.v[:, good] = new_s.v
                    else:
                        new_p, new_s = adam_step(
                            params[good], g[keep],
                            AdamState(m=state.m[good], v=state.v[good]),
                            t, config.learning_rate)
                        params[good] = new_p
                        state.m[good] = new_s.m
                        state.v[good] = new_s.v

        if prev_loss is not None and prev_loss > 0 and n_pairs > 0:
            rel = abs(epoch_loss - prev_loss) / prev_loss
            if rel < config.convergence_numerator / n_pairs:
                logger.info("converged after %d epochs (relative change %.3g)", epoch + 1, rel)
                break
        prev_loss = epoch_loss

    # Final evaluation pass over all surviving pairs, fixed chunking again.
    results: dict[int, TrainedPair] = {}
    all_ids = np.arange(n_pairs)[active]
    slabs: list = [None] * ((all_ids.size + _CHUNK - 1) // _CHUNK)

    def make_eval_task(slot, cols):
        def task():
            X, Y, bank_cols = gather(cols)
            slabs[slot] = (cols, _chunk_forward_backward(
                X, Y, bank_cols, ops, config.lag_hops, config.link,
                component, want_grads=False))
        return task

    eval_chunks = [all_ids[i : i + _CHUNK] for i in range(0, all_ids.size, _CHUNK)]
    _run_chunks([make_eval_task(i, cols) for i, cols in enumerate(eval_chunks)], workers)

    for cols, (_, _, pn_full, pn_reduced, _, ok) in slabs:
        for j, k in enumerate(cols):
            if not ok[j]:
                logger.warning("pair %d non-finite at final evaluation; excluded", k)
                continue
            report = LossReport.from_per_node(
                np.ascontiguousarray(pn_full[:, j]),
                np.ascontiguousarray(pn_reduced[:, j]),
            )
            results[int(k)] = TrainedPair(
                model=bank.model_for(int(k), config.lag_hops, config.link),
                report=report,
            )
    return results


# --- checkpoints --------------------------------------------------------------


def model_to_vector(m: PairModel) -> np.ndarray:
    """Flatten to the documented layout: w/b for y-full, x-full, y-reduced, then c."""
    return np.concatenate([
        m.theta_y_full.w, m.theta_y_full.b,
        m.theta_x_full.w, m.theta_x_full.b,
        m.theta_y_reduced.w, m.theta_y_reduced.b,
        [m.c],
    ])


def vector_to_model(vec: np.ndarray, L: int, lag_hops: int = 1, link: str = "identity") -> PairModel:
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (6 * L + 1,):
        raise DataError(f"expected parameter vector of length {6 * L + 1}, got {vec.shape}")
    seg = [vec[i * L : (i + 1) * L] for i in range(6)]
    return PairModel(
        theta_y_full=EncoderParams(w=seg[0], b=seg[1]),
        theta_x_full=EncoderParams(w=seg[2], b=seg[3]),
        c=float(vec[-1]),
        theta_y_reduced=EncoderParams(w=seg[4], b=seg[5]),
        lag_hops=lag_hops,
        link=link,
    )


def save_checkpoint(path, results: dict[int, TrainedPair], config: TrainConfig,
                    step: int) -> None:
    """JSON map pair id -> parameter vector (layout above) + optimizer step count."""
    payload = {
        "n_layers": config.n_layers,
        "lag_hops": config.lag_hops,
        "link": config.link,
        "step": step,
        "pairs": {
            str(k): list(map(float, model_to_vector(tp.model))) for k, tp in results.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)


def load_checkpoint(path) -> dict[int, PairModel]:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    L = payload["n_layers"]
    return {
        int(k): vector_to_model(np.array(vec), L, payload["lag_hops"], payload["link"])
        for k, vec in payload["pairs"].items()
    }

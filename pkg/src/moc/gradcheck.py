"""Central finite-difference verification of the analytic gradients.

Two suites: the meta-learner backward on its own (linear loss through the
mixing step) and the whole training objective (cross entropy of the
pooled logits) through the exact code path the training loop uses. Top-K
selection is treated as constant under perturbation, so end-to-end
instances are resampled until the logits at the selection boundary are
separated by a comfortable margin.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GradCheckFailed
from .meta import MetaGrads, MetaLearner, backward_batch, forward_weights_batch, init_meta
from .nomination import NominatedBag
from .training import SlideCompute, TrainConfig, _backward_cached, _forward_cached, ce_loss

FD_STEP = 1e-5
BACKWARD_TOL = 1e-6
END_TO_END_TOL = 1e-5


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| scaled by the larger magnitude, floored at 1e-12."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    diff = float(np.abs(analytic - numeric).max(initial=0.0))
    scale = max(float(np.abs(analytic).max(initial=0.0)),
                float(np.abs(numeric).max(initial=0.0)), 1e-12)
    return diff / scale


def numerical_gradient(loss_fn, arrays: list[np.ndarray], h: float = FD_STEP) -> list[np.ndarray]:
    """Central differences of a scalar function over every array entry in place."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.shape[0]):
            keep = flat[i]
            flat[i] = keep + h
            up = loss_fn()
            flat[i] = keep - h
            down = loss_fn()
            flat[i] = keep
            gflat[i] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


@dataclass(frozen=True)
class GradCheckReport:
    name: str
    n_instances: int
    max_rel_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol


def _random_meta(rng, d: int, hidden: int, H: int) -> MetaLearner:
    m = init_meta(d, hidden, H, np.random.SeedSequence(int(rng.integers(2**31))))
    # nudge biases off zero so every parameter participates
    m.b1 += 0.1 * rng.standard_normal(hidden)
    m.b2 += 0.1 * rng.standard_normal(H)
    return m


def check_backward(seed: int = 0, n_instances: int = 20, tol: float = BACKWARD_TOL,
                   h: float = FD_STEP) -> GradCheckReport:
    """Meta-learner backward vs finite differences on a linear mixing loss."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    worst = 0.0
    for _ in range(n_instances):
        d = int(rng.integers(3, 8))
        hidden = int(rng.integers(2, 6))
        H = int(rng.integers(2, 5))
        B = int(rng.integers(1, 7))
        C = int(rng.integers(2, 5))
        normalize = bool(rng.integers(2))
        m = _random_meta(rng, d, hidden, H)
        U = rng.standard_normal((B, d))
        S = rng.standard_normal((H, B, C))
        upstream = rng.standard_normal((B, C))

        def loss() -> float:
            lam, _ = forward_weights_batch(m, U, normalize=normalize)
            mixed = np.einsum("bh,hbc->bc", lam, S)
            return float((upstream * mixed).sum())

        lam, hidden_cache = forward_weights_batch(m, U, normalize=normalize)
        dlam = np.einsum("bc,hbc->bh", upstream, S)
        grads = MetaGrads.zeros_like(m)
        backward_batch(m, U, hidden_cache, lam, dlam, grads, normalize=normalize)
        numeric = numerical_gradient(loss, m.params(), h=h)
        for a, n in zip(grads.arrays(), numeric):
            worst = max(worst, relative_error(a, n))
    return GradCheckReport("meta-backward", n_instances, worst, tol)


def _boundary_gap(patch_logits: np.ndarray, k: int) -> float:
    """Smallest per-class gap between the K-th and (K+1)-th largest logits."""
    n = patch_logits.shape[0]
    if k >= n:
        return np.inf
    ordered = -np.sort(-patch_logits, axis=0)
    return float((ordered[k - 1] - ordered[k]).min())


def check_end_to_end(seed: int = 0, n_instances: int = 20, tol: float = END_TO_END_TOL,
                     h: float = FD_STEP) -> GradCheckReport:
    """CE loss through pooling, mixing, and the MLP vs finite differences."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    worst = 0.0
    done = 0
    attempts = 0
    while done < n_instances:
        attempts += 1
        if attempts > 50 * n_instances:
            raise GradCheckFailed("could not sample instances with distinct logits")
        d = int(rng.integers(3, 8))
        hidden = int(rng.integers(2, 6))
        H = int(rng.integers(2, 5))
        B = int(rng.integers(2, 10))
        C = int(rng.integers(2, 5))
        K = int(rng.integers(1, B + 1))
        normalize = bool(rng.integers(2))
        config = TrainConfig(topk=K, hidden=hidden, meta_softmax=normalize)
        m = _random_meta(rng, d, hidden, H)
        U = rng.standard_normal((B, d))
        S = rng.standard_normal((H, B, C))
        label = int(rng.integers(C))
        comp = SlideCompute("gradcheck", label, U, S, NominatedBag("gradcheck", np.arange(B), {}))

        cache = _forward_cached(comp, m, config)
        if _boundary_gap(cache.patch_logits, K) < 1e-3:
            continue  # selection could flip under perturbation; resample
        done += 1

        def loss() -> float:
            c = _forward_cached(comp, m, config)
            value, _ = ce_loss(c.pooled, label)
            return value

        _, dpooled = ce_loss(cache.pooled, label)
        grads = MetaGrads.zeros_like(m)
        _backward_cached(cache, m, config, dpooled, grads)
        numeric = numerical_gradient(loss, m.params(), h=h)
        for a, n in zip(grads.arrays(), numeric):
            worst = max(worst, relative_error(a, n))
    return GradCheckReport("end-to-end", n_instances, worst, tol)


def run_all_checks(seed: int = 0, n_instances: int = 20) -> list[GradCheckReport]:
    return [check_backward(seed, n_instances), check_end_to_end(seed, n_instances)]

"""Spectral projected gradient solver for box-constrained smooth minimization.

Barzilai-Borwein step with safeguards, nonmonotone (max of last M values)
line search by halving, and the sup-norm projected-gradient stopping rule.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


@dataclass
class BoxConstraint:
    """Componentwise bounds. ``upper`` may be None (unbounded above)."""

    lower: np.ndarray
    upper: Optional[np.ndarray] = None

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        if self.upper is not None:
            self.upper = np.asarray(self.upper, dtype=float)
            if np.any(self.lower > self.upper):
                raise ValueError("box has lower > upper")


def project(point: np.ndarray, box: BoxConstraint) -> np.ndarray:
    """Clamp ``point`` into the box. Idempotent."""
    p = np.maximum(point, box.lower)
    if box.upper is not None:
        p = np.minimum(p, box.upper)
    return p


def projected_gradient_norm(p: np.ndarray, g: np.ndarray, box: BoxConstraint) -> float:
    """Sup-norm of the continuous projected gradient, ||P(p - g) - p||_inf."""
    return float(np.max(np.abs(project(p - g, box) - p), initial=0.0))


@dataclass
class SpgParams:
    max_iter: int
    eps_opt: float = 1e-8
    lam_min: float = 1e-30
    lam_max: float = 1e30
    memory: int = 10
    gamma_ls: float = 1e-4

    def __post_init__(self):
        if self.max_iter < 0:
            raise ValueError("max_iter must be nonnegative")
        if self.eps_opt <= 0 or self.gamma_ls <= 0 or self.memory < 1:
            raise ValueError("eps_opt, gamma_ls must be positive; memory >= 1")
        if not (0 < self.lam_min < self.lam_max):
            raise ValueError("need 0 < lam_min < lam_max")


@dataclass
class SpgTrajectory:
    iterations: int          # number of iterations actually performed
    point: np.ndarray        # final iterate
    value: float
    pg_norm: float
    converged: bool          # stopped by the projected-gradient criterion


def _check_finite(val, what):
    if not np.all(np.isfinite(val)):
        raise FloatingPointError(f"non-finite {what} encountered in SPG")


def spg_run(objective: Callable[[np.ndarray], float],
            gradient: Callable[[np.ndarray], np.ndarray],
            p0: np.ndarray,
            box: BoxConstraint,
            params: SpgParams,
            snapshot_hook: Optional[Callable[[int, np.ndarray], None]] = None,
            ) -> SpgTrajectory:
    """Run SPG from ``p0``.

    The hook is called at every iterate, including the (projected) initial
    point. The solver is fully deterministic: identical inputs give
    identical trajectories.
    """
    p = project(np.asarray(p0, dtype=float), box)
    f = objective(p)
    g = gradient(p)
    _check_finite(f, "objective")
    _check_finite(g, "gradient")

    if snapshot_hook is not None:
        snapshot_hook(0, p)

    last_f = [f]
    pg = projected_gradient_norm(p, g, box)
    if pg > 0.0:
        lam = min(params.lam_max, max(params.lam_min, 1.0 / pg))
    else:
        lam = params.lam_max

    it = 0
    while pg > params.eps_opt and it < params.max_iter:
        d = project(p - lam * g, box) - p
        gtd = float(g @ d)

        # Nonmonotone line search: halve until the reference value drops.
        f_ref = max(last_f)
        t = 1.0
        while True:
            p_new = p + t * d
            f_new = objective(p_new)
            _check_finite(f_new, "objective")
            if f_new <= f_ref + params.gamma_ls * t * gtd:
                break
            t *= 0.5
            if t < 1e-60:
                raise FloatingPointError("SPG line search failed to make progress")

        g_new = gradient(p_new)
        _check_finite(g_new, "gradient")

        s = p_new - p
        w = g_new - g
        sts = float(s @ s)
        stw = float(s @ w)
        if stw <= 0.0:
            lam = params.lam_max
        else:
            lam = min(params.lam_max, max(params.lam_min, sts / stw))

        p, f, g = p_new, f_new, g_new
        it += 1
        last_f.append(f)
        if len(last_f) > params.memory:
            last_f.pop(0)
        if snapshot_hook is not None:
            snapshot_hook(it, p)
        pg = projected_gradient_norm(p, g, box)

    return SpgTrajectory(iterations=it, point=p, value=f, pg_norm=pg,
                         converged=pg <= params.eps_opt)

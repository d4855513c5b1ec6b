"""
Adam-moment gradient stand-in and the analysis of its derivative.

A client keeps a :class:`MomentState` of exponential moving averages of its own
round gradients and transmits ``ĝ = m̂ / (sqrt(v̂) + eps)`` instead of ``g``.
All operations are elementwise, so the stand-in works on flat gradients and
its Jacobian with respect to ``g`` is diagonal. Functions accept either a
GradientSet or a numpy array and return the same layout they were given.
"""

from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np
from loguru import logger

from gradient_standin.defense.config import get_moment_constants
from gradient_standin.nn import as_flat


@dataclass
class MomentState:
    """
    Per-client first and second moments of the round gradients.

    ``m`` and ``v`` are flat float64 vectors in the order of
    :func:`gradient_standin.nn.flatten`. ``r`` counts stand-in calls.
    """

    m: np.ndarray
    v: np.ndarray
    r: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype="float64").ravel()
        self.v = np.asarray(self.v, dtype="float64").ravel()
        if self.m.shape != self.v.shape:
            raise ValueError(
                f"First and second moments differ in size: {self.m.size} vs {self.v.size}"
            )
        if self.r < 0:
            raise ValueError(f"Round counter must be >= 0, not {self.r}")
        if np.any(self.v < 0):
            raise ValueError("Second moment entries must be >= 0")
        for name in ("beta1", "beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), not {getattr(self, name)}")
        if not self.eps > 0.0:
            raise ValueError(f"eps must be > 0, not {self.eps}")

    @classmethod
    def fresh(cls, template, **constants) -> "MomentState":
        """
        Zero moments at ``r = 0`` sized like ``template``.

        ``template`` may be a GradientSet, an array or a coordinate count.
        Constants not passed as keywords come from
        :func:`gradient_standin.defense.config.get_moment_constants`.
        """
        if isinstance(template, (int, np.integer)):
            size = int(template)
        else:
            size = as_flat(template)[0].size
        merged = get_moment_constants()
        merged.update(constants)
        return cls(m=np.zeros(size), v=np.zeros(size), r=0, **merged)

    @property
    def size(self) -> int:
        return self.m.size

    def copy(self) -> "MomentState":
        return MomentState(
            m=self.m.copy(),
            v=self.v.copy(),
            r=self.r,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
        )

    def warm_up(self, history: Iterable) -> "MomentState":
        """Feed a sequence of past round gradients through the stand-in; returns ``self``."""
        for g in history:
            standin_update(self, g)
        return self


def _advance(state: MomentState, flat: np.ndarray, r: int):
    """Moments after absorbing ``flat`` as round ``r``, without touching ``state``."""
    m = state.beta1 * state.m + (1.0 - state.beta1) * flat
    v = state.beta2 * state.v + (1.0 - state.beta2) * flat * flat
    m_hat = m / (1.0 - state.beta1**r)
    v_hat = v / (1.0 - state.beta2**r)
    return m, v, m_hat, v_hat


def standin_update(state: MomentState, g):
    """
    Absorb the round gradient ``g`` into ``state`` and return its stand-in.

    Parameters
    ----------
    state : MomentState
        Mutated in place: ``r`` grows by one and ``m``, ``v`` are updated.
    g : GradientSet or np.ndarray
        Round gradient, congruent with ``state``.

    Returns
    -------
    GradientSet or np.ndarray
        ``m̂ / (sqrt(v̂) + eps)`` in the layout of ``g``.

    Raises
    ------
    ValueError
        If ``g`` has a different number of coordinates than ``state``.
    """
    flat, restore = as_flat(g, size=state.size)
    r = state.r + 1
    m, v, m_hat, v_hat = _advance(state, flat, r)
    state.m, state.v, state.r = m, v, r
    return restore(m_hat / (np.sqrt(v_hat) + state.eps))


def standin_preview(state: MomentState, g):
    """Stand-in that ``standin_update`` would return, leaving ``state`` untouched."""
    return standin_update(state.copy(), g)


def exact_standin_jacobian(state_before: MomentState, g):
    """
    Diagonal of the exact Jacobian ``∂ĝ/∂g`` of one stand-in call.

    By the quotient rule, per coordinate::

        c / (sqrt(v̂) + eps) - m̂ (1 - β₂) g / (sqrt(v̂) (1 - β₂^r) (sqrt(v̂) + eps)²)

    with ``c = (1 - β₁) / (1 - β₁^r)`` and the moments taken after the update.
    Where ``v̂ = 0`` (only possible with ``g = 0``) the second term is 0.

    Parameters
    ----------
    state_before : MomentState
        State prior to the stand-in call. Not modified.
    g : GradientSet or np.ndarray

    Returns
    -------
    GradientSet or np.ndarray
        Derivatives in the layout of ``g``.

    Raises
    ------
    RuntimeError
        If ``v̂ = 0`` at a coordinate with ``g != 0``.
    """
    flat, restore = as_flat(g, size=state_before.size)
    r = state_before.r + 1
    _, _, m_hat, v_hat = _advance(state_before, flat, r)
    if np.any((v_hat == 0.0) & (flat != 0.0)):
        raise RuntimeError("Second moment vanished at a coordinate with nonzero gradient")

    sqrt_v = np.sqrt(v_hat)
    denom = sqrt_v + state_before.eps
    c = (1.0 - state_before.beta1) / (1.0 - state_before.beta1**r)
    second = np.zeros_like(flat)
    live = v_hat > 0.0
    second[live] = (
        m_hat[live]
        * (1.0 - state_before.beta2)
        * flat[live]
        / (sqrt_v[live] * (1.0 - state_before.beta2**r) * denom[live] ** 2)
    )
    return restore(c / denom - second)


def approx_standin_jacobian(state_before: MomentState, g, alpha: float):
    """
    Closed-form approximation ``-β₁ m_{r-1} / (α (1 - β₁^r) g²)`` of ``∂ĝ/∂g``.

    The approximation replaces ``sqrt(v̂)`` by ``α |g|``, so the result carries
    the factor ``sign(g)``. It is only meaningful when the current gradient
    dominates the second moment and the history has the sign of ``g``.

    Returns
    -------
    GradientSet or np.ndarray
        NaN at coordinates where ``g = 0``; the derivative is undefined there.

    Raises
    ------
    ValueError
        If ``alpha`` is not positive.
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be > 0, not {alpha}")
    flat, restore = as_flat(g, size=state_before.size)
    r = state_before.r + 1
    out = np.full_like(flat, np.nan)
    live = flat != 0.0
    if not np.all(live):
        logger.warning(
            f"Approximate derivative undefined at {int((~live).sum())} coordinates with g = 0"
        )
    out[live] = (
        -state_before.beta1
        * state_before.m[live]
        * np.sign(flat[live])
        / (alpha * (1.0 - state_before.beta1**r) * flat[live] ** 2)
    )
    return restore(out)


def approximation_alpha(state: MomentState, g, r: Optional[int] = None) -> float:
    """
    Empirical ratio ``(sqrt(v̂) + eps) / |g|``, median over coordinates.

    Parameters
    ----------
    state : MomentState
        Moments before the call; ``state.v`` plays the role of ``v_{r-1}``.
    g : GradientSet or np.ndarray
    r : int, optional
        Round used for the bias correction. Defaults to ``state.r + 1``.

    Returns
    -------
    float
        ``1 + eps/|g|`` for a fresh state, about 1.258 for ``v_{r-1} = g²`` at
        ``r = 1000``, tending to 1 as ``r`` grows.
    """
    flat, _ = as_flat(g, size=state.size)
    if r is None:
        r = state.r + 1
    if r < 1:
        raise ValueError(f"Round must be >= 1, not {r}")
    live = flat != 0.0
    if not np.any(live):
        raise ValueError("alpha is undefined when every gradient coordinate is zero")
    v = state.beta2 * state.v + (1.0 - state.beta2) * flat * flat
    v_hat = v / (1.0 - state.beta2**r)
    return float(np.median((np.sqrt(v_hat[live]) + state.eps) / np.abs(flat[live])))


def finite_difference_jacobian(state_before: MomentState, g, step=None):
    """
    Central-difference estimate of the diagonal Jacobian.

    Every coordinate is perturbed at once, which is exact for a diagonal map.
    The default step is ``1e-6 (1 + |g|)``.
    """
    flat, restore = as_flat(g, size=state_before.size)
    h = 1e-6 * (1.0 + np.abs(flat)) if step is None else np.broadcast_to(step, flat.shape)
    if np.any(h <= 0):
        raise ValueError("Finite-difference steps must be > 0")
    r = state_before.r + 1
    plus = _advance(state_before, flat + h, r)
    minus = _advance(state_before, flat - h, r)
    eps = state_before.eps
    g_plus = plus[2] / (np.sqrt(plus[3]) + eps)
    g_minus = minus[2] / (np.sqrt(minus[3]) + eps)
    return restore((g_plus - g_minus) / (2.0 * h))

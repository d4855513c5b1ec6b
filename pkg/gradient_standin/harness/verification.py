"""
Numerical checks of the stand-in's derivative analysis.

:func:`verify_appendix` runs every check and returns a report with one row per
check. Rows marked ``asserted`` decide the overall outcome; the others are
reported for information.
"""

from typing import List

import numpy as np
import pandas as pd
from loguru import logger

from gradient_standin.attacks import rank1_residual
from gradient_standin.defense import (
    MomentState,
    approx_standin_jacobian,
    approximation_alpha,
    exact_standin_jacobian,
    finite_difference_jacobian,
    get_moment_constants,
    standin_update,
)

REPORT_COLUMNS = ["name", "comparison", "value", "expected", "tolerance", "passed", "asserted"]

JACOBIAN_ROUNDS = (1, 2, 10, 100)
JACOBIAN_COORDINATES = 250
SPIKE_HISTORY_ROUNDS = 200
SPIKE_HISTORY_SCALE = 1e-4


def _row(name, value, expected, tolerance=0.0, comparison="close", asserted=True) -> dict:
    if comparison == "close":
        passed = abs(value - expected) <= tolerance
    elif comparison == "below":
        passed = value < expected
    else:
        passed = value > expected
    return {
        "name": name,
        "comparison": comparison,
        "value": float(value),
        "expected": float(expected),
        "tolerance": float(tolerance),
        "passed": bool(passed),
        "asserted": asserted,
    }


def relative_error(estimate: np.ndarray, exact: np.ndarray, floor: float = 1e-3) -> np.ndarray:
    """``|estimate - exact| / max(|exact|, floor)`` elementwise."""
    return np.abs(estimate - exact) / np.maximum(np.abs(exact), floor)


def _away_from_zero(rng: np.random.Generator, size: int) -> np.ndarray:
    return rng.choice([-1.0, 1.0], size=size) * rng.uniform(0.1, 2.0, size=size)


def jacobian_agreement(rng: np.random.Generator) -> float:
    """Largest relative error of the exact Jacobian against central differences."""
    errors = []
    for rounds in JACOBIAN_ROUNDS:
        state = MomentState.fresh(JACOBIAN_COORDINATES)
        for _ in range(rounds - 1):
            standin_update(state, rng.standard_normal(JACOBIAN_COORDINATES))
        g = _away_from_zero(rng, JACOBIAN_COORDINATES)
        exact = exact_standin_jacobian(state, g)
        errors.append(relative_error(finite_difference_jacobian(state, g), exact))
    return float(np.max(np.concatenate(errors)))


def spike_state(rng: np.random.Generator, size: int):
    """
    State with a long small constant-sign history and a dominant current gradient.

    Returns
    -------
    tuple
        ``(state, g)``: the state before the call and the current gradient.
    """
    signs = rng.choice([-1.0, 1.0], size=size)
    state = MomentState.fresh(size)
    for _ in range(SPIKE_HISTORY_ROUNDS):
        standin_update(state, signs * SPIKE_HISTORY_SCALE * rng.uniform(0.5, 1.5, size=size))
    return state, signs * rng.uniform(0.5, 2.0, size=size)


def stationary_state(rng: np.random.Generator, size: int, r: int = 1000):
    """State with ``m_{r-1} = g`` and ``v_{r-1} = g²`` one call before round ``r``."""
    g = _away_from_zero(rng, size)
    return MomentState(m=g.copy(), v=g * g, r=r - 1, **get_moment_constants()), g


def adam_equivalence(rng: np.random.Generator, draws: int = 1000, lr: float = 1e-3) -> float:
    """Largest gap between a textbook Adam parameter step and ``-lr`` times the stand-in."""
    gaps = []
    for _ in range(draws):
        state = MomentState.fresh(4)
        state.m = rng.standard_normal(4)
        state.v = rng.standard_normal(4) ** 2
        state.r = int(rng.integers(0, 50))
        theta, g = rng.standard_normal(4), rng.standard_normal(4)

        r = state.r + 1
        m = state.beta1 * state.m + (1 - state.beta1) * g
        v = state.beta2 * state.v + (1 - state.beta2) * g * g
        reference = theta - lr * (m / (1 - state.beta1**r)) / (
            np.sqrt(v / (1 - state.beta2**r)) + state.eps
        )
        gaps.append(np.max(np.abs(theta - lr * standin_update(state, g) - reference)))
    return float(np.max(gaps))


def constant_stream_gap(rng: np.random.Generator, rounds: int = 50) -> float:
    c = _away_from_zero(rng, 16)
    state = MomentState.fresh(16)
    expected = c / (np.abs(c) + state.eps)
    return float(max(np.max(np.abs(standin_update(state, c) - expected)) for _ in range(rounds)))


def round_one_gap(rng: np.random.Generator) -> float:
    g = rng.standard_normal(256)
    state = MomentState.fresh(256)
    return float(np.max(np.abs(standin_update(state, g) - g / (np.abs(g) + state.eps))))


def rank_residuals(rng: np.random.Generator, trials: int = 10, side: int = 8, warm_rounds: int = 5):
    """
    Best-rank-1 residuals of raw outer-product gradients and of their stand-ins.

    The stand-in state first absorbs ``warm_rounds`` unrelated outer products.

    Returns
    -------
    tuple of np.ndarray
        Residuals of the raw gradients and of the stand-ins.
    """
    raw, defended = [], []
    for _ in range(trials):
        state = MomentState.fresh(side * side)
        state.warm_up(
            np.outer(rng.standard_normal(side), rng.standard_normal(side))
            for _ in range(warm_rounds)
        )
        gradient = np.outer(rng.standard_normal(side), rng.standard_normal(side))
        raw.append(rank1_residual(gradient))
        defended.append(rank1_residual(standin_update(state, gradient)))
    return np.array(raw), np.array(defended)


def verify_appendix(seed: int = 0) -> pd.DataFrame:
    """
    Run the derivative-analysis checks.

    Returns
    -------
    pd.DataFrame
        Columns ``REPORT_COLUMNS``; ``comparison`` is ``close`` (within
        ``tolerance`` of ``expected``), ``below`` or ``above`` (strictly
        beyond ``expected``).
    """
    rng = np.random.default_rng(seed)
    rows: List[dict] = []

    power = 0.999**1000
    rows.append(_row("beta2_power_1000", power, 0.36770, 5e-4))
    rows.append(_row("beta2_power_1000_vs_inverse_e", power, np.exp(-1.0), 5e-4))

    state, g = stationary_state(rng, 512)
    rows.append(_row("alpha_round_1000", approximation_alpha(state, g), 1.2578, 0.01))
    rows.append(
        _row("alpha_round_1", approximation_alpha(MomentState.fresh(512), g), 1.0, 1e-6)
    )
    rows.append(_row("alpha_round_1e6", approximation_alpha(state, g, r=10**6), 1.0, 1e-6))

    rows.append(_row("exact_jacobian_vs_finite_differences", jacobian_agreement(rng), 1e-5, comparison="below"))

    spike, g = spike_state(rng, 512)
    alpha = approximation_alpha(spike, g)
    spike_error = relative_error(
        approx_standin_jacobian(spike, g, alpha), exact_standin_jacobian(spike, g), floor=0.0
    )
    rows.append(_row("approximation_dominant_gradient", np.max(spike_error), 0.15, comparison="below"))

    # v_{r-1} = g² with large r: the approximation has the wrong sign here
    state, g = stationary_state(rng, 512)
    approx = approx_standin_jacobian(state, g, approximation_alpha(state, g))
    agreement = np.mean(np.sign(approx) == np.sign(exact_standin_jacobian(state, g)))
    rows.append(_row("approximation_stationary_sign_agreement", agreement, 0.0, asserted=False))

    rows.append(_row("adam_equivalence", adam_equivalence(rng), 1e-12, comparison="below"))
    rows.append(_row("constant_stream_fixed_point", constant_stream_gap(rng), 1e-12, comparison="below"))
    rows.append(_row("round_one_normalization", round_one_gap(rng), 1e-12, comparison="below"))

    raw, defended = rank_residuals(rng)
    rows.append(_row("rank1_residual_raw_max", raw.max(), 1e-10, comparison="below"))
    rows.append(_row("rank1_residual_standin_min", defended.min(), 0.1, comparison="above"))

    report = pd.DataFrame(rows, columns=REPORT_COLUMNS)
    failed = report[report["asserted"] & ~report["passed"]]
    if failed.empty:
        logger.info(f"All {int(report['asserted'].sum())} asserted checks passed")
    else:
        logger.warning(f"Failed checks: {', '.join(failed['name'])}")
    return report


def report_passed(report: pd.DataFrame) -> bool:
    """True when every asserted row passed."""
    return bool(report.loc[report["asserted"], "passed"].all())

"""Time integrators for the Caputo derivative.

Two discretizations of D^alpha_t at t_{n+1}:

* the classical L1 form sum_j b_j (v^{n+1-j} - v^{n-j}) / (tau^alpha c_alpha),
  which needs the whole solution history, and
* the compressed form that splits off the local two-level difference and
  replaces the kernel on [0, t_n] by the sum of exponentials, carrying one
  scalar-per-term history integral psi_j that is updated by a cheap recurrence.

Both are exposed as "known part" builders: the implicit step then solves
(M/(tau^alpha c_alpha) + A) v_next = M @ known + F.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gamma

from .soe import SOEApproximation, StepCoefficients, step_coefficients


@dataclass(frozen=True)
class L1Coefficients:
    alpha: float
    b: np.ndarray       # b_j = (j+1)^(1-alpha) - j^(1-alpha)
    c_alpha: float      # Gamma(2 - alpha)


def l1_coefficients(alpha: float, n: int) -> L1Coefficients:
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if n < 0:
        raise ValueError("n must be nonnegative")
    j = np.arange(n + 1, dtype=np.float64)
    b = (j + 1.0) ** (1.0 - alpha) - j ** (1.0 - alpha)
    return L1Coefficients(alpha=alpha, b=b, c_alpha=float(gamma(2.0 - alpha)))


def l1_known_weights(coeffs: L1Coefficients, n: int) -> np.ndarray:
    """Weights w_i on the stored states v^0..v^n for the step n -> n+1.

    The discrete derivative rearranges to
    (v^{n+1} - sum_i w_i v^i) / (tau^alpha c_alpha) with w_0 = b_n and
    w_i = b_{n-i} - b_{n-i+1} for i >= 1. The weights sum to b_0 = 1.
    """
    b = coeffs.b
    if n >= b.size:
        raise ValueError(f"coefficients cover b_0..b_{b.size - 1}, need b_{n}")
    w = np.empty(n + 1)
    w[0] = b[n]
    if n >= 1:
        i = np.arange(1, n + 1)
        w[i] = b[n - i] - b[n - i + 1]
    return w


def l1_apply(coeffs: L1Coefficients, history, tau: float) -> np.ndarray:
    """Known part of the L1 derivative given states v^0..v^n.

    Returns (1/(tau^alpha c_alpha)) sum_i w_i v^i; the solver moves the
    v^{n+1} term to the left side.
    """
    states = np.atleast_2d(np.asarray(history, dtype=np.float64))
    if states.shape[0] == 0:
        raise ValueError("history must hold at least the initial state")
    n = states.shape[0] - 1
    w = l1_known_weights(coeffs, n)
    scale = tau ** coeffs.alpha * coeffs.c_alpha
    return (w @ states) / scale


@dataclass(frozen=True)
class HistoryState:
    """Per-exponential history integrals psi_j, anchored one step ahead.

    components[j] approximates int_0^{t_n} e^(-lambda_j (t_{n+1} - s)) u(s) ds.
    """

    step_index: int
    components: np.ndarray     # (n_terms, dof)
    step_size: float           # tau of the last propagation (0.0 while fresh)


def zero_history(n_terms: int, dof: int) -> HistoryState:
    return HistoryState(step_index=0,
                        components=np.zeros((n_terms, dof)),
                        step_size=0.0)


def propagate_history_with(state: HistoryState, coeffs: StepCoefficients,
                           v_prev: np.ndarray, v_next: np.ndarray) -> HistoryState:
    """One recurrence update with precomputed per-step coefficients."""
    psi = state.components
    if psi.shape[1] != np.shape(v_prev)[-1] or psi.shape[1] != np.shape(v_next)[-1]:
        raise ValueError("history components and vectors disagree in dof count")
    new = (coeffs.decay[:, None] * psi
           + np.outer(coeffs.c1, v_prev)
           + np.outer(coeffs.c2, v_next))
    return HistoryState(step_index=state.step_index + 1,
                        components=new, step_size=coeffs.tau)


def propagate_history(state: HistoryState, soe: SOEApproximation, tau: float,
                      v_prev: np.ndarray, v_next: np.ndarray) -> HistoryState:
    if state.components.shape[0] != soe.n_terms:
        raise ValueError("history term count does not match the SOE")
    return propagate_history_with(state, step_coefficients(soe, tau), v_prev, v_next)


def soe_caputo_known_part(state: HistoryState, soe: SOEApproximation, tau: float,
                          v_curr: np.ndarray, v0: np.ndarray,
                          t_next: float) -> np.ndarray:
    """Known part of the compressed derivative for the step to t_next.

    known = alpha/(tau^alpha c_alpha) v_curr
          + (1/Gamma(1-alpha)) (v0 / t_next^alpha + alpha sum_j omega_j psi_j).

    At n = 0 (zero history, t_next = tau) this collapses to
    v_curr / (tau^alpha c_alpha), the L1 first step.
    """
    if state.components.shape[0] != soe.n_terms:
        raise ValueError("history term count does not match the SOE")
    alpha = soe.alpha
    c_alpha = gamma(2.0 - alpha)
    g1 = gamma(1.0 - alpha)
    weighted = soe.weights @ state.components
    return (alpha / (tau ** alpha * c_alpha) * np.asarray(v_curr, dtype=np.float64)
            + (np.asarray(v0, dtype=np.float64) / t_next ** alpha
               + alpha * weighted) / g1)


def history_norm(state: HistoryState, soe: SOEApproximation, tau_c: float,
                 mass) -> float:
    """tau_c^alpha times the mass-weighted L2 norm of sum_j omega_j psi_j."""
    s = soe.weights @ state.components
    return float(tau_c ** soe.alpha * np.sqrt(max(s @ (mass @ s), 0.0)))


def mittag_leffler_neg(alpha: float, t: float, n_terms: int = 200) -> float:
    """E_alpha(-t^alpha) by direct series; the exact solution of
    D^alpha u = -u, u(0) = 1. Adequate for t <= 1 where the series converges
    fast; used as the scalar oracle."""
    k = np.arange(n_terms, dtype=np.float64)
    terms = (-(t ** alpha)) ** k / gamma(alpha * k + 1.0)
    return float(terms.sum())

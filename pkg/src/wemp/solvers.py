"""Sequential solvers for the time-fractional diffusion problem.

Three end-to-end integrators share one implicit-step kernel:

* reference_l1_solve: fine-space Galerkin with the full-history L1 derivative
  (the reference solution for all error studies);
* fine_soe_solve: fine-space Galerkin with the exponential-sum history;
* multiscale_soe_solve: the exponential-sum scheme in multiscale coordinates.

All run on uniform steps of size tau_f. Homogeneous Dirichlet data is
eliminated: the fine loops work on free dofs and the trajectories embed
zeros back at boundary nodes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
from scipy.special import gamma

from .fem import CoefficientField, OperatorPair, assemble_load, factorized_spd
from .soe import SOEApproximation, step_coefficients
from .stepping import (HistoryState, l1_coefficients, l1_known_weights,
                       propagate_history_with, soe_caputo_known_part,
                       zero_history)
from .msfem import MultiscaleSpace

L1_STATE_BUDGET_BYTES = 2_000_000_000


@dataclass(frozen=True)
class ProblemSpec:
    alpha: float
    T: float
    tau_f: float
    tau_c: float
    u0: Callable                      # (x, y) -> nodal values
    f: Optional[Callable]             # (x, y, t) -> nodal values, or None for zero
    kappa: Optional[CoefficientField]
    level: int
    epsilon: float
    n_exp: Optional[int] = None

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.T <= 0 or self.tau_c <= 0 or self.tau_f <= 0:
            raise ValueError("T, tau_c, tau_f must be positive")
        if abs(self.n_coarse * self.tau_c - self.T) > 1e-9 * self.T:
            raise ValueError("tau_c must divide T into an integer step count")
        if abs(self.m_sub * self.tau_f - self.tau_c) > 1e-9 * self.tau_c:
            raise ValueError("tau_f must divide tau_c into an integer substep count")

    @property
    def n_coarse(self) -> int:
        return int(round(self.T / self.tau_c))

    @property
    def m_sub(self) -> int:
        return int(round(self.tau_c / self.tau_f))

    @property
    def n_fine_total(self) -> int:
        return self.n_coarse * self.m_sub


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray        # (n_times, dof)
    space_tag: str            # "fine" | "multiscale"

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")
        if self.states.shape[0] != self.times.size:
            raise ValueError("one state per time required")


def _snapshot_steps(n_steps: int, stride: int, store: str) -> np.ndarray:
    if store == "all":
        return np.arange(n_steps + 1)
    if store == "coarse":
        return np.arange(0, n_steps + 1, stride)
    raise ValueError(f"store must be 'coarse' or 'all', got {store!r}")


def _initial_free_vector(spec, mesh, ops):
    coords = mesh.fine_node_coords
    full = np.asarray(spec.u0(coords[:, 0], coords[:, 1]), dtype=np.float64)
    return full[ops.free_dofs]


def _load_free(spec, mesh, ops, t):
    if spec.f is None:
        return 0.0
    return assemble_load(mesh, ops, spec.f, t)[ops.free_dofs]


def _embed(free_values: np.ndarray, n_nodes: int, free: np.ndarray) -> np.ndarray:
    out = np.zeros((free_values.shape[0], n_nodes))
    out[:, free] = free_values
    return out


def soe_implicit_step(solve, mass, soe, coeffs, v_curr, v0, t_next,
                      psi: HistoryState, load_vec):
    """One implicit step of the exponential-sum scheme.

    Solves (M / (tau^alpha c_alpha) + A) v_next = M @ known + F and advances
    the history recurrence. `solve` must be the factorization of that left
    matrix; used verbatim by the sequential solver and the slab propagators
    so their arithmetic is identical.
    """
    known = soe_caputo_known_part(psi, soe, coeffs.tau, v_curr, v0, t_next)
    v_next = solve(mass @ known + load_vec)
    return v_next, propagate_history_with(psi, coeffs, v_curr, v_next)


def reference_l1_solve(spec: ProblemSpec, mesh, ops: OperatorPair,
                       store: str = "coarse") -> Trajectory:
    """Fine Galerkin solution with the full-history L1 derivative."""
    tau = spec.tau_f
    n_steps = spec.n_fine_total
    free = ops.free_dofs
    n_free = free.size
    need = (n_steps + 1) * n_free * 8
    if need > L1_STATE_BUDGET_BYTES:
        raise ValueError(
            f"full-history storage needs {need / 1e9:.1f} GB; "
            "use the exponential-sum solver instead")
    coeffs = l1_coefficients(spec.alpha, n_steps)
    scale = tau ** spec.alpha * coeffs.c_alpha
    M_ff = ops.mass_free.tocsr()
    solve = factorized_spd((M_ff / scale + ops.stiffness_free).tocsc())

    states = np.empty((n_steps + 1, n_free))
    states[0] = _initial_free_vector(spec, mesh, ops)
    for n in range(n_steps):
        w = l1_known_weights(coeffs, n)
        known = (w @ states[:n + 1]) / scale
        rhs = M_ff @ known + _load_free(spec, mesh, ops, (n + 1) * tau)
        states[n + 1] = solve(rhs)

    snap = _snapshot_steps(n_steps, spec.m_sub, store)
    return Trajectory(times=snap * tau,
                      states=_embed(states[snap], ops.mass.shape[0], free),
                      space_tag="fine")


def fine_soe_solve(spec: ProblemSpec, mesh, ops: OperatorPair,
                   soe: SOEApproximation, store: str = "coarse") -> Trajectory:
    """Fine Galerkin solution with the exponential-sum history: O(N_exp)
    state vectors instead of the full history."""
    tau = spec.tau_f
    n_steps = spec.n_fine_total
    free = ops.free_dofs
    coeffs = step_coefficients(soe, tau)
    M_ff = ops.mass_free.tocsr()
    scale = tau ** spec.alpha * float(gamma(2.0 - spec.alpha))
    solve = factorized_spd((M_ff / scale + ops.stiffness_free).tocsc())

    v0 = _initial_free_vector(spec, mesh, ops)
    psi = zero_history(soe.n_terms, free.size)
    v = v0.copy()
    snap = _snapshot_steps(n_steps, spec.m_sub, store)
    keep = np.zeros(n_steps + 1, dtype=bool)
    keep[snap] = True
    out = np.empty((snap.size, free.size))
    pos = 0
    if keep[0]:
        out[pos] = v
        pos += 1
    for n in range(n_steps):
        load = _load_free(spec, mesh, ops, (n + 1) * tau)
        v, psi = soe_implicit_step(solve, M_ff, soe, coeffs, v, v0,
                                   (n + 1) * tau, psi, load)
        if keep[n + 1]:
            out[pos] = v
            pos += 1
    return Trajectory(times=snap * tau,
                      states=_embed(out, ops.mass.shape[0], free),
                      space_tag="fine")


def multiscale_soe_solve(spec: ProblemSpec, space: MultiscaleSpace,
                         soe: SOEApproximation,
                         store: str = "coarse") -> Trajectory:
    """Exponential-sum scheme in multiscale coordinates.

    States are ms-coefficient vectors; lift with space.lift for fine-space
    error measurement. The initial state is the mass-orthogonal projection
    of u0.
    """
    tau = spec.tau_f
    n_steps = spec.n_fine_total
    mesh = space.mesh
    ops = space.fine_ops
    coords = mesh.fine_node_coords
    u0_full = np.asarray(spec.u0(coords[:, 0], coords[:, 1]), dtype=np.float64)
    c0 = space.project(u0_full)

    scale = tau ** spec.alpha * float(gamma(2.0 - spec.alpha))
    solve = factorized_spd(space.ms_mass / scale + space.ms_stiffness)
    coeffs = step_coefficients(soe, tau)

    def load(t):
        if spec.f is None:
            return 0.0
        return space.basis.T @ assemble_load(mesh, ops, spec.f, t)

    psi = zero_history(soe.n_terms, space.n_columns)
    v = c0.copy()
    snap = _snapshot_steps(n_steps, spec.m_sub, store)
    keep = np.zeros(n_steps + 1, dtype=bool)
    keep[snap] = True
    out = np.empty((snap.size, space.n_columns))
    pos = 0
    if keep[0]:
        out[pos] = v
        pos += 1
    for n in range(n_steps):
        v, psi = soe_implicit_step(solve, space.ms_mass, soe, coeffs, v, c0,
                                   (n + 1) * tau, psi, load((n + 1) * tau))
        if keep[n + 1]:
            out[pos] = v
            pos += 1
    return Trajectory(times=snap * tau, states=out, space_tag="multiscale")


class _PointMesh:
    """Single-node stand-in so the PDE solvers run scalar problems."""

    fine_node_coords = np.array([[0.0, 0.0]])
    n_nodes = 1


def single_dof_setup(rate: float = 1.0):
    """(mesh, ops) pair for the scalar equation D^alpha u = -rate u."""
    ops = OperatorPair(mass=sp.csr_matrix(np.array([[1.0]])),
                       stiffness=sp.csr_matrix(np.array([[rate]])),
                       free_dofs=np.array([0]))
    return _PointMesh(), ops


def relative_errors_percent(states: np.ndarray, ref_states: np.ndarray,
                            ops: OperatorPair):
    """Per-time relative L2 and energy errors, in percent, against a
    reference trajectory sampled at the same times (both in fine space)."""
    if states.shape != ref_states.shape:
        raise ValueError("trajectories must be sampled identically")
    M, A = ops.mass, ops.stiffness
    rel_l2 = np.empty(states.shape[0])
    rel_en = np.empty(states.shape[0])
    for i, (v, r) in enumerate(zip(states, ref_states)):
        d = v - r
        num_l2 = np.sqrt(max(d @ (M @ d), 0.0))
        den_l2 = np.sqrt(max(r @ (M @ r), 0.0))
        num_en = np.sqrt(max(d @ (A @ d), 0.0))
        den_en = np.sqrt(max(r @ (A @ r), 0.0))
        rel_l2[i] = 100.0 * num_l2 / den_l2 if den_l2 > 0 else (
            0.0 if num_l2 == 0 else np.inf)
        rel_en[i] = 100.0 * num_en / den_en if den_en > 0 else (
            0.0 if num_en == 0 else np.inf)
    return rel_l2, rel_en


def write_error_csv(path, times, rel_l2, rel_energy) -> None:
    with open(path, "w") as fh:
        fh.write("t,relL2,relEnergy\n")
        for t, a, b in zip(times, rel_l2, rel_energy):
            fh.write(f"{t:.17g},{a:.17g},{b:.17g}\n")


TRAJECTORY_MAGIC = b"WEMPTRJ\0"


def dump_states(path, times, states) -> None:
    """Binary dump: 16-byte header (8-byte magic, uint32 dof count, uint32
    state count), then per state one float64 time followed by dof float64
    values; everything little-endian."""
    states = np.asarray(states, dtype="<f8")
    times = np.asarray(times, dtype="<f8")
    count, dof = states.shape
    with open(path, "wb") as fh:
        fh.write(TRAJECTORY_MAGIC)
        fh.write(struct.pack("<II", dof, count))
        for t, row in zip(times, states):
            fh.write(struct.pack("<d", float(t)))
            fh.write(row.tobytes())


def load_states(path):
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != TRAJECTORY_MAGIC:
            raise ValueError(f"{path}: not a trajectory dump")
        dof, count = struct.unpack("<II", fh.read(8))
        times = np.empty(count)
        states = np.empty((count, dof))
        for i in range(count):
            times[i] = struct.unpack("<d", fh.read(8))[0]
            states[i] = np.frombuffer(fh.read(8 * dof), dtype="<f8")
    return times, states

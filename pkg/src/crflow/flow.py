"""Curvature energy, volume and Bondi-type functionals, and the downward
gradient flow of the energy.

The energy of the rescaled structure theta = e^{2 lambda} theta-hat is

    E(lambda) = integrate( W(lambda)^2 * e^{4 lambda} ),

and the flow evolves lambda by (minus) its volume-weighted gradient.  The
right-hand side is assembled from the *exact discrete* first variation:
with u = e^lambda, L-hat = 4 * sublap + What, and W = u^{-3} L-hat(u),

    grad E = 2 * ( u^{-3} L-hat(u W) - W^2 ),

which in the continuum collapses to 8 * conformal-sublaplacian of W (the
8 being 2 * yamabe_coefficient; gradient_check verifies rather than
assumes it).  Two consequences hold to rounding, not merely to
discretization order, because L-hat is exactly self-adjoint:

* integrate(rhs * e^{4 lambda}) = 0  — the flow is exactly tangent to
  the constant-volume manifold, so volume drift is purely a time-
  stepping error of the integrator's order;
* the weighted pairing <-rhs, phi> reproduces the finite-difference
  derivative of E in any direction phi, which is the gradient check.

Blow-up handling: overflow of e^{k lambda} is a *signal*, not an error.
Functionals return non-finite values, the right-hand side propagates
NaNs, and the run loop classifies the state via detect_blowup.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .conventions import ConventionLedger, DEFAULT_LEDGER
from .manifold import ModelGeometry, ScalarField
from .operators import (
    _div_form_values,
    _webster_core,
    linear_solve,
    stability_symbol_max,
)

__all__ = [
    "Diagnostics",
    "FlowState",
    "Trajectory",
    "energy",
    "volume",
    "bondi",
    "flow_rhs",
    "gradient_check",
    "make_state",
    "step_explicit",
    "step_imex",
    "detect_blowup",
    "auto_dt",
    "run",
]


@dataclass(frozen=True)
class Diagnostics:
    """Per-step scalar monitors of a flow state."""

    volume: float
    energy: float
    bondi: float
    w_min: float
    w_max: float
    dissipation: float
    overflow_flag: bool

    def as_dict(self) -> dict:
        return {
            "volume": self.volume,
            "energy": self.energy,
            "bondi": self.bondi,
            "w_min": self.w_min,
            "w_max": self.w_max,
            "dissipation": self.dissipation,
            "overflow_flag": self.overflow_flag,
        }


@dataclass
class FlowState:
    """The conformal exponent and its bookkeeping at one time level."""

    lam: ScalarField
    time: float
    step_index: int
    dt: float
    diagnostics: Diagnostics


@dataclass
class Trajectory:
    """Result of a run: outcome label plus the per-step record."""

    outcome: str
    dt: float
    times: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    argmax_trace: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    bondi_sup_rate: float = float("-inf")
    final_state: FlowState | None = None

    @property
    def energies(self):
        return [d.energy for d in self.diagnostics]

    @property
    def volumes(self):
        return [d.volume for d in self.diagnostics]


# ---------------------------------------------------------------------------
# functionals


def _weighted_sum(geom: ModelGeometry, values: np.ndarray) -> float:
    """Riemann sum against the geometric volume element; non-finite
    summands pass through as the blow-up signal."""
    with np.errstate(over="ignore", invalid="ignore"):
        return float(values.sum() * geom.cell_weight())


def energy(lam: ScalarField, ledger: ConventionLedger = DEFAULT_LEDGER) -> float:
    """Curvature energy integrate(W^2 e^{4 lambda}) of e^{2 lambda} theta-hat."""
    with np.errstate(over="ignore", invalid="ignore"):
        w = _curvature_values(lam, ledger)
        return _weighted_sum(lam.geometry, w * w * np.exp(4.0 * lam.values))


def volume(lam: ScalarField, ledger: ConventionLedger = DEFAULT_LEDGER) -> float:
    """Total volume integrate(e^{4 lambda}) of the rescaled structure."""
    with np.errstate(over="ignore", invalid="ignore"):
        return _weighted_sum(lam.geometry, np.exp(4.0 * lam.values))


def bondi(lam: ScalarField, ledger: ConventionLedger = DEFAULT_LEDGER) -> float:
    """Monitored quantity integrate(e^{5 lambda}).

    Its discrete time-derivative is recorded along runs and its running
    supremum reported; no bound on it is asserted anywhere.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        return _weighted_sum(lam.geometry, np.exp(5.0 * lam.values))


# ---------------------------------------------------------------------------
# gradient flow right-hand side


def _curvature_values(lam: ScalarField, ledger: ConventionLedger) -> np.ndarray:
    _, _, _, w = _webster_core(lam.geometry, lam.values, ledger)
    return w


def _rhs_values(lam: ScalarField, ledger: ConventionLedger) -> np.ndarray:
    """sigma * grad E with grad E = 2 (u^{-3} L-hat(uW) - W^2).

    The covariant term is assembled with the same background-term
    grouping as the curvature itself, so constant states cancel to
    exactly zero, not merely to rounding.
    """
    geom = lam.geometry
    if not lam.is_finite():
        return np.full_like(lam.values, np.nan)
    with np.errstate(over="ignore", invalid="ignore"):
        u, m2, em3, w = _webster_core(geom, lam.values, ledger)
        uw = u * w
        cov = em3 * (ledger.yamabe_coefficient
                     * _div_form_values(geom, uw, None, ledger)) \
            + (geom.background_curvature * m2) * w
        return ledger.flow_sign * 2.0 * (cov - w * w)


def flow_rhs(lam: ScalarField, ledger: ConventionLedger = DEFAULT_LEDGER) -> ScalarField:
    """Right-hand side of the volume-preserving downward energy flow.

    Exactly annihilates constants and has exactly zero e^{4 lambda}-
    weighted mean (tangency to the volume constraint).  A non-finite
    input produces an all-NaN output rather than an exception, so
    blow-up propagates to the detector.
    """
    return ScalarField(lam.geometry, _rhs_values(lam, ledger))


def gradient_check(lam: ScalarField, phi: ScalarField, h: float = 1e-5,
                   ledger: ConventionLedger = DEFAULT_LEDGER) -> float:
    """Relative defect between the weighted pairing of -rhs with phi and
    the central finite difference of the energy in direction phi."""
    geom = lam.geometry
    rhs = _rhs_values(lam, ledger)
    lhs = _weighted_sum(geom, -rhs * phi.values * np.exp(4.0 * lam.values))
    e_plus = energy(ScalarField(geom, lam.values + h * phi.values), ledger)
    e_minus = energy(ScalarField(geom, lam.values - h * phi.values), ledger)
    d_h = (e_plus - e_minus) / (2.0 * h)
    return abs(lhs - d_h) / max(abs(d_h), 1e-30)


# ---------------------------------------------------------------------------
# states and diagnostics


def _argmax_location(lam: ScalarField):
    """Indices and value of the largest |lambda|; non-finite cells rank
    highest, so the trace still localizes an incipient singularity."""
    vals = np.abs(lam.values)
    ranked = np.where(np.isnan(vals), np.inf, vals)  # NaN counts as blown
    flat = int(np.argmax(ranked))
    loc = tuple(int(c) for c in np.unravel_index(flat, vals.shape))
    return loc, float(vals.reshape(-1)[flat])


def make_state(lam: ScalarField, time: float, step_index: int, dt: float,
               ledger: ConventionLedger = DEFAULT_LEDGER) -> FlowState:
    """Assemble a FlowState with freshly computed diagnostics."""
    geom = lam.geometry
    with np.errstate(over="ignore", invalid="ignore"):
        w = _curvature_values(lam, ledger)
        m4 = np.exp(4.0 * lam.values)
        vol = _weighted_sum(geom, m4)
        ene = _weighted_sum(geom, w * w * m4)
        bon = _weighted_sum(geom, np.exp(5.0 * lam.values))
        rhs = _rhs_values(lam, ledger)
        dis = ledger.flow_sign * _weighted_sum(geom, rhs * rhs * m4)
        finite_w = np.isfinite(w)
        w_min = float(w.min()) if finite_w.all() else float("nan")
        w_max = float(w.max()) if finite_w.all() else float("nan")
    overflow = not (np.isfinite(vol) and np.isfinite(ene) and np.isfinite(bon)
                    and finite_w.all() and np.isfinite(rhs).all())
    diag = Diagnostics(volume=vol, energy=ene, bondi=bon, w_min=w_min,
                       w_max=w_max, dissipation=dis, overflow_flag=overflow)
    return FlowState(lam=lam, time=time, step_index=step_index, dt=dt,
                     diagnostics=diag)


def detect_blowup(state: FlowState,
                  ledger: ConventionLedger = DEFAULT_LEDGER) -> bool:
    """True iff the state is non-finite or |lambda| exceeds the
    classification threshold (chosen so e^{4 lambda} is still
    representable: classify before NaN contamination)."""
    v = state.lam.values
    if not np.isfinite(v).all():
        return True
    return bool(np.abs(v).max() > ledger.blowup_threshold)


# ---------------------------------------------------------------------------
# time stepping


def step_explicit(state: FlowState, dt: float,
                  ledger: ConventionLedger = DEFAULT_LEDGER) -> FlowState:
    """One classical four-stage Runge-Kutta step of the semi-discrete flow."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    geom = state.lam.geometry
    y = state.lam.values
    with np.errstate(over="ignore", invalid="ignore"):
        k1 = _rhs_values(ScalarField(geom, y), ledger)
        k2 = _rhs_values(ScalarField(geom, y + 0.5 * dt * k1), ledger)
        k3 = _rhs_values(ScalarField(geom, y + 0.5 * dt * k2), ledger)
        k4 = _rhs_values(ScalarField(geom, y + dt * k3), ledger)
        y_new = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return make_state(ScalarField(geom, y_new), state.time + dt,
                      state.step_index + 1, dt, ledger)


def step_imex(state: FlowState, dt: float,
              ledger: ConventionLedger = DEFAULT_LEDGER) -> FlowState:
    """One implicit-explicit Euler step with biharmonic stabilization:

        (I + dt c Delta-hat^2) lambda' = lambda + dt (rhs(lambda)
                                                      + c Delta-hat^2 lambda)

    with c = c_stab.  The shifted operator is symmetric positive
    definite, so the conjugate-gradient solve is well posed at any dt.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    geom = state.lam.geometry
    c = ledger.c_stab

    def bilap(v: np.ndarray) -> np.ndarray:
        return _div_form_values(geom, _div_form_values(geom, v, None, ledger),
                                None, ledger)

    y = state.lam.values
    with np.errstate(over="ignore", invalid="ignore"):
        rhs = _rhs_values(state.lam, ledger)
        b = y + dt * (rhs + c * bilap(y))
    if not np.isfinite(b).all():
        # blown-up state: skip the solve, propagate for classification
        return make_state(ScalarField(geom, np.full_like(y, np.nan)),
                          state.time + dt, state.step_index + 1, dt, ledger)

    def shifted(v: np.ndarray) -> np.ndarray:
        return v + (dt * c) * bilap(v)

    sol = linear_solve(shifted, ScalarField(geom, b), tol=ledger.cg_tol,
                       max_iter=ledger.cg_max_iter, ledger=ledger)
    return make_state(sol, state.time + dt, state.step_index + 1, dt, ledger)


def auto_dt(geom: ModelGeometry,
            ledger: ConventionLedger = DEFAULT_LEDGER) -> float:
    """Conservative explicit step size from the linearized symbol.

    Around a flat state the right-hand side linearizes to
    -(2b^2) Delta-hat^2 + lower order with 2b^2 = c_stab = 32, so the
    stiffest rate is c_stab * sigma^2 (+ a curvature correction on the
    sphere); the step keeps RK4 well inside its stability interval.
    """
    sigma = stability_symbol_max(geom, ledger)
    rate = ledger.c_stab * sigma * sigma \
        + 4.0 * ledger.yamabe_coefficient * abs(geom.background_curvature) * sigma
    return 0.2 / rate


_PLATEAU_FLOOR = 1e-300


def run(geom: ModelGeometry, lam0: ScalarField, *, integrator: str = "explicit",
        dt: float | str = "auto", max_time: float = 1.0,
        max_steps: int | None = None, plateau_tol: float | None = None,
        plateau_window: int | None = None, snapshot_every: int = 0,
        ledger: ConventionLedger = DEFAULT_LEDGER) -> Trajectory:
    """March the flow to one of four outcomes.

    Outcomes: ``blowup`` (non-finite state or |lambda| past threshold),
    ``converged`` (energy plateau after a genuine decrease),
    ``plateau`` (energy plateau without one — e.g. data that starts
    stationary), ``max_time`` (time or step budget exhausted first).
    Deterministic for fixed inputs.  One Diagnostics record per step,
    including step 0; snapshots of lambda every ``snapshot_every`` steps
    (0 disables them) plus the final state.
    """
    if integrator not in ("explicit", "imex"):
        raise ValueError(f"unknown integrator {integrator!r}")
    if lam0.geometry is not geom:
        raise ValueError("initial data not on the supplied geometry")
    plateau_tol = ledger.plateau_tol if plateau_tol is None else float(plateau_tol)
    plateau_window = (ledger.plateau_window if plateau_window is None
                      else int(plateau_window))
    dt_val = auto_dt(geom, ledger) if dt == "auto" else float(dt)
    if dt_val <= 0:
        raise ValueError("dt must be positive")
    stepper = step_explicit if integrator == "explicit" else step_imex
    if max_steps is None:
        max_steps = int(np.ceil(max_time / dt_val)) + 1

    state = make_state(lam0, 0.0, 0, dt_val, ledger)
    traj = Trajectory(outcome="max_time", dt=dt_val)
    last_bondi = state.diagnostics.bondi

    def record(st: FlowState) -> None:
        nonlocal last_bondi
        traj.times.append(st.time)
        traj.diagnostics.append(st.diagnostics)
        loc, peak = _argmax_location(st.lam)
        traj.argmax_trace.append((st.step_index, loc, peak))
        if st.step_index > 0:
            rate = (st.diagnostics.bondi - last_bondi) / st.dt
            if np.isfinite(rate):
                traj.bondi_sup_rate = max(traj.bondi_sup_rate, rate)
            else:
                traj.bondi_sup_rate = float("inf")
        last_bondi = st.diagnostics.bondi
        if snapshot_every > 0 and st.step_index % snapshot_every == 0:
            traj.snapshots.append((st.step_index, st.lam.copy()))

    record(state)
    e_first = state.diagnostics.energy
    recent = [e_first]

    while True:
        if detect_blowup(state, ledger):
            traj.outcome = "blowup"
            break
        if len(recent) > plateau_window:
            rel_steps = [abs(recent[i + 1] - recent[i])
                         / max(abs(recent[i]), _PLATEAU_FLOOR)
                         for i in range(len(recent) - 1)]
            if max(rel_steps) < plateau_tol:
                dropped = state.diagnostics.energy < 0.99 * e_first
                traj.outcome = "converged" if dropped else "plateau"
                break
        if (state.step_index >= max_steps
                or state.time + dt_val > max_time * (1.0 + 1e-12)):
            traj.outcome = "max_time"
            break
        state = stepper(state, dt_val, ledger)
        record(state)
        recent.append(state.diagnostics.energy)
        if len(recent) > plateau_window + 1:
            recent.pop(0)

    if snapshot_every > 0 and (not traj.snapshots
                               or traj.snapshots[-1][0] != state.step_index):
        traj.snapshots.append((state.step_index, state.lam.copy()))
    traj.final_state = state
    return traj

"""Descending flow du/dt = -rho(J(u)) psi(u) v(u).

v is the normalized minimal-norm Riesz descent field scaled by (1 + ||u||);
rho is a piecewise-linear band cutoff on the energy value, psi an excision
cutoff around detected critical points.  Integration is explicit Euler with an
Armijo-style acceptance enforcing a guaranteed energy decrease per step, and a
step cap dt <= 1/(1+||u||) inside cone neighborhoods so each accepted step is a
convex combination of u and the invariance displacement u - v(u)/(1+||u||).
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .cones import RegionLabel, project_cone, region_of
from .energy import EnergyProblem, SlopeResult, energy, slope
from .mesh import DiscreteSpace

ARMIJO_C1 = 1e-4


class FlowError(RuntimeError):
    pass


class Termination(str, Enum):
    SLOPE_BELOW_TOL = "slope_below_tol"
    MAX_TIME = "max_time"
    MAX_STEPS = "max_steps"
    FIELD_VANISHED = "field_vanished"
    STEP_FAILURE = "step_failure"
    ENERGY_FLOOR = "energy_floor"     # optional early exit for basin classification


@dataclass(frozen=True)
class FlowConfig:
    mu0: float = 0.25
    level_r: float | None = None      # deformation band center; None = solver mode
    eps: float = 0.05
    eps_bar: float = 0.15
    excision_delta: float = 0.0
    excised_points: tuple = ()
    dt0: float = 0.05
    dt_min: float = 1e-12
    dt_max: float = 0.5
    disp_cap: float = 0.5             # per-step displacement bound: dt <= disp_cap/(1+||u||)
    tol_m: float = 1e-6
    t_max: float = 50.0
    max_steps: int = 20000
    j_floor: float | None = None      # stop once the energy falls below this level
    checkpoint_every: int | None = None

    def __post_init__(self):
        if not 0 < self.eps < self.eps_bar:
            raise ValueError("band widths must satisfy 0 < eps < eps_bar")
        if not self.dt_min <= self.dt0 <= self.dt_max:
            raise ValueError("need dt_min <= dt0 <= dt_max")
        if self.tol_m <= 0:
            raise ValueError("tol_m must be positive")
        if self.excised_points and self.excision_delta <= 0:
            raise ValueError("excised points require a positive excision radius")


@dataclass
class FlowState:
    t: float
    u: np.ndarray
    j: float
    m: float
    d_plus: float
    d_minus: float
    label: RegionLabel
    dt_used: float

    def summary(self) -> dict:
        return {"t": self.t, "j": self.j, "m": self.m, "d_plus": self.d_plus,
                "d_minus": self.d_minus, "label": self.label.value, "dt": self.dt_used}


@dataclass
class Trajectory:
    states: list[FlowState]
    termination: Termination
    invariance_log: list[dict] = field(default_factory=list)

    @property
    def final(self) -> FlowState:
        return self.states[-1]

    def to_csv(self, header_lines: tuple[str, ...] = ()) -> str:
        buf = io.StringIO()
        for line in header_lines:
            buf.write(f"# {line}\n")
        buf.write("t,j,m,d_plus,d_minus,label,dt\n")
        for s in self.states:
            buf.write(f"{s.t!r},{s.j!r},{s.m!r},{s.d_plus!r},{s.d_minus!r},"
                      f"{s.label.value},{s.dt_used!r}\n")
        return buf.getvalue()


def cutoff_rho(config: FlowConfig, j_value: float) -> float:
    """Band cutoff on the energy value; identically 1 in solver mode."""
    if config.level_r is None:
        return 1.0
    z = abs(j_value - config.level_r)
    if z <= config.eps:
        return 1.0
    if z >= config.eps_bar:
        return 0.0
    return (config.eps_bar - z) / (config.eps_bar - config.eps)


def cutoff_psi(config: FlowConfig, space: DiscreteSpace, u: np.ndarray) -> float:
    """Excision cutoff: 0 within delta of an excised point, 1 beyond 2*delta."""
    if not config.excised_points:
        return 1.0
    d = min(space.h1_norm(u - np.asarray(p)) for p in config.excised_points)
    if d <= config.excision_delta:
        return 0.0
    if d >= 2.0 * config.excision_delta:
        return 1.0
    return (d - config.excision_delta) / config.excision_delta


def pseudo_gradient(prob: EnergyProblem, u: np.ndarray,
                    slope_result: SlopeResult | None = None) -> np.ndarray:
    """Descent field (1+||u||) * min(m,1) * v*/m; zero at critical points.

    Satisfies ||v|| <= (1+||u||) and <g*, v> = (1+||u||) m^2 / max(m, 1).
    """
    res = slope_result if slope_result is not None else slope(prob, u)
    if res.value <= 1e-300:
        return prob.space.zero_field()
    norm_u = prob.space.h1_norm(u)
    return (1.0 + norm_u) * min(res.value, 1.0) / res.value * res.riesz


def _make_state(prob: EnergyProblem, u: np.ndarray, t: float, dt_used: float,
                mu0: float, warm: dict) -> FlowState:
    pr_p = project_cone(prob.space, u, 1, warm_active=warm.get("act_p"))
    pr_m = project_cone(prob.space, u, -1, warm_active=warm.get("act_m"))
    warm["act_p"], warm["act_m"] = pr_p.active, pr_m.active
    res = slope(prob, u, w0=warm.get("w"))
    warm["w"] = res.selection
    warm["slope"] = res
    label = region_of(prob.space, u, mu0, dists=(pr_p.distance, pr_m.distance))
    return FlowState(t, u.copy(), energy(prob, u), res.value,
                     pr_p.distance, pr_m.distance, label, dt_used)


def integrate_flow(prob: EnergyProblem, u0: np.ndarray, config: FlowConfig,
                   checkpoint_path: str | None = None,
                   _resume: tuple[list[FlowState], float, dict] | None = None) -> Trajectory:
    """Energy-monotone explicit Euler integration of the descending flow.

    A step from u with field V = rho*psi*v(u) is accepted only if the energy
    drops by at least ARMIJO_C1 * dt * rho*psi * m(u)^2/(1+||u||); dt halves on
    rejection and grows 1.5x on acceptance within [dt_min, cap].
    """
    space = prob.space
    warm: dict = {}
    if _resume is not None:
        states, dt, warm = _resume
        log: list[dict] = []
        # refresh warm caches at the resumed head
        head = states[-1]
        _make_state(prob, head.u, head.t, head.dt_used, config.mu0, warm)
    else:
        u0 = space.check_field(u0)
        states = [_make_state(prob, u0, 0.0, 0.0, config.mu0, warm)]
        dt = config.dt0
        log = []

    termination = None
    while True:
        s = states[-1]
        norm_u = space.h1_norm(s.u)
        if (1.0 + norm_u) * s.m <= config.tol_m:
            termination = Termination.SLOPE_BELOW_TOL
            break
        if s.t >= config.t_max:
            termination = Termination.MAX_TIME
            break
        if len(states) > config.max_steps:
            termination = Termination.MAX_STEPS
            break
        if config.j_floor is not None and s.j < config.j_floor:
            termination = Termination.ENERGY_FLOOR
            break
        cut = cutoff_rho(config, s.j) * cutoff_psi(config, space, s.u)
        if cut <= 1e-14:
            termination = Termination.FIELD_VANISHED
            break
        v = pseudo_gradient(prob, s.u, warm.get("slope"))
        big_v = cut * v

        # ||V|| <= (1+||u||), so the displacement cap bounds each step's arc
        # length; trajectories then track the flow through saddle regions
        cap = min(config.dt_max, config.disp_cap / (1.0 + norm_u))
        if s.label is not RegionLabel.SIGN_CHANGING:
            # keeps each accepted step a convex combination with the
            # invariance displacement, so cone neighborhoods stay invariant
            cap = min(cap, 1.0 / (1.0 + norm_u))
        dt = min(max(dt, config.dt_min), cap)

        accepted = False
        while dt >= config.dt_min:
            trial = s.u - dt * big_v
            j_trial = energy(prob, trial)
            required = ARMIJO_C1 * dt * cut * s.m**2 / (1.0 + norm_u)
            slack = 5e-14 * (1.0 + abs(s.j))
            if j_trial <= s.j and (s.j - j_trial) >= required - slack:
                accepted = True
                break
            dt *= 0.5
        if not accepted:
            termination = Termination.STEP_FAILURE
            break

        new = _make_state(prob, trial, s.t + dt, dt, config.mu0, warm)
        states.append(new)
        if new.label != s.label:
            log.append({"step": len(states) - 1, "event": "region_change",
                        "from": s.label.value, "to": new.label.value})
        if config.excised_points:
            d = min(space.h1_norm(new.u - np.asarray(p)) for p in config.excised_points)
            if d <= config.excision_delta:
                log.append({"step": len(states) - 1, "event": "excised_ball",
                            "distance": float(d)})
        dt = min(dt * 1.5, config.dt_max)
        if (checkpoint_path and config.checkpoint_every
                and (len(states) - 1) % config.checkpoint_every == 0):
            save_checkpoint(checkpoint_path, states, dt)

    traj = Trajectory(states, termination, log)
    if checkpoint_path and config.checkpoint_every:
        save_checkpoint(checkpoint_path, states, dt)
    return traj


# -- invariance monitoring ------------------------------------------------------


@dataclass
class InvarianceVerdict:
    cone_invariant: bool
    energy_monotone: bool
    gronwall_ok: bool
    excision_logged: bool
    violations: list[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return (self.cone_invariant and self.energy_monotone
                and self.gronwall_ok and self.excision_logged)

    def to_dict(self) -> dict:
        return {"cone_invariant": self.cone_invariant,
                "energy_monotone": self.energy_monotone,
                "gronwall_ok": self.gronwall_ok,
                "excision_logged": self.excision_logged,
                "passed": self.passed, "violations": self.violations}


def monitor_invariance(space: DiscreteSpace, traj: Trajectory, mu0: float,
                       config: FlowConfig | None = None,
                       cone_tol: float = 1e-7) -> InvarianceVerdict:
    """Check cone invariance, energy monotonicity, the Gronwall norm bound, and
    that every excised-ball visit appears in the trajectory log."""
    if not traj.states:
        raise ValueError("empty trajectory")
    violations: list[dict] = []
    first = traj.states[0]

    cone_ok = True
    if first.label in (RegionLabel.POSITIVE, RegionLabel.OVERLAP):
        for i, s in enumerate(traj.states):
            if s.d_plus > mu0 + cone_tol:
                cone_ok = False
                violations.append({"index": i, "kind": "left_positive_neighborhood",
                                   "d_plus": s.d_plus})
    if first.label in (RegionLabel.NEGATIVE, RegionLabel.OVERLAP):
        for i, s in enumerate(traj.states):
            if s.d_minus > mu0 + cone_tol:
                cone_ok = False
                violations.append({"index": i, "kind": "left_negative_neighborhood",
                                   "d_minus": s.d_minus})

    energy_ok = True
    for i, (a, b) in enumerate(zip(traj.states, traj.states[1:]), start=1):
        if b.j > a.j:
            energy_ok = False
            violations.append({"index": i, "kind": "energy_increase", "jump": b.j - a.j})

    gronwall_ok = True
    norm0 = space.h1_norm(first.u)
    for i, s in enumerate(traj.states):
        if space.h1_norm(s.u) > (norm0 + 1.0) * np.exp(2.0 * s.t) + 1e-9:
            gronwall_ok = False
            violations.append({"index": i, "kind": "gronwall", "t": s.t})

    excision_ok = True
    if config is not None and config.excised_points:
        logged = {e["step"] for e in traj.invariance_log if e["event"] == "excised_ball"}
        for i, s in enumerate(traj.states[1:], start=1):
            d = min(space.h1_norm(s.u - np.asarray(p)) for p in config.excised_points)
            if d <= config.excision_delta and i not in logged:
                excision_ok = False
                violations.append({"index": i, "kind": "unlogged_excision_visit"})

    return InvarianceVerdict(cone_ok, energy_ok, gronwall_ok, excision_ok, violations)


def estimate_slope_floor(space: DiscreteSpace, traj: Trajectory,
                         level_r: float, eps_bar: float) -> float:
    """Empirical floor of (1+||u||) m over band-visiting states (the paper-side
    constant is existential; this estimate drives the deformation horizon)."""
    vals = [(1.0 + space.h1_norm(s.u)) * s.m for s in traj.states
            if abs(s.j - level_r) <= eps_bar and s.m > 0]
    return min(vals) if vals else 0.0


# -- checkpointing ---------------------------------------------------------------


def save_checkpoint(path: str, states: list[FlowState], dt_next: float,
                    extra: dict | None = None):
    payload = {
        "dt_next": dt_next,
        "step": len(states) - 1,
        "states": [dict(s.summary(), u=[float(x) for x in s.u]) for s in states],
    }
    if extra:
        payload.update(extra)
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True)


def load_checkpoint(path: str) -> tuple[list[FlowState], float, dict]:
    with open(path) as fh:
        payload = json.load(fh)
    states = [FlowState(t=row["t"], u=np.asarray(row["u"]), j=row["j"], m=row["m"],
                        d_plus=row["d_plus"], d_minus=row["d_minus"],
                        label=RegionLabel(row["label"]), dt_used=row["dt"])
              for row in payload["states"]]
    meta = {k: v for k, v in payload.items() if k not in ("states", "dt_next", "step")}
    return states, float(payload["dt_next"]), meta


def resume_flow(prob: EnergyProblem, config: FlowConfig, checkpoint_path: str) -> Trajectory:
    states, dt_next, _ = load_checkpoint(checkpoint_path)
    return integrate_flow(prob, states[-1].u, config,
                          checkpoint_path=checkpoint_path,
                          _resume=(states, dt_next, {}))

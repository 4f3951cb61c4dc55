"""Nonsmooth energy J(u) = 1/2 u'Au - lam * sum_i M_ii j(x_i, u_i), its
per-node subdifferential box {Au - lam*M*w : w_i in [lo_i, hi_i]}, the slope
m(u) (minimal dual norm over the box), and the set-relative slope m_D(u).

m(u) is a box-constrained quadratic program solved by projected gradient with
fixed step 1/L.  m_D(u) is evaluated through the exact support-function
splitting of (u - D) intersected with the unit ball, which turns the inf-sup
into a bounded convex program; stationarity on D is cross-checked by the
normal-cone criterion (0 in the box plus the cone of active outward normals).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from ._serial import dumps
from .cones import ConeNeighborhood, project_cone
from .mesh import DiscreteSpace
from .potential import PiecewisePotential


class SlopeError(RuntimeError):
    """Slope QP failed to reach its projected-gradient tolerance."""


@dataclass(frozen=True)
class EnergyProblem:
    space: DiscreteSpace
    potential: PiecewisePotential
    lam: float

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")

    def coefficient(self) -> np.ndarray | float:
        return self.potential.coefficient_values(self.space.grid.coords())


@dataclass
class SubdifferentialBox:
    base: np.ndarray          # A u
    lo: np.ndarray            # per-node selection bounds (coefficient included)
    hi: np.ndarray
    lam: float
    weights: np.ndarray       # diagonal of M

    def gradient_vector(self, w: np.ndarray) -> np.ndarray:
        return self.base - self.lam * self.weights * w

    def support_max(self, d: np.ndarray) -> float:
        """max over the box of <x*, d>."""
        return float(self.base @ d - self.lam * np.sum(
            self.weights * np.minimum(self.lo * d, self.hi * d)))

    def support_min(self, d: np.ndarray) -> float:
        """min over the box of <x*, d>; the dual function of the m_D saddle."""
        return float(self.base @ d - self.lam * np.sum(
            self.weights * np.maximum(self.lo * d, self.hi * d)))


def energy(prob: EnergyProblem, u: np.ndarray) -> float:
    u = prob.space.check_field(u)
    quad = 0.5 * float(u @ (prob.space.A @ u))
    c = prob.coefficient()
    pot = float(np.sum(c * prob.space.M_diag * prob.potential.value(u)))
    return quad - prob.lam * pot


def subdifferential_box(prob: EnergyProblem, u: np.ndarray) -> SubdifferentialBox:
    u = prob.space.check_field(u)
    lo, hi = prob.potential.interval_arrays(u)
    c = prob.coefficient()
    return SubdifferentialBox(
        base=prob.space.A @ u, lo=c * lo, hi=c * hi,
        lam=prob.lam, weights=prob.space.M_diag,
    )


@dataclass
class SlopeResult:
    value: float
    selection: np.ndarray     # minimizing w*
    certificate: np.ndarray   # g* = Au - lam*M*w*
    riesz: np.ndarray         # v* = A^-1 g*
    iterations: int
    converged: bool

    def to_dict(self) -> dict:
        return {"value": self.value, "iterations": self.iterations,
                "converged": self.converged,
                "certificate_dual_norm": self.value,
                "riesz_sup_norm": float(np.max(np.abs(self.riesz)))}

    def to_json(self) -> str:
        return dumps(self.to_dict())


def _pg_step_bound(prob: EnergyProblem) -> float:
    """Upper bound on the Lipschitz constant of the box-QP gradient.

    F(w) = r'A^-1 r with r affine in w; hess = 2 lam^2 M A^-1 M and
    A >= lambda_1 * min(M) in the generalized Rayleigh sense.
    """
    space = prob.space
    m_max = float(np.max(space.M_diag))
    m_min = float(np.min(space.M_diag))
    return 2.0 * prob.lam**2 * m_max**2 / (space.lambda1 * m_min)


def _box_dual_qp(space: DiscreteSpace, box: SubdifferentialBox, shift: np.ndarray,
                 w0: np.ndarray | None, tol: float, max_iter: int,
                 step_bound: float) -> tuple[np.ndarray, int]:
    """Projected gradient for min over box selections w of the dual norm of
    (base + shift) - lam*M*w; returns (w*, iterations)."""
    lo, hi = box.lo, box.hi
    width = hi - lo
    free = width > 1e-14 * (1.0 + np.abs(lo))
    w = np.clip(w0, lo, hi) if w0 is not None else 0.5 * (lo + hi)
    w[~free] = lo[~free]
    iterations = 0
    if free.any():
        step = 1.0 / step_bound
        for iterations in range(1, max_iter + 1):
            g = box.gradient_vector(w) + shift
            v = space.solve(g)
            grad = -2.0 * box.lam * box.weights * v
            trial = np.clip(w - grad, lo, hi)
            trial[~free] = w[~free]
            pg = w - trial
            if float(np.linalg.norm(pg)) <= tol:
                break
            w_new = np.clip(w - step * grad, lo, hi)
            w_new[~free] = w[~free]
            w = w_new
        else:
            raise SlopeError(
                f"projected gradient did not reach {tol:.1e} in {max_iter} iterations "
                f"(residual {float(np.linalg.norm(pg)):.3e})")
    return w, iterations


def slope(prob: EnergyProblem, u: np.ndarray, w0: np.ndarray | None = None,
          tol: float = 1e-10, max_iter: int = 100000) -> SlopeResult:
    """m(u) = min over box selections w of the dual norm of Au - lam*M*w.

    Degenerate (pointwise) box coordinates are pinned; the free block runs
    projected gradient with fixed step 1/L until the unit-step projected
    gradient has norm <= tol.
    """
    space = prob.space
    box = subdifferential_box(prob, u)
    w, iterations = _box_dual_qp(space, box, np.zeros(space.dim), w0, tol,
                                 max_iter, _pg_step_bound(prob))
    g = box.gradient_vector(w)
    v = space.solve(g)
    value = float(np.sqrt(max(g @ v, 0.0)))
    return SlopeResult(value, w, g, v, iterations, True)


# -- set-relative slope --------------------------------------------------------


SetSpec = ConeNeighborhood | tuple[ConeNeighborhood, ConeNeighborhood] | None
# None = whole space; a pair means the intersection D^+(mu) cap D^-(mu).


@dataclass
class SetSlopeResult:
    value: float
    gap: float                # smoothing + optimizer slack estimate
    selection: np.ndarray
    converged: bool
    iterations: int

    def to_dict(self) -> dict:
        return {"value": self.value, "gap": self.gap, "converged": self.converged,
                "iterations": self.iterations}

    def to_json(self) -> str:
        return dumps(self.to_dict())


def _set_signs(region: SetSpec) -> tuple[ConeNeighborhood, ...]:
    if region is None:
        return ()
    if isinstance(region, ConeNeighborhood):
        return (region,)
    return tuple(region)


def slope_on_set(prob: EnergyProblem, u: np.ndarray, region: SetSpec,
                 tol: float = 1e-7, max_iter: int = 400) -> SetSlopeResult:
    """m_D(u): inf over subgradients of the sup of <x*, u-y> over y in D near u.

    Uses the exact Fenchel splitting of the support function of (u-D) cap B(0,1):
    for D = D^+(mu) this is

        inf over w in box, s >= 0 of  s'u + mu*||s||_* + ||g(w) - s||_* ,

    with the mirrored multiplier for D^-(mu) and both for the intersection.
    Dual norms are smoothed by sqrt(.^2 + eps^2) with eps driven to ~1e-9 of
    the problem scale; the reported gap bounds the smoothing bias.
    """
    space = prob.space
    u = space.check_field(u)
    parts = _set_signs(region)
    if not parts:
        res = slope(prob, u)
        return SetSlopeResult(res.value, 0.0, res.selection, True, res.iterations)

    box = subdifferential_box(prob, u)
    n = space.dim
    n_mult = len(parts)
    w_mid = 0.5 * (box.lo + box.hi)
    scale = max(space.dual_norm(box.gradient_vector(w_mid)), 1e-8)

    def objective(x, eps):
        w = x[:n]
        combo = box.gradient_vector(w)
        val = 0.0
        grad = np.zeros_like(x)
        for k, part in enumerate(parts):
            m_k = x[n + k * n: n + (k + 1) * n]
            sgn = part.sign
            combo = combo - sgn * m_k
            val += sgn * float(m_k @ u)
            grad[n + k * n: n + (k + 1) * n] += sgn * u
            km = space.solve(m_k)
            nrm = float(np.sqrt(m_k @ km + eps * eps))
            val += part.mu * nrm
            grad[n + k * n: n + (k + 1) * n] += part.mu * km / nrm
        kc = space.solve(combo)
        nrm_c = float(np.sqrt(combo @ kc + eps * eps))
        val += nrm_c
        grad[:n] += -box.lam * box.weights * kc / nrm_c
        for k, part in enumerate(parts):
            grad[n + k * n: n + (k + 1) * n] += -part.sign * kc / nrm_c
        return val, grad

    bounds = [(float(l), float(h)) for l, h in zip(box.lo, box.hi)]
    bounds += [(0.0, None)] * (n * n_mult)
    x = np.concatenate([w_mid, np.zeros(n * n_mult)])
    total_iters = 0
    ok = True
    val = float("inf")
    eps_final = 1e-9 * scale
    for eps in (1e-3 * scale, 1e-6 * scale, eps_final):
        res = minimize(objective, x, args=(eps,), jac=True, method="L-BFGS-B",
                       bounds=bounds, options={"maxiter": max_iter, "ftol": 1e-14,
                                               "gtol": tol * 1e-2})
        x = res.x
        val = float(res.fun)
        total_iters += int(res.nit)
        ok = ok and (res.status in (0, 2))
    gap = (n_mult + 1) * eps_final + tol
    return SetSlopeResult(max(val, 0.0), gap, x[:n], ok, total_iters)


def stationarity_residual(prob: EnergyProblem, u: np.ndarray, region: SetSpec,
                          activity_tol: float = 1e-8, rounds: int = 300) -> float:
    """Normal-cone stationarity certificate for u relative to D.

    Returns min over box selections w and multipliers t >= 0 of the dual norm of
    Au - lam*M*w + sum_k t_k A n_k, where n_k are unit outward normals of the
    active cone-distance constraints at u.  Zero iff 0 in dJ(u) + N_D(u).
    Solved by exact alternating minimization: each multiplier is a clipped 1D
    quadratic, the selection block is the slope projected-gradient QP.
    """
    space = prob.space
    u = space.check_field(u)
    box = subdifferential_box(prob, u)
    normals = []
    for part in _set_signs(region):
        pr = project_cone(space, u, part.sign)
        if pr.distance >= part.mu - activity_tol and pr.distance > 1e-14:
            normals.append(pr.residual / pr.distance)
    k = len(normals)
    a_normals = [space.A @ nrm for nrm in normals]
    nn = [float(nrm @ an) for nrm, an in zip(normals, a_normals)]  # ||n||_A^2

    t = np.zeros(k)
    w = 0.5 * (box.lo + box.hi)
    step_bound = _pg_step_bound(prob)
    value = np.inf
    for _ in range(rounds):
        shift = sum(t[i] * a_normals[i] for i in range(k)) if k else np.zeros(space.dim)
        w, _ = _box_dual_qp(space, box, shift, w, 1e-12, 100000, step_bound)
        r = box.gradient_vector(w) + shift
        for i in range(k):
            # exact 1D minimization in t_i holding everything else fixed
            r_wo = r - t[i] * a_normals[i]
            t_new = max(0.0, -float(normals[i] @ r_wo) / nn[i])
            r = r_wo + t_new * a_normals[i]
            t[i] = t_new
        new_value = float(r @ space.solve(r))
        if abs(value - new_value) <= 1e-15 * (1.0 + abs(new_value)):
            value = new_value
            break
        value = new_value
        if k == 0:
            break
    return float(np.sqrt(max(value, 0.0)))


# -- Palais-Smale monitor -------------------------------------------------------


@dataclass
class PSReport:
    product_tail: float
    product_ok: bool
    energy_spread: float
    energy_ok: bool
    cauchy_increment: float
    cauchy_ok: bool
    energy_limit: float
    slope_limit: float
    norm_limit: float

    @property
    def passed(self) -> bool:
        return self.product_ok and self.energy_ok and self.cauchy_ok

    def to_dict(self) -> dict:
        return {"product_tail": self.product_tail, "product_ok": self.product_ok,
                "energy_spread": self.energy_spread, "energy_ok": self.energy_ok,
                "cauchy_increment": self.cauchy_increment, "cauchy_ok": self.cauchy_ok,
                "passed": self.passed, "energy_limit": self.energy_limit,
                "slope_limit": self.slope_limit, "norm_limit": self.norm_limit}

    def to_json(self) -> str:
        return dumps(self.to_dict())


def ps_monitor(space: DiscreteSpace, history, window: int = 10,
               product_tol: float = 1e-5, energy_tol: float = 1e-6,
               cauchy_tol: float = 1e-4) -> PSReport:
    """Testable shadow of the compactness condition on a finite history.

    ``history`` is a sequence of (u, J, m) triples.  Passing means the weighted
    slope (1+||u||) m decays below tolerance over the tail, the energies
    stabilize, and the tail of the u-sequence is Cauchy in the energy norm.
    """
    if len(history) == 0:
        raise ValueError("ps_monitor needs a nonempty history")
    tail = list(history)[-max(2, min(window, len(history))):]
    us = [space.check_field(t[0]) for t in tail]
    js = np.array([float(t[1]) for t in tail])
    products = np.array([(1.0 + space.h1_norm(u)) * float(t[2])
                         for u, t in zip(us, tail)])
    product_tail = float(products[-1])
    product_ok = product_tail <= product_tol and (
        len(products) < 3 or products[-1] <= products[0] + product_tol)
    energy_spread = float(js.max() - js.min())
    energy_ok = energy_spread <= energy_tol * (1.0 + float(np.abs(js).max()))
    if len(us) >= 2:
        increments = [space.h1_norm(b - a) for a, b in zip(us, us[1:])]
        # late increments are what a Cauchy tail controls
        cauchy_increment = float(max(increments[-3:]))
    else:
        cauchy_increment = 0.0
    cauchy_ok = cauchy_increment <= cauchy_tol
    return PSReport(
        product_tail, product_ok, energy_spread, energy_ok,
        cauchy_increment, cauchy_ok,
        energy_limit=float(js[-1]), slope_limit=float(tail[-1][2]),
        norm_limit=space.h1_norm(us[-1]),
    )

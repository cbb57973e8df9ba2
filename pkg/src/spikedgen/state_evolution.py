"""Scalar asymptotics: state evolution, mutual information, thresholds.

The Bayes-optimal overlaps (q_v, q_z, q_hat_z) [plus q_u for Wishart] obey

    q_hat_z = 2 alpha d_{q_z} Psi_out(q_v / Delta, q_z)
    q_z'    = 2 d Psi_z(q_hat_z)
    q_v'    = 2 d_{q_v} Psi_out(q_v / Delta, q_z)

(Wishart replaces the first argument by beta q_u / Delta and adds
q_u' = 2 d Psi_u(q_v / Delta)).  MMSE_v = rho_v - q_v* at the fixed point.
The phase transition Delta_c is where the spectral radius of the Jacobian of
this map at the all-zeros fixed point crosses one.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import channels as ch
from .priors import (Activation, SeparablePrior, Wigner, Wishart,
                     null_channel_moments, rho_v)

log = logging.getLogger(__name__)

_EDGE = 1e-12  # keep q_z strictly inside [0, rho_z) so V = rho_z - q_z > 0


@dataclass(frozen=True)
class OverlapState:
    q_v: float
    q_z: float
    q_hat_z: float
    q_u: float | None = None

    def as_tuple(self):
        t = (self.q_v, self.q_z, self.q_hat_z)
        return t if self.q_u is None else t + (self.q_u,)


@dataclass(frozen=True)
class SEConfig:
    damping: float = 0.5          # applied to q_hat_z only
    tol: float = 1e-10
    max_iter: int = 5000
    init: str = "uninformative"   # or "informative"
    eps_init: float = 1e-6
    quad_order: int = 64

    def __post_init__(self):
        if not (0 <= self.damping < 1):
            raise ValueError("damping must be in [0, 1)")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.init not in ("uninformative", "informative"):
            raise ValueError(f"unknown init {self.init!r}")
        if self.eps_init <= 0:
            raise ValueError("eps_init must be positive for the uninformative init")


@dataclass(frozen=True)
class PhasePoint:
    alpha: float
    delta: float
    mmse_v: float
    q_v_star: float
    iters: int
    converged: bool
    init_used: str
    q_z_star: float = 0.0
    q_hat_z_star: float = 0.0
    q_u_star: float | None = None
    init_gap: float = float("nan")   # |q_v_uninf - q_v_inf| when both converged
    runs: dict = field(default_factory=dict, repr=False)


def _clamp(value: float, lo: float, hi: float, name: str) -> float:
    if value < lo or value > hi:
        log.debug("clamped %s = %.3e to [%g, %g]", name, value, lo, hi)
        return min(max(value, lo), hi)
    return value


def _clamp_state(q_v, q_z, q_hat_z, rv, rz, q_u=None, ru=None):
    q_v = _clamp(q_v, 0.0, rv, "q_v")
    q_z = _clamp(q_z, 0.0, rz * (1.0 - _EDGE), "q_z")
    q_hat_z = _clamp(q_hat_z, 0.0, float("inf"), "q_hat_z")
    if q_u is not None:
        q_u = _clamp(q_u, 0.0, ru, "q_u")
    return q_v, q_z, q_hat_z, q_u


def se_step_wigner(state: OverlapState, delta: float, alpha: float,
                   act: Activation, latent: SeparablePrior,
                   damping: float = 0.0, order: int = 64) -> OverlapState:
    """One synchronous update of the Wigner state evolution."""
    rv = rho_v(act, latent)
    gx, gy = ch.psi_out_grads(act, latent, state.q_v / delta, state.q_z,
                              order=order, adaptive=False)
    q_hat_new = 2.0 * alpha * gy
    q_hat = (1.0 - damping) * q_hat_new + damping * state.q_hat_z
    q_z = ch.psi_z_grad2(latent, q_hat, order=order)
    q_v = 2.0 * gx
    q_v, q_z, q_hat, _ = _clamp_state(q_v, q_z, q_hat, rv, latent.rho)
    return OverlapState(q_v=q_v, q_z=q_z, q_hat_z=q_hat)


def se_step_wishart(state: OverlapState, delta: float, alpha: float,
                    beta: float, act: Activation, latent: SeparablePrior,
                    prior_u: SeparablePrior, damping: float = 0.0,
                    order: int = 64) -> OverlapState:
    """One update of the Wishart state evolution (beta-scaled argument)."""
    rv = rho_v(act, latent)
    q_u = state.q_u if state.q_u is not None else 0.0
    gx, gy = ch.psi_out_grads(act, latent, beta * q_u / delta, state.q_z,
                              order=order, adaptive=False)
    q_hat_new = 2.0 * alpha * gy
    q_hat = (1.0 - damping) * q_hat_new + damping * state.q_hat_z
    q_z = ch.psi_z_grad2(latent, q_hat, order=order)
    q_v = 2.0 * gx
    q_u_new = ch.psi_u_grad2(prior_u, state.q_v / delta, order=order)
    q_v, q_z, q_hat, q_u_new = _clamp_state(q_v, q_z, q_hat, rv, latent.rho,
                                            q_u_new, prior_u.rho)
    return OverlapState(q_v=q_v, q_z=q_z, q_hat_z=q_hat, q_u=q_u_new)


def _init_state(init: str, eps: float, rv: float, rz: float,
                wishart: bool, ru: float = 1.0) -> OverlapState:
    if init == "uninformative":
        qv, qz = eps, eps
        qu = eps if wishart else None
    else:
        qv, qz = rv * (1.0 - 1e-6), rz * (1.0 - 1e-6)
        qu = ru * (1.0 - 1e-6) if wishart else None
    return OverlapState(q_v=qv, q_z=qz, q_hat_z=0.0, q_u=qu)


def _iterate(state: OverlapState, step, cfg: SEConfig):
    converged = False
    it = 0
    diff = float("inf")
    for it in range(1, cfg.max_iter + 1):
        new = step(state)
        diff = max(abs(a - b) for a, b in zip(new.as_tuple(), state.as_tuple()))
        state = new
        if diff < cfg.tol:
            converged = True
            break
    return state, it, converged, diff


def se_fixed_point(cfg: SEConfig, delta: float, alpha: float, act: Activation,
                   latent: SeparablePrior,
                   model: Wigner | Wishart = Wigner()) -> PhasePoint:
    """Iterate the SE map from both inits; report the one selected by cfg.init.

    Both runs are recorded (the stable fixed point is expected to be unique,
    and `init_gap` tracks the observed |q_v| difference as a regression).
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    rv = rho_v(act, latent)
    wishart = isinstance(model, Wishart)
    if wishart:
        step = lambda s: se_step_wishart(s, delta, alpha, model.beta, act,
                                         latent, model.prior_u,
                                         damping=cfg.damping, order=cfg.quad_order)
        ru = model.prior_u.rho
    else:
        step = lambda s: se_step_wigner(s, delta, alpha, act, latent,
                                        damping=cfg.damping, order=cfg.quad_order)
        ru = 1.0

    runs = {}
    for init in ("uninformative", "informative"):
        s0 = _init_state(init, cfg.eps_init, rv, latent.rho, wishart, ru)
        state, iters, converged, diff = _iterate(s0, step, cfg)
        runs[init] = {"state": state, "iters": iters, "converged": converged,
                      "final_change": diff}

    gap = float("nan")
    if runs["uninformative"]["converged"] and runs["informative"]["converged"]:
        gap = abs(runs["uninformative"]["state"].q_v
                  - runs["informative"]["state"].q_v)

    sel = runs[cfg.init]
    st = sel["state"]
    return PhasePoint(alpha=alpha, delta=delta, mmse_v=rv - st.q_v,
                      q_v_star=st.q_v, iters=sel["iters"],
                      converged=sel["converged"], init_used=cfg.init,
                      q_z_star=st.q_z, q_hat_z_star=st.q_hat_z,
                      q_u_star=st.q_u, init_gap=gap, runs=runs)


def mmse(q_v_star: float, rv: float) -> float:
    return rv - q_v_star


def matrix_mmse(q_v_star: float, rv: float) -> float:
    return rv ** 2 - q_v_star ** 2


def mutual_information(delta: float, alpha: float, act: Activation,
                       latent: SeparablePrior,
                       cfg: SEConfig | None = None) -> tuple[float, float]:
    """Replica mutual information density at the SE extremizer.

    i_RS = rho_v^2/(4 Delta) + q_v^2/(4 Delta)
           + (1/alpha) (q_z q_hat_z / 2 - Psi_z(q_hat_z))
           - Psi_out(q_v / Delta, q_z)
    """
    if alpha <= 0:
        raise ValueError("mutual information requires alpha > 0")
    cfg = cfg or SEConfig(init="informative")
    pp = se_fixed_point(cfg, delta, alpha, act, latent, Wigner())
    if not pp.converged and pp.runs[cfg.init]["final_change"] > 1e-6:
        # i_RS is stationary at the extremizer, so a near-converged state only
        # costs second-order error; anything drifting harder is a real failure
        raise RuntimeError(f"state evolution did not converge at delta={delta}")
    rv = rho_v(act, latent)
    qv, qz, qh = pp.q_v_star, pp.q_z_star, pp.q_hat_z_star
    i_rs = (rv ** 2 / (4.0 * delta) + qv ** 2 / (4.0 * delta)
            + (0.5 * qz * qh - ch.psi_z(latent, qh, order=cfg.quad_order)) / alpha
            - ch.psi_out(act, latent, qv / delta, qz, order=cfg.quad_order))
    return i_rs, qv


# ---------------------------------------------------------------------------
# stability of the uninformative fixed point
# ---------------------------------------------------------------------------

def jacobian_at_zero(delta: float, alpha: float, act: Activation,
                     latent: SeparablePrior,
                     model: Wigner | Wishart = Wigner()) -> np.ndarray:
    """Jacobian of the SE map at the all-zeros fixed point.

    Requires the zero-mean conditions E_{P_z}[z] = 0 and E_{Q_out^0}[v] = 0;
    ReLU violates the latter so the uninformative fixed point does not exist.
    """
    if not act.zero_mean_output:
        raise ValueError(
            f"{act.kind}: uninformative fixed point does not exist "
            "(E_{Q_out^0}[v] != 0)")
    m = null_channel_moments(act, latent)
    rz = latent.rho
    a_vv = m["vv"] ** 2 / delta
    a_vx = m["vx"] ** 2
    a_xx = (m["xx"] - rz) ** 2 / rz ** 2
    if isinstance(model, Wigner):
        # rows/cols ordered (q_v, q_hat_z, q_z)
        return np.array([
            [a_vv, 0.0, a_vx / rz ** 2],
            [alpha * a_vx / delta, 0.0, alpha * a_xx],
            [0.0, rz ** 2, 0.0],
        ])
    beta = model.beta
    ru = model.prior_u.rho
    # rows/cols ordered (q_u, q_v, q_hat_z, q_z)
    return np.array([
        [0.0, ru ** 2 / delta, 0.0, 0.0],
        [beta * a_vv, 0.0, 0.0, a_vx / rz ** 2],
        [beta * alpha * a_vx / delta, 0.0, 0.0, alpha * a_xx],
        [0.0, 0.0, rz ** 2, 0.0],
    ])


def _charpoly(m: np.ndarray) -> np.ndarray:
    """Characteristic polynomial coefficients by Faddeev-LeVerrier."""
    n = m.shape[0]
    coeffs = np.zeros(n + 1)
    coeffs[0] = 1.0
    mk = np.eye(n)
    for k in range(1, n + 1):
        mk = m @ mk
        c = -np.trace(mk) / k
        coeffs[k] = c
        mk += c * np.eye(n)
    return coeffs


def spectral_radius(m: np.ndarray) -> float:
    """Largest |eigenvalue| via companion roots of the characteristic polynomial."""
    roots = np.roots(_charpoly(m))
    return float(np.max(np.abs(roots)))


def delta_c(alpha: float, act: Activation, latent: SeparablePrior,
            model: Wigner | Wishart = Wigner(), tol: float = 1e-9) -> float:
    """Critical noise: bisection on spectral_radius(Jacobian) - 1.

    Ties at radius exactly one resolve toward instability (Delta_c is the
    infimum of the stable region).
    """
    def radius(d):
        return spectral_radius(jacobian_at_zero(d, alpha, act, latent, model))

    lo, hi = 0.5, 2.0
    while radius(hi) >= 1.0:
        hi *= 2.0
        if hi > 1e12:
            raise RuntimeError("no stable region found")
    while radius(lo) < 1.0:
        lo /= 2.0
        if lo < 1e-12:
            raise RuntimeError("no unstable region found")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if radius(mid) >= 1.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def delta_c_closed_form(alpha: float, act: Activation,
                        model: Wigner | Wishart = Wigner()) -> float:
    """Known thresholds for unit-variance Gaussian latent."""
    if act.kind == "linear":
        base = 1.0 + alpha
    elif act.kind == "sign":
        base = 1.0 + 4.0 * alpha / math.pi ** 2
    else:
        raise ValueError(f"no closed-form threshold for {act.kind}")
    if isinstance(model, Wishart):
        return math.sqrt(model.beta * base)
    return base

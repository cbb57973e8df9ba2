"""Generative spike model and spiked Wigner/Wishart instance sampling.

The spike v is produced by a single-layer generative network
v = phi(W z / sqrt(k)) with i.i.d. standard Gaussian weights W, a separable
latent prior on z, and an elementwise activation phi.  Observations are
rank-one deformations of Gaussian noise:

    Wigner:   Y = v v^T / sqrt(p) + sqrt(delta) * xi   (p x p, symmetric)
    Wishart:  Y = u v^T / sqrt(p) + sqrt(delta) * xi   (n x p)

All randomness flows through numpy's counter-based Philox generator so that
every artifact is reproducible from (seed, shape) alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based PRNG; independent streams come from distinct seeds."""
    return np.random.Generator(np.random.Philox(seed))


# ---------------------------------------------------------------------------
# separable scalar priors (latent z, and the Wishart left factor u)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SeparablePrior:
    """Zero-mean separable prior: 'gauss' N(0, rho) or 'rademacher' +-1.

    `rho` is the second moment E[z^2] (rho_z for the latent, rho_u for the
    Wishart u-factor).  Rademacher forces rho = 1.
    """

    kind: str = "gauss"
    rho: float = 1.0

    def __post_init__(self):
        if self.kind not in ("gauss", "rademacher"):
            raise ValueError(f"unknown prior kind {self.kind!r}")
        if self.rho <= 0:
            raise ValueError("second moment must be positive")
        if self.kind == "rademacher" and abs(self.rho - 1.0) > 1e-12:
            raise ValueError("rademacher prior has E[z^2] = 1")

    @property
    def second_moment(self) -> float:
        return self.rho

    @property
    def third_moment(self) -> float:
        # both supported priors are symmetric
        return 0.0

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "gauss":
            return math.sqrt(self.rho) * rng.standard_normal(n)
        return rng.integers(0, 2, size=n) * 2.0 - 1.0


def gauss_prior(rho: float = 1.0) -> SeparablePrior:
    return SeparablePrior("gauss", rho)


def rademacher_prior() -> SeparablePrior:
    return SeparablePrior("rademacher", 1.0)


# ---------------------------------------------------------------------------
# activations / deterministic output channel
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Activation:
    """Deterministic output channel P_out(v|x) = delta(v - phi(x))."""

    kind: str = "linear"

    def __post_init__(self):
        if self.kind not in ("linear", "sign", "relu"):
            raise ValueError(f"unknown activation {self.kind!r}")

    @property
    def zero_mean_output(self) -> bool:
        """Whether E[v] = 0 under x ~ N(0, rho_z) (phi odd); ReLU fails this."""
        return self.kind != "relu"

    def phi(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "linear":
            return np.asarray(x, dtype=float)
        if self.kind == "sign":
            return np.where(np.asarray(x) >= 0, 1.0, -1.0)
        return np.maximum(np.asarray(x, dtype=float), 0.0)


LINEAR = Activation("linear")
SIGN = Activation("sign")
RELU = Activation("relu")


def activation(name: str) -> Activation:
    return Activation(name)


def rho_v(act: Activation, latent: SeparablePrior) -> float:
    """Spike second moment E[phi(x)^2], x ~ N(0, rho_z).

    Closed form for linear and sign; 64-node Gauss-Hermite for ReLU.
    """
    rz = latent.rho
    if act.kind == "linear":
        return rz
    if act.kind == "sign":
        return 1.0
    t, w = np.polynomial.hermite.hermgauss(64)
    x = math.sqrt(2.0 * rz) * t
    return float(np.sum(w * act.phi(x) ** 2) / math.sqrt(math.pi))


def null_channel_moments(act: Activation, latent: SeparablePrior) -> dict:
    """Moments of (v, x) under the null measure x ~ N(0, rho_z), v = phi(x).

    Returns E[v], E[v^2], E[vx], E[vx^2], E[x^2]; these feed the stability
    Jacobian and the LAMP coefficients.
    """
    rz = latent.rho
    if act.kind == "linear":
        return {"v": 0.0, "vv": rz, "vx": rz, "vxx": 0.0, "xx": rz}
    if act.kind == "sign":
        # E|x| = sqrt(2 rho_z / pi); sgn(x) x^2 integrates to zero by symmetry
        return {"v": 0.0, "vv": 1.0, "vx": math.sqrt(2.0 * rz / math.pi),
                "vxx": 0.0, "xx": rz}
    # ReLU: all v-moments live on x > 0; Gauss-Legendre panels on [0, 12 sigma]
    # avoid the kink (plain Gauss-Hermite only nails the even moments there)
    s = math.sqrt(rz)
    t, w = np.polynomial.legendre.leggauss(64)
    moments = {"v": 0.0, "vv": 0.0, "vx": 0.0, "vxx": 0.0}
    for lo, hi in ((0.0, 2.0 * s), (2.0 * s, 12.0 * s)):
        x = 0.5 * (hi + lo) + 0.5 * (hi - lo) * t
        ww = 0.5 * (hi - lo) * w * np.exp(-0.5 * x * x / rz) / math.sqrt(2 * math.pi * rz)
        v = act.phi(x)
        moments["v"] += float(np.sum(ww * v))
        moments["vv"] += float(np.sum(ww * v * v))
        moments["vx"] += float(np.sum(ww * v * x))
        moments["vxx"] += float(np.sum(ww * v * x * x))
    moments["xx"] = rz
    return moments


# ---------------------------------------------------------------------------
# model kinds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Wigner:
    """Symmetric v v^T observation."""


@dataclass(frozen=True)
class Wishart:
    """Rectangular u v^T observation with aspect ratio beta = n/p."""

    beta: float = 1.0
    prior_u: SeparablePrior = field(default_factory=gauss_prior)


# ---------------------------------------------------------------------------
# generative model and instances
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GenerativeModel:
    p: int
    k: int
    W: np.ndarray
    latent: SeparablePrior
    act: Activation

    def __post_init__(self):
        if self.W.shape != (self.p, self.k):
            raise ValueError(f"W has shape {self.W.shape}, expected ({self.p}, {self.k})")

    @property
    def alpha(self) -> float:
        return self.p / self.k

    @property
    def rho_v(self) -> float:
        return rho_v(self.act, self.latent)


def sample_weights(p: int, k: int, seed: int) -> np.ndarray:
    """i.i.d. N(0,1) weight matrix, deterministic in (p, k, seed)."""
    if p < 1 or k < 1:
        raise ValueError("weight matrix dimensions must be >= 1")
    return make_rng(seed).standard_normal((p, k))


def make_model(p: int, k: int, act: Activation, latent: SeparablePrior,
               seed: int) -> GenerativeModel:
    return GenerativeModel(p=p, k=k, W=sample_weights(p, k, seed),
                           latent=latent, act=act)


def generate_spike(gm: GenerativeModel, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Draw (z*, v*) with v* = phi(W z* / sqrt(k))."""
    z = gm.latent.sample(gm.k, make_rng(seed))
    v = gm.act.phi(gm.W @ z / math.sqrt(gm.k))
    return z, v


@dataclass(frozen=True)
class SpikedInstance:
    model: Wigner | Wishart
    Y: np.ndarray
    delta: float
    v_star: np.ndarray
    z_star: np.ndarray | None = None
    u_star: np.ndarray | None = None

    @property
    def p(self) -> int:
        return self.Y.shape[1]

    @property
    def beta(self) -> float:
        if isinstance(self.model, Wigner):
            return 1.0
        return self.Y.shape[0] / self.Y.shape[1]


def sample_wigner(v_star: np.ndarray, delta: float, seed: int,
                  z_star: np.ndarray | None = None) -> SpikedInstance:
    """Y = v v^T / sqrt(p) + sqrt(delta) * xi with GOE noise.

    GOE convention: E[xi_ij^2] = 1 + delta_ij, i.e. off-diagonal variance 1
    and diagonal variance 2, so the noise bulk is the semicircle of radius
    2 sqrt(delta) after the 1/sqrt(p) scaling.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    p = len(v_star)
    a = make_rng(seed).standard_normal((p, p))
    xi = (a + a.T) / math.sqrt(2.0)
    del a
    Y = xi
    Y *= math.sqrt(delta)
    Y += np.outer(v_star, v_star) / math.sqrt(p)
    return SpikedInstance(model=Wigner(), Y=Y, delta=delta,
                          v_star=np.asarray(v_star, dtype=float), z_star=z_star)


def sample_wishart(u_star: np.ndarray, v_star: np.ndarray, delta: float,
                   seed: int, prior_u: SeparablePrior | None = None,
                   z_star: np.ndarray | None = None) -> SpikedInstance:
    """Y = u v^T / sqrt(p) + sqrt(delta) * xi, xi_{mu i} i.i.d. N(0,1)."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    n, p = len(u_star), len(v_star)
    Y = make_rng(seed).standard_normal((n, p))
    Y *= math.sqrt(delta)
    Y += np.outer(u_star, v_star) / math.sqrt(p)
    model = Wishart(beta=n / p, prior_u=prior_u or gauss_prior())
    return SpikedInstance(model=model, Y=Y, delta=delta,
                          v_star=np.asarray(v_star, dtype=float),
                          z_star=z_star, u_star=np.asarray(u_star, dtype=float))


def sample_u(prior_u: SeparablePrior, n: int, seed: int) -> np.ndarray:
    return prior_u.sample(n, make_rng(seed))

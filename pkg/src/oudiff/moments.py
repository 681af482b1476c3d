"""Exact first and second moments of the coupled forward process.

Closed forms cover both constant coupling kinds; a classic RK4 integrator
handles time-dependent coupling schedules.  Means are carried as
per-dimension coordinates in the 2D plane spanned by the two mean
directions, which is sufficient for every downstream quadratic form and
is materialized into full d-vectors only by the samplers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Union

import numpy as np

from .blockmat import Block2, ModeDecomposition, from_modes, mat_exp, spectral_decompose
from .errors import InvalidArgument, UnsupportedShape

SQRT1_2 = 1.0 / math.sqrt(2.0)


# ---------------------------------------------------------------------------
# model parameter types


@dataclass(frozen=True)
class ScheduleSpec:
    """Piecewise-constant coupling profile over forward time.

    ``constant`` ignores t0; ``late`` keeps the coupling on for t <= t0;
    ``early`` switches it on for t >= t0.  Both indicators are closed at
    the boundary.
    """

    kind: Literal["constant", "late", "early"]
    g0: float
    t0: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "late", "early"):
            raise InvalidArgument(f"unknown schedule kind {self.kind!r}")
        if not math.isfinite(self.g0) or not math.isfinite(self.t0):
            raise InvalidArgument("schedule parameters must be finite")
        if self.kind != "constant" and self.t0 < 0.0:
            raise InvalidArgument(f"switch time t0={self.t0!r} must be >= 0")

    def value(self, t: float) -> float:
        if self.kind == "constant":
            return self.g0
        if self.kind == "late":
            return self.g0 if t <= self.t0 else 0.0
        return self.g0 if t >= self.t0 else 0.0


@dataclass(frozen=True)
class Symmetric:
    g: float


@dataclass(frozen=True)
class Anisotropic:
    g: float


@dataclass(frozen=True)
class Scheduled:
    schedule: ScheduleSpec


Coupling = Union[Symmetric, Anisotropic, Scheduled]


@dataclass(frozen=True)
class ModelSpec:
    """Coupled two-channel OU parameters.

    The symmetric kind is dynamically stable only for beta > |g|; specs
    violating that bound can still be constructed so that stability
    diagnostics can report on them, but samplers and solvers refuse them.
    """

    beta: float
    coupling: Coupling
    sigma_w2: float
    dim_d: int = 1

    def __post_init__(self):
        if not (math.isfinite(self.beta) and self.beta > 0.0):
            raise InvalidArgument(f"beta={self.beta!r} must be positive")
        if not (math.isfinite(self.sigma_w2) and self.sigma_w2 > 0.0):
            raise InvalidArgument(f"sigma_w2={self.sigma_w2!r} must be positive")
        if self.dim_d < 1:
            raise InvalidArgument(f"dim_d={self.dim_d!r} must be >= 1")
        if isinstance(self.coupling, (Symmetric, Anisotropic)):
            if not math.isfinite(self.coupling.g):
                raise InvalidArgument("coupling g must be finite")

    @property
    def is_symmetric(self) -> bool:
        return isinstance(self.coupling, Symmetric)

    @property
    def is_stable(self) -> bool:
        """Eigenvalues of the relaxation matrix all have negative real part."""
        if isinstance(self.coupling, Symmetric):
            return self.beta > abs(self.coupling.g)
        return True

    def coupling_at(self, t: float | None = None) -> float:
        if isinstance(self.coupling, Scheduled):
            if t is None:
                raise InvalidArgument("scheduled coupling needs a time")
            return self.coupling.schedule.value(t)
        return self.coupling.g

    def relaxation(self, t: float | None = None) -> Block2:
        """The relaxation matrix M as a block; scheduled kinds need a time."""
        g = self.coupling_at(t)
        if isinstance(self.coupling, Symmetric):
            return Block2.exchange(-self.beta, g)
        return Block2(-self.beta, 0.0, g, -self.beta)

    def modes(self) -> ModeDecomposition:
        if not isinstance(self.coupling, Symmetric):
            raise UnsupportedShape("eigenmodes require symmetric coupling")
        return spectral_decompose(self.relaxation())


@dataclass(frozen=True)
class ModeMeans:
    """Means given through per-dimension mode norms m_plus^2, m_minus^2.

    The two mode mean vectors are materialized along orthogonal plane
    directions, so their cross term vanishes by convention.
    """

    m_plus2: float
    m_minus2: float

    def __post_init__(self):
        if self.m_plus2 < 0.0 or self.m_minus2 < 0.0:
            raise InvalidArgument("squared mode norms must be >= 0")


@dataclass(frozen=True)
class AngledMeans:
    """Means given through per-dimension channel norms and alignment angle."""

    m_x2: float
    m_y2: float
    theta: float

    def __post_init__(self):
        if self.m_x2 < 0.0 or self.m_y2 < 0.0:
            raise InvalidArgument("squared channel norms must be >= 0")
        if not 0.0 <= self.theta <= math.pi:
            raise InvalidArgument(f"theta={self.theta!r} outside [0, pi]")


MeanSpec = Union[ModeMeans, AngledMeans]


@dataclass(frozen=True)
class MixtureInit:
    """Two-component Gaussian mixture initial data with equal weights."""

    sigma2_x: float
    sigma2_y: float
    mean_spec: MeanSpec
    dim_d: int = 1

    def __post_init__(self):
        if self.sigma2_x <= 0.0 or self.sigma2_y <= 0.0:
            raise InvalidArgument("initial variances must be positive")
        if self.dim_d < 1:
            raise InvalidArgument(f"dim_d={self.dim_d!r} must be >= 1")

    @property
    def equal_variance(self) -> bool:
        return self.sigma2_x == self.sigma2_y

    def sigma0(self) -> Block2:
        return Block2.diag(self.sigma2_x, self.sigma2_y)

    def mean_plane(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-dimension coordinates of (mu_x, mu_y) in their signal plane."""
        ms = self.mean_spec
        if isinstance(ms, AngledMeans):
            mx = math.sqrt(ms.m_x2)
            my = math.sqrt(ms.m_y2)
            return (
                np.array([mx, 0.0]),
                np.array([my * math.cos(ms.theta), my * math.sin(ms.theta)]),
            )
        mp = math.sqrt(ms.m_plus2)
        mm = math.sqrt(ms.m_minus2)
        # mu_x = (mu_+ + mu_-)/sqrt2 with mu_+ along e1 and mu_- along e2
        return (
            np.array([mp * SQRT1_2, mm * SQRT1_2]),
            np.array([mp * SQRT1_2, -mm * SQRT1_2]),
        )

    def channel_stats(self) -> tuple[float, float, float]:
        """Per-dimension (|mu_x|^2, |mu_y|^2, mu_x . mu_y)."""
        mux, muy = self.mean_plane()
        return float(mux @ mux), float(muy @ muy), float(mux @ muy)

    def mode_norms(self) -> tuple[float, float]:
        """Per-dimension (m_plus^2, m_minus^2) of the mixture mean."""
        mxx, myy, mxy = self.channel_stats()
        return 0.5 * (mxx + myy) + mxy, 0.5 * (mxx + myy) - mxy


@dataclass(frozen=True)
class MomentState:
    """Exact moments at one time: mean plane coordinates and blocks S, Q, C."""

    t: float
    mu_x: np.ndarray
    mu_y: np.ndarray
    s: Block2
    q: Block2
    c: Block2

    def mean_stats(self) -> tuple[float, float, float]:
        return (
            float(self.mu_x @ self.mu_x),
            float(self.mu_y @ self.mu_y),
            float(self.mu_x @ self.mu_y),
        )


# ---------------------------------------------------------------------------
# closed forms


def _require_time(t: float):
    if not math.isfinite(t) or t < 0.0:
        raise InvalidArgument(f"time t={t!r} must be finite and >= 0")


def _require_closed_form(spec: ModelSpec):
    if isinstance(spec.coupling, Scheduled):
        raise UnsupportedShape(
            "scheduled coupling has no closed-form moments; use moments_ode"
        )


def mean_at(spec: ModelSpec, mu0, t: float):
    """Propagate a mean pair through exp(M t).

    ``mu0`` is a pair (mu_x, mu_y) of scalars or arrays.  Symmetric
    coupling goes through the eigenmode split; anisotropic coupling uses
    the nilpotent closed form mu_y(t) = e^{-beta t}(mu_y + g t mu_x).
    """
    _require_time(t)
    _require_closed_form(spec)
    mux, muy = mu0
    mux = np.asarray(mux, dtype=float)
    muy = np.asarray(muy, dtype=float)
    if isinstance(spec.coupling, Symmetric):
        e = mat_exp(spec.relaxation(), t)
        return e.apply(mux, muy)
    g = spec.coupling.g
    decay = math.exp(-spec.beta * t)
    return decay * mux, decay * (muy + g * t * mux)


def _expm1_ratio(tau: float, t: float) -> float:
    """(1 - e^{-tau t}) / tau, stable for tau*t near zero."""
    x = tau * t
    if x == 0.0:
        return t
    return -math.expm1(-x) / tau


def _poly_tail_k(a: float) -> float:
    """1 - e^{-a}(1 + a), series-evaluated below a=0.5 to avoid cancellation."""
    if a >= 0.5:
        return 1.0 - math.exp(-a) * (1.0 + a)
    # sum_{n>=2} (-1)^n a^n (n-1) / n!
    total = 0.0
    for n in range(2, 40):
        term = ((-1.0) ** n) * (a**n) * (n - 1) / math.factorial(n)
        total += term
        if abs(term) <= 1e-18 * max(abs(total), 1e-300):
            break
    return total


def _poly_tail_h(a: float) -> float:
    """1 - e^{-a}(1 + a + a^2/2), series-evaluated below a=0.5."""
    if a >= 0.5:
        return 1.0 - math.exp(-a) * (1.0 + a + 0.5 * a * a)
    # sum_{n>=3} (-1)^{n+1} a^n (n-1)(n-2) / (2 n!)
    total = 0.0
    for n in range(3, 40):
        term = ((-1.0) ** (n + 1)) * (a**n) * (n - 1) * (n - 2) / (2.0 * math.factorial(n))
        total += term
        if abs(term) <= 1e-18 * max(abs(total), 1e-300):
            break
    return total


def transition_cov(spec: ModelSpec, t: float) -> Block2:
    """Accumulated noise covariance Q(t) of the forward transition kernel.

    Symmetric coupling: q_pm = sW2 (1 - e^{-tau_pm t}) / tau_pm on each
    eigenmode.  Anisotropic coupling: closed forms built from the tails
    u(t) = 1 - e^{-2 beta t}, k(t) = 1 - e^{-2 beta t}(1 + 2 beta t) and
    h(t) = 1 - e^{-2 beta t}(1 + 2 beta t + 2 beta^2 t^2).
    """
    _require_time(t)
    _require_closed_form(spec)
    sw2 = spec.sigma_w2
    if isinstance(spec.coupling, Symmetric):
        modes = spec.modes()
        qp = sw2 * _expm1_ratio(modes.tau_plus, t)
        qm = sw2 * _expm1_ratio(modes.tau_minus, t)
        return from_modes(qp, qm)
    beta = spec.beta
    g = spec.coupling.g
    a = 2.0 * beta * t
    u = -math.expm1(-a)
    k = _poly_tail_k(a)
    h = _poly_tail_h(a)
    q11 = sw2 * u / (2.0 * beta)
    q12 = sw2 * g * k / (4.0 * beta * beta)
    q22 = sw2 * (u / (2.0 * beta) + g * g * h / (4.0 * beta**3))
    return Block2(q11, q12, q12, q22)


def drifted_cov(spec: ModelSpec, init: MixtureInit, t: float) -> Block2:
    """S(t) = e^{Mt} Sigma(0) e^{M^T t}."""
    _require_time(t)
    _require_closed_form(spec)
    e = mat_exp(spec.relaxation(), t)
    return e.matmul(init.sigma0()).matmul(e.transpose())


def diffusion_kernel(spec: ModelSpec, init: MixtureInit, t: float) -> MomentState:
    """Full moment state at time t: mean plane, S(t), Q(t), C(t) = S + Q."""
    s = drifted_cov(spec, init, t)
    q = transition_cov(spec, t)
    mux, muy = mean_at(spec, init.mean_plane(), t)
    return MomentState(t=float(t), mu_x=mux, mu_y=muy, s=s, q=q, c=s.add(q))


def mode_kernels(spec: ModelSpec, init: MixtureInit, t: float) -> tuple[float, float]:
    """Diffusion-kernel eigenvalues c_pm(t) for symmetric coupling.

    c_pm = s2 e^{-tau_pm t} + sW2 (1 - e^{-tau_pm t}) / tau_pm, requiring
    equal channel variances so that C(t) commutes with the eigenmode
    projectors.
    """
    _require_time(t)
    if not isinstance(spec.coupling, Symmetric):
        raise UnsupportedShape("mode kernels require symmetric coupling")
    if not init.equal_variance:
        raise UnsupportedShape(
            "mode kernels require sigma_x == sigma_y; the unequal case has "
            "no eigenmode factorization"
        )
    s2 = init.sigma2_x
    sw2 = spec.sigma_w2
    modes = spec.modes()
    cp = s2 * math.exp(-modes.tau_plus * t) + sw2 * _expm1_ratio(modes.tau_plus, t)
    cm = s2 * math.exp(-modes.tau_minus * t) + sw2 * _expm1_ratio(modes.tau_minus, t)
    return cp, cm


def kernel_K(spec: ModelSpec, init: MixtureInit, t: float) -> Block2:
    """Closed-form K(t) = C^-1 (M + sW2 C^-1)^-1 C^-1 for anisotropic coupling.

    Assembled from the numerators N_ij over Delta(t) * D(t), where Delta is
    det C and D = beta^2 Delta - beta sW2 (C11 + C22) + g sW2 C12 + sW2^2.
    Raises DegenerateDrift when D(t) vanishes.
    """
    from .errors import DegenerateDrift

    _require_time(t)
    if not isinstance(spec.coupling, Anisotropic):
        raise UnsupportedShape("kernel_K is the anisotropic closed form")
    beta = spec.beta
    g = spec.coupling.g
    sw2 = spec.sigma_w2
    c = diffusion_kernel(spec, init, t).c
    c11, c12, c22 = c.a11, c.a12, c.a22
    delta = c11 * c22 - c12 * c12
    d = (
        beta * beta * delta
        - beta * sw2 * (c11 + c22)
        + g * sw2 * c12
        + sw2 * sw2
    )
    d_scale = (
        beta * beta * abs(delta)
        + beta * sw2 * (abs(c11) + abs(c22))
        + abs(g) * sw2 * abs(c12)
        + sw2 * sw2
    )
    if abs(d) < 1e-12 * d_scale:
        raise DegenerateDrift(t)
    n11 = sw2 * c22 - beta * (c22 * c22 + c12 * c12) + g * c12 * c22
    n12 = c12 * (beta * (c11 + c22) - g * c12 - sw2)
    n21 = beta * c12 * (c11 + c22) - sw2 * c12 - g * c11 * c22
    n22 = sw2 * c11 - beta * (c11 * c11 + c12 * c12) + g * c11 * c12
    inv = 1.0 / (delta * d)
    return Block2(n11 * inv, n12 * inv, n21 * inv, n22 * inv)


# ---------------------------------------------------------------------------
# scheduled coupling: RK4 moment integration


def _ode_rhs(m: np.ndarray, sw2: float, mu: np.ndarray, c: np.ndarray, q: np.ndarray):
    noise = sw2 * np.eye(2)
    dmu = m @ mu
    dc = m @ c + c @ m.T + noise
    dq = m @ q + q @ m.T + noise
    return dmu, dc, dq


def moments_ode(spec: ModelSpec, init: MixtureInit, grid) -> list[MomentState]:
    """Integrate the mean and covariance ODEs on a time grid with RK4.

    Handles any coupling kind; for constant coupling the result agrees
    with the closed forms to integrator accuracy.  The grid must be
    strictly increasing and start at 0.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 1:
        raise InvalidArgument("grid must be a 1-D array of times")
    if abs(grid[0]) > 1e-15:
        raise InvalidArgument("grid must start at t=0")
    if grid.size > 1 and not np.all(np.diff(grid) > 0.0):
        raise InvalidArgument("grid must be strictly increasing")

    mux0, muy0 = init.mean_plane()
    mu = np.stack([mux0, muy0])  # rows: channel, cols: plane coordinate
    c = init.sigma0().as_array()
    q = np.zeros((2, 2))

    def snapshot(t: float) -> MomentState:
        cs = 0.5 * (c + c.T)
        qs = 0.5 * (q + q.T)
        return MomentState(
            t=float(t),
            mu_x=mu[0].copy(),
            mu_y=mu[1].copy(),
            s=Block2.from_array(cs - qs),
            q=Block2.from_array(qs),
            c=Block2.from_array(cs),
        )

    sw2 = spec.sigma_w2
    out = [snapshot(grid[0])]
    for k in range(grid.size - 1):
        t0, t1 = grid[k], grid[k + 1]
        h = t1 - t0
        # schedules are piecewise constant: freezing the coupling at the
        # step midpoint integrates each constant segment exactly when the
        # switch time lies on a grid point
        m = spec.relaxation(0.5 * (t0 + t1)).as_array()
        k1 = _ode_rhs(m, sw2, mu, c, q)
        k2 = _ode_rhs(m, sw2, mu + 0.5 * h * k1[0], c + 0.5 * h * k1[1], q + 0.5 * h * k1[2])
        k3 = _ode_rhs(m, sw2, mu + 0.5 * h * k2[0], c + 0.5 * h * k2[1], q + 0.5 * h * k2[2])
        k4 = _ode_rhs(m, sw2, mu + h * k3[0], c + h * k3[1], q + h * k3[2])
        mu = mu + (h / 6.0) * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
        c = c + (h / 6.0) * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
        q = q + (h / 6.0) * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
        out.append(snapshot(t1))
    return out

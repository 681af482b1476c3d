"""Speciation diagnostics: kappa(t), speciation times, stability, phase maps.

The reverse drift acquires extra fixed points through a pitchfork
bifurcation when the per-dimension quadratic form

    kappa(t) = sW2 * mu(t)^T C(t)^-1 (M + sW2 C(t)^-1)^-1 C(t)^-1 mu(t)

crosses 1.  The speciation time is the largest root of kappa(t) = 1;
parameters with sup_t kappa <= 1 never leave the noise regime.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .blockmat import Block2, block_inverse
from .errors import (
    DegenerateRate,
    InvalidArgument,
    UnstableAtTime,
    UnsupportedShape,
)
from .moments import (
    Anisotropic,
    AngledMeans,
    MixtureInit,
    ModeMeans,
    ModelSpec,
    Symmetric,
    diffusion_kernel,
    kernel_K,
    mode_kernels,
)

REGIME_SPECIATES = "speciates"
REGIME_NO_SPECIATION = "no-speciation"
REGIME_UNSTABLE = "unstable"

KAPPA_TOL = 1e-10
SUP_TOL = 1e-12


@dataclass(frozen=True)
class SpeciationResult:
    t_s: float | None
    kappa0: float
    sup_kappa: float
    regime: str
    unstable_t: float | None = None


@dataclass(frozen=True)
class StabilityReport:
    """Outcome of the confinement checks for symmetric coupling.

    ``sufficient`` is the closed-form bound s2 < sW2/(beta + |g|) (strict);
    ``first_violation`` is the first grid time at which the pointwise tail
    condition lambda_pm + sW2/c_pm(t) > 0 fails, if any.
    """

    stable: bool
    sufficient: bool
    first_violation: float | None


def _quad_form(block: Block2, stats: tuple[float, float, float]) -> float:
    mxx, myy, mxy = stats
    return block.a11 * mxx + (block.a12 + block.a21) * mxy + block.a22 * myy


def _tail_margins(spec: ModelSpec, cp: float, cm: float) -> tuple[float, float]:
    modes = spec.modes()
    sw2 = spec.sigma_w2
    return modes.lambda_plus + sw2 / cp, modes.lambda_minus + sw2 / cm


def kappa(spec: ModelSpec, init: MixtureInit, t: float) -> float:
    """Bifurcation parameter kappa(t), per dimension.

    Symmetric coupling is evaluated through the generic block composition
    (it matches the eigenmode closed form); anisotropic coupling goes
    through the closed-form kernel.  Raises UnstableAtTime when the
    symmetric tail-confinement margin is not positive at t.
    """
    ms = diffusion_kernel(spec, init, t)
    stats = ms.mean_stats()
    sw2 = spec.sigma_w2
    if isinstance(spec.coupling, Symmetric):
        if not init.equal_variance:
            raise UnsupportedShape(
                "symmetric kappa requires sigma_x == sigma_y"
            )
        cp, cm = mode_kernels(spec, init, t)
        margin_p, margin_m = _tail_margins(spec, cp, cm)
        if margin_p <= 0.0 or margin_m <= 0.0:
            raise UnstableAtTime(t)
        cinv = block_inverse(ms.c)
        inner = spec.relaxation().add(cinv.scale(sw2))
        a = block_inverse(inner).matmul(cinv.scale(sw2))
        return _quad_form(cinv.matmul(a), stats)
    if isinstance(spec.coupling, Anisotropic):
        k = kernel_K(spec, init, t)
        return sw2 * _quad_form(k, stats)
    raise UnsupportedShape("kappa needs a constant coupling kind")


def kappa_symmetric_closed(spec: ModelSpec, init: MixtureInit, t: float) -> float:
    """Eigenmode closed form: kappa = sW2 * (SNR_plus + SNR_minus).

    SNR_pm = e^{-tau_pm t} m_pm^2 / (c_pm (lambda_pm c_pm + sW2)).
    """
    if not isinstance(spec.coupling, Symmetric):
        raise UnsupportedShape("closed form requires symmetric coupling")
    cp, cm = mode_kernels(spec, init, t)
    modes = spec.modes()
    sw2 = spec.sigma_w2
    denom_p = cp * (modes.lambda_plus * cp + sw2)
    denom_m = cm * (modes.lambda_minus * cm + sw2)
    if denom_p <= 0.0 or denom_m <= 0.0:
        raise UnstableAtTime(t)
    mp2, mm2 = init.mode_norms()
    return sw2 * (
        math.exp(-modes.tau_plus * t) * mp2 / denom_p
        + math.exp(-modes.tau_minus * t) * mm2 / denom_m
    )


def kappa0_aniso(spec: ModelSpec, init: MixtureInit) -> float:
    """kappa(0) for anisotropic coupling with equal channel variances.

    kappa(0) = r (m_x^2 + m_y^2) / (s2 (r - beta))
             - r g m_x m_y cos(theta) / (s2 (r - beta)^2),   r = sW2/s2.
    """
    if not isinstance(spec.coupling, Anisotropic):
        raise UnsupportedShape("kappa0_aniso requires anisotropic coupling")
    if not init.equal_variance:
        raise UnsupportedShape("kappa0_aniso requires sigma_x == sigma_y")
    s2 = init.sigma2_x
    r = spec.sigma_w2 / s2
    beta = spec.beta
    if abs(r - beta) <= 1e-12 * max(r, beta):
        raise DegenerateRate(f"sW2/s2 = {r!r} coincides with beta = {beta!r}")
    mxx, myy, mxy = init.channel_stats()
    g = spec.coupling.g
    return r * (mxx + myy) / (s2 * (r - beta)) - r * g * mxy / (
        s2 * (r - beta) ** 2
    )


def stability_check(
    spec: ModelSpec,
    init: MixtureInit,
    t_max: float | None = None,
    grid_points: int = 512,
) -> StabilityReport:
    """Evaluate both confinement criteria for symmetric coupling."""
    if not isinstance(spec.coupling, Symmetric):
        raise UnsupportedShape("stability check applies to symmetric coupling")
    if not init.equal_variance:
        raise UnsupportedShape("stability check requires sigma_x == sigma_y")
    g = spec.coupling.g
    sufficient = spec.is_stable and init.sigma2_x < spec.sigma_w2 / (
        spec.beta + abs(g)
    )
    if t_max is None:
        t_max = 10.0 / spec.beta
    first_violation = None
    if not spec.is_stable:
        first_violation = 0.0
    else:
        for t in np.linspace(0.0, t_max, grid_points):
            cp, cm = mode_kernels(spec, init, float(t))
            margin_p, margin_m = _tail_margins(spec, cp, cm)
            if margin_p <= 0.0 or margin_m <= 0.0:
                first_violation = float(t)
                break
    return StabilityReport(
        stable=first_violation is None,
        sufficient=sufficient,
        first_violation=first_violation,
    )


def _scan_grid(t_max: float, linear_points: int = 512) -> np.ndarray:
    """Linear scan grid refined geometrically toward t=0."""
    linear = np.linspace(0.0, t_max, linear_points)
    geometric = t_max * 0.5 ** np.arange(1, 41)
    return np.unique(np.concatenate([linear, geometric]))


def _poly_tail_k_vec(a: np.ndarray) -> np.ndarray:
    # sum_{n>=2} (-1)^n a^n (n-1)/n! below a=0.5, direct form above
    direct = 1.0 - np.exp(-a) * (1.0 + a)
    term = a * a / 2.0
    series = term.copy()
    for n in range(3, 18):
        term = term * (-a) * (n - 1) / (n * (n - 2))
        series = series + term
    return np.where(a < 0.5, series, direct)


def _poly_tail_h_vec(a: np.ndarray) -> np.ndarray:
    direct = 1.0 - np.exp(-a) * (1.0 + a + 0.5 * a * a)
    series = np.zeros_like(a)
    term = a**3 / 6.0
    series = series + term
    for n in range(4, 19):
        term = term * (-a) * (n - 1) / (n * (n - 3))
        series = series + term
    return np.where(a < 0.5, series, direct)


def _kappa_grid(spec: ModelSpec, init: MixtureInit, ts: np.ndarray) -> np.ndarray:
    """Vectorized kappa over a time grid via the closed forms."""
    sw2 = spec.sigma_w2
    if isinstance(spec.coupling, Symmetric):
        if not init.equal_variance:
            raise UnsupportedShape("symmetric kappa requires sigma_x == sigma_y")
        s2 = init.sigma2_x
        modes = spec.modes()
        mp2, mm2 = init.mode_norms()
        out = np.zeros_like(ts)
        for tau, lam, m2 in (
            (modes.tau_plus, modes.lambda_plus, mp2),
            (modes.tau_minus, modes.lambda_minus, mm2),
        ):
            decay = np.exp(-tau * ts)
            q = sw2 * (-np.expm1(-tau * ts)) / tau
            q = np.where(ts == 0.0, 0.0, q)
            c = s2 * decay + q
            denom = c * (lam * c + sw2)
            bad = denom <= 0.0
            if np.any(bad):
                raise UnstableAtTime(float(ts[np.argmax(bad)]))
            out = out + sw2 * decay * m2 / denom
        return out
    if not isinstance(spec.coupling, Anisotropic):
        raise UnsupportedShape("kappa needs a constant coupling kind")
    from .errors import DegenerateDrift

    beta = spec.beta
    g = spec.coupling.g
    a = 2.0 * beta * ts
    u = -np.expm1(-a)
    kk = _poly_tail_k_vec(a)
    hh = _poly_tail_h_vec(a)
    q11 = sw2 * u / (2.0 * beta)
    q12 = sw2 * g * kk / (4.0 * beta * beta)
    q22 = sw2 * (u / (2.0 * beta) + g * g * hh / (4.0 * beta**3))
    decay2 = np.exp(-2.0 * beta * ts)
    sx2, sy2 = init.sigma2_x, init.sigma2_y
    c11 = decay2 * sx2 + q11
    c12 = decay2 * g * ts * sx2 + q12
    c22 = decay2 * (sy2 + g * g * ts * ts * sx2) + q22
    delta = c11 * c22 - c12 * c12
    dd = beta * beta * delta - beta * sw2 * (c11 + c22) + g * sw2 * c12 + sw2 * sw2
    d_scale = (
        beta * beta * np.abs(delta)
        + beta * sw2 * (np.abs(c11) + np.abs(c22))
        + abs(g) * sw2 * np.abs(c12)
        + sw2 * sw2
    )
    bad = np.abs(dd) < 1e-12 * d_scale
    if np.any(bad):
        raise DegenerateDrift(float(ts[np.argmax(bad)]))
    n11 = sw2 * c22 - beta * (c22 * c22 + c12 * c12) + g * c12 * c22
    n12 = c12 * (beta * (c11 + c22) - g * c12 - sw2)
    n21 = beta * c12 * (c11 + c22) - sw2 * c12 - g * c11 * c22
    n22 = sw2 * c11 - beta * (c11 * c11 + c12 * c12) + g * c11 * c12
    inv = 1.0 / (delta * dd)
    mxx, myy, mxy = init.channel_stats()
    mxx_t = decay2 * mxx
    mxy_t = decay2 * (mxy + g * ts * mxx)
    myy_t = decay2 * (myy + 2.0 * g * ts * mxy + g * g * ts * ts * mxx)
    quad = n11 * mxx_t + (n12 + n21) * mxy_t + n22 * myy_t
    return sw2 * quad * inv


def _kappa_scalar(spec: ModelSpec, init: MixtureInit, t: float) -> float:
    """Fast scalar kappa for the bisection loop."""
    if isinstance(spec.coupling, Symmetric):
        return kappa_symmetric_closed(spec, init, t)
    return kappa(spec, init, t)


def speciation_time(
    spec: ModelSpec,
    init: MixtureInit,
    t_max_search: float | None = None,
) -> SpeciationResult:
    """Largest root of kappa(t) = 1 in (0, t_max_search].

    A grid scan (512 linear points plus geometric refinement near zero)
    brackets the highest crossing, which bisection then sharpens to
    |kappa - 1| <= 1e-10.  Returns the no-speciation regime when the grid
    supremum of kappa stays below 1, and the unstable regime with the
    first violation time when tail confinement fails inside the window.
    """
    if t_max_search is None:
        t_max_search = 10.0 / spec.beta
    if t_max_search <= 0.0:
        raise InvalidArgument("t_max_search must be positive")

    grid = _scan_grid(t_max_search)
    try:
        values = _kappa_grid(spec, init, grid)
    except UnstableAtTime as exc:
        return SpeciationResult(
            t_s=None,
            kappa0=float("nan"),
            sup_kappa=float("nan"),
            regime=REGIME_UNSTABLE,
            unstable_t=exc.t,
        )

    kappa0 = float(values[0])
    sup_kappa = float(values.max())
    if sup_kappa <= 1.0 + SUP_TOL:
        return SpeciationResult(
            t_s=None, kappa0=kappa0, sup_kappa=sup_kappa, regime=REGIME_NO_SPECIATION
        )

    # largest bracket with kappa >= 1 on the left and < 1 on the right
    above = values >= 1.0
    bracket = None
    for i in range(grid.size - 1, 0, -1):
        if above[i - 1] and not above[i]:
            bracket = (grid[i - 1], grid[i], values[i - 1], values[i])
            break
    if bracket is None:
        if above[-1]:
            raise InvalidArgument(
                "kappa > 1 at the end of the search window; increase "
                "t_max_search"
            )
        raise InvalidArgument("no kappa = 1 crossing found in the window")

    lo, hi = bracket[0], bracket[1]
    t_root = lo
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        val = _kappa_scalar(spec, init, mid)
        t_root = mid
        if abs(val - 1.0) <= 0.1 * KAPPA_TOL:
            break
        if val >= 1.0:
            lo = mid
        else:
            hi = mid
    return SpeciationResult(
        t_s=float(t_root), kappa0=kappa0, sup_kappa=sup_kappa, regime=REGIME_SPECIATES
    )


def speciation_time_pure_mode(
    spec: ModelSpec, init: MixtureInit, mode: str
) -> float:
    """Closed-form speciation time when only one eigenmode carries signal.

    With x = e^{-tau t}, kappa = 1 reduces to the quadratic
    B^2 x^2 + (2 sW2 m^2 / tau) x - (sW2/tau)^2 = 0 with
    B = s2 - sW2/tau; the positive root gives
    e^{-tau t_S} = (sW2/tau) (sqrt(m^4 + B^2) - m^2) / B^2.
    The degenerate B = 0 case falls back to bisection.
    """
    if mode not in ("+", "-"):
        raise InvalidArgument(f"mode must be '+' or '-', got {mode!r}")
    if not isinstance(spec.coupling, Symmetric):
        raise UnsupportedShape("pure-mode closed form requires symmetric coupling")
    mp2, mm2 = init.mode_norms()
    active, idle = (mp2, mm2) if mode == "+" else (mm2, mp2)
    if active <= 0.0 or idle > 1e-15 * max(active, 1.0):
        raise InvalidArgument(
            "pure-mode form needs exactly one nonzero mode norm matching "
            f"mode {mode!r}"
        )
    modes = spec.modes()
    tau = modes.tau_plus if mode == "+" else modes.tau_minus
    s2 = init.sigma2_x
    sw2 = spec.sigma_w2
    b = s2 - sw2 / tau
    if abs(b) < 1e-10:
        result = speciation_time(spec, init)
        if result.t_s is None:
            raise InvalidArgument("no speciation time exists for these parameters")
        return result.t_s
    m2 = active
    x = (sw2 / tau) * (math.sqrt(m2 * m2 + b * b) - m2) / (b * b)
    if not 0.0 < x < 1.0:
        raise InvalidArgument(
            "closed form yields no positive speciation time (kappa(0) <= 1)"
        )
    return -math.log(x) / tau


def g_crit_aligned(
    spec_template: ModelSpec, init: MixtureInit, theta: float
) -> float | None:
    """Coupling at which kappa(0) = 1 for a given angle, when cos(theta) > 0."""
    c = math.cos(theta)
    if c <= 1e-12:
        return None
    s2 = init.sigma2_x
    r = spec_template.sigma_w2 / s2
    beta = spec_template.beta
    mxx, myy, _ = init.channel_stats()
    mx_my = math.sqrt(mxx * myy)
    if mx_my <= 0.0 or abs(r - beta) <= 1e-12 * max(r, beta):
        return None
    g = (r * (mxx + myy) / (s2 * (r - beta)) - 1.0) * (
        s2 * (r - beta) ** 2
    ) / (r * mx_my * c)
    return g if math.isfinite(g) and g > 0.0 else None


@dataclass(frozen=True)
class PhaseCell:
    g: float
    theta: float
    result: SpeciationResult | None
    g_crit: float | None
    error: str | None = None


def phase_diagram(
    spec_template: ModelSpec,
    init_template: MixtureInit,
    g_grid,
    theta_grid,
    t_max_search: float | None = None,
) -> list[PhaseCell]:
    """Sweep speciation over a (g, theta) grid with anisotropic coupling.

    Cells are evaluated independently and reported in (g, theta) order;
    per-cell failures are recorded in the cell rather than aborting the
    sweep.  Each cell also carries the kappa(0) = 1 boundary estimate
    g_crit(theta) where cos(theta) > 0.
    """
    if isinstance(init_template.mean_spec, ModeMeans):
        raise UnsupportedShape("phase diagram sweeps angled means")
    cells: list[PhaseCell] = []
    for g in g_grid:
        for theta in theta_grid:
            init = MixtureInit(
                sigma2_x=init_template.sigma2_x,
                sigma2_y=init_template.sigma2_y,
                mean_spec=AngledMeans(
                    m_x2=init_template.mean_spec.m_x2,
                    m_y2=init_template.mean_spec.m_y2,
                    theta=float(theta),
                ),
                dim_d=init_template.dim_d,
            )
            spec = ModelSpec(
                beta=spec_template.beta,
                coupling=Anisotropic(float(g)),
                sigma_w2=spec_template.sigma_w2,
                dim_d=spec_template.dim_d,
            )
            gc = g_crit_aligned(spec, init, float(theta))
            try:
                result = speciation_time(spec, init, t_max_search)
                cells.append(PhaseCell(float(g), float(theta), result, gc))
            except Exception as exc:  # per-cell errors never abort the sweep
                cells.append(
                    PhaseCell(float(g), float(theta), None, gc, error=str(exc))
                )
    return cells

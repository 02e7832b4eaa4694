"""One-step transition maps for ILA and the comparison discretisations.

All steps are vectorised over chains: positions, velocities and noise have
shape ``(..., d)`` (SES noise has shape ``(..., 2d)``).  Every step is a pure
function of its inputs; the caller supplies the standard-normal draws.

Kinetic schemes discretise

    dX = V dt,  dV = -eps V dt - theta grad U(X) dt + sqrt(2 eps theta) dW

whose stationary law is exp(-U(x) - |v|^2 / (2 theta)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .potentials import InvalidParameterError, PotentialSpec
from .theory import DomainError, step_bounds

FRICTION_RANGE = (4.0 / 3.0, 7.0 / 4.0)


@dataclass(frozen=True)
class SamplerConfig:
    """Step size, friction and inverse mass plus the quantities derived from them.

    ``tau`` and ``beta`` are the heavy-ball step size and momentum.  ``omega``
    is only read by the SOR-Gibbs scheme.
    """

    dt: float
    friction: float
    inv_mass: float
    omega: float = 1.0
    tau: float = field(init=False)
    beta: float = field(init=False)

    def __post_init__(self):
        if not (self.dt > 0 and self.friction >= 0 and self.inv_mass > 0):
            raise InvalidParameterError(
                f"need dt > 0, friction >= 0, inv_mass > 0; got {self.dt}, {self.friction}, {self.inv_mass}"
            )
        object.__setattr__(self, "tau", self.inv_mass * self.dt * self.dt)
        object.__setattr__(self, "beta", 1.0 - self.friction * self.dt)

    @property
    def kinetic_noise(self):
        """sqrt(2 theta eps dt): velocity noise of ILA and kinetic Euler-Maruyama."""
        return math.sqrt(2 * self.inv_mass * self.friction * self.dt)

    @property
    def heavy_ball_noise(self):
        """sqrt(2 tau (1 - beta)) = dt * sqrt(2 theta eps dt)."""
        return math.sqrt(2 * self.tau * (1 - self.beta))

    @property
    def ula_noise(self):
        return math.sqrt(2 * self.tau)

    @property
    def ou_decay(self):
        return math.exp(-self.friction * self.dt)

    @property
    def ou_noise(self):
        """sqrt(theta (1 - exp(-2 eps dt))): exact OU velocity refresh."""
        return math.sqrt(-self.inv_mass * math.expm1(-2 * self.friction * self.dt))

    def noise_scales(self):
        return {
            "ila": self.kinetic_noise,
            "heavy_ball": self.heavy_ball_noise,
            "ula": self.ula_noise,
            "em": self.kinetic_noise,
            "oba": self.ou_noise,
            "baoab": self.ou_noise,
        }


def derive_params(dt, friction, inv_mass, omega=1.0) -> SamplerConfig:
    return SamplerConfig(dt, friction, inv_mass, omega)


@dataclass(frozen=True)
class ValidityReport:
    friction_ok: bool
    bounds: dict
    bound_ok: dict
    binding: str
    max_dt: float
    messages: tuple = ()

    @property
    def passed(self):
        return self.friction_ok and all(self.bound_ok.values())

    def summary(self):
        lines = [f"friction range {FRICTION_RANGE[0]:.6g}..{FRICTION_RANGE[1]:.6g}: {'ok' if self.friction_ok else 'FAIL'}"]
        for k, v in self.bounds.items():
            lines.append(f"dt bound {k:<11} {v:.10g}  {'ok' if self.bound_ok[k] else 'FAIL'}")
        lines.append(f"binding bound  {self.binding} (max dt {self.max_dt:.10g})")
        lines.extend(self.messages)
        lines.append(f"passed         {self.passed}")
        return "\n".join(lines)


def validate_config(cfg: SamplerConfig, kappa=1.0) -> ValidityReport:
    """Check the ILA friction range and the four step-size bounds.

    The bounds do not depend on ``kappa``; it is accepted so the report can be
    produced next to the contraction check for the same target.
    """
    if kappa < 1:
        raise InvalidParameterError("kappa must be >= 1")
    eps, dt = cfg.friction, cfg.dt
    lo, hi = FRICTION_RANGE
    friction_ok = lo <= eps <= hi
    messages = []
    try:
        bounds = step_bounds(eps)
    except DomainError as exc:
        messages.append(str(exc))
        bounds = {"eighth": 1 / 8, "friction": 1 / (1 + eps), "damping": 2 / eps - 1, "polynomial": -math.inf}
    bound_ok = {k: dt <= v for k, v in bounds.items()}
    binding = min(bounds, key=bounds.get)
    return ValidityReport(friction_ok, bounds, bound_ok, binding, bounds[binding], tuple(messages))


@dataclass(frozen=True)
class SchemeValidity:
    scheme: str
    passed: bool
    messages: tuple


def validate_scheme(scheme, cfg: SamplerConfig, kappa=1.0, lipschitz=None) -> SchemeValidity:
    """Validity of ``cfg`` for ``scheme``: the ILA theory bounds, or the per-scheme friction constraints.

    ``lipschitz`` defaults to ``1/inv_mass`` so ``L * theta = 1``.
    """
    lt = 1.0 if lipschitz is None else lipschitz * cfg.inv_mass
    eps, dt = cfg.friction, cfg.dt
    msgs = []
    if scheme == "ila":
        rep = validate_config(cfg, kappa)
        return SchemeValidity(scheme, rep.passed, tuple(rep.summary().splitlines()))
    if scheme == "ula":
        ok = cfg.tau * (lipschitz or 1 / cfg.inv_mass) < 2
        msgs.append(f"tau * L < 2: {ok}")
    elif scheme == "em":
        ok = eps >= 2 * math.sqrt(lt) * (1 - 1e-12) and dt < 1 / (2 * eps)
        msgs.append(f"eps >= 2 sqrt(L theta) and dt < 1/(2 eps): {ok}")
    elif scheme == "oba":
        arg = 1 - math.sqrt(6 * lt) * dt
        ok = arg > 0 and eps >= -math.log(arg) / dt * (1 - 1e-12)
        msgs.append(f"eps >= -log(1 - sqrt(6 L theta) dt)/dt: {ok}")
    elif scheme == "baoab":
        arg = 1 - 2 * math.sqrt(lt) * dt
        ok = arg > 0 and eps >= -math.log(arg) / dt * (1 - 1e-12)
        msgs.append(f"eps >= -log(1 - 2 sqrt(L theta) dt)/dt: {ok}")
    elif scheme == "ses":
        ok = eps >= 5 * math.sqrt(lt) * (1 - 1e-12) and dt <= 1 / (2 * eps)
        msgs.append(f"eps >= 5 sqrt(L theta) and dt <= 1/(2 eps): {ok}")
    elif scheme == "sor-gibbs":
        ok = 0 < cfg.omega < 2 and cfg.tau * (lipschitz or 1 / cfg.inv_mass) < 2
        msgs.append(f"omega in (0, 2) and tau * L < 2: {ok}")
    else:
        raise InvalidParameterError(f"unknown scheme {scheme!r}")
    return SchemeValidity(scheme, bool(ok), tuple(msgs))


def recommended_friction(scheme, dt=0.05, l_theta=1.0):
    """Smallest friction admitted by each scheme's ergodicity constraint.

    ILA uses its own recommended value 1.5.  For OBA and BAOAB the
    constraint is an inequality on a logarithm and is evaluated at equality.
    """
    r = math.sqrt(l_theta)
    if scheme == "ila":
        return 1.5
    if scheme == "em":
        return 2 * r
    if scheme == "oba":
        return -math.log1p(-math.sqrt(6 * l_theta) * dt) / dt
    if scheme == "baoab":
        return -math.log1p(-2 * r * dt) / dt
    if scheme == "ses":
        return 5 * r
    if scheme in ("ula", "sor-gibbs"):
        return 1.5
    raise InvalidParameterError(f"unknown scheme {scheme!r}")


def recommended_config(scheme, lipschitz, dt=0.05) -> SamplerConfig:
    """Default experiment settings: common dt, theta = 1/L, per-scheme friction.

    ULA runs with tau = theta dt^2, the step ILA reduces to at zero momentum.
    SOR-Gibbs is mapped onto ILA's (tau, beta) so that it reproduces the ILA
    chain: omega = 1 - sqrt(beta) and its own step tau / omega^2.
    """
    theta = 1.0 / lipschitz
    eps = recommended_friction(scheme, dt)
    if scheme == "sor-gibbs":
        ila = SamplerConfig(dt, eps, theta)
        omega, tau = sor_from_heavy_ball(ila.tau, ila.beta)
        # a config whose tau equals the SOR step: theta * dt'^2 = tau
        return SamplerConfig(math.sqrt(tau / theta), eps, theta, omega)
    return SamplerConfig(dt, eps, theta)


# --------------------------------------------------------------------------
# state


@dataclass(frozen=True)
class ChainState:
    """Positions and velocities of one or more chains.

    ``prev_position`` is only used by the heavy-ball form of ILA, ``aux`` by
    SOR-Gibbs (its auxiliary variable Y), ``grad`` caches the gradient at
    ``position`` where a scheme can reuse it.
    """

    position: np.ndarray
    velocity: np.ndarray
    prev_position: Optional[np.ndarray] = None
    aux: Optional[np.ndarray] = None
    grad: Optional[np.ndarray] = None

    def __post_init__(self):
        if np.shape(self.position) != np.shape(self.velocity):
            raise InvalidParameterError(
                f"position {np.shape(self.position)} and velocity {np.shape(self.velocity)} differ"
            )

    @classmethod
    def at_rest(cls, position):
        """Zero velocity, previous position equal to the current one."""
        x = np.array(position, dtype=float)
        return cls(x, np.zeros_like(x), x.copy(), x.copy())

    @property
    def dim(self):
        return np.shape(self.position)[-1]


def _check_noise(state, noise, width=1):
    noise = np.asarray(noise, dtype=float)
    shape = np.shape(state.position)
    want = shape[:-1] + (width * shape[-1],)
    if noise.shape != want:
        raise InvalidParameterError(f"noise shape {noise.shape}, expected {want}")
    return noise


def _grad(state, potential):
    if state.grad is not None:
        return state.grad
    return potential.gradient(state.position)


# --------------------------------------------------------------------------
# ILA


def _kinetic_velocity(v, g, cfg, noise):
    # Euler-Maruyama velocity update shared by ILA and kinetic EM
    return v - cfg.friction * cfg.dt * v - cfg.dt * cfg.inv_mass * g + cfg.kinetic_noise * noise


def ila_step(state: ChainState, cfg: SamplerConfig, potential: PotentialSpec, noise) -> ChainState:
    """Position-velocity ILA: new velocity first, then move with it."""
    noise = _check_noise(state, noise)
    x, v = state.position, state.velocity
    g = _grad(state, potential)
    v_new = _kinetic_velocity(v, g, cfg, noise)
    x_new = x + cfg.dt * v_new
    return ChainState(x_new, v_new, x)


def heavy_ball_step(position, prev_position, step, momentum, potential, noise):
    """X' = X - step grad U(X) + momentum (X - X_prev) + sqrt(2 step (1 - momentum)) N.

    Returns ``(X', X)``.
    """
    scale = math.sqrt(2 * step * (1 - momentum))
    new = position - step * potential.gradient(position) + momentum * (position - prev_position) + scale * noise
    return new, position


def ila_heavy_ball_step(state: ChainState, cfg: SamplerConfig, potential, noise) -> ChainState:
    """ILA in heavy-ball form; the velocity is recovered as (X' - X)/dt."""
    noise = _check_noise(state, noise)
    if state.prev_position is None:
        raise InvalidParameterError("heavy-ball form needs prev_position")
    x_new, x = heavy_ball_step(state.position, state.prev_position, cfg.tau, cfg.beta, potential, noise)
    return ChainState(x_new, (x_new - x) / cfg.dt, x)


def ula_step(state: ChainState, tau, potential, noise) -> ChainState:
    if not tau > 0:
        raise InvalidParameterError("tau must be positive")
    noise = _check_noise(state, noise)
    x = state.position
    x_new = x - tau * _grad(state, potential) + math.sqrt(2 * tau) * noise
    return ChainState(x_new, state.velocity, x)


# --------------------------------------------------------------------------
# kinetic baselines


def em_kinetic_step(state: ChainState, cfg: SamplerConfig, potential, noise) -> ChainState:
    noise = _check_noise(state, noise)
    x, v = state.position, state.velocity
    g = _grad(state, potential)
    x_new = x + cfg.dt * v
    v_new = _kinetic_velocity(v, g, cfg, noise)
    return ChainState(x_new, v_new, x)


def oba_step(state: ChainState, cfg: SamplerConfig, potential, noise, linearized=False) -> ChainState:
    """OU refresh, gradient kick, drift.

    ``linearized`` replaces the exact OU decay and noise by their first-order
    expansions 1 - eps dt and sqrt(2 theta eps dt), which turns the scheme into ILA.
    """
    noise = _check_noise(state, noise)
    if linearized:
        decay, scale = 1 - cfg.friction * cfg.dt, cfg.kinetic_noise
    else:
        decay, scale = cfg.ou_decay, cfg.ou_noise
    x, v = state.position, state.velocity
    v_half = decay * v + scale * noise
    v_new = v_half - cfg.dt * cfg.inv_mass * _grad(state, potential)
    x_new = x + cfg.dt * v_new
    return ChainState(x_new, v_new, x)


def _baoab_core(x, v, g, cfg, potential, noise):
    h = 0.5 * cfg.dt
    v = v - h * cfg.inv_mass * g
    x = x + h * v
    v = cfg.ou_decay * v + cfg.ou_noise * noise
    x = x + h * v
    g = potential.gradient(x)
    v = v - h * cfg.inv_mass * g
    return x, v, g


def baoab_step(state: ChainState, cfg: SamplerConfig, potential, noise) -> ChainState:
    """Half kick, half drift, OU refresh, half drift, half kick.

    The returned state caches the gradient at the new position, so a chain of
    ``baoab_step`` calls costs one gradient per step.
    """
    noise = _check_noise(state, noise)
    x, v, g = _baoab_core(state.position, state.velocity, _grad(state, potential), cfg, potential, noise)
    return ChainState(x, v, state.position, grad=g)


def baoab_run(state: ChainState, cfg: SamplerConfig, potential, noises) -> ChainState:
    """Run ``len(noises)`` BAOAB steps as BAOA (BBAOA)^(n-1) B.

    The two adjacent half kicks share one gradient evaluation and are applied
    one after the other, so the result equals repeated :func:`baoab_step`
    bit for bit.
    """
    noises = np.asarray(noises, dtype=float)
    if len(noises) == 0:
        return state
    x, v = state.position, state.velocity
    g = _grad(state, potential)
    prev = x
    for n in noises:
        prev = x
        x, v, g = _baoab_core(x, v, g, cfg, potential, _check_noise(state, n))
    return ChainState(x, v, prev, grad=g)


# --------------------------------------------------------------------------
# stochastic exponential Euler


@dataclass(frozen=True)
class SesMoments:
    """Mean of (X', V') and the per-coordinate covariance block [[xx, xv], [xv, vv]].

    ``mean`` has shape ``(..., 2d)`` with positions first.  ``taylor`` marks the
    leading-order fallback used when the closed form is numerically indefinite.
    """

    mean: np.ndarray
    xx: float
    xv: float
    vv: float
    taylor: bool = False

    @property
    def block(self):
        return np.array([[self.xx, self.xv], [self.xv, self.vv]])

    def cholesky(self):
        """Lower factor (c11, c21, c22); raises LinAlgError when not positive definite."""
        if not self.xx > 0:
            raise np.linalg.LinAlgError("covariance block not positive definite")
        c11 = math.sqrt(self.xx)
        c21 = self.xv / c11
        rest = self.vv - c21 * c21
        if not rest > 0:
            raise np.linalg.LinAlgError("covariance block not positive definite")
        return c11, c21, math.sqrt(rest)


def _xx_series(u):
    # 2u - 3 + 4e^{-u} - e^{-2u} = sum_{k>=3} (4(-1)^k - (-2)^k) u^k / k!
    total, term = 0.0, 1.0
    for k in range(1, 16):
        term *= u / k
        if k >= 3:
            total += (4 * (-1) ** k - (-2) ** k) * term
    return total


def ses_covariance(friction, inv_mass, t, stable=True):
    """(xx, xv, vv, taylor) of the OU transition over time ``t`` with frozen gradient.

    With ``stable`` the position variance is summed as a power series for
    eps * t < 0.05, where the closed form loses digits to cancellation.  If
    the block still fails a Cholesky test, its leading-order expansion is
    returned with ``taylor=True``.
    """
    if not friction * t > 0:
        raise InvalidParameterError("SES needs friction * dt > 0")
    eps, th = friction, inv_mass
    u = eps * t
    e = math.exp(-u)
    if stable and u < 0.05:
        xx = th * _xx_series(u) / eps**2
    elif stable:
        em1 = math.expm1(-u)
        xx = th * (2 * u + 2 * em1 - em1 * em1) / eps**2
    else:
        xx = th * (2 * u - 3 + 4 * e - e * e) / eps**2
    xv = th * math.expm1(-u) ** 2 / eps if stable else th * (1 - e) ** 2 / eps
    vv = -th * math.expm1(-2 * u) if stable else th * (1 - e * e)
    if xx > 0 and vv - xv * xv / xx > 0:
        return xx, xv, vv, False
    return (2.0 / 3.0) * th * eps * t**3, th * eps * t**2, 2 * th * eps * t, True


def ses_moments(state: ChainState, cfg: SamplerConfig, potential, t=None) -> SesMoments:
    t = cfg.dt if t is None else t
    eps, th = cfg.friction, cfg.inv_mass
    xx, xv, vv, taylor = ses_covariance(eps, th, t)
    x, v = state.position, state.velocity
    g = _grad(state, potential)
    em1 = math.expm1(-eps * t)
    one_minus_e = -em1
    mx = x + one_minus_e / eps * v - th / eps * (t - one_minus_e / eps) * g
    mv = (1 + em1) * v - th / eps * one_minus_e * g
    return SesMoments(np.concatenate([mx, mv], axis=-1), xx, xv, vv, taylor)


def ses_step(state: ChainState, cfg: SamplerConfig, potential, noise) -> ChainState:
    """Exact OU transition with frozen gradient; consumes 2d normals per chain.

    The first d normals drive the position, the last d the velocity.
    """
    noise = _check_noise(state, noise, width=2)
    d = state.dim
    mom = ses_moments(state, cfg, potential)
    c11, c21, c22 = mom.cholesky()
    n1, n2 = noise[..., :d], noise[..., d:]
    x_new = mom.mean[..., :d] + c11 * n1
    v_new = mom.mean[..., d:] + c21 * n1 + c22 * n2
    return ChainState(x_new, v_new, state.position)


# --------------------------------------------------------------------------
# SOR-Gibbs split of ULA


@dataclass(frozen=True)
class SorConfig:
    """Relaxation ``omega``, step ``tau`` and the auxiliary chain ``aux`` (Y).

    The noise variance tau is split as sigma1^2 = tau on the auxiliary
    update and sigma2^2 = 0 on the position update.
    """

    omega: float
    tau: float
    aux: np.ndarray
    sigma1_sq: float = field(init=False)
    sigma2_sq: float = field(init=False, default=0.0)

    def __post_init__(self):
        if not 0 < self.omega < 2:
            raise InvalidParameterError(f"omega must lie in (0, 2), got {self.omega}")
        if not self.tau > 0:
            raise InvalidParameterError("tau must be positive")
        object.__setattr__(self, "sigma1_sq", self.tau)
        object.__setattr__(self, "sigma2_sq", 0.0)


def gibbs_sor_step(x, sor: SorConfig, potential, noise):
    """Relaxed update of Y, then relaxed update of X towards the new Y."""
    x = np.asarray(x, dtype=float)
    noise = np.asarray(noise, dtype=float)
    if noise.shape != x.shape or np.shape(sor.aux) != x.shape:
        raise InvalidParameterError("x, aux and noise must share a shape")
    w, tau = sor.omega, sor.tau
    y = (1 - w) * sor.aux + w * (x - tau * potential.gradient(x)) + math.sqrt(w * (2 - w) * 2 * tau) * noise
    x_new = (1 - w) * x + w * y
    return x_new, replace(sor, aux=y)


def sor_from_heavy_ball(step, momentum):
    """(omega, tau) of the SOR-Gibbs chain equal to heavy-ball ILA with (step, momentum)."""
    if not 0 <= momentum < 1:
        raise InvalidParameterError("momentum must lie in [0, 1)")
    omega = 1 - math.sqrt(momentum)
    return omega, step / omega**2


def heavy_ball_from_sor(omega, tau):
    """(step, momentum) = (omega^2 tau, (1 - omega)^2)."""
    return omega * omega * tau, (1 - omega) ** 2


def _sor_state_step(state, cfg, potential, noise):
    noise = _check_noise(state, noise)
    aux = state.position if state.aux is None else state.aux
    x_new, sor = gibbs_sor_step(state.position, SorConfig(cfg.omega, cfg.tau, aux), potential, noise)
    return ChainState(x_new, state.velocity, state.position, aux=sor.aux)


def _ula_state_step(state, cfg, potential, noise):
    return ula_step(state, cfg.tau, potential, noise)


@dataclass(frozen=True)
class Scheme:
    name: str
    step: Callable
    noise_width: int = 1
    kinetic: bool = True


SCHEMES = {
    "ila": Scheme("ila", ila_step),
    "ula": Scheme("ula", _ula_state_step, kinetic=False),
    "em": Scheme("em", em_kinetic_step),
    "oba": Scheme("oba", oba_step),
    "baoab": Scheme("baoab", baoab_step),
    "ses": Scheme("ses", ses_step, noise_width=2),
    "sor-gibbs": Scheme("sor-gibbs", _sor_state_step, kinetic=False),
}
KINETIC_SCHEMES = tuple(k for k, s in SCHEMES.items() if s.kinetic)


def get_scheme(name) -> Scheme:
    try:
        return SCHEMES[name]
    except KeyError:
        raise InvalidParameterError(f"unknown scheme {name!r}; choose from {', '.join(SCHEMES)}") from None

"""Numerical checks of the ILA contraction and bias machinery.

The positive-definiteness conditions reduce to 2x2 scalar problems because all
blocks are polynomials in the (commuting) Hessian; every check below therefore
works on a grid of scalar curvatures ``theta * h`` in ``[1/kappa, 1]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize


class DomainError(ValueError):
    """Parameter outside the domain where a formula is defined."""


class DivergenceError(ValueError):
    """Linear recursion with spectral radius >= 1 has no stationary law."""


# --------------------------------------------------------------------------
# friction polynomial and step-size bound


def friction_polynomial(eps):
    """-2 eps^3 + 4 eps^2 + 2 eps - 5; positive exactly on the admissible friction range."""
    eps = np.asarray(eps, dtype=float)
    return -2 * eps**3 + 4 * eps**2 + 2 * eps - 5


def friction_roots(xtol=1e-6):
    """The two larger real roots, bracketing the interval where the polynomial is positive."""
    lo = optimize.bisect(friction_polynomial, 1.0, 1.5, xtol=xtol)
    hi = optimize.bisect(friction_polynomial, 1.5, 2.0, xtol=xtol)
    return lo, hi


def step_bounds(eps):
    """The four terms whose minimum bounds the ILA step size.

    Keys: ``"eighth"`` (1/8), ``"friction"`` (1/(1+eps)), ``"damping"``
    (2/eps - 1) and ``"polynomial"`` (the rational bound).
    """
    eps = float(eps)
    den = -(eps**5) + 2 * eps**4 + 3 * eps**3 - 3 * eps - 2
    if den <= 0:
        raise DomainError(f"rational step bound has nonpositive denominator at eps={eps}")
    num = -2 * eps**4 + 4 * eps**3 + 2 * eps**2 - 5 * eps
    return {
        "eighth": 1 / 8,
        "friction": 1 / (1 + eps),
        "damping": 2 / eps - 1,
        "polynomial": num / den,
    }


def max_step(eps):
    if not 1 < eps < 2:
        raise DomainError(f"max_step needs eps in (1, 2), got {eps}")
    return min(step_bounds(eps).values())


# --------------------------------------------------------------------------
# weighted norm


@dataclass(frozen=True)
class WeightedNorm:
    """||z||^2_{a,b} = z^T G z with G = [[1, b], [b, a]] (tensor I_d)."""

    a: float = 1.0
    b: float = 0.0

    def __post_init__(self):
        if not self.a > self.b**2:
            raise DomainError(f"G not positive definite: a={self.a}, b={self.b}")

    @classmethod
    def for_friction(cls, eps):
        return cls(1.0, 1.0 / eps)

    @property
    def matrix(self):
        return np.array([[1.0, self.b], [self.b, self.a]])

    @property
    def eigenvalues(self):
        return np.linalg.eigvalsh(self.matrix)

    @property
    def condition(self):
        lo, hi = self.eigenvalues
        return hi / lo

    def sq(self, x, v):
        """Squared norm of phase-space points given as position/velocity arrays."""
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        return np.sum(x * x + 2 * self.b * x * v + self.a * v * v, axis=-1)


def g_condition(eps):
    """kappa(G) = (eps + 1)/(eps - 1) for a = 1, b = 1/eps."""
    if eps <= 1:
        raise DomainError("kappa(G) needs eps > 1")
    return (eps + 1) / (eps - 1)


# --------------------------------------------------------------------------
# contraction checks


@dataclass
class ContractionReport:
    scheme: str
    theta_h: np.ndarray
    tile_a: np.ndarray
    determinant: np.ndarray
    passed: bool
    decay_factor: float
    target_factor: float
    iterated_factor: float = float("nan")
    extra: dict = field(default_factory=dict)

    @property
    def min_tile_a(self):
        return float(self.tile_a.min())

    @property
    def min_determinant(self):
        return float(self.determinant.min())

    def summary(self):
        lines = [
            f"scheme            {self.scheme}",
            f"grid              {self.theta_h.size} points, theta*h in [{self.theta_h.min():.6g}, {self.theta_h.max():.6g}]",
            f"min P_A           {self.min_tile_a:.6g}",
            f"min P_A P_C-P_B^2 {self.min_determinant:.6g}",
            f"decay factor      {self.decay_factor:.10g}",
            f"target factor     {self.target_factor:.10g}",
        ]
        if not math.isnan(self.iterated_factor):
            lines.append(f"iterated factor   {self.iterated_factor:.10g}")
        lines.append(f"passed            {self.passed}")
        return "\n".join(lines)


def _grid(kappa, grid_size):
    if kappa < 1:
        raise DomainError("kappa must be >= 1")
    return np.linspace(1.0 / kappa, 1.0, grid_size)


def continuous_tiles(eps, kappa, theta_h, a=1.0, b=None):
    """Scalar tiles (P_A, P_B, P_C) of M - G/kappa for the continuous dynamics."""
    b = 1.0 / eps if b is None else b
    k = 1.0 / kappa
    th = np.asarray(theta_h, dtype=float)
    pa = 2 * b * th - k
    pb = -1 + eps * b + a * th - k * b
    pc = 2 * (eps * a - b) - k * a
    return pa, pb, np.broadcast_to(pc, th.shape)


def continuous_contraction_check(eps, kappa, grid_size=1024):
    """Verify M - G/kappa > 0 on the curvature grid (continuous-time contraction)."""
    th = _grid(kappa, grid_size)
    pa, pb, pc = continuous_tiles(eps, kappa, th)
    det = pa * pc - pb**2
    # slowest decay rate of ||z||^2_{a,b}: smallest generalized eigenvalue of (M, G)
    G = WeightedNorm.for_friction(eps).matrix
    rates = []
    for t in th:
        # generator form of the squared weighted norm: d/dt z^T G z = -z^T M z
        M = np.array([[2 * t / eps, t], [t, 2 * (eps - 1 / eps)]])
        rates.append(_gen_eig(M, G).min())
    return ContractionReport(
        scheme="continuous",
        theta_h=th,
        tile_a=pa,
        determinant=det,
        passed=bool(np.all(pa > 0) and np.all(det > 0)),
        decay_factor=float(min(rates)),
        target_factor=1.0 / kappa,
        extra={"note": "decay_factor is the slowest exponential rate; contraction needs >= target"},
    )


def _gen_eig(A, G):
    # eigenvalues of G^{-1} A for symmetric A and SPD G
    Lc = np.linalg.cholesky(G)
    Li = np.linalg.inv(Lc)
    return np.linalg.eigvalsh(Li @ A @ Li.T)


def difference_map(dt, eps, theta_h):
    """Synchronous-coupling difference map of ILA in the shifted-velocity form.

    Gradients are evaluated at X + dt V, which is ILA after relabelling
    V^{k+1} as V^k.
    """
    return np.array(
        [[1.0, dt], [-dt * theta_h, 1.0 - eps * dt - dt * dt * theta_h]]
    )


def discrete_tiles(dt, eps, kappa, theta_h, a=1.0, b=None):
    """Closed-form tiles (P_A, P_B, P_C) of (1 - dt/kappa) G - P^T G P."""
    b = 1.0 / eps if b is None else b
    k = 1.0 / kappa
    th = np.asarray(theta_h, dtype=float)
    pa = (1 - k * dt) - (1 - dt * 2 * b * th + dt**2 * a * th**2)
    pb = (b - b * k * dt) - (
        b + dt * (1 - eps * b - a * th) + dt**2 * (eps * a * th - 2 * b * th) + dt**3 * a * th**2
    )
    pc = (a - a * k * dt) - (
        a
        + dt * (2 * b - 2 * eps * a)
        + dt**2 * (1 - 2 * eps * b + eps**2 * a - 2 * a * th)
        + dt**3 * (2 * eps * a * th - 2 * b * th)
        + dt**4 * a * th**2
    )
    return pa, pb, pc


def discrete_contraction_check(cfg, kappa, grid_size=1024, n_random=64, n_iter=20, seed=0):
    """Check (1 - dt/kappa) G - P^T G P > 0 on the curvature grid and measure decay.

    ``cfg`` is anything with ``dt`` and ``friction`` attributes, normally a
    :class:`~inertial_langevin.samplers.SamplerConfig`.

    ``decay_factor`` is the worst per-step ratio ||P z||^2_{a,b} / ||z||^2_{a,b},
    computed exactly as the largest generalized eigenvalue over the grid.
    ``iterated_factor`` is the same quantity observed by pushing random
    differences through the map, an independent route to the same number.
    """
    dt, eps = cfg.dt, cfg.friction
    th = _grid(kappa, grid_size)
    pa, pb, pc = discrete_tiles(dt, eps, kappa, th)
    det = pa * pc - pb**2
    norm = WeightedNorm.for_friction(eps)
    G = norm.matrix
    rng = np.random.default_rng(seed)
    exact = 0.0
    observed = 0.0
    for t in th:
        P = difference_map(dt, eps, t)
        exact = max(exact, _gen_eig(P.T @ G @ P, G).max())
        z = rng.standard_normal((n_random, 2))
        for _ in range(n_iter):
            zn = z @ P.T
            ratio = np.einsum("ni,ij,nj->n", zn, G, zn) / np.einsum("ni,ij,nj->n", z, G, z)
            observed = max(observed, ratio.max())
            z = zn / np.linalg.norm(zn, axis=1, keepdims=True)
    return ContractionReport(
        scheme="ila",
        theta_h=th,
        tile_a=pa,
        determinant=det,
        passed=bool(np.all(pa > 0) and np.all(det > 0)),
        decay_factor=float(exact),
        target_factor=1.0 - dt / kappa,
        iterated_factor=float(observed),
    )


def exact_step_supremum(eps, kappa=1.0, grid_size=1024, hi=1.0, tol=1e-10):
    """Largest dt for which the exact tile check passes (bisection)."""

    def ok(dt):
        th = _grid(kappa, grid_size)
        pa, pb, pc = discrete_tiles(dt, eps, kappa, th)
        return bool(np.all(pa > 0) and np.all(pa * pc - pb**2 > 0))

    lo = tol
    if not ok(lo):
        return 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if ok(mid) else (lo, mid)
    return lo


# contraction constants c in 1 - dt/(c kappa), literature values for the baselines
CONTRACTION_CONSTANTS = {"em": 4.0, "ses": 20.0, "oba": math.sqrt(96.0), "baoab": 8.0, "ila": 1.0}


def contraction_rate(scheme, dt, kappa):
    return 1.0 - dt / (CONTRACTION_CONSTANTS[scheme] * kappa)


# --------------------------------------------------------------------------
# stationary laws of linear recursions


def lyapunov_stationary(P, Q, method="direct", tol=1e-14, max_iter=200):
    """Solve Sigma = P Sigma P^T + Q.

    ``method="direct"`` solves the linear system for the independent entries
    of the symmetric unknown; ``method="fixed_point"`` runs the doubling
    iteration Sigma <- Sigma + A Sigma A^T, A <- A^2 until the update is below
    ``tol`` relative to Sigma.
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    n = P.shape[0]
    radius = np.abs(np.linalg.eigvals(P)).max()
    if radius >= 1:
        raise DivergenceError(f"spectral radius {radius} >= 1")
    if method == "direct":
        iu = np.triu_indices(n)
        m = iu[0].size
        A = np.zeros((m, m))
        rhs = Q[iu]
        for col, (k, l) in enumerate(zip(*iu)):
            E = np.zeros((n, n))
            E[k, l] = E[l, k] = 1.0
            A[:, col] = (E - P @ E @ P.T)[iu]
        sol = np.linalg.solve(A, rhs)
        S = np.zeros((n, n))
        S[iu] = sol
        return S + np.triu(S, 1).T
    if method == "fixed_point":
        S = Q.copy()
        Ak = P.copy()
        for _ in range(max_iter):
            upd = Ak @ S @ Ak.T
            S = S + upd
            Ak = Ak @ Ak
            if np.abs(upd).max() <= tol * max(np.abs(S).max(), 1e-300):
                break
        return 0.5 * (S + S.T)
    raise ValueError(f"unknown method {method!r}")


def linear_step_map(scheme, dt, eps, theta, h):
    """(P, Q) of one step of ``scheme`` on U(x) = h x^2 / 2 in one dimension.

    The state is (X, V) for kinetic schemes and X alone for ULA, whose step
    size is theta * dt^2.  ``"ila"`` tracks (X^k, V^k) as the sampler stores
    them; ``"ila_shifted"`` tracks (X^k, V^{k+1}), the pairing whose
    deterministic part is :func:`difference_map`.
    """
    if scheme == "ula":
        tau = theta * dt * dt
        return np.array([[1 - tau * h]]), np.array([[2 * tau]])
    if scheme == "ila":
        s2 = 2 * eps * theta * dt
        P = np.array([[1 - dt * dt * theta * h, dt * (1 - eps * dt)], [-dt * theta * h, 1 - eps * dt]])
        return P, s2 * np.array([[dt * dt, dt], [dt, 1.0]])
    if scheme == "ila_shifted":
        P = difference_map(dt, eps, theta * h)
        return P, np.array([[0.0, 0.0], [0.0, 2 * eps * theta * dt]])
    if scheme == "em":
        s2 = 2 * eps * theta * dt
        P = np.array([[1.0, dt], [-dt * theta * h, 1 - eps * dt]])
        return P, np.array([[0.0, 0.0], [0.0, s2]])
    c = math.exp(-eps * dt)
    s = math.sqrt(theta * (1 - c * c))
    if scheme == "oba":
        P = np.array([[1 - dt * dt * theta * h, dt * c], [-dt * theta * h, c]])
        g = np.array([dt * s, s])
        return P, np.outer(g, g)
    if scheme == "baoab":
        B = np.array([[1.0, 0.0], [-0.5 * dt * theta * h, 1.0]])
        A = np.array([[1.0, 0.5 * dt], [0.0, 1.0]])
        O = np.array([[1.0, 0.0], [0.0, c]])
        P = B @ A @ O @ A @ B
        g = B @ A @ np.array([0.0, s])
        return P, np.outer(g, g)
    if scheme == "ses":
        t = dt
        one_m = 1 - c
        P = np.array(
            [
                [1 - theta * h * (t - one_m / eps) / eps, one_m / eps],
                [-theta * h * one_m / eps, c],
            ]
        )
        xx = theta * (2 * eps * t - 3 + 4 * c - c * c) / eps**2
        xv = theta * one_m**2 / eps
        vv = theta * (1 - c * c)
        return P, np.array([[xx, xv], [xv, vv]])
    raise ValueError(f"unknown scheme {scheme!r}")


def stationary_covariance(scheme, dt, eps, theta, h, method="direct"):
    P, Q = linear_step_map(scheme, dt, eps, theta, h)
    return lyapunov_stationary(P, Q, method=method)


def quadratic_bias(dt, eps, theta=1.0, h=1.0, scheme="ila"):
    """W2 between the scheme's stationary law and N(0, diag(1/h, theta)) on a 1D quadratic."""
    from .metrics import GaussianSummary, frechet_w2

    S = stationary_covariance(scheme, dt, eps, theta, h)
    target = np.diag([1.0 / h, theta]) if S.shape == (2, 2) else np.array([[1.0 / h]])
    n = S.shape[0]
    return frechet_w2(GaussianSummary(np.zeros(n), S), GaussianSummary(np.zeros(n), target))


# --------------------------------------------------------------------------
# bias constants


@dataclass(frozen=True)
class BiasBound:
    rho_k: float
    asymptotic_constant: float
    k_of_dt: int
    dt_of_delta: float | None = None
    K_of_delta: int | None = None

    def rows(self):
        return [
            ("rho_k", self.rho_k),
            ("asymptotic_constant", self.asymptotic_constant),
            ("k_of_dt", self.k_of_dt),
            ("dt_of_delta", self.dt_of_delta),
            ("K_of_delta", self.K_of_delta),
        ]


def rho_k(eps, theta, dt, d, second_moment_v, second_moment_x):
    """One-step discretisation error coefficient."""
    return (
        (1 + eps**2 + eps**4) * second_moment_v + (2 + eps**2) * second_moment_x + d * eps * theta
    ) * 2 * dt / 3 + eps * theta * (1 + eps**2)


def asymptotic_bias_constant(eps, kappa, lipschitz):
    """lim W2(pi_dt, pi)/sqrt(dt); returns ``inf`` when the value overflows a float."""
    kg = g_condition(eps)
    log_val = 0.5 * math.log(4 / lipschitz * eps * (1 + eps**2) * kappa * math.log(4 * kg))
    log_val += 3 * kappa * math.log(2 * math.sqrt(kg))
    return math.exp(log_val) if log_val < 700 else math.inf


def steps_to_halve(dt, eps, kappa):
    """k(dt) = ceil(-log(4 kappa(G)) / log(1 - dt/kappa))."""
    return int(math.ceil(-math.log(4 * g_condition(eps)) / math.log1p(-dt / kappa)))


def bias_constants(
    eps,
    theta,
    dt,
    d,
    kappa,
    moment_bounds=(0.0, 0.0),
    delta=None,
    w2_init=None,
    c=None,
    lipschitz=None,
):
    """Constants of the bias bound and the delta-accuracy step/iteration counts.

    ``moment_bounds`` is (E|V|^2, E|X - x*|^2).  ``lipschitz`` defaults to
    1/theta.  ``c`` defaults to the asymptotic constant; ``delta`` and
    ``w2_init`` (W2 of the initial law to the target) are needed for K(delta).
    """
    ev, ex = moment_bounds
    if eps <= 1:
        raise DomainError("bias constants need eps > 1 (kappa(G) undefined otherwise)")
    if dt >= 1 / eps:
        raise DomainError("bias constants need dt < 1/eps")
    if min(theta, dt, d, ev, ex) < 0 or kappa < 1:
        raise DomainError("inputs must be nonnegative and kappa >= 1")
    L = 1.0 / theta if lipschitz is None else lipschitz
    rho = rho_k(eps, theta, dt, d, ev, ex)
    const = asymptotic_bias_constant(eps, kappa, L)
    k = steps_to_halve(dt, eps, kappa)
    dt_delta = K_delta = None
    if delta is not None:
        cc = const if c is None else c
        dt_delta = delta**2 / (4 * cc**2)
        if w2_init is not None:
            ratio = delta / (2 * math.sqrt(g_condition(eps)) * w2_init)
            K = 2 / math.log1p(-dt_delta / kappa) * math.log(ratio)
            K_delta = max(int(math.ceil(K)), 0)
    return BiasBound(rho, const, k, dt_delta, K_delta)


def warm_start_moment_bound(eps, dt, d, m, lipschitz):
    """Uniform second-moment bound for ILA started at delta_{x*} x N(0, theta I)."""
    kappa = lipschitz / m
    rho0 = 2 * d * dt / (3 * lipschitz) * ((1 + eps**2 + eps**4) + (2 + eps**2) * kappa + eps)
    rho0 += eps / lipschitz * (1 + eps**2)
    inner = math.sqrt(d / m) + math.sqrt(rho0 * math.exp(3 * dt)) * 2 * kappa
    return 2 * g_condition(eps) * inner**2 + 2 * d * (1 / m + 1 / lipschitz)

"""Potentials U(x) = -log pi(x) + const with gradients and curvature bounds.

All evaluators are vectorised over leading axes: ``x`` has shape ``(..., d)``,
values come back with shape ``(...)`` and gradients with shape ``(..., d)``.
Images for the TV model are stored row-major as flat vectors of length
``d1 * d2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp


class InvalidParameterError(ValueError):
    """Raised when a potential is constructed or evaluated with bad parameters."""


@dataclass(frozen=True)
class PotentialSpec:
    """A differentiable (or subdifferentiable) potential with its bounds.

    ``strong_convexity == 0`` means "not strongly convex": the theory checks
    that need a finite condition number are skipped for such potentials.
    """

    dim: int
    value: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    lipschitz: float
    strong_convexity: float = 0.0
    minimizer: Optional[np.ndarray] = None
    name: str = "potential"
    smooth: bool = True
    lipschitz_assumed: bool = False
    params: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.dim < 1:
            raise InvalidParameterError(f"dim must be positive, got {self.dim}")
        if not self.lipschitz > 0:
            raise InvalidParameterError(f"lipschitz must be positive, got {self.lipschitz}")
        if self.strong_convexity < 0:
            raise InvalidParameterError("strong_convexity must be nonnegative")
        if self.strong_convexity > 0 and self.strong_convexity > self.lipschitz * (1 + 1e-12):
            raise InvalidParameterError(
                f"strong_convexity {self.strong_convexity} exceeds lipschitz {self.lipschitz}"
            )

    @property
    def kappa(self) -> float:
        """Condition number L/m, ``inf`` when the potential is not strongly convex."""
        if self.strong_convexity <= 0:
            return float("inf")
        return self.lipschitz / self.strong_convexity

    def __call__(self, x):
        return self.value(x)


def _check_dim(x, d):
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (d,):
        raise InvalidParameterError(f"expected trailing dimension {d}, got shape {x.shape}")
    return x


# --------------------------------------------------------------------------
# Gaussian


def eval_gaussian(x, mean, variances):
    """Value and gradient of U(x) = 1/2 sum_i (x_i - mu_i)^2 / lambda_i."""
    mean = np.asarray(mean, dtype=float)
    variances = np.asarray(variances, dtype=float)
    if np.any(variances <= 0):
        raise InvalidParameterError("all variances must be positive")
    x = _check_dim(x, mean.shape[-1])
    r = x - mean
    grad = r / variances
    return 0.5 * np.sum(r * grad, axis=-1), grad


def gaussian_potential(mean, variances) -> PotentialSpec:
    """Diagonal Gaussian target N(mean, diag(variances))."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    variances = np.broadcast_to(np.asarray(variances, dtype=float), mean.shape).copy()
    if np.any(variances <= 0):
        raise InvalidParameterError("all variances must be positive")
    inv = 1.0 / variances

    def value(x):
        r = _check_dim(x, mean.size) - mean
        return 0.5 * np.sum(r * r * inv, axis=-1)

    def gradient(x):
        return (_check_dim(x, mean.size) - mean) * inv

    return PotentialSpec(
        dim=mean.size,
        value=value,
        gradient=gradient,
        lipschitz=float(inv.max()),
        strong_convexity=float(inv.min()),
        minimizer=mean.copy(),
        name="gaussian",
        params={"mean": mean, "variances": variances},
    )


# --------------------------------------------------------------------------
# Smooth Laplace


@dataclass(frozen=True)
class SmoothLaplaceParams:
    atoms: np.ndarray
    offsets: np.ndarray
    delta: float

    def __post_init__(self):
        atoms = np.atleast_2d(np.asarray(self.atoms, dtype=float))
        offsets = np.asarray(self.offsets, dtype=float).reshape(-1)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "offsets", offsets)
        if not self.delta > 0:
            raise InvalidParameterError(f"delta must be positive, got {self.delta}")
        if offsets.size != atoms.shape[0]:
            raise InvalidParameterError("offsets must have one entry per atom")
        if atoms.shape[0] < atoms.shape[1]:
            raise InvalidParameterError("need at least as many atoms as dimensions")

    @property
    def formula_lipschitz(self) -> float:
        return float(np.sum(self.atoms**2) / self.delta)


def eval_smooth_laplace(x, p: SmoothLaplaceParams):
    """Value and gradient of sum_j phi_delta(a_j^T x - b_j), phi_delta(y) = sqrt(y^2+delta^2) - delta."""
    if not p.delta > 0:
        raise InvalidParameterError("delta must be positive")
    x = _check_dim(x, p.atoms.shape[1])
    res = x @ p.atoms.T - p.offsets
    root = np.sqrt(res * res + p.delta**2)
    value = np.sum(root - p.delta, axis=-1)
    grad = (res / root) @ p.atoms
    return value, grad


def _ball_penalty(x, radius, weight):
    norm = np.linalg.norm(x, axis=-1)
    excess = np.maximum(norm - radius, 0.0)
    value = 0.5 * weight * excess**2
    scale = np.where(norm > 0, weight * excess / np.where(norm > 0, norm, 1.0), 0.0)
    return value, scale[..., None] * x


def smooth_laplace_potential(
    p: SmoothLaplaceParams, lipschitz=None, penalty_radius=None
) -> PotentialSpec:
    """Smooth approximation of a Laplace law.

    ``lipschitz`` overrides the formula bound ``delta^-1 sum_j |a_j|^2`` (the
    override is flagged as assumed).  ``penalty_radius`` switches on the
    strong-convexity penalty ``delta/2 dist(x, B_R)^2``; it is off by default.
    """
    d = p.atoms.shape[1]

    def value(x):
        v, _ = eval_smooth_laplace(x, p)
        if penalty_radius is not None:
            v = v + _ball_penalty(x, penalty_radius, p.delta)[0]
        return v

    def gradient(x):
        _, g = eval_smooth_laplace(x, p)
        if penalty_radius is not None:
            g = g + _ball_penalty(x, penalty_radius, p.delta)[1]
        return g

    minimizer = None
    if p.atoms.shape[0] == d:
        minimizer = np.linalg.solve(p.atoms, p.offsets)
    elif np.allclose(p.offsets, 0):
        minimizer = np.zeros(d)
    L = p.formula_lipschitz if lipschitz is None else float(lipschitz)
    if penalty_radius is not None and lipschitz is None:
        L += p.delta
    return PotentialSpec(
        dim=d,
        value=value,
        gradient=gradient,
        lipschitz=L,
        strong_convexity=0.0,
        minimizer=minimizer,
        name="smooth_laplace",
        lipschitz_assumed=lipschitz is not None,
        params=p,
    )


# --------------------------------------------------------------------------
# Gaussian mixture


@dataclass(frozen=True)
class GmmParams:
    weights: np.ndarray
    means: np.ndarray
    isotropic_std: float

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        mu = np.atleast_2d(np.asarray(self.means, dtype=float))
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        if w.size != mu.shape[0]:
            raise InvalidParameterError("one weight per component required")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise InvalidParameterError("weights must be nonnegative and sum to 1")
        if not self.isotropic_std > 0:
            raise InvalidParameterError("isotropic_std must be positive")


def _gmm_parts(x, p):
    x = _check_dim(x, p.means.shape[1])
    s2 = p.isotropic_std**2
    diff = x[..., None, :] - p.means
    with np.errstate(divide="ignore"):
        logw = np.log(p.weights)
    logits = logw - 0.5 * np.sum(diff * diff, axis=-1) / s2
    return diff, logits, s2


def eval_gmm(x, p: GmmParams):
    """Value -log sum_j alpha_j N(x | mu_j, sigma^2 I) and its gradient."""
    diff, logits, s2 = _gmm_parts(x, p)
    d = p.means.shape[1]
    lse = logsumexp(logits, axis=-1)
    value = -lse + 0.5 * d * np.log(2 * np.pi * s2)
    resp = np.exp(logits - lse[..., None])
    grad = np.sum(resp[..., None] * diff, axis=-2) / s2
    return value, grad


def grid_gmm_params(spacing=3.0, std=0.5) -> GmmParams:
    """Nine equally weighted components on the grid {-s, 0, s}^2."""
    ticks = np.array([-spacing, 0.0, spacing])
    means = np.array([(u, v) for u in ticks for v in ticks])
    return GmmParams(weights=np.full(9, 1 / 9), means=means, isotropic_std=std)


def gmm_potential(p: GmmParams, lipschitz=32.0) -> PotentialSpec:
    """GMM potential; the default L=32 is an empirical curvature estimate, flagged as assumed."""

    def value(x):
        return eval_gmm(x, p)[0]

    def gradient(x):
        return eval_gmm(x, p)[1]

    return PotentialSpec(
        dim=p.means.shape[1],
        value=value,
        gradient=gradient,
        lipschitz=float(lipschitz),
        strong_convexity=0.0,
        name="gmm",
        lipschitz_assumed=True,
        params=p,
    )


def sample_gmm(p: GmmParams, n, rng: np.random.Generator):
    """Exact draws from the mixture."""
    comp = rng.choice(p.weights.size, size=n, p=p.weights)
    return p.means[comp] + p.isotropic_std * rng.standard_normal((n, p.means.shape[1]))


# --------------------------------------------------------------------------
# TV denoising


@dataclass(frozen=True)
class TvDenoiseParams:
    observation: np.ndarray
    noise_level: float
    reg_weight: float
    assumed_lipschitz: float = 400.0

    def __post_init__(self):
        y = np.asarray(self.observation, dtype=float)
        object.__setattr__(self, "observation", y)
        if y.ndim != 2 or min(y.shape) < 2:
            raise InvalidParameterError("observation must be an image of at least 2x2 pixels")
        if not self.noise_level > 0:
            raise InvalidParameterError("noise_level must be positive")
        if self.reg_weight < 0:
            raise InvalidParameterError("reg_weight must be nonnegative")
        if not self.assumed_lipschitz > 0:
            raise InvalidParameterError("assumed_lipschitz must be positive")

    @property
    def shape(self):
        return self.observation.shape

    @property
    def dim(self):
        return self.observation.size


def _as_images(x, p: TvDenoiseParams):
    x = np.asarray(x, dtype=float)
    d1, d2 = p.shape
    if x.shape[-2:] == (d1, d2):
        return x, False
    if x.shape[-1:] == (d1 * d2,):
        return x.reshape(x.shape[:-1] + (d1, d2)), True
    raise InvalidParameterError(f"image shape {x.shape} does not match observation {p.shape}")


def forward_differences(img):
    """Circular forward differences (horizontal, vertical) of ``(..., d1, d2)`` images."""
    dh = np.roll(img, -1, axis=-1) - img
    dv = np.roll(img, -1, axis=-2) - img
    return dh, dv


def forward_differences_adjoint(sh, sv):
    return (np.roll(sh, 1, axis=-1) - sh) + (np.roll(sv, 1, axis=-2) - sv)


def tv_value(x, p: TvDenoiseParams):
    img, _ = _as_images(x, p)
    dh, dv = forward_differences(img)
    data = np.sum((img - p.observation) ** 2, axis=(-2, -1)) / (2 * p.noise_level**2)
    return data + p.reg_weight * np.sum(np.abs(dh) + np.abs(dv), axis=(-2, -1))


def tv_subgradient(x, p: TvDenoiseParams):
    """Subgradient (x - y)/sigma^2 + lambda (D_h^T sgn(D_h x) + D_v^T sgn(D_v x)).

    Differences use circular boundary handling and sgn(0) = 0.  The output has
    the same layout (flat or image) as ``x``.
    """
    img, flat = _as_images(x, p)
    g = (img - p.observation) / p.noise_level**2
    if p.reg_weight != 0:
        dh, dv = forward_differences(img)
        g = g + p.reg_weight * forward_differences_adjoint(np.sign(dh), np.sign(dv))
    if flat:
        g = g.reshape(g.shape[:-2] + (-1,))
    return g


def tv_potential(p: TvDenoiseParams) -> PotentialSpec:
    return PotentialSpec(
        dim=p.dim,
        value=lambda x: tv_value(x, p),
        gradient=lambda x: tv_subgradient(x, p),
        lipschitz=float(p.assumed_lipschitz),
        strong_convexity=1.0 / p.noise_level**2,
        name="tv_denoise",
        smooth=False,
        lipschitz_assumed=True,
        params=p,
    )


def piecewise_constant_image(d1=16, d2=16):
    """Synthetic test image: background plus a bright square and a dark bar."""
    img = np.full((d1, d2), 0.2)
    img[d1 // 4 : d1 // 4 + d1 // 2, d2 // 4 : d2 // 4 + d2 // 2] = 0.8
    img[(3 * d1) // 4 :, : d2 // 2] = 0.5
    return img


# --------------------------------------------------------------------------
# image I/O


def save_image(path, img):
    """Write ``img`` as headerless little-endian float64 plus a ``.shape`` sidecar."""
    path = Path(path)
    img = np.asarray(img, dtype="<f8")
    if img.ndim != 2:
        raise InvalidParameterError("expected a 2D image")
    path.write_bytes(img.tobytes(order="C"))
    Path(str(path) + ".shape").write_text(f"{img.shape[0]} {img.shape[1]}\n")


def load_image(path):
    path = Path(path)
    d1, d2 = (int(v) for v in Path(str(path) + ".shape").read_text().split())
    data = np.frombuffer(path.read_bytes(), dtype="<f8")
    if data.size != d1 * d2:
        raise InvalidParameterError(f"{path}: {data.size} values for shape {d1}x{d2}")
    return data.reshape(d1, d2).astype(float)


def save_image_csv(path, img):
    np.savetxt(path, np.asarray(img, dtype=float), delimiter=",", fmt="%.17g")


def load_image_csv(path):
    return np.atleast_2d(np.loadtxt(path, delimiter=","))

"""Sample-quality diagnostics: Wasserstein-2 distances, autocorrelation, potential tracking."""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.stats import norm, qmc


class MetricError(ValueError):
    pass


# --------------------------------------------------------------------------
# Gaussian summaries


@dataclass(frozen=True)
class GaussianSummary:
    """Mean and covariance; a 1-D ``covariance`` is read as a diagonal."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.asarray(self.covariance, dtype=float)
        if cov.ndim == 0:
            cov = cov.reshape(1)
        if cov.ndim == 2:
            if cov.shape != (mean.size, mean.size):
                raise MetricError(f"covariance shape {cov.shape} does not match mean {mean.shape}")
            if np.abs(cov - cov.T).max() > 1e-12 * max(1.0, np.abs(cov).max()):
                raise MetricError("covariance is not symmetric")
        elif cov.shape != mean.shape:
            raise MetricError(f"diagonal covariance shape {cov.shape} does not match mean {mean.shape}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def diagonal(self):
        return self.covariance.ndim == 1

    @property
    def dim(self):
        return self.mean.size

    def full(self):
        return np.diag(self.covariance) if self.diagonal else self.covariance

    @classmethod
    def fit(cls, samples, diagonal=False):
        """Ensemble mean and (population) covariance of an ``(N, d)`` sample matrix."""
        s = np.asarray(samples, dtype=float)
        mu = s.mean(axis=0)
        if diagonal:
            return cls(mu, s.var(axis=0))
        c = s - mu
        cov = c.T @ c / s.shape[0]
        return cls(mu, 0.5 * (cov + cov.T))


def _psd_sqrt(cov):
    w, u = np.linalg.eigh(cov)
    if w.min() < -1e-10 * max(1.0, abs(w).max()):
        raise MetricError(f"covariance not positive semidefinite (eigenvalue {w.min():.3g})")
    w = np.clip(w, 0.0, None)
    return (u * np.sqrt(w)) @ u.T, w


def frechet_w2(a: GaussianSummary, b: GaussianSummary) -> float:
    """W2 between two Gaussians."""
    if a.dim != b.dim:
        raise MetricError("dimension mismatch")
    mean_term = float(np.sum((a.mean - b.mean) ** 2))
    if a.diagonal and b.diagonal:
        if a.covariance.min() < -1e-10 or b.covariance.min() < -1e-10:
            raise MetricError("negative variance")
        sa = np.sqrt(np.clip(a.covariance, 0, None))
        sb = np.sqrt(np.clip(b.covariance, 0, None))
        return float(np.sqrt(mean_term + np.sum((sa - sb) ** 2)))
    A, B = a.full(), b.full()
    rb, _ = _psd_sqrt(B)
    _psd_sqrt(A)
    _, w = _psd_sqrt(rb @ A @ rb)
    cross = np.sum(np.sqrt(w))
    sq = mean_term + np.trace(A) + np.trace(B) - 2 * cross
    return float(np.sqrt(max(sq, 0.0)))


# --------------------------------------------------------------------------
# empirical laws


@dataclass(frozen=True)
class SampleBatch:
    samples: np.ndarray
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        if s.ndim != 2 or s.shape[0] == 0:
            raise MetricError("samples must be a nonempty (N, d) array")
        object.__setattr__(self, "samples", s)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (s.shape[0],) or w.min() < 0 or abs(w.sum() - 1) > 1e-12:
                raise MetricError("weights must be nonnegative, one per sample, summing to 1")
            object.__setattr__(self, "weights", w)

    @property
    def n(self):
        return self.samples.shape[0]

    @property
    def dim(self):
        return self.samples.shape[1]

    @property
    def probs(self):
        return np.full(self.n, 1.0 / self.n) if self.weights is None else self.weights

    def project(self, direction) -> "SampleBatch":
        return SampleBatch(self.samples @ np.asarray(direction, dtype=float), self.weights)


def _as_batch(x):
    return x if isinstance(x, SampleBatch) else SampleBatch(x)


def w2_1d(a, b) -> float:
    """Exact W2 between two 1-D empirical laws by matching quantile functions."""
    a, b = _as_batch(a), _as_batch(b)
    if a.dim != 1 or b.dim != 1:
        raise MetricError("w2_1d needs one-dimensional batches")
    xa, xb = a.samples[:, 0], b.samples[:, 0]
    if a.weights is None and b.weights is None and a.n == b.n:
        return float(np.sqrt(np.mean((np.sort(xa) - np.sort(xb)) ** 2)))
    ia, ib = np.argsort(xa, kind="stable"), np.argsort(xb, kind="stable")
    xa, xb = xa[ia], xb[ib]
    ca, cb = np.cumsum(a.probs[ia]), np.cumsum(b.probs[ib])
    ca[-1] = cb[-1] = 1.0
    # piecewise-constant quantile functions; integrate over merged breakpoints
    knots = np.union1d(ca, cb)
    lo = np.concatenate([[0.0], knots[:-1]])
    mid = 0.5 * (lo + knots)
    qa = xa[np.minimum(np.searchsorted(ca, mid), a.n - 1)]
    qb = xb[np.minimum(np.searchsorted(cb, mid), b.n - 1)]
    return float(np.sqrt(np.sum((knots - lo) * (qa - qb) ** 2)))


def random_directions(d, n, seed):
    """Unit directions from scrambled Sobol points pushed through the normal quantile.

    Low-discrepancy directions make the sliced estimate settle much faster in
    ``n`` than i.i.d. Gaussian draws.
    """
    m = max(int(np.ceil(np.log2(max(n, 1)))), 0)
    u = qmc.Sobol(d, scramble=True, seed=seed).random_base2(m)[:n]
    z = norm.ppf(np.clip(u, 1e-12, 1 - 1e-12))
    nz = np.linalg.norm(z, axis=1, keepdims=True)
    z[nz[:, 0] == 0] = 1.0
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def sliced_w2(a, b, n_proj=128, seed=0, direction=None) -> float:
    """Root mean square of 1-D W2 over random unit directions, or along one fixed ``direction``."""
    a, b = _as_batch(a), _as_batch(b)
    if a.dim != b.dim:
        raise MetricError("dimension mismatch")
    if direction is not None:
        v = np.asarray(direction, dtype=float)
        nv = np.linalg.norm(v)
        if nv == 0:
            raise MetricError("zero direction")
        return w2_1d(a.project(v / nv), b.project(v / nv))
    if n_proj < 1:
        raise MetricError("n_proj must be >= 1")
    dirs = random_directions(a.dim, n_proj, seed)
    sq = [w2_1d(a.project(v), b.project(v)) ** 2 for v in dirs]
    return float(np.sqrt(np.mean(sq)))


def top_direction(reference_samples):
    """Unit eigenvector of the largest eigenvalue of the sample covariance."""
    s = np.asarray(reference_samples, dtype=float)
    c = np.cov(s, rowvar=False)
    _, u = np.linalg.eigh(np.atleast_2d(c))
    return u[:, -1]


def principal_sliced_w2(a, b, reference_samples=None) -> float:
    """1-D W2 along the leading principal direction of the reference (default ``b``)."""
    b = _as_batch(b)
    ref = b.samples if reference_samples is None else reference_samples
    return sliced_w2(a, b, direction=top_direction(ref))


# --------------------------------------------------------------------------
# exact optimal transport on small supports


MAX_ATOMS = 4096


def _ot():
    for backend in ("TENSORFLOW", "PYTORCH", "JAX", "CUPY"):
        os.environ.setdefault(f"POT_BACKEND_DISABLE_{backend}", "1")
    import ot

    return ot


def discrete_w2(xa, pa, xb, pb) -> float:
    """Exact W2 between weighted point sets via network simplex."""
    xa, xb = np.atleast_2d(xa), np.atleast_2d(xb)
    if xa.shape[0] > MAX_ATOMS or xb.shape[0] > MAX_ATOMS:
        raise MetricError(f"support larger than {MAX_ATOMS} atoms; downsample or coarsen the histogram")
    pa = np.asarray(pa, dtype=float)
    pb = np.asarray(pb, dtype=float)
    pa, pb = pa / pa.sum(), pb / pb.sum()
    cost = ((xa[:, None, :] - xb[None, :, :]) ** 2).sum(-1)
    val = _ot().emd2(pa, pb, cost, numItermax=10_000_000)
    return float(np.sqrt(max(val, 0.0)))


@dataclass(frozen=True)
class Histogram2D:
    edges_x: np.ndarray
    edges_y: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=float)
        if c.shape != (len(self.edges_x) - 1, len(self.edges_y) - 1):
            raise MetricError("counts shape does not match the edges")
        if c.min() < 0 or abs(c.sum() - 1) > 1e-9:
            raise MetricError("histogram must be nonnegative with unit mass")
        object.__setattr__(self, "counts", c)

    @classmethod
    def from_samples(cls, samples, bins=64, extent=((-5, 5), (-5, 5)), clip=True):
        """Normalised histogram; with ``clip`` points outside ``extent`` land in edge bins."""
        s = np.asarray(samples, dtype=float)
        ex = np.linspace(*extent[0], bins + 1)
        ey = np.linspace(*extent[1], bins + 1)
        if clip:
            eps = 1e-12
            s = np.column_stack(
                [np.clip(s[:, 0], ex[0], ex[-1] - eps), np.clip(s[:, 1], ey[0], ey[-1] - eps)]
            )
        counts, _, _ = np.histogram2d(s[:, 0], s[:, 1], bins=[ex, ey])
        total = counts.sum()
        if total == 0:
            raise MetricError("no samples inside the histogram extent")
        return cls(ex, ey, counts / total)

    def atoms(self):
        cx = 0.5 * (self.edges_x[1:] + self.edges_x[:-1])
        cy = 0.5 * (self.edges_y[1:] + self.edges_y[:-1])
        gx, gy = np.meshgrid(cx, cy, indexing="ij")
        mask = self.counts > 0
        return np.column_stack([gx[mask], gy[mask]]), self.counts[mask]


def emd_w2(a: Histogram2D, b: Histogram2D) -> float:
    """Exact W2 between two histograms on the same grid, atoms at bin centres."""
    if not (np.array_equal(a.edges_x, b.edges_x) and np.array_equal(a.edges_y, b.edges_y)):
        raise MetricError("histograms must share their bin grid")
    xa, pa = a.atoms()
    xb, pb = b.atoms()
    return discrete_w2(xa, pa, xb, pb)


def point_cloud_w2(a, b, max_points=2048, seed=0) -> float:
    """Exact W2 between two uniform point clouds, each subsampled to ``max_points``."""
    rng = np.random.default_rng(seed)
    xa = np.asarray(a, dtype=float)
    xb = np.asarray(b, dtype=float)
    if xa.shape[0] > max_points:
        xa = xa[rng.choice(xa.shape[0], max_points, replace=False)]
    if xb.shape[0] > max_points:
        xb = xb[rng.choice(xb.shape[0], max_points, replace=False)]
    return discrete_w2(xa, np.full(len(xa), 1 / len(xa)), xb, np.full(len(xb), 1 / len(xb)))


# --------------------------------------------------------------------------
# autocorrelation


def autocorrelation(series, max_lag):
    """Sample autocorrelations rho_0..rho_max_lag (biased normalisation, via FFT)."""
    x = np.asarray(series, dtype=float)
    n = x.shape[-1]
    if n < 10:
        raise MetricError("series needs at least 10 points")
    x = x - x.mean(axis=-1, keepdims=True)
    var = np.mean(x * x, axis=-1)
    if np.any(var == 0):
        raise MetricError("constant series: variance undefined")
    size = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(x, size, axis=-1)
    acov = np.fft.irfft(f * np.conj(f), size, axis=-1)[..., : max_lag + 1] / n
    return acov / var[..., None]


def ess_from_acf(acf, n):
    """n / (1 + 2 sum rho_l), summing lags >= 1 up to the first nonpositive value."""
    acf = np.asarray(acf, dtype=float)
    nonpos = np.flatnonzero(acf[1:] <= 0)
    stop = nonpos[0] + 1 if nonpos.size else acf.size
    tau = 1 + 2 * acf[1:stop].sum()
    return float(min(n / tau, n))


def acf_ess(series, max_lag=None):
    """Autocorrelations of a scalar series and its effective sample size.

    For the ESS the autocorrelations are computed up to ``len(series) - 1``
    so the truncation rule is not cut short by ``max_lag``.
    """
    x = np.asarray(series, dtype=float)
    n = x.size
    max_lag = n - 1 if max_lag is None else max_lag
    full = autocorrelation(x, n - 1)
    return full[: max_lag + 1], ess_from_acf(full, n)


def ensemble_acf_ess(traces, max_lag):
    """Chain-averaged ACF and ESS for a ``(chains, steps)`` array of scalar traces."""
    traces = np.asarray(traces, dtype=float)
    n = traces.shape[1]
    full = autocorrelation(traces, n - 1)
    ess = np.array([ess_from_acf(r, n) for r in full])
    return full[:, : max_lag + 1].mean(axis=0), float(ess.mean())


# --------------------------------------------------------------------------
# potential tracking


def expected_potential(batch, potential):
    """Mean and standard deviation of U over a batch."""
    b = _as_batch(batch)
    u = np.asarray(potential.value(b.samples), dtype=float)
    p = b.probs
    mean = float(np.sum(p * u))
    return mean, float(np.sqrt(max(np.sum(p * (u - mean) ** 2), 0.0)))

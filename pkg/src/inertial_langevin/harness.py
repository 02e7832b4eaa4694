"""Ensemble runner, preset experiments and CSV export.

Iteration ``k`` in every output refers to the positions X^k after ``k``
transitions; iteration 0 is the initial draw.  For ILA the stored velocity at
iteration ``k`` is the one that produced X^k, i.e. X^k = X^{k-1} + dt V^k.
"""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import potentials as pots
from .metrics import (
    GaussianSummary,
    Histogram2D,
    SampleBatch,
    emd_w2,
    ensemble_acf_ess,
    expected_potential,
    frechet_w2,
    point_cloud_w2,
)
from .rng import STREAM_AUX, STREAM_INIT_POSITION, STREAM_INIT_VELOCITY, NoiseStream, normals
from .samplers import SCHEMES, ChainState, SamplerConfig, get_scheme, recommended_config, validate_scheme

CSV_HEADER = ("iteration", "scheme", "metric", "value")
ALL_SCHEMES = ("ila", "ula", "em", "oba", "baoab", "ses")


class ConfigError(ValueError):
    pass


MetricFn = Callable[[np.ndarray], dict]


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one ensemble run.

    ``init_std`` of zero gives a point-mass initialisation.  ``metrics`` maps a
    name to a function of the ``(N, d)`` position matrix returning a dict of
    metric values; it is evaluated every ``metric_stride`` iterations and at
    the last one.
    """

    name: str
    potential: pots.PotentialSpec
    schemes: tuple
    samplers: dict
    n_chains: int
    n_steps: int
    init_mean: np.ndarray
    init_std: float = 0.0
    velocity_init: str = "zero"
    metric_stride: int = 100
    seed: int = 0
    out: Optional[str] = None
    metrics: dict = field(default_factory=dict)
    force: bool = False
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_chains < 1 or self.n_steps < 1 or self.metric_stride < 1:
            raise ConfigError("chains, steps and metric stride must all be >= 1")
        self.schemes = tuple(self.schemes)
        for s in self.schemes:
            get_scheme(s)
            if s not in self.samplers:
                raise ConfigError(f"no sampler settings for scheme {s!r}")
        self.init_mean = np.broadcast_to(
            np.asarray(self.init_mean, dtype=float), (self.potential.dim,)
        ).copy()
        if self.velocity_init not in ("zero", "gaussian"):
            raise ConfigError("velocity_init must be 'zero' or 'gaussian'")


@dataclass
class RunRecord:
    rows: list = field(default_factory=list)
    final: dict = field(default_factory=dict)
    wall_clock: dict = field(default_factory=dict)

    def add(self, iteration, scheme, metric, value):
        self.rows.append((int(iteration), str(scheme), str(metric), float(value)))

    def sort(self):
        self.rows.sort(key=lambda r: (r[1], r[0], r[2]))
        return self

    def series(self, scheme, metric):
        pts = sorted((r[0], r[3]) for r in self.rows if r[1] == scheme and r[2] == metric)
        if not pts:
            return np.empty(0, dtype=int), np.empty(0)
        it, val = zip(*pts)
        return np.array(it), np.array(val)

    def value(self, scheme, metric, iteration=None):
        it, val = self.series(scheme, metric)
        if it.size == 0:
            raise KeyError((scheme, metric))
        if iteration is None:
            return float(val[-1])
        return float(val[np.flatnonzero(it == iteration)[0]])


# --------------------------------------------------------------------------
# running


def initial_state(cfg: ExperimentConfig, chain_ids=None) -> ChainState:
    """Initial draws; identical for every scheme and independent of sharding."""
    ids = np.arange(cfg.n_chains) if chain_ids is None else chain_ids
    d = cfg.potential.dim
    x = cfg.init_mean + cfg.init_std * normals(cfg.seed, ids, 0, d, STREAM_INIT_POSITION)
    if cfg.velocity_init == "gaussian":
        # kinetic schemes share theta; take it from the first kinetic config
        theta = next(
            (c.inv_mass for s, c in cfg.samplers.items() if SCHEMES[s].kinetic), 1.0
        )
        v = math.sqrt(theta) * normals(cfg.seed, ids, 0, d, STREAM_INIT_VELOCITY)
    else:
        v = np.zeros_like(x)
    return ChainState(x, v, x.copy(), aux=x.copy())


def check_validity(cfg: ExperimentConfig):
    kappa = cfg.potential.kappa
    kappa = 1.0 if not math.isfinite(kappa) else kappa
    bad = []
    for s in cfg.schemes:
        rep = validate_scheme(s, cfg.samplers[s], kappa, cfg.potential.lipschitz)
        if not rep.passed:
            bad.append(f"{s}: " + "; ".join(rep.messages))
    return bad


def _concat(states):
    if len(states) == 1:
        return states[0].position
    return np.concatenate([s.position for s in states])


def run_ensemble(cfg: ExperimentConfig, workers=1, progress=None) -> RunRecord:
    """Run every scheme of ``cfg`` from the same initial draws and collect metrics.

    Chains are split into ``workers`` shards stepped in a thread pool; the
    noise of each chain depends only on (seed, chain, step), so the output does
    not depend on ``workers``.
    """
    if not cfg.force:
        bad = check_validity(cfg)
        if bad:
            raise ConfigError("invalid sampler settings (use force to override):\n" + "\n".join(bad))
    workers = max(1, min(int(workers), cfg.n_chains))
    shards = np.array_split(np.arange(cfg.n_chains), workers)
    streams = [NoiseStream(cfg.seed, chain_ids=ids) for ids in shards]
    record = RunRecord()
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    d = cfg.potential.dim
    try:
        for name in cfg.schemes:
            t0 = time.perf_counter()
            scheme = get_scheme(name)
            sc = cfg.samplers[name]
            states = [initial_state(cfg, ids) for ids in shards]
            width = scheme.noise_width * d

            def advance(i, k):
                return scheme.step(states[i], sc, cfg.potential, streams[i](k - 1, width))

            _record_metrics(record, cfg, name, 0, _concat(states))
            for k in range(1, cfg.n_steps + 1):
                if pool is None:
                    states = [advance(0, k)]
                else:
                    states = list(pool.map(lambda i: advance(i, k), range(workers)))
                x = _concat(states)
                bad = ~np.all(np.isfinite(x), axis=1)
                if bad.any():
                    record.add(k, name, "nonfinite_chains", int(bad.sum()))
                    break
                if k % cfg.metric_stride == 0 or k == cfg.n_steps:
                    _record_metrics(record, cfg, name, k, x)
                if progress is not None:
                    progress(name, k)
            record.final[name] = SampleBatch(_concat(states))
            record.wall_clock[name] = time.perf_counter() - t0
    finally:
        if pool is not None:
            pool.shutdown()
    return record.sort()


def _record_metrics(record, cfg, scheme, k, x):
    for fn in cfg.metrics.values():
        for key, val in fn(x).items():
            record.add(k, scheme, key, val)


# --------------------------------------------------------------------------
# metric factories


def potential_metric(potential) -> MetricFn:
    def fn(x):
        mean, std = expected_potential(SampleBatch(x), potential)
        return {"expected_potential": mean, "potential_std": std}

    return fn


def frechet_metric(target: GaussianSummary, diagonal=True) -> MetricFn:
    def fn(x):
        return {"frechet_w2": frechet_w2(GaussianSummary.fit(x, diagonal=diagonal), target)}

    return fn


def histogram_metric(reference: Histogram2D) -> MetricFn:
    extent = ((reference.edges_x[0], reference.edges_x[-1]), (reference.edges_y[0], reference.edges_y[-1]))
    bins = len(reference.edges_x) - 1

    def fn(x):
        h = Histogram2D.from_samples(x, bins=bins, extent=extent)
        return {"emd_w2": emd_w2(h, reference)}

    return fn


def cloud_metric(reference_samples, max_points=2048, seed=0) -> MetricFn:
    def fn(x):
        return {"w2_subsampled": point_cloud_w2(x, reference_samples, max_points, seed)}

    return fn


def mse_metric(reference_mean, name="posterior_mean_mse") -> MetricFn:
    ref = np.asarray(reference_mean, dtype=float).reshape(-1)

    def fn(x):
        return {name: float(np.mean((x.mean(axis=0) - ref) ** 2))}

    return fn


# --------------------------------------------------------------------------
# presets


PRESETS = ("laplace2d", "gmm2d", "gauss100", "tv_denoise")

LAPLACE_ATOMS = (math.sqrt(2) / 2) * np.array([[3.0, -3.0], [7.0, 7.0]])
LAPLACE_ASSUMED_L = 200.0
LAPLACE_EXTENT = ((-2.0, 2.0), (-2.0, 2.0))
TV_REG_WEIGHT = 12.58714


def recommended_samplers(schemes, lipschitz, dt=0.05):
    return {s: recommended_config(s, lipschitz, dt) for s in schemes}


def laplace_potential(lipschitz=LAPLACE_ASSUMED_L):
    p = pots.SmoothLaplaceParams(LAPLACE_ATOMS, np.zeros(2), 0.05)
    return pots.smooth_laplace_potential(p, lipschitz=lipschitz)


def tv_params(size=16, noise_level=0.1, reg_weight=TV_REG_WEIGHT, seed=0):
    clean = pots.piecewise_constant_image(size, size)
    noise = normals(seed, np.arange(size), 0, size, STREAM_AUX)
    return pots.TvDenoiseParams(clean + noise_level * noise, noise_level, reg_weight), clean


def preset(name, schemes=ALL_SCHEMES, **overrides) -> ExperimentConfig:
    """Desk-scale experiment settings.

    Metrics needing an expensive reference (laplace2d histogram, tv_denoise
    posterior mean) are added by :func:`attach_reference`.
    """
    if name == "laplace2d":
        pot = laplace_potential()
        cfg = dict(n_chains=10_000, n_steps=5000, init_mean=[3.0, 1.0], init_std=0.1, metric_stride=500)
    elif name == "gmm2d":
        gp = pots.grid_gmm_params(3.0, 0.5)
        pot = pots.gmm_potential(gp, lipschitz=32.0)
        exact = pots.sample_gmm(gp, 20_000, np.random.default_rng(12345))
        cfg = dict(
            n_chains=10_000,
            n_steps=20_000,
            init_mean=[1.5, 1.5],
            init_std=0.1,
            metric_stride=2000,
            metrics={"cloud": cloud_metric(exact)},
            extras={"exact_samples": exact},
        )
    elif name == "gauss100":
        mean = np.full(100, 5.0)
        var = np.linspace(5e-3, 1.0, 100)
        pot = pots.gaussian_potential(mean, var)
        cfg = dict(
            n_chains=10_000,
            n_steps=5000,
            init_mean=0.0,
            init_std=0.1,
            metric_stride=100,
            metrics={"frechet": frechet_metric(GaussianSummary(mean, var))},
        )
    elif name == "tv_denoise":
        p, clean = tv_params()
        pot = pots.tv_potential(p)
        cfg = dict(
            n_chains=200,
            n_steps=500,
            init_mean=p.observation.reshape(-1),
            init_std=0.0,
            metric_stride=10,
            extras={"clean": clean, "reference_factor": 50},
        )
    else:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    metrics = {"potential": potential_metric(pot)}
    metrics.update(cfg.pop("metrics", {}))
    cfg.setdefault("extras", {})
    cfg.update(overrides)
    samplers = cfg.pop("samplers", None) or recommended_samplers(schemes, pot.lipschitz)
    return ExperimentConfig(
        name=name, potential=pot, schemes=tuple(schemes), samplers=samplers, metrics=metrics, **cfg
    )


def reference_run(cfg: ExperimentConfig, scheme, factor, keep_from=0.5, thin=100):
    """Run ``scheme`` for ``factor * n_steps`` iterations, pooling thinned positions.

    Positions from the last ``1 - keep_from`` fraction of the run are pooled
    every ``thin`` iterations.  The run uses its own seed offset so the
    reference noise is independent of the compared runs.
    """
    n_steps = factor * cfg.n_steps
    ref_cfg = replace(
        cfg,
        schemes=(scheme,),
        n_steps=n_steps,
        metrics={},
        seed=cfg.seed + 1_000_003,
        samplers={scheme: cfg.samplers[scheme]},
    )
    sch = get_scheme(scheme)
    sc = ref_cfg.samplers[scheme]
    state = initial_state(ref_cfg)
    stream = NoiseStream(ref_cfg.seed, ref_cfg.n_chains)
    width = sch.noise_width * cfg.potential.dim
    start = int(keep_from * n_steps)
    pooled = []
    for k in range(1, n_steps + 1):
        state = sch.step(state, sc, cfg.potential, stream(k - 1, width))
        if k > start and (n_steps - k) % thin == 0:
            pooled.append(state.position.copy())
    return np.concatenate(pooled)


def attach_reference(cfg: ExperimentConfig, **kwargs) -> ExperimentConfig:
    """Add reference-based metrics to a preset (no-op for presets without one)."""
    if cfg.name == "laplace2d":
        pooled = reference_run(cfg, "ila", kwargs.get("factor", 20), thin=kwargs.get("thin", 100))
        ref = Histogram2D.from_samples(pooled, bins=64, extent=LAPLACE_EXTENT)
        cfg.metrics["emd"] = histogram_metric(ref)
        cfg.extras["reference_histogram"] = ref
    elif cfg.name == "tv_denoise":
        ula = recommended_config("ula", cfg.potential.lipschitz)
        base = replace(cfg, samplers={**cfg.samplers, "ula": ula})
        factor = kwargs.get("factor", cfg.extras.get("reference_factor", 50))
        pooled = reference_run(base, "ula", factor, thin=kwargs.get("thin", 50))
        ref_mean = pooled.mean(axis=0)
        cfg.metrics["reference"] = mse_metric(ref_mean)
        cfg.extras["reference_mean"] = ref_mean
    return cfg


# --------------------------------------------------------------------------
# CSV export


def _fmt(v):
    return format(v, ".17g")


def export_csv(record: RunRecord, path, write_batches=True):
    """Write metric rows; final batches go to ``<path>.<scheme>.bin`` plus ``.shape``."""
    path = Path(path)
    rows = sorted(record.rows, key=lambda r: (r[1], r[0], r[2]))
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for it, scheme, metric, value in rows:
                w.writerow((it, scheme, metric, _fmt(value)))
        if write_batches:
            for scheme, batch in record.final.items():
                stem = f"{path}.{scheme}"
                Path(stem + ".bin").write_bytes(np.asarray(batch.samples, dtype="<f8").tobytes(order="C"))
                Path(stem + ".shape").write_text(f"{batch.n} {batch.dim}\n")
    except OSError as exc:
        raise OSError(f"writing {path}: {exc}") from exc


def parse_csv(path):
    with Path(path).open(newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if tuple(header) != CSV_HEADER:
            raise ConfigError(f"{path}: unexpected header {header}")
        return [(int(r[0]), r[1], r[2], float(r[3])) for r in rd]


def load_batch(stem):
    n, d = (int(v) for v in Path(f"{stem}.shape").read_text().split())
    return np.frombuffer(Path(f"{stem}.bin").read_bytes(), dtype="<f8").reshape(n, d).copy()


# --------------------------------------------------------------------------
# config files


def parse_config_text(text):
    """``key = value`` lines; ``#`` starts a comment; commas make lists."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        items = [_scalar(v.strip()) for v in val.split(",")] if "," in val else _scalar(val)
        out[key] = items
    return out


def _scalar(s):
    for cast in (int, float):
        try:
            return cast(s)
        except ValueError:
            pass
    low = s.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    return s


def _as_list(v):
    return list(v) if isinstance(v, list) else [v]


def _potential_from_config(c, base_dir):
    kind = c.get("potential")
    if kind == "gaussian":
        mean = np.asarray(_as_list(c["mean"]), dtype=float)
        var = np.asarray(_as_list(c["variances"]), dtype=float)
        d = int(c.get("dim", max(mean.size, var.size)))
        return pots.gaussian_potential(np.broadcast_to(mean, d), np.broadcast_to(var, d))
    if kind == "laplace":
        atoms = np.asarray(_as_list(c["atoms"]), dtype=float).reshape(-1, int(c.get("dim", 2)))
        offsets = np.asarray(_as_list(c.get("offsets", [0.0] * atoms.shape[0])), dtype=float)
        p = pots.SmoothLaplaceParams(atoms, offsets, float(c.get("delta", 0.05)))
        return pots.smooth_laplace_potential(p, lipschitz=c.get("lipschitz"))
    if kind == "gmm":
        gp = pots.grid_gmm_params(float(c.get("spacing", 3.0)), float(c.get("std", 0.5)))
        return pots.gmm_potential(gp, lipschitz=float(c.get("lipschitz", 32.0)))
    if kind == "tv":
        if "image" in c:
            img_path = Path(base_dir) / str(c["image"])
            y = pots.load_image_csv(img_path) if img_path.suffix == ".csv" else pots.load_image(img_path)
            p = pots.TvDenoiseParams(
                y, float(c.get("noise_level", 0.1)), float(c.get("reg_weight", TV_REG_WEIGHT)),
                float(c.get("lipschitz", 400.0)),
            )
        else:
            p, _ = tv_params(int(c.get("size", 16)), float(c.get("noise_level", 0.1)),
                             float(c.get("reg_weight", TV_REG_WEIGHT)))
        return pots.tv_potential(p)
    raise ConfigError(f"unknown potential {kind!r} (gaussian, laplace, gmm, tv)")


def config_from_mapping(c, base_dir=".") -> ExperimentConfig:
    """Build an experiment from parsed config keys.

    Either ``preset = <name>`` (other keys override it) or ``potential = ...``
    with its parameters.  Per-scheme friction overrides use ``friction_<scheme>``.
    """
    schemes = tuple(_as_list(c.get("sampler", c.get("schemes", list(ALL_SCHEMES)))))
    common = {}
    for key, attr in (("chains", "n_chains"), ("steps", "n_steps"), ("seed", "seed"),
                      ("metric_stride", "metric_stride"), ("out", "out"), ("force", "force"),
                      ("velocity_init", "velocity_init")):
        if key in c:
            common[attr] = c[key]
    if "preset" in c:
        cfg = preset(str(c["preset"]), schemes=schemes, **common)
    else:
        pot = _potential_from_config(c, base_dir)
        metrics = {"potential": potential_metric(pot)}
        if c.get("potential") == "gaussian":
            metrics["frechet"] = frechet_metric(GaussianSummary(pot.params["mean"], pot.params["variances"]))
        init = _as_list(c.get("init_mean", 0.0))
        cfg = ExperimentConfig(
            name=str(c.get("name", c["potential"])),
            potential=pot,
            schemes=schemes,
            samplers=recommended_samplers(schemes, pot.lipschitz, float(c.get("dt", 0.05))),
            init_mean=np.asarray(init if len(init) > 1 else init[0], dtype=float),
            init_std=float(c.get("init_std", 0.0)),
            metrics=metrics,
            **{"n_chains": 1000, "n_steps": 1000, **common},
        )
    dt = float(c.get("dt", 0.05))
    if "dt" in c or "lipschitz" in c:
        cfg.samplers = recommended_samplers(schemes, cfg.potential.lipschitz, dt)
    for s in schemes:
        key = f"friction_{s.replace('-', '_')}"
        if key in c:
            old = cfg.samplers[s]
            cfg.samplers[s] = SamplerConfig(old.dt, float(c[key]), old.inv_mass, old.omega)
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    return config_from_mapping(parse_config_text(path.read_text()), path.parent)


# --------------------------------------------------------------------------
# momentum sweep and moment tracking


def gaussian_trace_run(variances, cfg: SamplerConfig, chains, steps, seed=0, coord=0):
    """ILA on N(0, diag(variances)) from the origin; returns the ``(chains, steps)`` trace of one coordinate."""
    var = np.asarray(variances, dtype=float)
    pot = pots.gaussian_potential(np.zeros(var.size), var)
    stream = NoiseStream(seed, chains)
    state = ChainState.at_rest(np.zeros((chains, var.size)))
    step = get_scheme("ila").step
    trace = np.empty((chains, steps))
    for k in range(steps):
        state = step(state, cfg, pot, stream(k, var.size))
        trace[:, k] = state.position[:, coord]
    return trace


@dataclass(frozen=True)
class SweepPoint:
    beta: float
    friction: float
    acf: np.ndarray
    ess: float

    @property
    def acf_lag10(self):
        return float(self.acf[10])


def sweep_beta(betas=(0.0, 0.5, 0.9), dt=0.1, inv_mass=1.0, variances=(1.0, 0.25),
               chains=100, steps=20_000, seed=0, max_lag=50, burn_in=1000):
    """Autocorrelation and ESS of ILA's first coordinate across momentum values.

    Momentum beta maps to friction (1 - beta)/dt at fixed dt.  Chains start at
    the mode and the first ``burn_in`` iterations are discarded.
    """
    out = []
    for beta in betas:
        cfg = SamplerConfig(dt, (1 - beta) / dt, inv_mass)
        trace = gaussian_trace_run(variances, cfg, chains, steps + burn_in, seed)[:, burn_in:]
        acf, ess = ensemble_acf_ess(trace, max_lag)
        out.append(SweepPoint(float(beta), cfg.friction, acf, ess))
    return out


def second_moment_trace(potential, cfg: SamplerConfig, chains, steps, init, seed=0):
    """Running E|X - x*|^2 + E|V|^2 of ILA over ``steps`` iterations."""
    xs = np.zeros(potential.dim) if potential.minimizer is None else potential.minimizer
    state = ChainState.at_rest(np.broadcast_to(np.asarray(init, dtype=float), (chains, potential.dim)))
    stream = NoiseStream(seed, chains)
    out = np.empty(steps)
    for k in range(steps):
        state = SCHEMES["ila"].step(state, cfg, potential, stream(k, potential.dim))
        out[k] = np.mean(np.sum((state.position - xs) ** 2 + state.velocity**2, axis=1))
    return out

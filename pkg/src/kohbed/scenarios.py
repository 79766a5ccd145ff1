"""Benchmark scenarios: data generators, design grids, and responders.

Two built-in problems are provided: a one-dimensional synthetic response
with a Gamma-density backbone and two calibration parameters, and a
four-state signaling-pathway ODE with six calibration parameters and two
observed outputs.  Scenario definitions can also be loaded from JSON/TOML
files that name a base scenario and override its fields.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.special import gammaln

from .errors import DimensionMismatch, IntegrationBlowup
from .linalg import (KRONECKER, PRODUCT_RBF_PERIODIC, RBF, KernelSpec)
from .model import KohData, ModelDefinition, ParamSpec


# ---------------------------------------------------------------------------
# small numeric helpers
# ---------------------------------------------------------------------------

def gamma_pdf(z, shape, rate):
    """Shape-rate Gamma density: rate^a z^(a-1) exp(-rate z) / Gamma(a)."""
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0) or shape <= 0 or rate <= 0:
        raise ValueError("gamma density needs z, shape, rate > 0")
    return np.exp(shape * math.log(rate) + (shape - 1.0) * np.log(z)
                  - rate * z - gammaln(shape))


def maximin_lhd(n: int, d: int, bounds, seed: int, restarts: int = 100
                ) -> np.ndarray:
    """Latin hypercube (bin midpoints) maximizing the minimum pairwise
    distance over random restarts; deterministic under the seed."""
    bounds = np.atleast_2d(np.asarray(bounds, dtype=float))
    if bounds.shape != (d, 2):
        raise DimensionMismatch("bounds must be (d, 2)")
    rng = np.random.default_rng(seed)
    lo, hi = bounds[:, 0], bounds[:, 1]
    width = (hi - lo) / n
    best, best_score = None, -np.inf
    for _ in range(max(1, restarts)):
        pts = np.empty((n, d))
        for k in range(d):
            perm = rng.permutation(n)
            pts[:, k] = lo[k] + (perm + 0.5) * width[k]
        if n == 1:
            score = np.inf
        else:
            diff = pts[:, None, :] - pts[None, :, :]
            dist = np.sqrt(np.sum(diff * diff, axis=2))
            dist[np.diag_indices(n)] = np.inf
            score = float(dist.min())
        if score > best_score:
            best, best_score = pts, score
    return best


def ground_truth_series(times, values, query, kind: str = "linear"):
    """Interpolate sparse observations onto a dense grid, one column per
    output, clamped flat outside the observed range."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    query = np.asarray(query, dtype=float).ravel()
    if times.shape[0] < 2:
        raise DimensionMismatch("need at least two observations per output")
    order = np.argsort(times)
    times, values = times[order], values[order]
    if values.ndim == 1:
        values = values[:, None]
    out = np.empty((query.shape[0], values.shape[1]))
    if kind == "linear":
        for k in range(values.shape[1]):
            out[:, k] = np.interp(query, times, values[:, k])
    elif kind == "cubic":
        from scipy.interpolate import CubicSpline
        q = np.clip(query, times[0], times[-1])
        for k in range(values.shape[1]):
            out[:, k] = CubicSpline(times, values[:, k])(q)
    else:
        raise ValueError(f"unknown interpolation kind {kind!r}")
    return out[:, 0] if out.shape[1] == 1 else out


def rk4_integrate(rhs: Callable, v0, t_grid, d_times=None, d_values=None,
                  max_step: float = 0.05) -> np.ndarray:
    """Classical fourth-order Runge-Kutta on a fixed grid.

    Each grid interval is subdivided so the internal step never exceeds
    ``max_step``.  The forcing input is interpolated piecewise-linearly
    from (d_times, d_values); ``rhs(v, d_t)`` receives the interpolated
    value (0.0 when no forcing series is given).
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must be strictly increasing")
    v = np.asarray(v0, dtype=float).copy()
    out = np.empty((t_grid.shape[0],) + v.shape)
    out[0] = v

    if d_times is not None:
        d_times = np.asarray(d_times, dtype=float)
        d_values = np.asarray(d_values, dtype=float)

        def d_at(t):
            return float(np.interp(t, d_times, d_values))
    else:
        def d_at(t):
            return 0.0

    for i in range(t_grid.shape[0] - 1):
        t0, t1 = t_grid[i], t_grid[i + 1]
        n_sub = max(1, int(math.ceil((t1 - t0) / max_step)))
        h = (t1 - t0) / n_sub
        t = t0
        for _ in range(n_sub):
            k1 = rhs(v, d_at(t))
            k2 = rhs(v + 0.5 * h * k1, d_at(t + 0.5 * h))
            k3 = rhs(v + 0.5 * h * k2, d_at(t + 0.5 * h))
            k4 = rhs(v + h * k3, d_at(t + h))
            v = v + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            t += h
            if not np.all(np.isfinite(v)):
                raise IntegrationBlowup("state became non-finite", t=t)
        out[i + 1] = v
    return out


# ---------------------------------------------------------------------------
# toy scenario
# ---------------------------------------------------------------------------

TOY_TRUE_SHAPE = 1.8
TOY_TRUE_RATE = 2.0
TOY_SHIFT = 2.2


def toy_sim(x, t1, t2):
    """Simulator response: 10 x Gamma density at x + 2.2 with shape t1, rate t2."""
    x = np.asarray(x, dtype=float)
    return 10.0 * gamma_pdf(x + TOY_SHIFT, t1, t2)


def toy_true_noiseless(x):
    x = np.asarray(x, dtype=float)
    osc = 1.0 + np.sin(2.0 * np.pi * x / 1.5) + 0.3 * np.sin(6.0 * np.pi * x / 5.0)
    return toy_sim(x, TOY_TRUE_SHAPE, TOY_TRUE_RATE) * osc


def toy_delta(x):
    x = np.asarray(x, dtype=float)
    osc = np.sin(2.0 * np.pi * x / 1.5) + 0.3 * np.sin(6.0 * np.pi * x / 5.0)
    return toy_sim(x, TOY_TRUE_SHAPE, TOY_TRUE_RATE) * osc


def toy_true(x, rng: np.random.Generator, noise_var: float = 1e-3):
    x = np.asarray(x, dtype=float)
    return toy_true_noiseless(x) + rng.normal(0.0, math.sqrt(noise_var),
                                              size=x.shape)


@dataclass
class ToyScenario:
    """One design input on [-2, 8], two calibration parameters."""

    name: str = "toy"
    domain: Tuple[float, float] = (-2.0, 8.0)
    noise_var: float = 1e-3
    n_field: int = 5
    m_sim: int = 30
    n_candidates: int = 50
    n_pred: int = 100
    theta_box: Tuple[Tuple[float, float], ...] = ((0.8, 2.6), (1.0, 3.5))
    alpha_mix: float = 0.5
    p_out: int = 1
    d: int = 1
    h: int = 2

    def model_def(self) -> ModelDefinition:
        stage1 = tuple(
            [ParamSpec(f"ls_{n}", "log", 0.0, 1.5, init)
             for n, init in (("x", 2.0), ("t1", 0.8), ("t2", 1.0))]
            + [ParamSpec("variance", "log", 0.0, 1.5, 1.0)])

        def build1(p):
            return KernelSpec(RBF, lengthscales=p[:3], variance=float(p[3]))

        phi2 = (ParamSpec("ls_rbf", "log", 0.0, 1.5, 2.0),
                ParamSpec("ls_periodic", "log", 0.0, 1.5, 1.0),
                ParamSpec("period", "log", 0.0, 1.5, 1.5),
                ParamSpec("variance", "log", 0.0, 1.5, 0.3))

        def build2(p):
            return KernelSpec(PRODUCT_RBF_PERIODIC, lengthscales=p[:1],
                              periodic_lengthscale=float(p[1]),
                              period=float(p[2]), variance=float(p[3]))

        return ModelDefinition(
            name=self.name, d=1, h=2, p_out=1,
            theta_box=np.asarray(self.theta_box, dtype=float),
            stage1_specs=stage1, stage1_builder=build1,
            phi2_specs=phi2, stage2_builder=build2)

    def candidates(self) -> np.ndarray:
        lo, hi = self.domain
        w = (hi - lo) / self.n_candidates
        return (lo + (np.arange(self.n_candidates) + 0.5) * w)[:, None]

    def prediction_grid(self) -> np.ndarray:
        lo, hi = self.domain
        w = (hi - lo) / self.n_pred
        return (lo + (np.arange(self.n_pred) + 0.5) * w)[:, None]

    def truth_on_grid(self, seed: int = 0) -> np.ndarray:
        return toy_true_noiseless(self.prediction_grid().ravel())

    def respond(self, xi, rng: np.random.Generator):
        return float(toy_true(np.asarray(xi).ravel()[:1], rng,
                              self.noise_var)[0])

    def build_data(self, seed: int) -> KohData:
        rng = np.random.default_rng(seed)
        lo, hi = self.domain
        x_p = maximin_lhd(self.n_field, 1, [(lo, hi)], seed)
        y_p = toy_true(x_p.ravel(), rng, self.noise_var)
        box = np.vstack([[lo, hi], np.asarray(self.theta_box)])
        sim = maximin_lhd(self.m_sim, 3, box, seed + 1)
        x_c, t = sim[:, :1], sim[:, 1:]
        y_s = np.array([float(toy_sim(x_c[i, 0], t[i, 0], t[i, 1]))
                        for i in range(self.m_sim)])
        return KohData(x_p, y_p, x_c, t, y_s)


# ---------------------------------------------------------------------------
# signaling-pathway scenario
# ---------------------------------------------------------------------------

JAKSTAT_REFERENCE = {
    "v1_0": 0.996, "p1": 2.43, "p3": 0.256, "p4": 0.303,
    "p5": 1.27, "p6": 0.944,
}


def jakstat_rhs(v, d_t, p1, p3, p4):
    """Right-hand side of the four-state signaling ODE."""
    v1, v2, v3, v4 = v
    return np.array([
        -p1 * v1 * d_t + 2.0 * p4 * v4,
        p1 * v1 * d_t - v2 * v2,
        -p3 * v3 + 0.5 * v2 * v2,
        p3 * v3 - p4 * v4,
    ])


def jakstat_observe(trajectory, p5, p6):
    """Observable combinations (total, phosphorylated) per time point."""
    traj = np.atleast_2d(np.asarray(trajectory, dtype=float))
    x1 = p5 * (traj[:, 0] + traj[:, 1] + 2.0 * traj[:, 2])
    x2 = p6 * (traj[:, 1] + 2.0 * traj[:, 2])
    return x1, x2


def synthetic_cytokine_pulse(t_grid, half_life: float = 15.0):
    """Fallback forcing: unit step at t=0 decaying exponentially."""
    t_grid = np.asarray(t_grid, dtype=float)
    return np.exp(-np.log(2.0) * t_grid / half_life)


def load_cytokine_series(path: Optional[str]):
    """(times, D, x1, x2) columns from a CSV file, or None when absent."""
    if path is None:
        return None
    p = Path(path)
    if not p.exists():
        return None
    rows = []
    with p.open() as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            rows.append((float(row["time"]), float(row["D"]),
                         float(row.get("x1", "nan")),
                         float(row.get("x2", "nan"))))
    rows.sort()
    arr = np.asarray(rows, dtype=float)
    return arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3]


@dataclass
class JakStatScenario:
    """Two observed outputs of a four-state ODE over one hour."""

    name: str = "jakstat"
    time_window: Tuple[float, float] = (0.0, 60.0)
    n_field_total: int = 19
    n_field_init: int = 4
    m_sim: int = 60
    n_candidates: int = 60
    n_pred: int = 100
    noise_var: float = 1e-4
    alpha_mix: float = 0.3
    data_path: Optional[str] = None
    p_out: int = 2
    d: int = 1
    h: int = 6
    theta_box: Tuple[Tuple[float, float], ...] = (
        (2.1, 2.8),    # p1
        (0.1, 0.4),    # p3
        (0.1, 0.4),    # p4
        (1.0, 1.5),    # p5
        (0.7, 1.4),    # p6
        (0.8, 1.1),    # v1(0)
    )
    _truth_cache: Optional[dict] = field(default=None, repr=False)

    _cytokine_cache: Optional[tuple] = field(default=None, repr=False)

    def _cytokine(self):
        if self._cytokine_cache is None:
            loaded = load_cytokine_series(self.data_path)
            if loaded is not None:
                self._cytokine_cache = (loaded[0], loaded[1])
            else:
                t_fine = np.linspace(*self.time_window, 1201)
                self._cytokine_cache = (t_fine,
                                        synthetic_cytokine_pulse(t_fine))
        return self._cytokine_cache

    def simulate(self, theta, times) -> np.ndarray:
        """Run the ODE at a calibration vector; returns (len(times), 2)."""
        p1, p3, p4, p5, p6, v1_0 = theta
        d_times, d_vals = self._cytokine()
        t0 = self.time_window[0]
        times = np.asarray(times, dtype=float).ravel()
        grid = np.unique(np.concatenate([[t0], times]))
        traj = rk4_integrate(
            lambda v, d: jakstat_rhs(v, d, p1, p3, p4),
            np.array([v1_0, 0.0, 0.0, 0.0]), grid, d_times, d_vals)
        x1, x2 = jakstat_observe(traj, p5, p6)
        idx = np.searchsorted(grid, times)
        return np.column_stack([x1[idx], x2[idx]])

    def _truth(self) -> dict:
        if self._truth_cache is None:
            ref = JAKSTAT_REFERENCE
            theta = np.array([ref["p1"], ref["p3"], ref["p4"], ref["p5"],
                              ref["p6"], ref["v1_0"]])
            t_fine = np.linspace(*self.time_window, 601)
            vals = self.simulate(theta, t_fine)
            self._truth_cache = {"t": t_fine, "vals": vals}
        return self._truth_cache

    def true_observables(self, times) -> np.ndarray:
        cache = self._truth()
        times = np.asarray(times, dtype=float).ravel()
        out = np.column_stack([
            np.interp(times, cache["t"], cache["vals"][:, k])
            for k in range(2)])
        return out

    def field_times(self, seed: int) -> np.ndarray:
        lo, hi = self.time_window
        return np.sort(np.linspace(lo + 1.0, hi - 1.0, self.n_field_total))

    def field_observations(self, seed: int):
        """All held observation times with noisy responses (the pool the
        pseudo ground truth interpolates)."""
        rng = np.random.default_rng(seed)
        times = self.field_times(seed)
        vals = self.true_observables(times)
        vals = vals + rng.normal(0.0, math.sqrt(self.noise_var), vals.shape)
        return times, vals

    def candidates(self) -> np.ndarray:
        return np.linspace(1.0, self.time_window[1], self.n_candidates,
                           endpoint=False)[:, None]

    def sim_times(self) -> np.ndarray:
        return np.linspace(*self.time_window, self.m_sim)

    def prediction_grid(self) -> np.ndarray:
        return np.linspace(*self.time_window, self.n_pred)[:, None]

    def truth_on_grid(self, seed: int = 0) -> np.ndarray:
        times, vals = self.field_observations(seed)
        return ground_truth_series(times, vals,
                                   self.prediction_grid().ravel())

    def respond(self, xi, rng: np.random.Generator):
        t = float(np.asarray(xi).ravel()[0])
        val = self.true_observables([t])[0]
        return val + rng.normal(0.0, math.sqrt(self.noise_var), 2)

    def model_def(self) -> ModelDefinition:
        n_in = 1 + self.h
        ls_inits = [15.0] + [0.5 * (b[1] - b[0]) for b in self.theta_box]
        stage1 = tuple(
            [ParamSpec(f"ls_{k}", "log", 0.0, 1.5, ls_inits[k])
             for k in range(n_in)]
            + [ParamSpec("task_var_1", "log", 0.0, 1.5, 1.0),
               ParamSpec("task_var_2", "log", 0.0, 1.5, 1.0),
               ParamSpec("task_rho", "atanh", 0.0, 1.0, 0.5)])

        def task_cov(s1, s2, rho):
            c = rho * math.sqrt(s1 * s2)
            return np.array([[s1, c], [c, s2]])

        def build1(p):
            base = KernelSpec(RBF, lengthscales=p[:n_in], variance=1.0)
            return KernelSpec(KRONECKER, lengthscales=np.ones(1),
                              task_covariance=task_cov(p[n_in], p[n_in + 1],
                                                       p[n_in + 2]),
                              base=base)

        phi2 = (ParamSpec("ls_time", "log", 0.0, 1.5, 10.0),
                ParamSpec("task_var_1", "log", 0.0, 1.5, 0.1),
                ParamSpec("task_var_2", "log", 0.0, 1.5, 0.1),
                ParamSpec("task_rho", "atanh", 0.0, 1.0, 0.3))

        def build2(p):
            base = KernelSpec(RBF, lengthscales=p[:1], variance=1.0)
            return KernelSpec(KRONECKER, lengthscales=np.ones(1),
                              task_covariance=task_cov(p[1], p[2], p[3]),
                              base=base)

        return ModelDefinition(
            name=self.name, d=1, h=self.h, p_out=2,
            theta_box=np.asarray(self.theta_box, dtype=float),
            stage1_specs=stage1, stage1_builder=build1,
            phi2_specs=phi2, stage2_builder=build2)

    def build_data(self, seed: int) -> KohData:
        times, vals = self.field_observations(seed)
        # initial training subset via a 1-D space-filling pick
        targets = maximin_lhd(self.n_field_init, 1,
                              [self.time_window], seed).ravel()
        chosen = []
        for tgt in targets:
            free = [i for i in range(len(times)) if i not in chosen]
            chosen.append(min(free, key=lambda i: abs(times[i] - tgt)))
        chosen = sorted(chosen)
        x_p = times[chosen][:, None]
        y_p = vals[chosen]

        x_c = self.sim_times()[:, None]
        t = maximin_lhd(self.m_sim, self.h, self.theta_box, seed + 1)
        y_s = np.empty((self.m_sim, 2))
        for i in range(self.m_sim):
            y_s[i] = self.simulate(t[i], [x_c[i, 0]])[0]
        return KohData(x_p, y_p, x_c, t, y_s)


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------

_BUILTINS = {"toy": ToyScenario, "jakstat": JakStatScenario}


def load_scenario(name_or_path: str, **overrides):
    """Built-in scenario by name, or a JSON/TOML file naming a base
    scenario plus field overrides: ``{"name": "toy", "params": {...}}``."""
    if name_or_path in _BUILTINS:
        return _BUILTINS[name_or_path](**overrides)
    path = Path(name_or_path)
    if not path.exists():
        raise ValueError(f"unknown scenario {name_or_path!r}")
    text = path.read_text()
    if path.suffix in (".toml", ".tml"):
        try:
            import tomllib
        except ImportError:
            import tomli as tomllib
        doc = tomllib.loads(text)
    else:
        doc = json.loads(text)
    base = doc.get("name", "toy")
    if base not in _BUILTINS:
        raise ValueError(f"scenario file names unknown base {base!r}")
    params = dict(doc.get("params", {}))
    params.update(overrides)
    for key in ("theta_box", "domain", "time_window"):
        if key in params:
            params[key] = tuple(
                tuple(v) if isinstance(v, (list, tuple)) else v
                for v in params[key]) if key == "theta_box" else tuple(params[key])
    return _BUILTINS[base](**params)

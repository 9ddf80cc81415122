"""Empirical error estimation and bound-ingredient evaluation.

The coupled simulator yields, per replica, the first time each vertex's
empirical and auxiliary states disagree, plus occupancy fractions on a
time grid.  From those this module estimates per-vertex disagreement
probabilities, global density errors, and the indicator/neighborhood
gap statistics, and it evaluates the structural quantities (sqrt of the
maximum weight, normalized Frobenius norm, degree bounds) that the
theory says control them.  Scaling exponents across instance sizes are
fitted by least squares on log-log points with a bootstrap interval
over replicas.

Multiplicative constants in the theoretical bounds are existential, so
nothing here compares errors against absolute bound values; acceptance
rests on scaling rates, orderings and the explicit concentration
constant 2|S|/sqrt(K).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import FitError, InputError, ParameterError
from .hypergraph import WeightedHypergraph, neighborhood_sums, regularity_report
from .meanfield import NimfaSolution
from .models import RateModel
from .stochastic import CoupledEnsemble, CoupledRun

__all__ = [
    "ErrorReport",
    "BoundReport",
    "ScalingFit",
    "estimate_errors",
    "evaluate_bounds",
    "fit_scaling",
]


@dataclass(eq=False)
class ErrorReport:
    """Monte Carlo estimates of the coupling and density error quantities."""

    n_replicas: int
    t_grid: np.ndarray
    p_hat: np.ndarray             # (n,) P(disagreement by final grid time)
    p_stderr: np.ndarray          # (n,) binomial standard errors
    p_max: float
    p_mean: float
    density_error_xi: float       # mean over replicas of sup-grid l1 gap
    density_error_hat: float
    density_stderr_xi: float
    density_stderr_hat: float
    d0_max: float | None = None           # indicator-gap statistic
    d_orders: np.ndarray | None = None    # (max_order,) neighborhood gaps
    disagreement_matrix: np.ndarray | None = None   # (R, n) first times

    def to_dict(self) -> dict:
        out = {
            "n_replicas": self.n_replicas,
            "t_grid": self.t_grid.tolist(),
            "p_hat": self.p_hat.tolist(),
            "p_stderr": self.p_stderr.tolist(),
            "p_max": self.p_max,
            "p_mean": self.p_mean,
            "density_error_xi": self.density_error_xi,
            "density_error_hat": self.density_error_hat,
            "density_stderr_xi": self.density_stderr_xi,
            "density_stderr_hat": self.density_stderr_hat,
        }
        if self.d0_max is not None:
            out["d0_max"] = self.d0_max
        if self.d_orders is not None:
            out["d_orders"] = self.d_orders.tolist()
        return out


@dataclass(frozen=True)
class BoundReport:
    """Structural ingredients of the accuracy bounds for one network."""

    sqrt_wmax: float
    frobenius_bound: float        # sqrt((1/n) sum_ij w_ij^2)
    mu_inf: float
    mu_2: float
    concentration_bound: float    # 2 |S| / sqrt(K)
    delta_max: float
    delta_max_out: float
    sloop_ratio: float
    w_inf_norm_bound: float       # ||W||_inf <= delta_max
    w_2_norm_bound: float         # ||W||_2 <= sqrt(delta_out_max * delta_max)
    t: float
    n_states: int
    K: int

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def evaluate_bounds(
    h: WeightedHypergraph,
    t: float,
    n_states: int = 2,
    K: int | None = None,
) -> BoundReport:
    """Deterministic bound ingredients for a network at horizon t."""
    rep = regularity_report(h)
    K = h.n if K is None else int(K)
    if K <= 0:
        raise ParameterError("K must be positive")
    return BoundReport(
        sqrt_wmax=math.sqrt(rep.w_max),
        frobenius_bound=math.sqrt(rep.frobenius_sq),
        mu_inf=float(rep.mu.max(initial=0.0)),
        mu_2=float(np.linalg.norm(rep.mu)),
        concentration_bound=2.0 * n_states / math.sqrt(K),
        delta_max=rep.delta_max,
        delta_max_out=rep.delta_max_out,
        sloop_ratio=rep.sloop_ratio,
        w_inf_norm_bound=rep.delta_max,
        w_2_norm_bound=math.sqrt(rep.delta_max_out * rep.delta_max),
        t=t,
        n_states=n_states,
        K=K,
    )


def estimate_errors(
    runs: CoupledEnsemble | Sequence[CoupledRun],
    nimfa: NimfaSolution,
    t_grid=None,
    neighborhood_errors: bool = False,
) -> ErrorReport:
    """Aggregate coupled replicas into the error report.

    Accepts either a streamed :class:`CoupledEnsemble` or a list of
    individual :class:`CoupledRun` objects (which must share one
    instance).  ``neighborhood_errors`` additionally computes the
    indicator and per-order neighborhood gap statistics; it requires
    runs that kept their event logs.
    """
    if isinstance(runs, CoupledEnsemble):
        ens = runs
        grid = ens.t_grid if t_grid is None else np.asarray(t_grid, dtype=float)
        if t_grid is not None and not np.array_equal(grid, ens.t_grid):
            raise InputError("t_grid does not match the ensemble grid")
        dis = ens.disagreement_matrix
        gap_xi = ens.density_gap_xi
        gap_hat = ens.density_gap_hat
        run_list = None
    else:
        run_list = list(runs)
        if len(run_list) < 2:
            raise InputError("need at least two replicas")
        hashes = {r.instance_hash for r in run_list}
        if len(hashes) != 1:
            raise InputError("coupled runs come from different instances")
        if t_grid is None:
            grids = [r.t_grid for r in run_list if r.t_grid is not None]
            if not grids:
                raise InputError("no t_grid available; pass one explicitly")
            grid = grids[0]
        else:
            grid = np.asarray(t_grid, dtype=float)
        dis = np.array([r.disagreement for r in run_list])
        zbar = nimfa.z(grid).mean(axis=1)
        gap_xi = np.empty(len(run_list))
        gap_hat = np.empty(len(run_list))
        for k, r in enumerate(run_list):
            px, ph = _run_prevalences(r, grid)
            gap_xi[k] = np.abs(px - zbar).sum(axis=1).max()
            gap_hat[k] = np.abs(ph - zbar).sum(axis=1).max()

    R = dis.shape[0]
    t_last = float(grid[-1])
    hit = dis <= t_last
    p_hat = hit.mean(axis=0)
    p_stderr = np.sqrt(p_hat * (1.0 - p_hat) / R)
    report = ErrorReport(
        n_replicas=R,
        t_grid=np.asarray(grid, dtype=float),
        p_hat=p_hat,
        p_stderr=p_stderr,
        p_max=float(p_hat.max()),
        p_mean=float(p_hat.mean()),
        density_error_xi=float(gap_xi.mean()),
        density_error_hat=float(gap_hat.mean()),
        density_stderr_xi=float(gap_xi.std(ddof=1) / math.sqrt(R)) if R > 1 else 0.0,
        density_stderr_hat=float(gap_hat.std(ddof=1) / math.sqrt(R)) if R > 1 else 0.0,
        disagreement_matrix=dis,
    )
    if neighborhood_errors:
        if run_list is None or any(r.trajectory_xi is None for r in run_list):
            raise InputError("neighborhood errors need runs with event logs")
        _add_neighborhood_errors(report, run_list, nimfa, grid)
    return report


def _run_prevalences(run: CoupledRun, grid):
    if run.t_grid is not None and np.array_equal(run.t_grid, grid):
        return run.prevalence_xi, run.prevalence_hat
    if run.trajectory_xi is None:
        raise InputError("run carries neither matching grid summaries nor logs")
    return run.trajectory_xi.prevalence(grid), run.trajectory_xihat.prevalence(grid)


def _add_neighborhood_errors(report, run_list, nimfa: NimfaSolution, grid):
    h = nimfa.hypergraph
    model = nimfa.model
    n, S, M = h.n, model.n_states, model.max_order
    T = len(grid)
    R = len(run_list)
    # indicator gap: per grid time and vertex, fraction of replicas disagreeing
    dis_frac = np.zeros((T, n))
    # neighborhood gaps accumulated per order
    gap_sum = [np.zeros((T, n)) for _ in range(M)]
    zeta_grid = [neighborhood_sums(h, nimfa.z(float(t))) for t in grid]
    for run in run_list:
        st_xi = np.atleast_2d(run.trajectory_xi.states_at(grid))
        st_hat = np.atleast_2d(run.trajectory_xihat.states_at(grid))
        dis_frac += st_xi != st_hat
        for ti in range(T):
            Z = np.zeros((n, S))
            Z[np.arange(n), st_xi[ti]] = 1.0
            phi = neighborhood_sums(h, Z)
            for m in range(M):
                gap_sum[m][ti] += np.abs(phi[m] - zeta_grid[ti][m]).sum(axis=1)
    report.d0_max = float(2.0 * (dis_frac / R).max())
    report.d_orders = np.array([(g / R).max() for g in gap_sum])


@dataclass(frozen=True)
class ScalingFit:
    exponent: float
    ci_low: float
    ci_high: float
    n_points: int

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def fit_scaling(
    instances: Sequence[tuple[float, float]],
    replicate_matrices: Sequence[np.ndarray] | None = None,
    statistic: Callable[[np.ndarray], float] | None = None,
    n_boot: int = 1000,
    seed: int = 0,
) -> ScalingFit:
    """Least-squares slope of log(error) against log(size).

    ``replicate_matrices`` optionally supplies per-instance arrays whose
    first axis indexes replicas; bootstrap resampling of replicas then
    yields the confidence interval, with ``statistic`` mapping a
    resampled matrix to the instance's error estimate (default: max over
    vertices of the per-vertex replica means).  Without replicate data
    the interval collapses to the point estimate.
    """
    sizes = np.array([s for s, _ in instances], dtype=float)
    errors = np.array([e for _, e in instances], dtype=float)
    usable = errors > 0
    if not np.all(usable):
        warnings.warn("dropping instances with nonpositive error estimates")
    if usable.sum() < 3:
        raise FitError("need at least three instances with positive errors")
    slope = _loglog_slope(sizes[usable], errors[usable])
    if replicate_matrices is None:
        return ScalingFit(slope, slope, slope, int(usable.sum()))
    if statistic is None:
        statistic = lambda mat: float(np.atleast_2d(mat).mean(axis=0).max())
    rng = np.random.default_rng(seed)
    boots = []
    mats = [np.atleast_2d(np.asarray(m)) for m in replicate_matrices]
    for _ in range(n_boot):
        est = np.empty(len(mats))
        for k, mat in enumerate(mats):
            rows = rng.integers(0, mat.shape[0], mat.shape[0])
            est[k] = statistic(mat[rows])
        ok = est > 0
        if ok.sum() >= 3:
            boots.append(_loglog_slope(sizes[ok], est[ok]))
    if not boots:
        raise FitError("all bootstrap resamples degenerate")
    lo, hi = np.percentile(boots, [2.5, 97.5])
    return ScalingFit(slope, float(lo), float(hi), int(usable.sum()))


def _loglog_slope(sizes, errors) -> float:
    return float(np.polyfit(np.log(sizes), np.log(errors), 1)[0])

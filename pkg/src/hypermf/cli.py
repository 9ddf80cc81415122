"""Command-line experiment runner.

Subcommands operate on one declarative YAML config (see
:mod:`hypermf.config`) and write plain CSV/JSON artifacts whose first
line carries the configuration hash, so identical configs reproduce
byte-identical data files.  ``run`` executes every requested output and
writes a manifest; the narrower subcommands (``generate``, ``simulate``,
``nimfa``, ``reduce``, ``couple``, ``analyze``, ``validate``) exercise
one stage in isolation.

Exit codes: 0 success, 2 validation failure, 3 capacity guard,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .analysis import estimate_errors, evaluate_bounds, fit_scaling
from .config import ExperimentConfig, load_config
from .errors import (
    CapacityError,
    HypermfError,
    IntegrationError,
    ModelEvaluationError,
    ParameterError,
)
from .hypergraph import (
    WeightedHypergraph,
    generate,
    regularity_report,
    write_hypergraph,
)
from .meanfield import (
    PartitionSpec,
    activity_solve,
    hmfa_solve,
    imfa_solve,
    metapop_reduce,
    metapop_solve,
    nimfa_solve,
    partition_reduce,
)
from .stochastic import (
    coupled_ensemble,
    master_solve,
    simulate,
    simulate_ensemble,
)

__all__ = ["main", "run_experiment", "RunManifest"]


def _fmt(x) -> str:
    return f"{float(x):.17g}"


def _write_csv(path: Path, config_hash: str, columns, rows):
    with open(path, "w") as f:
        f.write(f"# config={config_hash}\n")
        f.write(",".join(columns) + "\n")
        for row in rows:
            f.write(
                ",".join(
                    _fmt(v) if isinstance(v, (float, np.floating)) else str(v)
                    for v in row
                )
                + "\n"
            )


def _write_json(path: Path, config_hash: str, obj: dict):
    body = {"config_hash": config_hash}
    body.update(obj)
    with open(path, "w") as f:
        json.dump(body, f, separators=(",", ":"), default=_json_default)
        f.write("\n")


def _json_default(value):
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"not JSON serializable: {type(value)}")


@dataclass(eq=False)
class RunManifest:
    """Index of one experiment run: outputs, timings, instance summary."""

    config_hash: str
    artifact_version: str
    outputs: dict
    timings: dict
    instance: dict

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "artifact_version": self.artifact_version,
            "outputs": self.outputs,
            "timings": self.timings,
            "instance": self.instance,
        }


class _Runner:
    def __init__(self, cfg: ExperimentConfig, out_dir: Path, threads: int = 1):
        self.cfg = cfg
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.threads = max(1, threads)
        self.hash = cfg.config_hash
        self.outputs: dict[str, str] = {}
        self.timings: dict[str, float] = {}
        self._network = None
        self._model = None
        self._nimfa = None

    # -- cached artifacts --------------------------------------------------

    @property
    def network(self) -> WeightedHypergraph:
        if self._network is None:
            t0 = time.perf_counter()
            self._network = self.cfg.build_network()
            self.timings["network"] = time.perf_counter() - t0
        return self._network

    @property
    def model(self):
        if self._model is None:
            self._model = self.cfg.build_model()
        return self._model

    @property
    def z0(self) -> np.ndarray:
        return self.cfg.initial_occupancies(self.network.n, self.model.n_states)

    def nimfa(self):
        if self._nimfa is None:
            t0 = time.perf_counter()
            self._nimfa = nimfa_solve(
                self.network, self.model, self.z0, self.cfg.t_end
            )
            self.timings["nimfa"] = time.perf_counter() - t0
        return self._nimfa

    def _record(self, name: str, filename: str):
        self.outputs[name] = filename

    # -- output producers ----------------------------------------------------

    def write_network(self, filename="network.hg"):
        write_hypergraph(self.network, self.out / filename, f"config={self.hash}")
        self._record("network", filename)

    def write_nimfa(self, filename="nimfa.csv"):
        sol = self.nimfa()
        grid = self.cfg.t_grid
        Z = sol.z(grid)
        rows = (
            (t, i, s, Z[ti, i, s])
            for ti, t in enumerate(grid)
            for i in range(sol.n)
            for s in range(sol.n_states)
        )
        _write_csv(self.out / filename, self.hash,
                   ("time", "vertex", "state", "probability"), rows)
        self._record("nimfa", filename)

    def write_aggregate(self, filename="aggregate.json"):
        t0 = time.perf_counter()
        ens = simulate_ensemble(
            self.network, self.model,
            self.cfg.initial_state_spec(self.network.n, self.model.n_states),
            self.cfg.t_end, self.cfg.replicas, int(self.cfg.seed),
            self.cfg.t_grid, n_jobs=self.threads,
        )
        self.timings["simulate"] = time.perf_counter() - t0
        _write_json(self.out / filename, self.hash, {
            "n_replicas": ens.n_replicas,
            "t_grid": ens.t_grid,
            "prevalence_mean": ens.prevalence_mean,
            "prevalence_stderr": ens.prevalence_stderr,
        })
        self._record("aggregate", filename)

    def write_events(self, filename="events.csv", prevalence_file="prevalence.csv"):
        init = self.cfg.initial_state_spec(self.network.n, self.model.n_states)
        if isinstance(init, tuple):
            from .stochastic import _init_states, replica_rng

            init = _init_states(
                init, self.network.n, self.model.n_states,
                replica_rng(int(self.cfg.seed), 0),
            )
        traj = simulate(
            self.network, self.model, init, self.cfg.t_end, int(self.cfg.seed)
        )
        rows = zip(traj.times, traj.vertices, traj.from_states, traj.to_states)
        _write_csv(self.out / filename, self.hash,
                   ("time", "vertex", "from", "to"), rows)
        self._record("events", filename)
        if self.cfg.wants("prevalence"):
            grid = self.cfg.t_grid
            prev = traj.prevalence(grid)
            cols = ["time"] + [
                f"state_{s}_fraction" for s in range(self.model.n_states)
            ]
            rows = ((t, *prev[ti]) for ti, t in enumerate(grid))
            _write_csv(self.out / prevalence_file, self.hash, cols, rows)
            self._record("prevalence", prevalence_file)

    def write_bounds(self, filename="bound_report.json"):
        rep = evaluate_bounds(
            self.network, self.cfg.t_end, n_states=self.model.n_states
        )
        _write_json(self.out / filename, self.hash, rep.to_dict())
        self._record("bound_report", filename)

    def write_error_report(self, filename="error_report.json"):
        t0 = time.perf_counter()
        ens = coupled_ensemble(
            self.network, self.model,
            self.cfg.initial_state_spec(self.network.n, self.model.n_states),
            self.nimfa(), self.cfg.t_end, self.cfg.replicas,
            int(self.cfg.seed), self.cfg.t_grid, n_jobs=self.threads,
        )
        report = estimate_errors(ens, self.nimfa())
        self.timings["couple"] = time.perf_counter() - t0
        _write_json(self.out / filename, self.hash, report.to_dict())
        self._record("error_report", filename)

    def write_master(self, filename="master.csv"):
        grid = self.cfg.t_grid[1:]     # forward equations start at t=0
        sol = master_solve(
            self.network, self.model,
            self.z0, grid,
        )
        rows = (
            (t, i, s, sol.marginals[ti, i, s])
            for ti, t in enumerate(grid)
            for i in range(self.network.n)
            for s in range(self.model.n_states)
        )
        _write_csv(self.out / filename, self.hash,
                   ("time", "vertex", "state", "probability"), rows)
        self._record("master", filename)

    def write_reduction(self, spec: dict, filename="reduced.csv",
                        weights_file="reduced_weights.hg"):
        kind = spec["kind"]
        t0 = time.perf_counter()
        sol, reduced_h = self._solve_reduction(spec)
        self.timings["reduce"] = time.perf_counter() - t0
        grid = self.cfg.t_grid
        Z = sol.z(grid)
        rows = (
            (t, k, s, Z[ti, k, s])
            for ti, t in enumerate(grid)
            for k in range(sol.n_groups)
            for s in range(sol.model.n_states)
        )
        _write_csv(self.out / filename, self.hash,
                   ("time", "group", "state", "probability"), rows)
        self._record("reduction", filename)
        if reduced_h is not None:
            write_hypergraph(reduced_h, self.out / weights_file,
                             f"config={self.hash} reduction={kind}")
            self._record("reduction_weights", weights_file)

    def _assignment(self, spec: dict, n: int, with_exceptional: bool):
        if "assignment_file" in spec:
            path = self.cfg.base_dir / spec["assignment_file"]
            return np.loadtxt(path, dtype=np.int64, ndmin=1)
        K = int(spec["blocks"])
        size = n // K
        if with_exceptional:
            # remainder vertices land in the exceptional block 0
            a = np.zeros(n, dtype=np.int64)
            a[: size * K] = 1 + np.repeat(np.arange(K), size)
            return a
        sizes = np.full(K, size)
        sizes[: n - size * K] += 1
        return np.repeat(np.arange(K), sizes)

    def _solve_reduction(self, spec: dict):
        kind = spec["kind"]
        h, model, z0 = self.network, self.model, self.z0
        t_end = self.cfg.t_end
        if kind == "hmfa":
            sol = hmfa_solve(model, z0.mean(axis=0), t_end)
            reduced, _, _ = metapop_reduce(h, np.zeros(h.n, dtype=np.int64), z0)
            return sol, reduced
        if kind == "metapop":
            assignment = self._assignment(spec, h.n, with_exceptional=False)
            sol = metapop_solve(h, assignment, model, z0, t_end)
            reduced, _, _ = metapop_reduce(h, assignment, z0)
            return sol, reduced
        if kind == "partition":
            assignment = self._assignment(spec, h.n, with_exceptional=True)
            pspec = PartitionSpec.from_assignment(h, assignment)
            sol = partition_reduce(h, pspec, model, z0, t_end)
            K = pspec.n_blocks
            wbar = (pspec.kappa / pspec.p) * pspec.rho
            entries = {1: [
                (k, (l,), wbar[k, l]) for k in range(K) for l in range(K)
                if wbar[k, l] != 0.0
            ]}
            reduced = WeightedHypergraph.from_edge_lists(K, 1, "explicit", entries)
            return sol, reduced
        if kind == "imfa":
            degrees = np.atleast_2d(
                np.asarray(self.cfg.network_section["params"]["degrees"], dtype=float)
            )
            conv = int(
                self.cfg.network_section.get("params", {}).get(
                    "convention", self.cfg.network_section.get("convention", 1)
                )
            )
            classes, inverse = np.unique(degrees.T, axis=0, return_inverse=True)
            z0_class = np.zeros((len(classes), model.n_states))
            np.add.at(z0_class, inverse, z0)
            z0_class /= np.bincount(inverse)[:, None]
            sol = imfa_solve(degrees, model, conv, z0_class, t_end)
            reduced, _, _ = metapop_reduce(h, inverse, z0)
            return sol, reduced
        if kind == "activity":
            acts = np.atleast_2d(
                np.asarray(self.cfg.network_section["params"]["activities"], dtype=float)
            )
            classes, inverse = np.unique(acts.T, axis=0, return_inverse=True)
            z0_class = np.zeros((len(classes), model.n_states))
            np.add.at(z0_class, inverse, z0)
            z0_class /= np.bincount(inverse)[:, None]
            sol = activity_solve(acts, model, z0_class, t_end)
            reduced, _, _ = metapop_reduce(h, inverse, z0)
            return sol, reduced
        raise ParameterError(f"unknown reduction kind {kind!r}")

    def write_scaling(self, spec: dict, filename="scaling.csv",
                      summary_file="scaling.json"):
        sizes = [int(s) for s in spec["sizes"]]
        replicas = int(spec.get("replicas", max(self.cfg.replicas, 200)))
        t0 = time.perf_counter()
        points, matrices, rows = [], [], []
        for n in sizes:
            h = self.cfg.build_network(n_override=n)
            z0 = self.cfg.initial_occupancies(n, self.model.n_states)
            sol = nimfa_solve(h, self.model, z0, self.cfg.t_end)
            ens = coupled_ensemble(
                h, self.model,
                self.cfg.initial_state_spec(n, self.model.n_states),
                sol, self.cfg.t_end, replicas, int(self.cfg.seed),
                self.cfg.t_grid, n_jobs=self.threads,
            )
            report = estimate_errors(ens, sol)
            points.append((n, report.p_max))
            matrices.append(
                (ens.disagreement_matrix <= self.cfg.t_end).astype(float)
            )
            bound = evaluate_bounds(h, self.cfg.t_end, self.model.n_states)
            se = float(np.sqrt(report.p_max * (1 - report.p_max) / replicas))
            rows.append((n, report.p_max, se, bound.sqrt_wmax))
        fit = fit_scaling(points, matrices, seed=int(self.cfg.seed))
        self.timings["scaling"] = time.perf_counter() - t0
        _write_csv(self.out / filename, self.hash,
                   ("size", "mean_error", "stderr", "bound_value"), rows)
        _write_json(self.out / summary_file, self.hash, fit.to_dict())
        self._record("scaling", filename)
        self._record("scaling_summary", summary_file)

    # -- composite ----------------------------------------------------------

    def run(self) -> RunManifest:
        cfg = self.cfg
        if cfg.wants("bound_report"):
            self.write_bounds()
        if cfg.wants("nimfa"):
            self.write_nimfa()
        if cfg.replicas > 0 and cfg.wants("aggregate"):
            self.write_aggregate()
        if cfg.wants("events") or cfg.wants("prevalence"):
            self.write_events()
        if cfg.wants("error_report"):
            self.write_error_report()
        if cfg.wants("master"):
            self.write_master()
        red = cfg.outputs.get("reduction")
        if red:
            self.write_reduction(red)
        scaling = cfg.outputs.get("scaling")
        if scaling:
            self.write_scaling(scaling)
        manifest = RunManifest(
            config_hash=self.hash,
            artifact_version=__version__,
            outputs=self.outputs,
            timings={k: round(v, 6) for k, v in self.timings.items()},
            instance=self._instance_summary(),
        )
        _write_json(self.out / "manifest.json", self.hash, manifest.to_dict())
        return manifest

    def _instance_summary(self) -> dict:
        h = self.network
        rep = regularity_report(h)
        return {
            "n": h.n,
            "max_order": h.max_order,
            "convention": h.convention,
            "edge_counts": [h.n_edges(m) for m in range(1, h.max_order + 1)],
            "w_max": rep.w_max,
            "delta_max": rep.delta_max,
            "delta_max_out": rep.delta_max_out,
            "sloop_ratio": rep.sloop_ratio,
        }


def run_experiment(cfg: ExperimentConfig, out_dir, seed=None, threads=1) -> RunManifest:
    """Validate and execute a config; the public API behind ``hypermf run``."""
    if seed is not None:
        cfg.raw.setdefault("run", {})["seed"] = int(seed)
    diags = cfg.validate()
    if diags:
        raise ParameterError("; ".join(diags))
    return _Runner(cfg, Path(out_dir), threads).run()


# ---------------------------------------------------------------------------
# argument parsing


def _parse_kv(pairs):
    out = {}
    for item in pairs or []:
        key, _, value = item.partition("=")
        out[key] = yaml.safe_load(value)
    return out


def _add_common(p):
    p.add_argument("--config", type=Path, help="experiment config (YAML)")
    p.add_argument("--out-dir", type=Path, default=Path("out"))
    p.add_argument("--seed", type=int, default=None, help="overrides config seed")
    p.add_argument("--threads", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hypermf", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a network file")
    g.add_argument("--family", required=False)
    g.add_argument("--param", action="append", help="key=value generator parameter")
    g.add_argument("--convention", type=int, default=None)
    g.add_argument("--out", type=Path, required=True)
    _add_common(g)

    for name in ("simulate", "nimfa", "reduce", "couple", "analyze", "run", "validate"):
        p = sub.add_parser(name)
        _add_common(p)
    return ap


def _load(args) -> ExperimentConfig:
    if args.config is None:
        raise ParameterError("--config is required for this subcommand")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.raw.setdefault("run", {})["seed"] = int(args.seed)
    return cfg


def _require_valid(cfg: ExperimentConfig):
    diags = cfg.validate()
    if diags:
        for d in diags:
            print(f"invalid: {d}", file=sys.stderr)
        raise SystemExit(2)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CapacityError as exc:
        print(f"capacity: {exc}", file=sys.stderr)
        return 3
    except (IntegrationError, ModelEvaluationError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except HypermfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _dispatch(args) -> int:
    cmd = args.command
    if cmd == "generate":
        if args.family:
            params = _parse_kv(args.param)
            if args.convention is not None:
                params["convention"] = args.convention
            h = generate(args.family, params, args.seed)
        else:
            cfg = _load(args)
            _require_valid(cfg)
            h = cfg.build_network()
        args.out.parent.mkdir(parents=True, exist_ok=True)
        write_hypergraph(h, args.out)
        print(f"wrote {args.out}")
        return 0

    cfg = _load(args)
    if cmd == "validate":
        diags = cfg.validate()
        for d in diags:
            print(d)
        if not diags:
            print("ok")
        return 0 if not diags else 2

    _require_valid(cfg)
    runner = _Runner(cfg, args.out_dir, threads=args.threads)
    if cmd == "simulate":
        if cfg.replicas > 0:
            runner.write_aggregate()
        if cfg.wants("events") or cfg.wants("prevalence"):
            runner.write_events()
    elif cmd == "nimfa":
        runner.write_nimfa()
    elif cmd == "reduce":
        red = cfg.outputs.get("reduction")
        if not red:
            raise ParameterError("outputs.reduction: missing for 'reduce'")
        runner.write_reduction(red)
    elif cmd == "couple":
        runner.write_error_report()
    elif cmd == "analyze":
        runner.write_bounds()
    elif cmd == "run":
        manifest = runner.run()
        print(f"manifest: {args.out_dir / 'manifest.json'}")
        return 0
    for name, fn in runner.outputs.items():
        print(f"wrote {args.out_dir / fn}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

"""Declarative experiment configuration.

Experiments are described by a single YAML file with nested sections::

    network:  {family: ring, convention: 1, params: {n: 1000, k: 10}}
              # or {file: path/to/network.hg}
    model:    {name: sis, params: {beta: [2.0], gamma: 1.0}}
    init:     {kind: all, state: 1}
              # or {kind: product, probs: [0.1, 0.9]}
              # or {kind: file, path: z0.csv}
    run:      {t_end: 5.0, grid: 65, replicas: 1000, seed: 7}
    outputs:  {nimfa: true, aggregate: true, events: false,
               prevalence: false, bound_report: true, error_report: false,
               master: false,
               reduction: {kind: hmfa},
               scaling: {sizes: [100, 400], replicas: 500}}

``validate`` returns a list of field-qualified diagnostics and is empty
exactly when ``run`` would start.  The configuration hash covers the
canonical JSON form of the parsed document, so re-running an identical
file reproduces identical outputs.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import ParameterError
from .hypergraph import WeightedHypergraph, generate, read_hypergraph
from .models import RateModel, make_model
from .stochastic import MASTER_STATE_GUARD

__all__ = ["ExperimentConfig", "load_config"]

_OUTPUT_FLAGS = (
    "nimfa",
    "aggregate",
    "events",
    "prevalence",
    "bound_report",
    "error_report",
    "master",
)
_STOCHASTIC_OUTPUTS = ("aggregate", "events", "prevalence", "error_report")


@dataclass(eq=False)
class ExperimentConfig:
    """Parsed experiment description plus derived artifacts."""

    raw: dict
    base_dir: Path = field(default_factory=Path)

    @property
    def config_hash(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    # -- section accessors -------------------------------------------------

    @property
    def network_section(self) -> dict:
        return self.raw.get("network", {})

    @property
    def model_section(self) -> dict:
        return self.raw.get("model", {})

    @property
    def init_section(self) -> dict:
        return self.raw.get("init", {})

    @property
    def run_section(self) -> dict:
        return self.raw.get("run", {})

    @property
    def outputs(self) -> dict:
        return self.raw.get("outputs", {})

    @property
    def seed(self):
        return self.run_section.get("seed")

    @property
    def t_end(self) -> float:
        return float(self.run_section.get("t_end", 1.0))

    @property
    def n_grid(self) -> int:
        return int(self.run_section.get("grid", 33))

    @property
    def t_grid(self) -> np.ndarray:
        return np.linspace(0.0, self.t_end, self.n_grid)

    @property
    def replicas(self) -> int:
        return int(self.run_section.get("replicas", 0))

    def wants(self, name: str) -> bool:
        return bool(self.outputs.get(name, False))

    @property
    def stochastic_requested(self) -> bool:
        if self.replicas > 0 and any(self.wants(k) for k in _STOCHASTIC_OUTPUTS):
            return True
        return bool(self.outputs.get("scaling"))

    # -- artifact construction ---------------------------------------------

    def build_network(self, n_override: int | None = None) -> WeightedHypergraph:
        sec = dict(self.network_section)
        if "file" in sec:
            return read_hypergraph(self.base_dir / sec["file"])
        params = dict(sec.get("params", {}))
        if "convention" in sec:
            params.setdefault("convention", sec["convention"])
        if n_override is not None:
            params["n"] = n_override
        return generate(sec["family"], params, self.seed)

    def build_model(self) -> RateModel:
        sec = self.model_section
        return make_model(sec["name"], sec.get("params", {}))

    def initial_occupancies(self, n: int, n_states: int) -> np.ndarray:
        """Per-vertex simplex rows used as the mean-field initial condition."""
        sec = self.init_section
        kind = sec.get("kind", "all")
        if kind == "all":
            s = int(sec.get("state", 0))
            z0 = np.zeros((n, n_states))
            z0[:, s] = 1.0
            return z0
        if kind == "product":
            p = np.asarray(sec["probs"], dtype=float)
            return np.tile(p, (n, 1))
        if kind == "file":
            z0 = np.loadtxt(self.base_dir / sec["path"], delimiter=",", ndmin=2)
            return z0
        raise ParameterError(f"unknown init kind {kind!r}")

    def initial_state_spec(self, n: int, n_states: int):
        """Initial condition for stochastic runs (exact or sampled)."""
        sec = self.init_section
        kind = sec.get("kind", "all")
        if kind == "all":
            return np.full(n, int(sec.get("state", 0)), dtype=np.int64)
        return ("product", self.initial_occupancies(n, n_states))

    # -- validation ----------------------------------------------------------

    def validate(self) -> list[str]:
        """Field-qualified diagnostics; empty iff the config can run."""
        diags: list[str] = []
        if "network" not in self.raw:
            diags.append("network: section missing")
        elif "file" not in self.network_section and "family" not in self.network_section:
            diags.append("network: needs either 'family' or 'file'")
        if "model" not in self.raw:
            diags.append("model: section missing")

        model = None
        if not diags:
            try:
                model = self.build_model()
            except (ParameterError, KeyError, TypeError, ValueError) as exc:
                diags.append(f"model: {exc}")

        sec = self.init_section
        kind = sec.get("kind", "all")
        if kind == "product":
            probs = np.asarray(sec.get("probs", []), dtype=float)
            if probs.ndim != 1 or len(probs) == 0:
                diags.append("init.probs: required for kind 'product'")
            elif abs(probs.sum() - 1.0) > 1e-9 or np.any(probs < 0):
                diags.append(
                    f"init.probs: not a probability vector (sum={probs.sum()!r})"
                )
            elif model is not None and len(probs) != model.n_states:
                diags.append("init.probs: length does not match the state space")
        elif kind == "all":
            if model is not None:
                s = int(sec.get("state", 0))
                if not 0 <= s < model.n_states:
                    diags.append("init.state: outside the model state space")
        elif kind == "file":
            if "path" not in sec:
                diags.append("init.path: required for kind 'file'")
        else:
            diags.append(f"init.kind: unknown kind {kind!r}")

        if self.t_end <= 0:
            diags.append("run.t_end: must be positive")
        if self.n_grid < 2:
            diags.append("run.grid: need at least two grid points")
        if self.replicas < 0:
            diags.append("run.replicas: must be nonnegative")
        if self.stochastic_requested and self.seed is None:
            diags.append("run.seed: required when stochastic outputs are requested")

        if self.wants("master") and model is not None:
            n = self._network_size()
            if n is not None and model.n_states**n > MASTER_STATE_GUARD:
                diags.append(
                    f"outputs.master: product space {model.n_states}^{n} exceeds "
                    f"the guard {MASTER_STATE_GUARD}"
                )

        red = self.outputs.get("reduction")
        if red is not None and not isinstance(red, dict):
            diags.append("outputs.reduction: must be a mapping with a 'kind'")
        elif isinstance(red, dict):
            kind = red.get("kind")
            if kind not in ("hmfa", "metapop", "partition", "imfa", "activity"):
                diags.append(f"outputs.reduction.kind: unknown kind {kind!r}")
            if kind in ("metapop", "partition") and not (
                "blocks" in red or "assignment_file" in red
            ):
                diags.append(
                    "outputs.reduction: needs 'blocks' or 'assignment_file'"
                )
            fam = self.network_section.get("family")
            if kind == "imfa" and fam != "annealed":
                diags.append("outputs.reduction: imfa needs the annealed family")
            if kind == "activity" and fam != "activity":
                diags.append("outputs.reduction: activity reduction needs the activity family")

        scaling = self.outputs.get("scaling")
        if scaling is not None:
            sizes = scaling.get("sizes", [])
            if len(sizes) < 3:
                diags.append("outputs.scaling.sizes: need at least three sizes")
            if "family" in self.network_section and "file" in self.network_section:
                diags.append("outputs.scaling: incompatible with a network file")
        return diags

    def _network_size(self):
        sec = self.network_section
        if "params" in sec and "n" in sec["params"]:
            return int(sec["params"]["n"])
        if "file" in sec:
            try:
                return read_hypergraph(self.base_dir / sec["file"]).n
            except OSError:
                return None
        return None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    with open(path) as f:
        raw = yaml.safe_load(f)
    if not isinstance(raw, dict):
        raise ParameterError(f"{path}: top level must be a mapping")
    return ExperimentConfig(raw, base_dir=path.parent)

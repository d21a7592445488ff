"""Run configuration shared by the solver pipeline and the CLI."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

from .errors import ParameterError


@dataclass(frozen=True)
class RunConfig:
    alpha: float = 20.0
    ssc_max_iter: int = 500
    ssc_tol: float = 1e-6
    ridge: float = 1e-8
    max_rows: int = 4096
    seed: int = 42
    kmeans_restarts: int = 10
    threads: int = 1
    # When False, clustering/input activations come from the original model
    # instead of the partially pruned one at each sequential step.
    recluster_from_pruned: bool = True

    def __post_init__(self):
        for name in ("alpha", "ssc_max_iter", "ssc_tol", "ridge", "max_rows",
                     "kmeans_restarts", "threads"):
            if getattr(self, name) <= 0 and name != "ridge":
                raise ParameterError(f"config field '{name}' must be positive")
        if self.ridge < 0:
            raise ParameterError("config field 'ridge' must be nonnegative")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    known = {f.name for f in dataclasses.fields(RunConfig)}
    bad = set(raw) - known
    if bad:
        raise ParameterError(f"unknown config fields: {sorted(bad)}")
    return RunConfig(**raw)

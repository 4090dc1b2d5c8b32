"""File formats: jets as JSON Lines, metrics as CSV with fixed headers."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import GinkgoParams, Topology, tree_log_likelihood
from .sim import GeneratedJet

JET_FIELDS = ("jet_id", "lambda_gen", "t_cut", "root", "leaves", "truth_parent", "truth_loglik", "seed")
RUN_REPORT_HEADER = ("jet_id", "method", "K", "M", "b", "log_Z_hat", "best_loglik", "wall_ms", "seed")
BENCH_HEADER = ("method", "N", "K_or_b", "median_ms")


@dataclass(frozen=True)
class JetRecord:
    jet_id: str
    lambda_gen: tuple[float, ...]
    t_cut: float
    root: np.ndarray
    leaves: np.ndarray
    truth_parent: Optional[np.ndarray] = None
    truth_loglik: Optional[float] = None
    seed: Optional[int] = None

    def __post_init__(self):
        leaves = np.asarray(self.leaves, dtype=float).reshape(-1, 4)
        if len(leaves) < 1:
            raise ValueError(f"jet {self.jet_id}: no leaves")
        object.__setattr__(self, "leaves", leaves)
        object.__setattr__(self, "root", np.asarray(self.root, dtype=float).reshape(4))
        object.__setattr__(self, "lambda_gen", tuple(float(x) for x in np.atleast_1d(self.lambda_gen)))
        if self.truth_parent is not None:
            parent = np.asarray(self.truth_parent, dtype=np.int64)
            Topology(parent, leaves)  # validates the table
            object.__setattr__(self, "truth_parent", parent)

    @property
    def n_leaves(self) -> int:
        return len(self.leaves)

    @property
    def params(self) -> GinkgoParams:
        return GinkgoParams(self.lambda_gen, self.t_cut, self.root)

    def truth(self) -> Optional[Topology]:
        return None if self.truth_parent is None else Topology(self.truth_parent, self.leaves)

    def recomputed_truth_loglik(self) -> float:
        return tree_log_likelihood(self.truth(), self.params)

    @classmethod
    def from_generated(cls, jet: GeneratedJet, jet_id: str) -> "JetRecord":
        return cls(jet_id, jet.params.lambdas, jet.params.t_cut, jet.params.root, jet.leaves,
                   jet.truth.parent, jet.truth_loglik, jet.seed)

    def to_json(self) -> str:
        obj = {
            "jet_id": self.jet_id,
            "lambda_gen": list(self.lambda_gen),
            "t_cut": self.t_cut,
            "root": self.root.tolist(),
            "leaves": self.leaves.tolist(),
            "truth_parent": None if self.truth_parent is None else self.truth_parent.tolist(),
            "truth_loglik": self.truth_loglik,
            "seed": self.seed,
        }
        return json.dumps(obj, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "JetRecord":
        obj = json.loads(line)
        missing = {"jet_id", "lambda_gen", "t_cut", "root", "leaves"} - obj.keys()
        if missing:
            raise ValueError(f"jet record missing fields: {sorted(missing)}")
        return cls(str(obj["jet_id"]), obj["lambda_gen"], float(obj["t_cut"]), obj["root"], obj["leaves"],
                   obj.get("truth_parent"), obj.get("truth_loglik"), obj.get("seed"))


def write_jets(path, records: Iterable[JetRecord]):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")


def read_jets(path) -> list[JetRecord]:
    with open(path, encoding="utf-8") as fh:
        return [JetRecord.from_json(line) for line in fh if line.strip()]


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def read_csv(path) -> list[dict[str, str]]:
    with open(Path(path), encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def fit_trace_header(param_names: Sequence[str]) -> tuple[str, ...]:
    return ("step", "objective", *param_names, "grad_norm", "wall_ms")

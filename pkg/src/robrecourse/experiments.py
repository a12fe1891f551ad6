"""Experiment pipelines behind the command-line interface.

An :class:`ExperimentConfig` names a dataset (synthetic from an SCM or a
CSV), a model and training objective, an uncertainty grid and solver/attack
parameters.  Each pipeline returns plain row dictionaries; writing them to
CSV is left to :func:`write_csv` so tests can inspect results directly.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .actions import NOT_FOUND, FeasibilitySpec, UncertaintySpec
from .attack import CWParams, analytic_min_invalidation, cw_min_invalidation_batch
from .data import Dataset, Labeler, load_csv, split_indices, synthesize
from .model import (
    Classifier,
    LinearClassifier,
    TrainConfig,
    accuracy,
    load_classifier,
    mcc,
    train,
)
from .recourse import SolverParams, is_valid, solve_recourse_batch
from .scm import resolve_scm

DEFAULT_EPSILONS = (1e-3, 1e-2, 1e-1, 0.5)
DEFAULT_OBJECTIVES = ("ERM", "AF", "ALLR", "ROSS")
ABLATIONS = ("ALLR-mu1=0", "ALLR-mu2=0")
OUT_ENV = "ROBRECOURSE_OUT"
HIST_EDGES = np.logspace(-8, 0, 17)


class ConfigError(ValueError):
    pass


class ConsistencyError(RuntimeError):
    """An internal re-check of a result failed."""


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    dataset: dict = field(default_factory=lambda: {"kind": "synthetic", "scm": "income-savings"})
    model: dict = field(default_factory=dict)
    objective: str = "ERM"
    objectives: list = field(default_factory=lambda: list(DEFAULT_OBJECTIVES))
    ablations: bool = False
    epsilons: list = field(default_factory=lambda: list(DEFAULT_EPSILONS))
    robust_epsilon: float = 0.1
    seeds: list = field(default_factory=lambda: [0])
    max_individuals: int = 1000
    solver: dict = field(default_factory=dict)
    attack: dict = field(default_factory=dict)
    output_dir: str = ""
    base_dir: str = field(default=".", compare=False)

    def __post_init__(self):
        self.epsilons = [float(e) for e in self.epsilons]
        if any(not (e >= 0 and np.isfinite(e)) for e in self.epsilons):
            raise ConfigError("uncertainty levels must be finite and nonnegative")
        if self.epsilons != sorted(self.epsilons):
            raise ConfigError("uncertainty levels must be sorted ascending")
        if not self.robust_epsilon >= 0:
            raise ConfigError("robust_epsilon must be nonnegative")
        self.seeds = [int(s) for s in self.seeds]
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.max_individuals < 1:
            raise ConfigError("max_individuals must be >= 1")
        for obj in [self.objective, *self.objectives]:
            _objective_overrides(obj)
        try:
            SolverParams(**self.solver)
            CWParams(**self.attack)
            self.train_config(0)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        kind = self.dataset.get("kind", "synthetic")
        if kind not in ("synthetic", "csv"):
            raise ConfigError(f"unknown dataset kind {kind!r}")
        for key in ("path", "actionability"):
            ref = self.dataset.get(key)
            if isinstance(ref, str) and not self._path(ref).exists():
                raise ConfigError(f"dataset {key} file not found: {ref}")
        if isinstance(self.dataset.get("feasibility"), str) and not self._path(self.dataset["feasibility"]).exists():
            raise ConfigError(f"feasibility file not found: {self.dataset['feasibility']}")

    def _path(self, ref: str) -> Path:
        p = Path(ref)
        if p.is_absolute() or (Path(self.base_dir) / p).exists():
            return p if p.is_absolute() else Path(self.base_dir) / p
        packaged = resources.files("robrecourse.configs") / ref
        return Path(str(packaged)) if packaged.is_file() else Path(self.base_dir) / p

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def train_config(self, seed: int, objective: str | None = None) -> TrainConfig:
        m = dict(self.model)
        kind = m.pop("kind", "mlp")
        m.update(_objective_overrides(objective or self.objective))
        return TrainConfig(model=kind, seed=seed, **m)

    @property
    def solver_params(self) -> SolverParams:
        return SolverParams(**self.solver)

    @property
    def attack_params(self) -> CWParams:
        return CWParams(**self.attack)

    @classmethod
    def from_dict(cls, d: dict, base_dir=".") -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__) - {"base_dir"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d, base_dir=str(base_dir))

    @classmethod
    def load(cls, ref) -> "ExperimentConfig":
        """Load a JSON file, or a builtin config by name (e.g. ``income-savings-linear``)."""
        p = Path(ref)
        if not p.exists():
            packaged = resources.files("robrecourse.configs") / f"{ref}.json"
            if not packaged.is_file():
                raise ConfigError(f"config not found: {ref}")
            p = Path(str(packaged))
        try:
            with open(p) as fh:
                d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc})") from None
        return cls.from_dict(d, base_dir=p.parent)


def builtin_configs() -> list:
    root = resources.files("robrecourse.configs")
    return sorted(p.name[:-5] for p in root.iterdir()
                  if p.name.endswith(".json") and not p.name.endswith(("_scm.json", "_feasibility.json")))


def _objective_overrides(name: str) -> dict:
    """Map an objective label (including ablation labels) to training overrides."""
    up = name.upper()
    if up in DEFAULT_OBJECTIVES:
        return {"objective": up}
    if up == "ALLR-MU1=0":
        return {"objective": "ALLR", "mu1": 0.0}
    if up == "ALLR-MU2=0":
        return {"objective": "ALLR", "mu2": 0.0}
    raise ConfigError(f"unknown objective {name!r}")


# ---------------------------------------------------------------------------
# data and models


@dataclass
class Problem:
    """Everything a pipeline needs for one seed."""

    dataset: Dataset
    feasibility: FeasibilitySpec
    scm: object
    train_index: np.ndarray
    test_index: np.ndarray

    @property
    def train(self) -> Dataset:
        return self.dataset.subset(self.train_index)

    @property
    def test(self) -> Dataset:
        return self.dataset.subset(self.test_index)


def build_dataset(config: ExperimentConfig) -> tuple[Dataset, FeasibilitySpec]:
    d = config.dataset
    if d.get("kind", "synthetic") == "csv":
        act = d.get("actionability")
        return load_csv(config._path(d["path"]), d["label_column"],
                        None if act is None else config._path(act), seed=int(d.get("seed", 0)))
    scm_ref = d.get("scm", "income-savings")
    if isinstance(scm_ref, str) and scm_ref.endswith(".json"):
        scm_ref = str(config._path(scm_ref))
    scm = resolve_scm(scm_ref)
    lab = d.get("labeler", {})
    labeler = Labeler(tuple(lab.get("weights", [1.0] * scm.n)), float(lab.get("bias", 0.0)),
                      float(lab.get("noise_rate", 0.0)))
    ds = synthesize(scm, int(d.get("n_samples", 1000)), labeler, seed=int(d.get("seed", 0)),
                    name=str(scm_ref))
    feas_ref = d.get("feasibility")
    if feas_ref is None:
        feas = FeasibilitySpec.all_free(scm.n, scm.feature_names)
    elif isinstance(feas_ref, str):
        feas = FeasibilitySpec.load(config._path(feas_ref))
    else:
        feas = FeasibilitySpec.from_records(feas_ref)
    if feas.n != ds.n_features:
        raise ConfigError(f"feasibility lists {feas.n} features, dataset has {ds.n_features}")
    return ds, feas.standardized(ds.mean, ds.std)


def build_problem(config: ExperimentConfig, seed: int, dataset=None) -> Problem:
    ds, feas = dataset if dataset is not None else build_dataset(config)
    tr, te = split_indices(len(ds), seed)
    return Problem(ds, feas, ds.scm, tr, te)


def fit(config: ExperimentConfig, problem: Problem, seed: int, objective: str | None = None) -> Classifier:
    return train(problem.train, config.train_config(seed, objective), mask=problem.feasibility.mask)


def negatives(classifier: Classifier, problem: Problem, cap: int) -> tuple[np.ndarray, np.ndarray]:
    """Ids (dataset row numbers) and features of negatively classified test individuals."""
    X = problem.dataset.features[problem.test_index]
    neg = ~classifier.predict(X)
    ids = problem.test_index[neg][:cap]
    return ids, problem.dataset.features[ids]


# ---------------------------------------------------------------------------
# per-individual work


@dataclass(frozen=True)
class _Task:
    classifier: Classifier
    scm: object
    feasibility: FeasibilitySpec
    ids: tuple
    X: np.ndarray
    epsilon: float
    solver: SolverParams
    attack: CWParams
    run_attack: bool = True


def _run_task(task: _Task) -> list:
    clf, scm, feas, eps = task.classifier, task.scm, task.feasibility, task.epsilon
    acts = solve_recourse_batch(clf, scm, task.X, feas, UncertaintySpec(eps), params=task.solver)
    found = [k for k, a in enumerate(acts) if a is not NOT_FOUND]
    attacks = {}
    if task.run_attack and found:
        res = cw_min_invalidation_batch(clf, scm, task.X[found], [acts[k] for k in found], task.attack,
                                        ids=[task.ids[k] for k in found])
        attacks = dict(zip(found, res))
    exact = isinstance(clf, LinearClassifier) and (scm is None or scm.is_linear)
    rows = []
    for k, (i, x, a) in enumerate(zip(task.ids, task.X, acts)):
        row = {"id": int(i), "epsilon": eps, "found": a is not NOT_FOUND, "cost": float("nan"),
               "magnitude": float("nan"), "attack_success": False, "robust": False,
               "analytic": float("nan"), "check": "ok"}
        if a is NOT_FOUND:
            rows.append(row)
            continue
        row["cost"] = a.cost
        problems = []
        if not feas.is_feasible(x, a.full_theta(x.size)):
            problems.append("infeasible")
        if not is_valid(clf, scm, x, a):
            problems.append("invalid")
        if exact:
            row["analytic"] = analytic_min_invalidation(clf, scm, x, a)
            if row["analytic"] < eps - 1e-8:
                problems.append("analytic-below-eps")
        if k in attacks:
            r = attacks[k]
            row["magnitude"] = r.magnitude
            row["attack_success"] = r.success
            row["robust"] = r.robust_at(eps)
        row["check"] = "ok" if not problems else "+".join(problems)
        rows.append(row)
    return rows


def run_individuals(classifier, scm, feas, ids, X, epsilon, solver: SolverParams, attack: CWParams,
                    workers: int = 1, run_attack: bool = True) -> list:
    """Solve (and attack) every individual; rows come back sorted by id."""
    ids = [int(i) for i in ids]
    if not ids:
        return []
    workers = max(1, min(int(workers), len(ids)))
    chunks = np.array_split(np.arange(len(ids)), workers)
    tasks = [_Task(classifier, scm, feas, tuple(ids[j] for j in c), X[c], float(epsilon), solver, attack,
                   run_attack) for c in chunks if c.size]
    if workers == 1:
        rows = _run_task(tasks[0])
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = [r for part in pool.map(_run_task, tasks) for r in part]
    return sorted(rows, key=lambda r: r["id"])


def failed_checks(rows) -> list:
    return [r for r in rows if r.get("check", "ok") != "ok"]


# ---------------------------------------------------------------------------
# pipelines


def run_train(config: ExperimentConfig, out_dir=None) -> list:
    """Train the configured objective for every seed; optionally save model JSON files."""
    data = build_dataset(config)
    rows = []
    for seed in config.seeds:
        prob = build_problem(config, seed, data)
        clf = fit(config, prob, seed)
        te = prob.test
        pred = clf.predict(te.features)
        rows.append({
            "seed": seed, "objective": config.objective,
            "accuracy": accuracy(clf, te.features, te.labels),
            "mcc": mcc(te.labels, pred),
            "threshold": clf.threshold,
            "final_loss": clf.history[-1],
            "mean_penalty": float(np.mean(clf.penalty_history)),
            "final_penalty": clf.penalty_history[-1],
            "model_hash": clf.param_hash()[:16],
        })
        if out_dir is not None:
            clf.save(Path(out_dir) / f"model_{config.objective.lower()}_seed{seed}.json")
    return rows


def _classifier_for(config, prob, seed, model_path):
    return load_classifier(model_path) if model_path else fit(config, prob, seed)


def run_fragility(config: ExperimentConfig, model_path=None, workers: int = 1) -> tuple[list, list]:
    """Standard (eps = 0) recourse for every negative test individual, then attack it."""
    data = build_dataset(config)
    rows = []
    for seed in config.seeds:
        prob = build_problem(config, seed, data)
        clf = _classifier_for(config, prob, seed, model_path)
        ids, X = negatives(clf, prob, config.max_individuals)
        if ids.size == 0:
            raise ConfigError(f"seed {seed}: no negatively classified test individuals")
        for r in run_individuals(clf, prob.scm, prob.feasibility, ids, X, 0.0, config.solver_params,
                                 config.attack_params, workers):
            rows.append({"seed": seed, **r})
    return rows, histogram(rows)


def histogram(rows, edges=HIST_EDGES) -> list:
    """Counts of successful attack magnitudes in log-spaced bins (with under/overflow bins)."""
    out = []
    for seed in sorted({r["seed"] for r in rows}):
        mags = np.array([r["magnitude"] for r in rows if r["seed"] == seed and r["attack_success"]])
        bounds = [0.0, *edges, np.inf]
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            out.append({"seed": seed, "bin_lo": lo, "bin_hi": hi,
                        "count": int(np.sum((mags >= lo) & (mags < hi)))})
    return out


def run_robustness(config: ExperimentConfig, model_path=None, workers: int = 1) -> tuple[list, list]:
    """Robustify at every eps of the grid, attack, and summarize per eps."""
    data = build_dataset(config)
    rows, summary = [], []
    for seed in config.seeds:
        prob = build_problem(config, seed, data)
        clf = _classifier_for(config, prob, seed, model_path)
        ids, X = negatives(clf, prob, config.max_individuals)
        if ids.size == 0:
            raise ConfigError(f"seed {seed}: no negatively classified test individuals")
        for eps in config.epsilons:
            part = run_individuals(clf, prob.scm, prob.feasibility, ids, X, eps, config.solver_params,
                                   config.attack_params, workers)
            rows += [{"seed": seed, **r} for r in part]
            found = [r for r in part if r["found"]]
            summary.append({
                "seed": seed, "epsilon": eps, "individuals": len(part), "found": len(found),
                "pct_found": 100.0 * len(found) / len(part),
                "pct_robust": 100.0 * np.mean([r["robust"] for r in found]) if found else float("nan"),
                "mean_cost": float(np.mean([r["cost"] for r in found])) if found else float("nan"),
            })
    return rows, summary


def regularizer_objectives(config: ExperimentConfig) -> list:
    objs = list(config.objectives)
    if "ERM" not in [o.upper() for o in objs]:
        objs.insert(0, "ERM")
    if config.ablations:
        objs += [a for a in ABLATIONS if a not in objs]
    return objs


def run_regularizers(config: ExperimentConfig, workers: int = 1) -> tuple[list, list]:
    """Compare training objectives on accuracy, MCC, recourse found and relative cost.

    Returns ``(per_individual_rows, comparison_rows)``; the comparison has one
    row per (objective, seed) plus one aggregate row per objective
    (``seed = "all"``).
    """
    data = build_dataset(config)
    objs = regularizer_objectives(config)
    eps = config.robust_epsilon
    detail, per = [], {}
    for seed in config.seeds:
        prob = build_problem(config, seed, data)
        for obj in objs:
            clf = fit(config, prob, seed, obj)
            te = prob.test
            ids, X = negatives(clf, prob, config.max_individuals)
            std = run_individuals(clf, prob.scm, prob.feasibility, ids, X, 0.0, config.solver_params,
                                  config.attack_params, workers, run_attack=False)
            rob = run_individuals(clf, prob.scm, prob.feasibility, ids, X, eps, config.solver_params,
                                  config.attack_params, workers)
            for kind, part in (("standard", std), ("robust", rob)):
                detail += [{"seed": seed, "objective": obj, "kind": kind, **r} for r in part]
            per[(obj, seed)] = {
                "accuracy": accuracy(clf, te.features, te.labels),
                "mcc": mcc(te.labels, clf.predict(te.features)),
                "individuals": len(ids),
                "std": {r["id"]: r["cost"] for r in std if r["found"] and r["check"] == "ok"},
                "rob": {r["id"]: r["cost"] for r in rob if r["found"] and r["robust"] and r["check"] == "ok"},
            }
    rows = []
    for seed in config.seeds:
        rows += _comparison_rows(objs, [seed], per, seed)
    rows += _comparison_rows(objs, config.seeds, per, "all")
    return detail, rows


def _comparison_rows(objs, seeds, per, label) -> list:
    def pct(key, obj):
        num = sum(len(per[(obj, s)][key]) for s in seeds)
        den = sum(per[(obj, s)]["individuals"] for s in seeds)
        return 100.0 * num / den if den else float("nan")

    def mean_cost(key, obj):
        vals = []
        for s in seeds:
            ref, mine = per[("ERM", s)][key], per[(obj, s)][key]
            vals += [mine[i] for i in sorted(set(ref) & set(mine))]
        return float(np.mean(vals)) if vals else float("nan")

    costs = {k: {o: mean_cost(k, o) for o in objs} for k in ("std", "rob")}
    top = {k: np.nanmax(list(v.values())) if np.any(np.isfinite(list(v.values()))) else np.nan
           for k, v in costs.items()}
    rows = []
    for o in objs:
        rows.append({
            "objective": o, "seed": label,
            "accuracy": float(np.mean([per[(o, s)]["accuracy"] for s in seeds])),
            "mcc": float(np.mean([per[(o, s)]["mcc"] for s in seeds])),
            "pct_found_standard": pct("std", o),
            "pct_found_robust": pct("rob", o),
            "rel_cost_standard": costs["std"][o] / top["std"],
            "rel_cost_robust": costs["rob"][o] / top["rob"],
        })
    return rows


# ---------------------------------------------------------------------------
# output


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, rows: Sequence[dict], config_hash: str, columns: Sequence[str] | None = None):
    """Write rows with ``config_hash`` as the first column; values are formatted losslessly."""
    rows = list(rows)
    if columns is None:
        columns = list(rows[0]) if rows else []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["config_hash", *columns])
        for r in rows:
            w.writerow([config_hash, *(_fmt(r.get(c, "")) for c in columns)])


def default_out_dir(config: ExperimentConfig) -> str:
    return config.output_dir or os.environ.get(OUT_ENV) or "results"

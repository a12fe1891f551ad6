"""Command-line front end for the experiment pipelines.

Usage::

    robrecourse train        --config income-savings-linear --out results/
    robrecourse fragility    --config income-savings-linear
    robrecourse robustness   --config loan-like-mlp --epsilons 0.001,0.01
    robrecourse regularizers --config half-unactionable --workers 2
    robrecourse recourse     --config income-savings-linear --index 3 --epsilon 0.1
    robrecourse attack       --config income-savings-linear --x=-1,0.5 --intervened 0 --theta 1.2

``--config`` takes a JSON path or the name of a builtin config.  Outputs go
to ``--out``, else the config's ``output_dir``, else ``$ROBRECOURSE_OUT``,
else ``./results``.  Exit status: 0 on success, 1 when an internal
consistency re-check failed, 2 on invalid input.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .actions import NOT_FOUND, RecourseAction, UncertaintySpec
from .attack import cw_min_invalidation
from .recourse import is_valid, solve_recourse_batch

log = logging.getLogger("robrecourse")

ROW_COLUMNS = ["seed", "id", "epsilon", "found", "cost", "magnitude", "attack_success", "robust",
               "analytic", "check"]


def _floats(text: str) -> list:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="robrecourse", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, model=True):
        sp.add_argument("--config", required=True, help="JSON config path or builtin config name")
        sp.add_argument("--seed", type=int, help="run a single seed instead of the configured list")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--epsilons", type=_floats, help="comma-separated uncertainty levels")
        sp.add_argument("--objective", help="training objective (ERM, AF, ALLR, ROSS, ALLR-mu1=0, ALLR-mu2=0)")
        sp.add_argument("--workers", type=int, default=1, help="worker processes for per-individual work")
        if model:
            sp.add_argument("--model", help="saved model JSON; trained from the config when omitted")

    common(sub.add_parser("train", help="train classifiers and report accuracy/MCC"), model=False)
    common(sub.add_parser("fragility", help="attack minimum-cost (eps=0) recourse"))
    common(sub.add_parser("robustness", help="robustify over the eps grid and attack"))
    sp = sub.add_parser("regularizers", help="compare training objectives")
    common(sp, model=False)
    sp.add_argument("--ablations", action="store_true", help="add the ALLR mu1=0 / mu2=0 ablations")
    for name, helptext in (("recourse", "recourse for a single individual"),
                           ("attack", "attack a single (individual, action) pair")):
        sp = sub.add_parser(name, help=helptext)
        common(sp)
        who = sp.add_mutually_exclusive_group(required=True)
        who.add_argument("--index", type=int, help="dataset row of the individual")
        who.add_argument("--x", type=_floats, help="standardized feature vector")
        if name == "recourse":
            sp.add_argument("--epsilon", type=float, default=0.0)
        else:
            sp.add_argument("--intervened", type=_ints, required=True)
            sp.add_argument("--theta", type=_floats, required=True)
    return p


def _effective_config(args) -> ex.ExperimentConfig:
    cfg = ex.ExperimentConfig.load(args.config)
    changes = {}
    if args.seed is not None:
        changes["seeds"] = [args.seed]
    if args.epsilons is not None and args.command != "fragility":
        changes["epsilons"] = args.epsilons
    if args.objective is not None:
        if args.command == "regularizers":
            changes["objectives"] = ["ERM"] if args.objective.upper() == "ERM" else ["ERM", args.objective]
        else:
            changes["objective"] = args.objective
    if getattr(args, "ablations", False):
        changes["ablations"] = True
    if changes:
        d = cfg.to_dict()
        d.update(changes)
        cfg = ex.ExperimentConfig.from_dict(d, cfg.base_dir)
    return cfg


def _out_dir(args, cfg) -> Path:
    out = Path(args.out or ex.default_out_dir(cfg))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _report_failures(rows) -> int:
    bad = ex.failed_checks(rows)
    for r in bad:
        log.error("re-check failed for individual %s (eps=%s): %s", r["id"], r["epsilon"], r["check"])
    return 1 if bad else 0


def _cmd_train(args, cfg, out):
    rows = ex.run_train(cfg, out)
    ex.write_csv(out / "train_metrics.csv", rows, cfg.config_hash())
    for r in rows:
        print(f"seed {r['seed']}: accuracy {r['accuracy']:.4f}  mcc {r['mcc']:.4f}")
    return 0


def _cmd_fragility(args, cfg, out):
    if args.epsilons is not None and any(e != 0 for e in args.epsilons):
        raise ex.ConfigError("fragility measures standard (eps = 0) recourse only; "
                             "use the robustness subcommand for robustified actions")
    rows, hist = ex.run_fragility(cfg, args.model, args.workers)
    h = cfg.config_hash()
    ex.write_csv(out / "fragility.csv", rows, h, ROW_COLUMNS)
    ex.write_csv(out / "fragility_hist.csv", hist, h, ["seed", "bin_lo", "bin_hi", "count"])
    mags = [r["magnitude"] for r in rows if r["attack_success"]]
    if mags:
        print(f"{len(rows)} individuals, median invalidating magnitude {np.median(mags):.3e}")
    return _report_failures(rows)


def _cmd_robustness(args, cfg, out):
    rows, summary = ex.run_robustness(cfg, args.model, args.workers)
    h = cfg.config_hash()
    ex.write_csv(out / "robustness.csv", rows, h, ROW_COLUMNS)
    ex.write_csv(out / "robustness_summary.csv", summary, h)
    for s in summary:
        print(f"seed {s['seed']} eps {s['epsilon']:g}: found {s['pct_found']:.1f}%  "
              f"robust {s['pct_robust']:.1f}%  mean cost {s['mean_cost']:.4f}")
    return _report_failures(rows)


def _cmd_regularizers(args, cfg, out):
    detail, rows = ex.run_regularizers(cfg, args.workers)
    h = cfg.config_hash()
    ex.write_csv(out / "regularizers_detail.csv", detail, h, ["objective", "kind", *ROW_COLUMNS])
    ex.write_csv(out / "regularizers.csv", rows, h)
    for r in rows:
        if r["seed"] == "all":
            print(f"{r['objective']:>11}: acc {r['accuracy']:.3f}  found {r['pct_found_standard']:.1f}%  "
                  f"robust {r['pct_found_robust']:.1f}%  rel.cost {r['rel_cost_robust']:.3f}")
    return _report_failures(detail)


def _single(args, cfg):
    seed = cfg.seeds[0]
    prob = ex.build_problem(cfg, seed)
    clf = ex._classifier_for(cfg, prob, seed, args.model)
    if args.index is not None:
        if not 0 <= args.index < len(prob.dataset):
            raise ex.ConfigError(f"index {args.index} outside the dataset (0..{len(prob.dataset) - 1})")
        x = prob.dataset.features[args.index]
    else:
        x = np.asarray(args.x, dtype=np.float64)
        if x.size != prob.dataset.n_features:
            raise ex.ConfigError(f"--x has {x.size} entries, dataset has {prob.dataset.n_features} features")
    return seed, prob, clf, x


def _cmd_recourse(args, cfg, out):
    seed, prob, clf, x = _single(args, cfg)
    a = solve_recourse_batch(clf, prob.scm, x[None, :], prob.feasibility, UncertaintySpec(args.epsilon),
                             params=cfg.solver_params)[0]
    row = {"seed": seed, "epsilon": args.epsilon, "found": a is not NOT_FOUND,
           "already_positive": bool(clf.predict(x)), "intervened": "", "theta": "", "cost": float("nan"),
           "check": "ok"}
    code = 0
    if a is not NOT_FOUND:
        row.update(intervened=" ".join(map(str, a.intervened)), theta=" ".join(repr(float(t)) for t in a.theta),
                   cost=a.cost)
        if not (is_valid(clf, prob.scm, x, a) and prob.feasibility.is_feasible(x, a.full_theta(x.size))):
            row["check"] = "failed"
            code = 1
    ex.write_csv(out / "recourse.csv", [row], cfg.config_hash())
    print(json.dumps({k: v for k, v in row.items()}, default=str))
    return code


def _cmd_attack(args, cfg, out):
    seed, prob, clf, x = _single(args, cfg)
    if len(args.intervened) != len(args.theta):
        raise ex.ConfigError("--intervened and --theta must have the same length")
    action = RecourseAction(tuple(args.intervened), np.asarray(args.theta))
    res = cw_min_invalidation(clf, prob.scm, x, action, cfg.attack_params)
    row = {"seed": seed, "valid": is_valid(clf, prob.scm, x, action), "success": res.success,
           "magnitude": res.magnitude,
           "delta": "" if res.delta is None else " ".join(repr(float(d)) for d in res.delta),
           "analytic": float("nan") if res.certified_lower_bound is None else res.certified_lower_bound}
    ex.write_csv(out / "attack.csv", [row], cfg.config_hash())
    print(json.dumps(row, default=str))
    return 0


COMMANDS = {
    "train": _cmd_train,
    "fragility": _cmd_fragility,
    "robustness": _cmd_robustness,
    "regularizers": _cmd_regularizers,
    "recourse": _cmd_recourse,
    "attack": _cmd_attack,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return 2
    try:
        cfg = _effective_config(args)
        out = _out_dir(args, cfg)
        with open(out / f"{args.command}_config.json", "w") as fh:
            json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        return COMMANDS[args.command](args, cfg, out)
    except (ex.ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

"""Command-line harness: ``graspmc synth | rims | sample | report``.

Exit status is 0 on success, 1 on a runtime failure and 2 on a usage error.
Every option can also be set through an environment variable named
``GRASPMC_<OPTION>`` (``GRASPMC_SEED=3``, ``GRASPMC_ANNEALING_LITERAL=1``);
explicit flags win.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .errors import GraspMCError
from .experiments import prepare_scene, suggest_rim_params
from .geometry import RimDetectionParams, detect_rims, load_cloud, read_points, save_cloud, write_points
from .grasp_model import SyntheticObject, load_object_spec
from .history import FORMAT_VERSION, load_history, save_history
from .sampler import InitSpec, KameleonConfig, RwConfig, run_chain
from .transfer import init_from_chain, init_from_subsample, subsample_config

ENV_PREFIX = "GRASPMC_"
TRUE_WORDS = {"1", "true", "yes", "on"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _env(dest, default=None):
    return os.environ.get(ENV_PREFIX + dest.upper(), default)


def _env_flag(dest):
    return str(_env(dest, "")).strip().lower() in TRUE_WORDS


def _opt(p, flag, dest=None, **kw):
    dest = dest or flag.lstrip("-").replace("-", "_")
    p.add_argument(flag, dest=dest, default=_env(dest, kw.pop("default", None)), **kw)


def _flag(p, flag, help=None):
    dest = flag.lstrip("-").replace("-", "_")
    p.add_argument(flag, dest=dest, action="store_true", default=_env_flag(dest), help=help)


def build_parser():
    ap = _Parser(prog="graspmc", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="synthesise an object cloud and its ground-truth rim")
    p.add_argument("spec", help="object spec JSON")
    p.add_argument("out", help="point cloud output path")
    _opt(p, "--rims-out", help="ground-truth rim file (default: OUT with .rims.txt)")
    _opt(p, "--rim-tol", type=float, help="ground-truth band around the rim curve, m")

    p = sub.add_parser("rims", help="detect rim points of a cloud")
    p.add_argument("cloud")
    p.add_argument("out")
    _opt(p, "--radius", type=float, help="neighbourhood radius, m (default: from point spacing)")
    _opt(p, "--zeta", type=float, help="rim threshold on the squared summed displacement")

    p = sub.add_parser("sample", help="run one or more chains on an object")
    p.add_argument("object", help="object spec JSON")
    _opt(p, "--cloud", help="point cloud file (default: generated from the spec)")
    _opt(p, "--rims", help="rim point file (default: detected)")
    _opt(p, "--radius", type=float)
    _opt(p, "--zeta", type=float)
    _opt(p, "--sampler", choices=["rw", "kameleon"], default="kameleon")
    _opt(p, "--iters", type=int, help="iterations (default 5000; subsample init: donor budget)")
    _opt(p, "--burnin", type=int, help="Kameleon burn-in (default 1000; subsample init: 0)")
    _opt(p, "--seed", type=int, default=0)
    _opt(p, "--init", default="none", help="none | chain:PATH | subsample:PATH")
    _opt(p, "--out", help="chain history output path")
    _opt(p, "--plot-csv", help="CSV of accepted feasible poses (default: OUT with .grasps.csv)")
    _opt(p, "--chains", type=int, default=1, help="independent chains with seeds SEED..SEED+k-1")
    _opt(p, "--workers", type=int, help="worker processes for --chains")
    _flag(p, "--annealing-literal", help="raise the acceptance ratio to T instead of 1/T")
    _flag(p, "--no-align", help="skip canonical alignment of the cloud")
    _flag(p, "--dry-run", help="print the resolved configuration and exit")

    p = sub.add_parser("report", help="tabulate chain history files")
    p.add_argument("histories", nargs="+")
    _opt(p, "--format", choices=["csv", "json"], default="csv")
    return ap


# ---------------------------------------------------------------------------
# synth / rims


def cmd_synth(args):
    obj = _load_object(args.spec)
    cloud = obj.cloud()
    save_cloud(cloud, args.out)
    truth = obj.rim_truth(cloud.points, args.rim_tol)
    rims_out = args.rims_out or _sibling(args.out, ".rims.txt")
    write_points(rims_out, cloud.points[truth], header=f"ground-truth rim of {obj.name}")
    print(json.dumps({"cloud": str(args.out), "points": len(cloud), "rims": str(rims_out),
                      "rim_points": int(len(truth))}))
    return 0


def cmd_rims(args):
    cloud = _load_cloud(args.cloud)
    params = _rim_params(cloud, args.radius, args.zeta)
    rims = detect_rims(cloud, params)
    write_points(args.out, rims.rim_points,
                 header=f"rims of {cloud.name}, radius {params.radius:.17g}, zeta {params.zeta:.17g}")
    if len(rims) == 0:
        print("no rims detected", file=sys.stderr)
        return 1
    print(json.dumps({"rims": str(args.out), "rim_points": len(rims),
                      "radius": params.radius, "zeta": params.zeta}))
    return 0


def _rim_params(cloud, radius, zeta):
    if radius is None or zeta is None:
        auto = suggest_rim_params(cloud)
        radius = auto.radius if radius is None else radius
        zeta = auto.zeta if zeta is None else zeta
    try:
        return RimDetectionParams(radius, zeta)
    except GraspMCError as exc:
        raise UsageError(str(exc)) from exc


# ---------------------------------------------------------------------------
# sample


def resolve_sample(args):
    """Validate ``sample`` options and build the per-chain job description.

    Raises ``UsageError`` for conflicting options, before any sampling.
    """
    if args.chains < 1:
        raise UsageError("--chains must be >= 1")
    mode, _, path = args.init.partition(":")
    if mode not in ("none", "chain", "subsample") or (mode != "none") != bool(path):
        raise UsageError(f"--init must be none, chain:PATH or subsample:PATH, got {args.init!r}")
    if mode != "none" and args.sampler != "kameleon":
        raise UsageError("--init chain/subsample needs --sampler kameleon")
    donor = _load_history(path) if path else None

    if args.sampler == "rw":
        if args.burnin:
            raise UsageError("--burnin applies to the kameleon sampler only")
        cfg = RwConfig(n_iters=_nonneg(args.iters, 5000, "--iters"),
                       annealing_literal=args.annealing_literal, seed=args.seed)
    elif mode == "subsample":
        if args.burnin:
            raise UsageError("subsample init skips burn-in; --burnin must be 0")
        if donor.frozen_subsample is None or len(donor.frozen_subsample) == 0:
            raise UsageError(f"{path}: no-frozen-subsample")
        cfg = subsample_config(donor)
        if args.iters is not None:
            cfg = _replace(cfg, n_iters=_nonneg(args.iters, 0, "--iters"))
        cfg = _replace(cfg, seed=args.seed, annealing_literal=args.annealing_literal)
    else:
        n = _nonneg(args.iters, 5000, "--iters")
        b = _nonneg(args.burnin, 1000, "--burnin")
        if b > n:
            raise UsageError(f"--burnin {b} exceeds --iters {n}")
        try:
            cfg = KameleonConfig(n_iters=n, burn_in=b, seed=args.seed,
                                 annealing_literal=args.annealing_literal)
        except GraspMCError as exc:
            raise UsageError(str(exc)) from exc
    if mode == "chain" and not any(r.accepted for r in donor.records):
        raise UsageError(f"{path}: no-accepted-states")
    return cfg, mode, path, donor


def _nonneg(value, default, flag):
    value = default if value is None else value
    if value < 0:
        raise UsageError(f"{flag} must be >= 0")
    return value


def _replace(cfg, **kw):
    import dataclasses

    return dataclasses.replace(cfg, **kw)


def _chain_paths(out, k, i):
    if k == 1:
        return Path(out)
    p = Path(out)
    return p.with_name(f"{p.stem}.chain{i}{p.suffix}")


def _run_one(job):
    """Run one chain; returns its report dict.  Runs inside worker processes."""
    t = time.perf_counter()
    obj = SyntheticObject.from_spec(job["object"])
    cloud = load_cloud(job["cloud"]) if job["cloud"] else None
    rim_points = read_points(job["rims"]) if job["rims"] else None
    rim_params = None
    if rim_points is None and job["radius"] is not None:
        rim_params = RimDetectionParams(job["radius"], job["zeta"])
    scene = prepare_scene(obj, rim_params=rim_params, align=job["align"], cloud=cloud,
                          rim_points=rim_points)
    if len(scene.rims) == 0:
        raise GraspMCError("no-rims", "no rims detected on the object cloud")
    cfg = job["cfg"]
    rng = np.random.default_rng(cfg.seed)
    donor = load_history(job["init_path"]) if job["init_path"] else None
    if job["mode"] == "chain":
        init = init_from_chain(donor, rng)
    elif job["mode"] == "subsample":
        init = init_from_subsample(donor)
    else:
        init = InitSpec("random")
    complete = True
    try:
        hist = run_chain(scene.target, init, cfg, rng, object_id=scene.name)
    except GraspMCError as exc:
        hist = getattr(exc, "partial_history", None)
        if hist is None:
            raise
        complete = False
        error = str(exc)
    if donor is not None:
        hist.metadata["transfer_mode"] = job["mode"]
    out = job["out"]
    if out:
        save_history(hist, out)
        _write_plot_csv(hist, job["plot_csv"])
    report = run_report(hist, history_path=out, plot_csv=job["plot_csv"] if out else None)
    report["wall_time"] = round(time.perf_counter() - t, 3)
    report["complete"] = complete
    if not complete:
        report["error"] = error
    return report


def run_report(hist, history_path=None, plot_csv=None):
    meta = hist.metadata
    params = meta.get("params", {})
    return {
        "object": meta.get("object"),
        "sampler": meta.get("sampler"),
        "seed": meta.get("seed"),
        "iterations": len(hist) - 1,
        "burn_in": params.get("burn_in"),
        "init_mode": meta.get("init_mode"),
        "donor": meta.get("donor"),
        "label": row_label(meta),
        "feasible_count": hist.feasible_count(),
        "feasible_count_dedup": hist.feasible_count(dedup=True),
        "acceptance_rate": hist.acceptance_rate(),
        "history": None if history_path is None else str(history_path),
        "plot_csv": None if plot_csv is None else str(plot_csv),
        "params": params,
    }


def _write_plot_csv(hist, path):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iter", "x", "y", "z", "qw", "qx", "qy", "qz", "measure"])
    for r in hist.records:
        if r.accepted and r.feasible and r.iter > 0:
            w.writerow([r.iter] + ["%.17g" % v for v in r.proposal.vector] + ["%.17g" % r.measure])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def cmd_sample(args):
    cfg, mode, init_path, _ = resolve_sample(args)
    obj = _load_object(args.object)
    for f in (args.cloud, args.rims):
        if f and not Path(f).is_file():
            raise UsageError(f"{f}: no such file")
    if args.dry_run:
        print(json.dumps({"sampler": args.sampler, "init": mode, "params": cfg.params(),
                          "chains": args.chains}, indent=2, default=_plain))
        return 0

    jobs = []
    for i in range(args.chains):
        out = _chain_paths(args.out, args.chains, i) if args.out else None
        plot = None
        if out is not None:
            plot = (_chain_paths(args.plot_csv, args.chains, i) if args.plot_csv
                    else _sibling(out, ".grasps.csv"))
        jobs.append({"object": obj.to_spec(), "cloud": args.cloud, "rims": args.rims,
                     "radius": args.radius, "zeta": args.zeta, "align": not args.no_align,
                     "cfg": _replace(cfg, seed=cfg.seed + i), "mode": mode,
                     "init_path": init_path or None, "out": out, "plot_csv": plot})
    if args.chains == 1:
        reports = [_run_one(jobs[0])]
    else:
        workers = args.workers or min(args.chains, os.cpu_count() or 1)
        with ProcessPoolExecutor(max_workers=workers) as ex:
            reports = list(ex.map(_run_one, jobs))

    if len(reports) == 1:
        merged = reports[0]
    else:
        merged = {"chains": len(reports),
                  "feasible_count": sum(r["feasible_count"] for r in reports),
                  "feasible_count_dedup": sum(r["feasible_count_dedup"] for r in reports),
                  "acceptance_rate": float(np.mean([r["acceptance_rate"] for r in reports])),
                  "complete": all(r["complete"] for r in reports),
                  "runs": reports}
    print(json.dumps(merged, indent=2, default=_plain))
    return 0 if merged["complete"] else 1


# ---------------------------------------------------------------------------
# report

REPORT_COLUMNS = ["object", "sampler", "label", "burn_in", "init_mode", "feasible_count",
                  "feasible_count_dedup", "acceptance_rate", "file"]


def row_label(meta):
    """Table row label: ``RW MCMC`` or ``[burn-in,p|np]``."""
    if meta.get("sampler") == "rw":
        return "RW MCMC"
    prior = meta.get("init_mode") in ("chain", "subsample")
    return f"[{meta.get('params', {}).get('burn_in')},{'p' if prior else 'np'}]"


def report_rows(paths):
    rows = []
    for path in paths:
        hist = _load_history(path)
        meta = hist.metadata
        rows.append({
            "object": meta.get("object"),
            "sampler": meta.get("sampler"),
            "label": row_label(meta),
            "burn_in": meta.get("params", {}).get("burn_in"),
            "init_mode": meta.get("init_mode"),
            "feasible_count": hist.feasible_count(),
            "feasible_count_dedup": hist.feasible_count(dedup=True),
            "acceptance_rate": hist.acceptance_rate(),
            "file": str(path),
        })
    return rows


def format_rows(rows, fmt):
    if fmt == "json":
        return json.dumps(rows, indent=2)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("%.17g" % v if isinstance(v, float) else ("" if v is None else v))
                    for k, v in r.items()})
    return buf.getvalue()


def cmd_report(args):
    sys.stdout.write(format_rows(report_rows(args.histories), args.format)
                     + ("\n" if args.format == "json" else ""))
    return 0


# ---------------------------------------------------------------------------


def _sibling(path, suffix):
    p = Path(path)
    return p.with_name(p.stem + suffix)


def _plain(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    return str(o)


def _load_object(path):
    if not Path(path).is_file():
        raise UsageError(f"{path}: no such file")
    try:
        return load_object_spec(path)
    except GraspMCError as exc:
        raise UsageError(str(exc)) from exc


def _load_cloud(path):
    if not Path(path).is_file():
        raise UsageError(f"{path}: no such file")
    try:
        return load_cloud(path)
    except (GraspMCError, ValueError) as exc:
        raise UsageError(f"{path}: {exc}") from exc


def _load_history(path):
    if not Path(path).is_file():
        raise UsageError(f"{path}: no such file")
    try:
        return load_history(path)
    except GraspMCError as exc:
        if exc.code == "bad-history":
            raise UsageError(f"{exc} (this build reads version {FORMAT_VERSION})") from exc
        raise


COMMANDS = {"synth": cmd_synth, "rims": cmd_rims, "sample": cmd_sample, "report": cmd_report}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required: synth, rims, sample or report")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"graspmc: usage error: {exc}", file=sys.stderr)
        return 2
    except GraspMCError as exc:
        print(f"graspmc: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"graspmc: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

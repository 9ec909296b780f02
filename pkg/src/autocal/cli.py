"""Command line entry point: ``autocal run|sweep|metrics|list``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import AutocalError
from .harness import export, metrics, plotting
from .harness.config import load_config, packaged_scenarios
from .harness.runner import run, with_seed

log = logging.getLogger("autocal")


def _out_dir(cfg, arg) -> Path:
    return Path(arg) if arg else Path(cfg.output.dir) / cfg.name


def _write_run(cfg, hist, out: Path, figures: bool) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    export.export_csv(hist, out / "history.csv")
    if hist.trace is not None:
        export.export_trace_csv(hist.trace, out / "trace.csv")
    if hist.first_trace is not None:
        export.export_trace_csv(hist.first_trace, out / "first_trace.csv")
    summ = metrics.summary(hist.costs)
    summ["diverged"] = hist.diverged
    summ["accepted_updates"] = sum(1 for a in hist.accepted if a)
    summ["rejected_updates"] = sum(1 for a in hist.accepted if a is False)
    export.write_manifest(cfg, out / "manifest.yaml", {"summary": summ})
    if figures:
        Ts = float(cfg.plant.params.get("Ts", 0.0)) or None
        plotting.plot_cost(hist, out / "cost.png")
        plotting.plot_params(hist, out / "params.png")
        if hist.trace is not None:
            plotting.plot_trace(hist.trace, out / "trace.png", Ts or 1.0)
    return summ


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = with_seed(cfg, args.seed)
    hist = run(cfg)
    out = _out_dir(cfg, args.out)
    summ = _write_run(cfg, hist, out, cfg.output.figures and not args.no_figures)
    print(f"{cfg.name}: {summ['rows']} rows, first cost {summ.get('first', float('nan')):.6g}, "
          f"final cost {summ.get('final', float('nan')):.6g}, decay factor {summ['decay_factor']:.4g}")
    print(f"wrote {out}")
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    base = cfg.seed if args.base_seed is None else args.base_seed
    seeds = [base + i for i in range(args.seeds)]
    out = _out_dir(cfg, args.out)
    curves = []
    for s in seeds:
        c = with_seed(cfg, s)
        hist = run(c)
        _write_run(c, hist, out / f"seed_{s:04d}", figures=False)
        curves.append(hist.costs)
        log.info("seed %d done, final cost %.6g", s, hist.costs[-1])
    curves = np.stack(curves)
    med = np.nanmedian(curves, axis=0)
    q25, q75 = np.nanpercentile(curves, [25, 75], axis=0)
    with (out / "sweep.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "median_cost", "q25_cost", "q75_cost"])
        for i in range(med.size):
            w.writerow([i, *(export.FMT.format(v) for v in (med[i], q25[i], q75[i]))])
    summ = metrics.summary(med)
    export.write_manifest(cfg, out / "manifest.yaml",
                          {"seeds": seeds, "aggregate": f"median over {len(seeds)} seeds", "summary": summ})
    if cfg.output.figures and not args.no_figures:
        plotting.plot_sweep(curves, out / "sweep.png", label=f"median of {len(seeds)} seeds")
    print(f"{cfg.name}: {len(seeds)} seeds, median first {med[0]:.6g}, median final {med[-1]:.6g}, "
          f"decay factor of median {summ['decay_factor']:.4g}")
    print(f"wrote {out}")
    return 0


def cmd_metrics(args) -> int:
    data = export.read_history_csv(args.history)
    summ = metrics.summary(data["cost"])
    acc = [a for a in data["accepted"] if a is not None]
    print(f"rows            {len(data['cost'])}")
    for key in ("first", "final", "min", "max"):
        if key in summ:
            print(f"{key + ' cost':<16}{summ[key]:.6g}")
    print(f"decay factor    {summ['decay_factor']:.6g}")
    if acc:
        print(f"accepted        {sum(acc)}/{len(acc)}")
    return 0


def cmd_list(args) -> int:
    for name in packaged_scenarios():
        print(name)
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="autocal", description="Kalman-filter controller calibration")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one scenario")
    p.add_argument("config", help="YAML file or packaged scenario name")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a scenario over consecutive seeds")
    p.add_argument("config")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--base-seed", type=int)
    p.add_argument("--out")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("metrics", help="summarize a history CSV")
    p.add_argument("history")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("list", help="list packaged scenarios")
    p.set_defaults(func=cmd_list)

    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (AutocalError, OSError, ValueError) as exc:
        print(f"autocal: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command line entry point: ``qahsgpr {synth,fit,eigs,preset}``."""
from __future__ import annotations

import argparse
import logging
import sys

from .experiment import (
    GENERATORS,
    METHOD_CHOICES,
    PRESETS,
    DatasetSpec,
    ExperimentConfig,
    ExperimentError,
    GridSpec,
    export,
    load_config,
    preset,
    run_experiment,
    save_config,
    synthesize_dataset,
    with_overrides,
    write_csv,
    write_dataset,
    write_json,
)
from .hsgpr import build_expansion, reduced_svd
from .qpipeline import encode_feature_state, read_spectrum
from .qsim import MAX_QUBITS_ENV

log = logging.getLogger("qahsgpr")


def _add_dataset_flags(p):
    g = p.add_argument_group("dataset")
    g.add_argument("--generator", choices=sorted(GENERATORS))
    g.add_argument("--data", help="CSV file with x,y columns (overrides the generator)")
    g.add_argument("-N", "--n-points", type=int, dest="N")
    g.add_argument("--noise", type=float)
    g.add_argument("--data-seed", type=int)
    g.add_argument("--L", type=float, dest="L", help="domain half-width")


def _add_model_flags(p):
    g = p.add_argument_group("model")
    g.add_argument("--M", type=int, dest="M", help="number of basis functions")
    g.add_argument("--sigma-f", type=float)
    g.add_argument("--ell", type=float)
    g.add_argument("--sigma", type=float)
    g.add_argument("--rank", type=int, action="append", dest="ranks",
                   help="retained rank R (repeatable); default is the threshold rule")
    g.add_argument("--threshold", type=float)


def _add_quantum_flags(p):
    g = p.add_argument_group("quantum")
    g.add_argument("--tau", type=int, help="eigenvalue register width")
    g.add_argument("--delta-margin", type=float)
    g.add_argument("--delta-R", type=float, dest="delta_R")
    g.add_argument("--shots", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--mode", choices=["analytic", "shots"])
    g.add_argument("--allow-large-memory", action="store_true", default=None,
                   help="permit statevectors above 2^22 amplitudes")
    g.add_argument("--workers", type=int)


def _add_run_flags(p):
    p.add_argument("--grid", type=float, nargs=3, metavar=("START", "END", "COUNT"))
    p.add_argument("--methods", nargs="+", choices=METHOD_CHOICES)
    p.add_argument("-o", "--out", help="output path (stdout CSV when omitted)")
    p.add_argument("--format", choices=["csv", "json"], default=None,
                   help="output format; inferred from --out suffix, else csv")
    p.add_argument("--dump-config", metavar="PATH", help="write the resolved config as JSON and exit")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qahsgpr", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    ap.epilog = f"Set {MAX_QUBITS_ENV} to change the simulator qubit ceiling."
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset as CSV")
    _add_dataset_flags(p)
    p.add_argument("-o", "--out", required=True)

    for name, helptext in (("fit", "run estimators and export results"),
                           ("eigs", "compare classical and quantum eigenvalue readouts")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", help="JSON experiment config")
        _add_dataset_flags(p)
        _add_model_flags(p)
        _add_quantum_flags(p)
        if name == "fit":
            _add_run_flags(p)

    p = sub.add_parser("preset", help="run a bundled experiment")
    p.add_argument("name", choices=sorted(PRESETS))
    _add_quantum_flags(p)
    _add_run_flags(p)
    return ap


def _resolve(args) -> ExperimentConfig:
    if getattr(args, "name", None):
        cfg = preset(args.name)
    elif getattr(args, "config", None):
        cfg = load_config(args.config)
    else:
        cfg = ExperimentConfig()

    ds = cfg.dataset
    ds_kw = {"generator": getattr(args, "generator", None), "N": getattr(args, "N", None),
             "noise": getattr(args, "noise", None), "seed": getattr(args, "data_seed", None),
             "path": getattr(args, "data", None)}
    ds = DatasetSpec(**{**vars(ds), **{k: v for k, v in ds_kw.items() if v is not None}})

    kw = {k: getattr(args, k, None) for k in
          ("L", "M", "sigma_f", "ell", "sigma", "ranks", "threshold", "workers", "allow_large_memory",
           "tau", "delta_margin", "delta_R", "shots", "seed", "mode", "methods")}
    cfg = with_overrides(cfg, dataset=ds, **kw)
    grid = getattr(args, "grid", None)
    if grid is not None:
        start, end, count = grid
        if count != int(count) or count < 1:
            raise ExperimentError("grid COUNT must be a positive integer")
        cfg = with_overrides(cfg, grid=GridSpec(start, end, int(count)))
    return cfg


def _emit(table, args) -> None:
    fmt = args.format or ("json" if args.out and args.out.endswith(".json") else "csv")
    if args.out:
        export(table, fmt, args.out)
        log.info("wrote %d rows to %s", len(table.rows), args.out)
        return
    (write_json if fmt == "json" else write_csv)(table, sys.stdout)


def cmd_synth(args) -> int:
    cfg = _resolve(args)
    ds = synthesize_dataset(cfg.dataset, cfg.L)
    write_dataset(ds, args.out)
    log.info("wrote %d points to %s", ds.N, args.out)
    return 0


def cmd_fit(args) -> int:
    cfg = _resolve(args)
    if args.dump_config:
        save_config(cfg, args.dump_config)
        return 0
    _emit(run_experiment(cfg), args)
    return 0


def cmd_eigs(args) -> int:
    cfg = _resolve(args)
    cfg.validate()
    ds = synthesize_dataset(cfg.dataset, cfg.L)
    be = build_expansion(ds, cfg.domain(), cfg.hyperparams())
    svd = reduced_svd(be, R=min(be.X.shape))
    classical = svd.normalized_sq
    qcfg = cfg.quantum.qpca().resolved(float(classical[0]))
    _, readout = read_spectrum(encode_feature_state(be.X), qcfg)
    print(f"# tau={qcfg.tau} delta_R={qcfg.delta_R:.6g} bin width={qcfg.delta_R / qcfg.K:.3g}")
    print(f"{'r':>3} {'classical':>12} {'register':>9} {'quantum':>12} {'weight':>10} {'mult':>4}")
    peaks = sorted(readout.peaks, key=lambda p: -p.estimate)
    r = 0
    for p in peaks:
        for _ in range(p.multiplicity):
            c = f"{classical[r]:12.6g}" if r < classical.size else f"{'':>12}"
            print(f"{r + 1:>3} {c} {p.register_value:>9d} {p.estimate:12.6g} {p.weight:10.4g} {p.multiplicity:>4d}")
            r += 1
    for rr in range(r, classical.size):
        flag = " (below readout floor)" if classical[rr] > 0 else ""
        print(f"{rr + 1:>3} {classical[rr]:12.6g} {'-':>9} {'-':>12} {'-':>10} {'-':>4}{flag}")
    return 0


def cmd_preset(args) -> int:
    return cmd_fit(args)


COMMANDS = {"synth": cmd_synth, "fit": cmd_fit, "eigs": cmd_eigs, "preset": cmd_preset}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ExperimentError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())

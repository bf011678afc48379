"""Command-line entry point: ``fit``, ``run``, ``sweep`` and ``trace convert``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import CascadeQoeError, ConfigError
from .experiment import SWEEP_PARAMS, fit_models, load_config, load_fit_config, run_experiment, sweep
from .traces import BandwidthTrace, save_trace

log = logging.getLogger("cascade_qoe")

MAHIMAHI_PACKET_BYTES = 1500


def convert_mahimahi(lines, bin_s=1.0):
    """Mahimahi delivery-opportunity timestamps (ms) to per-bin capacity in kbps.

    Each line grants one 1500-byte packet at that millisecond.
    """
    stamps = []
    for no, raw in enumerate(lines, start=1):
        s = raw.strip()
        if not s:
            continue
        try:
            stamps.append(int(s))
        except ValueError:
            raise ConfigError(f"line {no}", f"not an integer timestamp: {s!r}") from None
    if not stamps:
        raise ConfigError("input", "no timestamps")
    ms = np.asarray(stamps, dtype=float)
    n_bins = int(np.floor(ms.max() / 1000.0 / bin_s)) + 1
    counts = np.bincount((ms / 1000.0 / bin_s).astype(int), minlength=n_bins)
    kbps = counts * MAHIMAHI_PACKET_BYTES * 8 / 1000.0 / bin_s
    # an idle bin still has to be a valid positive capacity
    kbps = np.maximum(kbps, 1e-3)
    return BandwidthTrace(np.arange(n_bins) * bin_s, kbps)


_RATE_UNITS = {"bps": 1e-3, "kbps": 1.0, "mbps": 1e3}


def convert_csv(lines, time_col=0, rate_col=1, rate_unit="kbps", delimiter=","):
    """Delimited ``time, rate`` rows (an optional non-numeric header is skipped)."""
    times, rates = [], []
    for no, raw in enumerate(lines, start=1):
        s = raw.strip()
        if not s or s.startswith("#"):
            continue
        parts = [p.strip() for p in s.split(delimiter)]
        try:
            t, r = float(parts[time_col]), float(parts[rate_col])
        except (ValueError, IndexError):
            if not times:
                continue  # header
            raise ConfigError(f"line {no}", f"cannot parse {s!r}") from None
        times.append(t)
        rates.append(r * _RATE_UNITS[rate_unit])
    if not times:
        raise ConfigError("input", "no data rows")
    t = np.asarray(times)
    return BandwidthTrace(t - t[0], np.maximum(np.asarray(rates), 1e-3))


def _cmd_fit(args):
    cfg = load_fit_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    report = fit_models(cfg, args.out)
    for name, r in report.items():
        print(f"{name}: held-out accuracy {r['accuracy']:.3f} ({r['train_rows']} train / {r['test_rows']} test rows)")


def _load_run_config(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _cmd_run(args):
    cfg = _load_run_config(args)
    res = run_experiment(cfg, args.out, workers=args.workers)
    print(res.summary.to_csv(), end="")


def _cmd_sweep(args):
    cfg = _load_run_config(args)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    rows, _ = sweep(cfg, args.param, values, args.out, workers=args.workers)
    for r in rows:
        print(", ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in r.items()))


def _cmd_trace_convert(args):
    path = Path(args.input)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError("--input", f"cannot read {path}: {exc}") from None
    if args.format == "mahimahi":
        trace = convert_mahimahi(lines, args.bin_s)
    else:
        trace = convert_csv(lines, args.time_col, args.rate_col, args.rate_unit, args.delimiter)
    save_trace(trace.with_name(path.stem), args.output)
    print(f"wrote {len(trace)} samples to {args.output}")


def build_parser():
    p = argparse.ArgumentParser(prog="cascade-qoe", description="Network-assisted multiplayer video QoE experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit bitrate surrogates for client ABRs")
    f.add_argument("--config", required=True)
    f.add_argument("--out", help="model output directory (overrides the config)")
    f.add_argument("--seed", type=int)
    f.set_defaults(func=_cmd_fit)

    for name, func, helptext in (("run", _cmd_run, "run one experiment"), ("sweep", _cmd_sweep, "sweep gamma or t_p")):
        r = sub.add_parser(name, help=helptext)
        r.add_argument("--config", required=True)
        r.add_argument("--out", help="output directory (overrides the config)")
        r.add_argument("--seed", type=int)
        r.add_argument("--workers", type=int, default=1)
        if name == "sweep":
            r.add_argument("--param", required=True, choices=SWEEP_PARAMS)
            r.add_argument("--values", required=True, help="comma-separated values")
        r.set_defaults(func=func)

    t = sub.add_parser("trace", help="trace utilities")
    tsub = t.add_subparsers(dest="trace_command", required=True)
    c = tsub.add_parser("convert", help="convert a foreign trace to the two-column format")
    c.add_argument("--format", required=True, choices=("mahimahi", "csv"))
    c.add_argument("--input", required=True)
    c.add_argument("--output", required=True)
    c.add_argument("--bin-s", type=float, default=1.0, help="mahimahi aggregation bin")
    c.add_argument("--time-col", type=int, default=0)
    c.add_argument("--rate-col", type=int, default=1)
    c.add_argument("--rate-unit", choices=tuple(_RATE_UNITS), default="kbps")
    c.add_argument("--delimiter", default=",")
    c.set_defaults(func=_cmd_trace_convert)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    if getattr(args, "workers", 1) < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return 2
    if getattr(args, "seed", None) is not None and not (0 <= args.seed < 2**64):
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 2
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (CascadeQoeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``scmqkd <command>``.

Exit codes: 0 ok, 1 oracle failure, 2 config error, 3 transport or
protocol failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

from . import __version__, discussion, experiments, physics, sifting
from .core import ConfigError, config_hash, load_config, to_dict, validate_config
from .simulator import SessionSpec

log = logging.getLogger("scmqkd")

EXIT_OK, EXIT_ORACLE, EXIT_CONFIG, EXIT_TRANSPORT = 0, 1, 2, 3

CSV_SCHEMAS = {
    "rates.csv": ("rates/1", experiments.RATES_COLUMNS),
    "summary.csv": ("summary/1", experiments.SUMMARY_COLUMNS),
    "analytic.csv": ("analytic/1", experiments.ANALYTIC_COLUMNS),
    "compare.csv": ("compare/1", experiments.COMPARE_COLUMNS),
    "session_log.csv": ("session-log/1", None),
}


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(float(v)) if math.isfinite(v) else ("nan" if math.isnan(v) else ("inf" if v > 0 else "-inf"))
    return str(v)


def write_csv(path_or_stream, columns, rows) -> None:
    if isinstance(path_or_stream, (str, Path)):
        with open(path_or_stream, "w", newline="") as fh:
            write_csv(fh, columns, rows)
        return
    writer = csv.writer(path_or_stream, lineterminator="\r\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in columns])


def write_manifest(out_dir: Path, command: str, args, config, outputs, **extra) -> None:
    manifest = {
        "tool": "scmqkd",
        "tool_version": __version__,
        "command": command,
        "config_path": str(args.config),
        "config_hash": config_hash(config),
        "config": to_dict(config),
        "seed": getattr(args, "seed", None),
        "n_pulses": getattr(args, "pulses", None),
        "outputs": sorted(outputs),
        "csv_schemas": {name: CSV_SCHEMAS[name][0] for name in sorted(outputs) if name in CSV_SCHEMAS},
        **extra,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _load(path):
    return validate_config(load_config(path))


def _write_result(out_dir: Path, result, n_pulses, seed, cfg, rate_rows, side="both") -> list:
    out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(out_dir / "rates.csv", experiments.RATES_COLUMNS, rate_rows)
    write_csv(out_dir / "summary.csv", experiments.SUMMARY_COLUMNS, [experiments.summary_row(result, n_pulses)])
    keys = sifting.export_keys(result, out_dir / "keys", seed, config_hash(cfg), side)
    return ["rates.csv", "summary.csv"] + [f"keys/{k}" for k in keys]


def cmd_simulate(args) -> int:
    cfg = _load(args.config)
    out = Path(args.out)
    log_, result = experiments.simulate(cfg, args.seed, args.pulses, args.raw_key_cap)
    outputs = _write_result(out, result, args.pulses, args.seed, cfg, experiments.rates_rows(log_, result))
    if args.write_log:
        log_.write_csv(out / "session_log.csv")
        outputs.append("session_log.csv")
    write_manifest(out, "simulate", args, cfg, outputs, raw_key_cap=args.raw_key_cap)
    for row in experiments.rates_rows(log_, result):
        print(f"channel ({row['wavelength_idx']},{row['subcarrier_idx']}): "
              f"sifted {row['sifted_rate_bps']:.1f} b/s, QBER {row['qber_measured']:.4f}")
    print(f"aggregated {result.aggregated_rate_bps:.1f} b/s, gain {result.gain_db:.2f} dB, "
          f"secret {result.secret_rate_bps:.1f} b/s")
    return EXIT_OK


def cmd_analytic(args) -> int:
    cfg = _load(args.config)
    rows = experiments.analytic_rows(cfg)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "analytic.csv", experiments.ANALYTIC_COLUMNS, rows)
        write_manifest(out, "analytic", args, cfg, ["analytic.csv"])
    else:
        write_csv(sys.stdout, experiments.ANALYTIC_COLUMNS, rows)
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _load(args.config)
    analytic_cfg = cfg
    for text in args.analytic_set or []:
        name, values = experiments.parse_assignment(text)
        analytic_cfg = experiments.set_field(analytic_cfg, name, values[0])
    log_, result = experiments.simulate(cfg, args.seed, args.pulses)
    rows = experiments.compare_rows(log_, result, analytic_cfg)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "compare.csv", experiments.COMPARE_COLUMNS, rows)
        write_manifest(out, "compare", args, cfg, ["compare.csv"], analytic_set=args.analytic_set or [])
    else:
        write_csv(sys.stdout, experiments.COMPARE_COLUMNS, rows)
    failed = [r for r in rows if not r["pass"]]
    for r in failed:
        print(f"FAIL channel ({r['wavelength_idx']},{r['subcarrier_idx']}) {r['metric']}: "
              f"z = {r['z_score']:.2f}", file=sys.stderr)
    return EXIT_ORACLE if failed else EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args.config)
    sweeps = [experiments.parse_assignment(s) for s in args.sweep]
    rows = experiments.sweep_rows(cfg, sweeps, args.mode, args.seed, args.pulses)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    columns = experiments.sweep_columns(sweeps)
    write_csv(out / "sweep.csv", columns, rows)
    CSV_SCHEMAS.setdefault("sweep.csv", ("sweep/1", columns))
    write_manifest(out, "sweep", args, cfg, ["sweep.csv"], sweep=args.sweep, mode=args.mode)
    return EXIT_OK


def cmd_protocol(args) -> int:
    cfg = _load(args.config)
    spec = SessionSpec(cfg, args.pulses, args.seed)
    try:
        if args.role == "alice":
            transport = discussion.listen(args.endpoint, args.timeout)
        else:
            transport = discussion.connect(args.endpoint, args.connect_timeout)
    except OSError as exc:
        raise discussion.TransportError(str(exc)) from exc
    try:
        result = discussion.run_protocol(args.role, transport, spec, disclosure=args.disclosure,
                                         timeout=args.timeout)
    finally:
        transport.close()
    out = Path(args.out)
    rows = []
    for w, s in result.channels:
        keys = result.alice_keys or result.bob_keys
        rate = result.sifted_rate_bps[(w, s)]
        est = physics.rate_estimate(cfg, w, s)
        rows.append({
            "wavelength_idx": w, "subcarrier_idx": s, "frequency_ghz": cfg.subcarrier(w, s).frequency_ghz,
            "n_pulses": args.pulses, "sifted_bits": len(keys[(w, s)]),
            "errors": result.error_counts[(w, s)], "qber_measured": result.qber_measured[(w, s)],
            "sifted_rate_bps": rate, "secret_rate_bps": cfg.secret_fraction * rate,
            "qber_analytic": est.qber, "sifted_rate_analytic_bps": est.sifted_rate_bps,
        })
    outputs = _write_result(out, result, args.pulses, args.seed, cfg, rows, side=args.role)
    write_manifest(out, "protocol", args, cfg, outputs, role=args.role, disclosure=args.disclosure)
    print(f"{args.role}: session Done, aggregated {result.aggregated_rate_bps:.1f} b/s")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="scmqkd", description="SCM / WDM-SCM BB84 simulator")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True, pulses=True, out=True, out_required=True):
        sp.add_argument("--config", required=True, help="system config JSON")
        if seed:
            sp.add_argument("--seed", type=int, default=0)
        if pulses:
            sp.add_argument("--pulses", type=int, default=1_000_000)
        if out:
            sp.add_argument("--out", required=out_required, default=None, help="output directory")

    s = sub.add_parser("simulate", help="Monte-Carlo session, sifting and key export")
    common(s)
    s.add_argument("--raw-key-cap", type=int, default=None, help="keep only the first N sifted bits per channel")
    s.add_argument("--write-log", action="store_true", help="also write the per-slot session_log.csv")
    s.set_defaults(func=cmd_simulate)

    a = sub.add_parser("analytic", help="closed-form rates and QBER")
    common(a, seed=False, pulses=False, out_required=False)
    a.set_defaults(func=cmd_analytic)

    c = sub.add_parser("compare", help="Monte-Carlo vs closed form, |z| <= 3 or exit 1")
    common(c, out_required=False)
    c.add_argument("--analytic-set", action="append", metavar="FIELD=VALUE",
                   help="override a field on the closed-form side only")
    c.set_defaults(func=cmd_compare)

    w = sub.add_parser("sweep", help="grid over one or two config fields")
    common(w)
    w.add_argument("--sweep", action="append", required=True, metavar="FIELD=V1,V2,...")
    w.add_argument("--mode", choices=("mc", "analytic", "both"), default="analytic")
    w.set_defaults(func=cmd_sweep)

    r = sub.add_parser("protocol", help="one side of a two-process discussion session")
    common(r)
    r.add_argument("--role", choices=("alice", "bob"), required=True)
    r.add_argument("--endpoint", required=True, help="host:port (alice listens, bob connects)")
    r.add_argument("--disclosure", type=float, default=1.0, help="fraction of sifted bits disclosed")
    r.add_argument("--timeout", type=float, default=discussion.DEFAULT_TIMEOUT, help="seconds per phase")
    r.add_argument("--connect-timeout", type=float, default=5.0)
    r.set_defaults(func=cmd_protocol)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except discussion.ProtocolFailure as exc:
        print(f"Failed: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

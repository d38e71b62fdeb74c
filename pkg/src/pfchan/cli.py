"""Command line front end.

Subcommands: simulate, send, receive, sweep, calibrate, probe. Settings
resolve with CLI flags overriding the config file overriding built-in
defaults. Exit codes: 0 success, 1 usage or config error, 2 missing
capability or setup failure, 3 runtime abort.
"""
from __future__ import annotations

import argparse
import csv
import sys
import time

from .config import ChannelConfig
from .errors import ConfigError, RunAbort, SetupError
from .report import bits_from_hex, bits_from_string, random_payload
from .sim import EvictionBehavior, SimParams, render_trace, run_channel_sim
from .sweep import (
    CSV_HEADER,
    DEFAULT_GRIDS,
    CellResult,
    SweepSpec,
    calibrate_page_gap,
    emit_report,
    run_sweep,
    summary_table,
)

CHANNEL_KEYS = (
    "page_size",
    "region_size",
    "page_gap",
    "pair_offset",
    "base_page",
    "sync_period_ns",
    "guard_offset_ns",
    "payload_bits",
)
SIM_KEYS = (
    "cache_capacity",
    "disk_latency",
    "mem_latency",
    "switch_cost",
    "eviction_policy",
    "readahead",
    "tick_ns",
    "eviction_behavior",
)
_STRING_KEYS = ("eviction_policy", "eviction_behavior")


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on usage errors, which this tool reserves
    # for capability failures; route usage problems through ConfigError.
    def error(self, message):
        raise ConfigError(message)


def load_config_file(path: str) -> dict:
    values: dict = {}
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path!r}: {exc}") from exc
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in CHANNEL_KEYS and key not in SIM_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        if key in _STRING_KEYS:
            values[key] = value
        else:
            try:
                values[key] = int(value)
            except ValueError:
                raise ConfigError(
                    f"{path}:{lineno}: {key} expects an integer, got {value!r}"
                ) from None
    return values


def resolve_settings(args) -> tuple[ChannelConfig, SimParams]:
    merged: dict = {}
    if getattr(args, "config", None):
        merged.update(load_config_file(args.config))
    for key in CHANNEL_KEYS + SIM_KEYS:
        cli_value = getattr(args, key, None)
        if cli_value is not None:
            merged[key] = cli_value
    channel_kwargs = {k: v for k, v in merged.items() if k in CHANNEL_KEYS}
    sim_kwargs = {k: v for k, v in merged.items() if k in SIM_KEYS}
    if "eviction_behavior" in sim_kwargs and isinstance(
        sim_kwargs["eviction_behavior"], str
    ):
        try:
            sim_kwargs["eviction_behavior"] = EvictionBehavior(
                sim_kwargs["eviction_behavior"]
            )
        except ValueError:
            choices = ", ".join(b.value for b in EvictionBehavior)
            raise ConfigError(
                f"eviction_behavior must be one of {choices}, got "
                f"{sim_kwargs['eviction_behavior']!r}"
            ) from None
    return ChannelConfig(**channel_kwargs), SimParams(**sim_kwargs)


def _parse_epoch(text: str) -> int:
    """Absolute unix nanoseconds, or '+SECONDS' relative to now."""
    if text.startswith("+"):
        try:
            delta = float(text[1:])
        except ValueError:
            raise ConfigError(f"bad epoch offset {text!r}") from None
        return time.clock_gettime_ns(time.CLOCK_REALTIME) + int(delta * 1e9)
    try:
        return int(text)
    except ValueError:
        raise ConfigError(
            f"epoch must be integer nanoseconds or +SECONDS, got {text!r}"
        ) from None


def _parse_values(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None


def _payload_from_args(args, cfg: ChannelConfig) -> list[int]:
    if getattr(args, "payload_hex", None):
        return bits_from_hex(args.payload_hex)
    if getattr(args, "bits", None):
        return bits_from_string(args.bits)
    return random_payload(args.seed, cfg.payload_bits)


def _write_report_csv(path: str, cell: CellResult) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER.split(","))
        writer.writerow(cell.csv_row())


def _report_cell(variable: str, value: int, seed: int, cfg, report) -> CellResult:
    return CellResult(
        variable=variable,
        value=value,
        repetition=0,
        seed=seed,
        payload_bits=report.payload_bits,
        page_gap=cfg.page_gap,
        region_bytes=cfg.region_size,
        sync_period_ns=cfg.sync_period_ns,
        ber=report.ber,
        bandwidth_bps=report.bandwidth_bps,
        indeterminate_slots=report.indeterminate_slots,
    )


# -- subcommand bodies ------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg, params = resolve_settings(args)
    payload = _payload_from_args(args, cfg)
    trace = [] if args.trace else None
    report = run_channel_sim(cfg, params, payload, trace_out=trace)
    print(
        f"simulated {report.payload_bits} bits: ber={report.ber:.4f} "
        f"bandwidth={report.bandwidth_bps:.1f} bit/s "
        f"indeterminate={report.indeterminate_slots}"
    )
    if args.out:
        _write_report_csv(
            args.out,
            _report_cell("payload_bits", report.payload_bits, args.seed, cfg, report),
        )
        print(f"wrote {args.out}")
    if args.trace:
        with open(args.trace, "w") as fh:
            fh.write(render_trace(trace) + "\n")
        print(f"wrote {args.trace}")
    return 0


def cmd_send(args) -> int:
    from . import live

    cfg, _ = resolve_settings(args)
    payload = _payload_from_args(args, cfg)
    epoch = _parse_epoch(args.epoch)
    if args.create_region:
        live.create_backing_file(args.region_file, cfg.region_size)
    with live.open_region(args.region_file, cfg) as region:
        log = live.trojan_send(region, cfg, payload, epoch)
    overruns = sum(1 for rec in log if rec.overrun)
    unconfirmed = sum(1 for rec in log if rec.evict_confirmed is False)
    print(
        f"sent {len(log)} bits: {overruns} deadline overruns, "
        f"{unconfirmed} unconfirmed evictions"
    )
    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(
                [
                    "slot", "p1", "p2", "target", "deadline_ns", "start_ns",
                    "end_ns", "advice_ok", "evict_confirmed", "overrun",
                ]
            )
            for rec in log:
                writer.writerow(
                    [
                        rec.slot, rec.p1, rec.p2, rec.target, rec.deadline_ns,
                        rec.start_ns, rec.end_ns, int(rec.advice_ok),
                        "" if rec.evict_confirmed is None else int(rec.evict_confirmed),
                        int(rec.overrun),
                    ]
                )
        print(f"wrote {args.out}")
    return 0


def cmd_receive(args) -> int:
    from . import live

    cfg, _ = resolve_settings(args)
    if args.blind:
        expected = None
        n_bits = args.n_bits if args.n_bits is not None else cfg.payload_bits
    else:
        expected = _payload_from_args(args, cfg)
        n_bits = len(expected)
    epoch = _parse_epoch(args.epoch)
    with live.open_region(args.region_file, cfg) as region:
        report = live.spy_receive(
            region, cfg, n_bits, epoch, expected=expected, cpu=args.cpu
        )
    if expected is None:
        print(
            f"received {report.payload_bits} bits blind "
            f"(no ground truth, ber not meaningful); "
            f"indeterminate={report.indeterminate_slots}"
        )
    else:
        print(
            f"received {report.payload_bits} bits: ber={report.ber:.4f} "
            f"bandwidth={report.bandwidth_bps:.1f} bit/s "
            f"indeterminate={report.indeterminate_slots}"
        )
    if args.out:
        _write_report_csv(
            args.out,
            _report_cell("payload_bits", report.payload_bits, args.seed, cfg, report),
        )
        print(f"wrote {args.out}")
    return 0


def cmd_sweep(args) -> int:
    cfg, params = resolve_settings(args)
    values = _parse_values(args.values) if args.values else DEFAULT_GRIDS[args.variable]
    spec = SweepSpec(
        variable=args.variable,
        values=values,
        repetitions=args.repetitions,
        cfg=cfg,
        params=params,
        backend=args.backend,
        seed=args.seed,
        region_file=args.region_file,
    )
    result = run_sweep(spec)
    if args.out:
        print(emit_report(result, args.out))
        print(f"wrote {args.out}")
    else:
        print(summary_table(result))
    return 0


def cmd_calibrate(args) -> int:
    cfg, params = resolve_settings(args)
    values = _parse_values(args.values) if args.values else DEFAULT_GRIDS["page_gap"]
    result = calibrate_page_gap(
        cfg,
        params,
        values=values,
        repetitions=args.repetitions,
        backend=args.backend,
        seed=args.seed,
        region_file=args.region_file,
    )
    print(summary_table(result.sweep))
    print(f"best page_gap: {result.best_gap}")
    if args.out:
        emit_report(result.sweep, args.out)
        print(f"wrote {args.out}")
    return 0


def cmd_probe(args) -> int:
    from . import live

    if getattr(args, "config", None):
        resolve_settings(args)  # surface config problems before probing
    caps = live.probe_capabilities()
    text = caps.summary()
    print(text)
    if getattr(args, "out", None):
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
        print(f"wrote {args.out}")
    return 0 if caps.transmission_ready() else 2


# -- parser wiring ----------------------------------------------------------

def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument("--seed", type=int, default=0, help="payload/sweep seed")
    parser.add_argument("--out", help="write CSV output here")


def _add_overrides(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("config overrides")
    for key in CHANNEL_KEYS:
        group.add_argument(f"--{key.replace('_', '-')}", type=int, dest=key)
    for key in SIM_KEYS:
        flag = f"--{key.replace('_', '-')}"
        if key in _STRING_KEYS:
            group.add_argument(flag, dest=key)
        else:
            group.add_argument(flag, type=int, dest=key)


def _add_payload(parser: argparse.ArgumentParser) -> None:
    payload = parser.add_mutually_exclusive_group()
    payload.add_argument("--payload-hex", help="payload as hex digits")
    payload.add_argument("--bits", help="payload as a literal bit string")


def _add_live_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--region-file", required=True, help="shared backing file")
    parser.add_argument(
        "--epoch",
        required=True,
        help="shared epoch: unix nanoseconds, or +SECONDS from now",
    )
    _add_payload(parser)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="pfchan",
        description="Page-fault covert channel: simulator, live backend, harness.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="one transmission on the simulator")
    _add_common(p)
    _add_overrides(p)
    _add_payload(p)
    p.add_argument("--trace", help="write the access trace here")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("send", help="run the live sender (trojan)")
    _add_common(p)
    _add_overrides(p)
    _add_live_common(p)
    p.add_argument(
        "--create-region",
        action="store_true",
        help="write the backing file first if it is missing or too small",
    )
    p.set_defaults(func=cmd_send)

    p = sub.add_parser("receive", help="run the live receiver (spy)")
    _add_common(p)
    _add_overrides(p)
    _add_live_common(p)
    p.add_argument("--n-bits", type=int, help="bits to receive when --blind")
    p.add_argument("--cpu", type=int, help="core to pin the receiver to")
    p.add_argument(
        "--blind",
        action="store_true",
        help="receive without ground truth (ber will read 0)",
    )
    p.set_defaults(func=cmd_receive)

    p = sub.add_parser("sweep", help="sweep one variable over a grid")
    _add_common(p)
    _add_overrides(p)
    p.add_argument("--variable", required=True, choices=list(DEFAULT_GRIDS))
    p.add_argument("--values", help="comma-separated values (default: built-in grid)")
    p.add_argument("--repetitions", type=int, default=1)
    p.add_argument("--backend", choices=("sim", "live"), default="sim")
    p.add_argument("--region-file", help="backing file for live cells")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("calibrate", help="find the best page gap")
    _add_common(p)
    _add_overrides(p)
    p.add_argument("--values", help="gaps to try (default: 4..256)")
    p.add_argument("--repetitions", type=int, default=7)
    p.add_argument("--backend", choices=("sim", "live"), default="sim")
    p.add_argument("--region-file", help="backing file for live cells")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("probe", help="report live backend capabilities")
    _add_common(p)
    p.set_defaults(func=cmd_probe)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SetupError as exc:
        print(f"setup error: {exc}", file=sys.stderr)
        return 2
    except RunAbort as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

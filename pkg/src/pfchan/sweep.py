"""Experiment harness: parameter sweeps, calibration, report emission.

A sweep varies exactly one knob over a list of values, repeats each cell,
and records error rate and bandwidth per cell. Cell seeds are derived from
the sweep seed with a stable hash, so a sweep is reproducible byte for byte
from its spec alone. Simulator cells are self-contained; live cells run one
sender and one receiver process back to back, strictly sequentially.
"""
from __future__ import annotations

import csv
import hashlib
import io
import multiprocessing
import time
from dataclasses import dataclass, replace

from .config import ChannelConfig
from .errors import ConfigError, RunAbort, SetupError
from .report import TransmissionReport, random_payload
from .sim import SimParams, run_channel_sim

VARIABLES = ("payload_bits", "page_gap", "region_size", "bit_rate")
BACKENDS = ("sim", "live")

MIB = 1024 * 1024

# Default grids. bit_rate values are bits per second; a cell runs with
# sync_period_ns = 1e9 / rate at fixed payload size.
DEFAULT_GRIDS: dict[str, tuple[int, ...]] = {
    "payload_bits": (20, 50, 100, 200, 300, 400, 500),
    "page_gap": (4, 8, 16, 32, 64, 128, 256),
    "region_size": tuple(m * MIB for m in (1, 2, 4, 8, 16, 32)),
    "bit_rate": (10, 20, 50, 100, 200, 500, 1000),
}

CSV_HEADER = (
    "variable,value,repetition,seed,payload_bits,page_gap,region_bytes,"
    "sync_period_ns,ber,bandwidth_bps,indeterminate_slots"
)

CALIBRATION_GAPS = DEFAULT_GRIDS["page_gap"]
CALIBRATION_REPETITIONS = 7


@dataclass(frozen=True)
class SweepSpec:
    variable: str
    values: tuple[int, ...]
    repetitions: int
    cfg: ChannelConfig
    params: SimParams
    backend: str = "sim"
    seed: int = 0
    region_file: str | None = None  # live backend only
    live_lead_ns: int = 500_000_000

    def __post_init__(self) -> None:
        if self.variable not in VARIABLES:
            raise ConfigError(
                f"unknown sweep variable {self.variable!r}, expected one of {VARIABLES}"
            )
        if not self.values:
            raise ConfigError("sweep needs at least one value")
        if self.repetitions < 1:
            raise ConfigError(
                f"repetitions must be at least 1, got {self.repetitions}"
            )
        if self.backend not in BACKENDS:
            raise ConfigError(
                f"unknown backend {self.backend!r}, expected one of {BACKENDS}"
            )


@dataclass(frozen=True)
class CellResult:
    """One row of a sweep, mirroring the CSV schema."""

    variable: str
    value: int
    repetition: int
    seed: int
    payload_bits: int
    page_gap: int
    region_bytes: int
    sync_period_ns: int
    ber: float
    bandwidth_bps: float
    indeterminate_slots: int

    def csv_row(self) -> list:
        return [
            self.variable,
            self.value,
            self.repetition,
            self.seed,
            self.payload_bits,
            self.page_gap,
            self.region_bytes,
            self.sync_period_ns,
            repr(self.ber),
            repr(self.bandwidth_bps),
            self.indeterminate_slots,
        ]


@dataclass(frozen=True)
class SweepResult:
    spec: SweepSpec
    rows: tuple[CellResult, ...]

    def rows_for_value(self, value: int) -> list[CellResult]:
        return [row for row in self.rows if row.value == value]

    def aggregates(self) -> list[tuple[int, float, float]]:
        """(value, mean ber, mean bandwidth) in the order values were given."""
        out = []
        for value in self.spec.values:
            cells = self.rows_for_value(value)
            out.append(
                (
                    value,
                    sum(c.ber for c in cells) / len(cells),
                    sum(c.bandwidth_bps for c in cells) / len(cells),
                )
            )
        return out


@dataclass(frozen=True)
class CalibrationResult:
    sweep: SweepResult
    by_gap: tuple[tuple[int, float], ...]
    best_gap: int


def cell_seed(master_seed: int, variable: str, value: int, repetition: int) -> int:
    """Stable per-cell seed so any cell can be replayed in isolation."""
    key = f"{master_seed}:{variable}:{value}:{repetition}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "big")


def apply_variable(cfg: ChannelConfig, variable: str, value: int) -> ChannelConfig:
    """Rewrite one knob of the config. Dependent defaults (pair offset, guard)
    re-derive automatically because the raw fields keep their None."""
    if variable == "payload_bits":
        return replace(cfg, payload_bits=value)
    if variable == "page_gap":
        return replace(cfg, page_gap=value)
    if variable == "region_size":
        return replace(cfg, region_size=value)
    if variable == "bit_rate":
        if value <= 0:
            raise ConfigError(f"bit_rate must be positive, got {value}")
        return replace(cfg, sync_period_ns=max(1, 1_000_000_000 // value))
    raise ConfigError(f"unknown sweep variable {variable!r}")


def _run_sim_cell(
    cfg: ChannelConfig, params: SimParams, seed: int
) -> TransmissionReport:
    payload = random_payload(seed, cfg.payload_bits)
    return run_channel_sim(cfg, params, payload)


# -- live orchestration ----------------------------------------------------
# Entry points are module level so forked children can run them directly.

def _live_sender_entry(region_path, cfg, payload, epoch_ns):
    from . import live

    with live.open_region(region_path, cfg) as region:
        live.trojan_send(region, cfg, payload, epoch_ns)


def _live_receiver_entry(region_path, cfg, payload, epoch_ns, queue):
    from . import live

    with live.open_region(region_path, cfg) as region:
        report = live.spy_receive(
            region, cfg, len(payload), epoch_ns, expected=payload
        )
    queue.put(report.to_dict())


def _run_live_cell(
    cfg: ChannelConfig, seed: int, region_file: str, lead_ns: int
) -> TransmissionReport:
    from . import live

    payload = random_payload(seed, cfg.payload_bits)
    live.create_backing_file(region_file, cfg.region_size)
    ctx = multiprocessing.get_context("fork")
    queue = ctx.Queue()
    epoch = time.clock_gettime_ns(time.CLOCK_REALTIME) + lead_ns
    receiver = ctx.Process(
        target=_live_receiver_entry, args=(region_file, cfg, payload, epoch, queue)
    )
    sender = ctx.Process(
        target=_live_sender_entry, args=(region_file, cfg, payload, epoch)
    )
    receiver.start()
    sender.start()
    budget = (lead_ns + (len(payload) + 5) * cfg.sync_period_ns) / 1e9 + 30.0
    try:
        result = queue.get(timeout=budget)
    except Exception as exc:
        raise RunAbort(f"live cell produced no report within {budget:.0f}s") from exc
    finally:
        sender.join(timeout=10)
        receiver.join(timeout=10)
        for proc in (sender, receiver):
            if proc.is_alive():  # pragma: no cover - stuck child
                proc.terminate()
    return TransmissionReport.from_dict(result)


def run_sweep(spec: SweepSpec) -> SweepResult:
    """Execute every cell of the sweep and collect rows in grid order."""
    if spec.backend == "live":
        from . import live

        caps = live.probe_capabilities()
        if not caps.transmission_ready():
            raise SetupError(
                "live backend lacks required capabilities:\n" + caps.summary()
            )
        if not spec.region_file:
            raise ConfigError("live sweeps need a region_file")

    rows: list[CellResult] = []
    for value in spec.values:
        cfg = apply_variable(spec.cfg, spec.variable, value)
        for rep in range(spec.repetitions):
            seed = cell_seed(spec.seed, spec.variable, value, rep)
            if spec.backend == "sim":
                report = _run_sim_cell(cfg, spec.params, seed)
            else:
                report = _run_live_cell(
                    cfg, seed, spec.region_file, spec.live_lead_ns
                )
            rows.append(
                CellResult(
                    variable=spec.variable,
                    value=value,
                    repetition=rep,
                    seed=seed,
                    payload_bits=cfg.payload_bits,
                    page_gap=cfg.page_gap,
                    region_bytes=cfg.region_size,
                    sync_period_ns=cfg.sync_period_ns,
                    ber=report.ber,
                    bandwidth_bps=report.bandwidth_bps,
                    indeterminate_slots=report.indeterminate_slots,
                )
            )
    return SweepResult(spec=spec, rows=tuple(rows))


def calibrate_page_gap(
    cfg: ChannelConfig,
    params: SimParams,
    values: tuple[int, ...] = CALIBRATION_GAPS,
    repetitions: int = CALIBRATION_REPETITIONS,
    backend: str = "sim",
    seed: int = 0,
    region_file: str | None = None,
) -> CalibrationResult:
    """Sweep the page gap and pick the value with the lowest mean error rate.

    Ties break toward the larger gap: wider spacing costs nothing in the
    model and is more robust to prefetching on real hosts.
    """
    spec = SweepSpec(
        variable="page_gap",
        values=tuple(values),
        repetitions=repetitions,
        cfg=cfg,
        params=params,
        backend=backend,
        seed=seed,
        region_file=region_file,
    )
    result = run_sweep(spec)
    by_gap = tuple((value, ber) for value, ber, _ in result.aggregates())
    best_gap, _ = min(by_gap, key=lambda item: (item[1], -item[0]))
    return CalibrationResult(sweep=result, by_gap=by_gap, best_gap=best_gap)


def render_csv(result: SweepResult) -> str:
    """The sweep as CSV text, stable across reruns of the same spec."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER.split(","))
    for row in result.rows:
        writer.writerow(row.csv_row())
    return buf.getvalue()


def emit_report(result: SweepResult, path: str) -> str:
    """Write the CSV and return a human-readable summary table."""
    text = render_csv(result)
    with open(path, "w", newline="") as fh:
        fh.write(text)
    return summary_table(result)


def summary_table(result: SweepResult) -> str:
    spec = result.spec
    lines = [
        f"sweep over {spec.variable} ({spec.backend} backend, seed {spec.seed}, "
        f"{spec.repetitions} repetition(s) per value)",
        f"{spec.variable:>14} {'mean_ber':>10} {'mean_bw_bps':>14}",
    ]
    for value, ber, bw in result.aggregates():
        lines.append(f"{value:>14} {ber:>10.4f} {bw:>14.1f}")
    return "\n".join(lines)

"""Live Linux backend.

The sender and receiver share a read-only file mapped MAP_PRIVATE. Eviction
uses posix_fadvise(DONTNEED), which is advisory: the backend verifies what
it can at startup with small capability probes and, when the platform
offers a residency probe, reports per-slot confirmation as a diagnostic.
The channel itself never depends on the probe.

DONTNEED refuses to drop a page that any process still has in its page
tables, so both endpoints are careful about what they map. The sender
populates its target page with pread, which fills the page cache without
creating a mapping; the receiver does fault through its mapping (the fault
is the observable) but releases its page table entries with
madvise(DONTNEED) right after each probe. By the time the schedule wraps
back to a page, nobody maps it and the advice works again. Kernel
readahead is switched off on both paths (FADV_RANDOM, MADV_RANDOM) so a
touch of one page cannot drag its partner into the cache.

Receiver threads read one byte of their page through libc memcpy. That
detour matters: a ctypes call releases the interpreter lock for its
duration, so a thread stuck in a hard fault lets its sibling run, which is
the scheduling behavior the channel measures. A plain index into the mmap
object would hold the lock across the fault and serialize the threads.

Decoding uses only the order in which accessor threads bumped a shared
counter. No clock is read anywhere on the decode path.
"""
from __future__ import annotations

import ctypes
import itertools
import os
import threading
import time
from dataclasses import dataclass
from mmap import MAP_PRIVATE, PROT_READ, PROT_WRITE, mmap as _mmap

try:  # pragma: no cover - always present on Linux
    from mmap import MADV_DONTNEED, MADV_RANDOM
except ImportError:  # pragma: no cover
    MADV_DONTNEED = MADV_RANDOM = None

from .config import ChannelConfig
from .errors import ConfigError, RunAbort, SetupError
from .protocol import (
    ObservedOrder,
    PagePair,
    decode_from_order,
    encode_target,
    page_pair_for_slot,
    slot_deadline,
)
from .report import SlotRecord, TransmissionReport

try:
    _libc = ctypes.CDLL(None, use_errno=True)
    _libc.memcpy.argtypes = [ctypes.c_void_p, ctypes.c_void_p, ctypes.c_size_t]
    _libc.memcpy.restype = ctypes.c_void_p
except (OSError, AttributeError):  # pragma: no cover - non-POSIX fallback
    _libc = None

if _libc is not None and hasattr(_libc, "mincore"):
    _libc.mincore.argtypes = [
        ctypes.c_void_p,
        ctypes.c_size_t,
        ctypes.POINTER(ctypes.c_ubyte),
    ]
    _libc.mincore.restype = ctypes.c_int
    _HAVE_MINCORE = True
else:  # pragma: no cover
    _HAVE_MINCORE = False


@dataclass(frozen=True)
class BackendCapabilities:
    """What the host verifiably offers.

    A transmission refuses to start unless the first three flags are true.
    switch_on_hard_fault cannot be probed directly; it is assumed on Linux
    and the error rate is the judge.
    """

    shared_readonly_mapping: bool
    cache_advice_eviction: bool
    cpu_affinity: bool
    switch_on_hard_fault: bool
    notes: tuple[str, ...] = ()

    def transmission_ready(self) -> bool:
        return (
            self.shared_readonly_mapping
            and self.cache_advice_eviction
            and self.cpu_affinity
        )

    def summary(self) -> str:
        lines = [
            f"shared_readonly_mapping: {self.shared_readonly_mapping}",
            f"cache_advice_eviction:   {self.cache_advice_eviction}",
            f"cpu_affinity:            {self.cpu_affinity}",
            f"switch_on_hard_fault:    {self.switch_on_hard_fault} (assumed)",
        ]
        lines.extend(f"note: {n}" for n in self.notes)
        return "\n".join(lines)


@dataclass(frozen=True)
class SlotObservation:
    """Raw receiver observation for one slot: completion sequence numbers of
    the two accessor threads taken from a shared atomic counter."""

    slot: int
    order: ObservedOrder
    t1_seq: int
    t2_seq: int

    def __post_init__(self) -> None:
        if self.t1_seq == self.t2_seq:
            raise ConfigError(
                f"completion sequence numbers must differ, both are {self.t1_seq}"
            )


@dataclass(frozen=True)
class EvictOutcome:
    """Result of advising a pair out of the cache. confirmed is None when no
    residency probe is available."""

    pair: PagePair
    advice_ok: bool
    confirmed: bool | None
    error: str = ""


@dataclass(frozen=True)
class SenderSlotLog:
    slot: int
    p1: int
    p2: int
    target: int
    deadline_ns: int
    start_ns: int
    end_ns: int
    advice_ok: bool
    evict_confirmed: bool | None
    overrun: bool


class SharedRegion:
    """A file mapped copy-on-write and only ever read.

    The mapping is never written, so every page stays backed by the page
    cache and remains evictable through fadvise on the backing file.
    """

    def __init__(self, path: str, length: int, page_size: int) -> None:
        self.path = path
        self.length = length
        self.page_size = page_size
        self._fd = os.open(path, os.O_RDONLY)
        try:
            # PROT_WRITE is needed only so ctypes can take the buffer's
            # address; MAP_PRIVATE makes any write a private copy and no
            # code path writes.
            self._mm = _mmap(
                self._fd, length, flags=MAP_PRIVATE, prot=PROT_READ | PROT_WRITE
            )
        except (OSError, ValueError):
            os.close(self._fd)
            raise
        self._view = (ctypes.c_char * length).from_buffer(self._mm)
        self._addr = ctypes.addressof(self._view)
        # readahead off on both access paths, or touching one page of a
        # pair would pull its partner into the cache
        if hasattr(os, "posix_fadvise"):
            os.posix_fadvise(self._fd, 0, 0, os.POSIX_FADV_RANDOM)
            # flush whatever bulk writes or copies left behind: kernels
            # cache large writes as multi-page folios, and page-sized
            # eviction advice cannot split one. After this flush, pages
            # re-enter one at a time through the channel's own reads.
            os.posix_fadvise(self._fd, 0, 0, os.POSIX_FADV_DONTNEED)
        if MADV_RANDOM is not None:
            self._mm.madvise(MADV_RANDOM)

    @property
    def page_count(self) -> int:
        return self.length // self.page_size

    def read_byte(self, page: int) -> int:
        """Touch one byte of the page and return it. The read goes through
        libc so the interpreter lock is dropped while a fault is serviced."""
        if not (0 <= page < self.page_count):
            raise ConfigError(f"page {page} outside region of {self.page_count} pages")
        offset = page * self.page_size
        if _libc is None:  # pragma: no cover - non-POSIX fallback
            return self._mm[offset]
        buf = ctypes.c_ubyte(0)
        _libc.memcpy(ctypes.byref(buf), ctypes.c_void_p(self._addr + offset), 1)
        return buf.value

    def load_byte(self, page: int) -> int:
        """Pull one byte of the page through the file descriptor.

        This fills the page cache like read_byte does but leaves no page
        table entry behind, so the page remains evictable by advice. The
        sender encodes with this; a mapped touch would pin its target
        against eviction for the rest of the process lifetime.
        """
        if not (0 <= page < self.page_count):
            raise ConfigError(f"page {page} outside region of {self.page_count} pages")
        data = os.pread(self._fd, 1, page * self.page_size)
        if len(data) != 1:  # pragma: no cover - region size already checked
            raise RunAbort(f"short read at page {page}")
        return data[0]

    def drop_mapping(self, page: int) -> None:
        """Release this process's page table entry for the page, keeping the
        page cache untouched. The next mapped read faults again."""
        if not (0 <= page < self.page_count):
            raise ConfigError(f"page {page} outside region of {self.page_count} pages")
        if MADV_DONTNEED is not None:
            self._mm.madvise(MADV_DONTNEED, page * self.page_size, self.page_size)

    def advise_dontneed(self, page: int) -> None:
        if not hasattr(os, "posix_fadvise"):  # pragma: no cover
            raise SetupError("posix_fadvise is not available on this platform")
        os.posix_fadvise(
            self._fd,
            page * self.page_size,
            self.page_size,
            os.POSIX_FADV_DONTNEED,
        )

    def residency(self) -> list[bool] | None:
        """Page-cache residency of every region page, or None if the platform
        offers no probe. Diagnostics only."""
        if not _HAVE_MINCORE:  # pragma: no cover
            return None
        n = self.page_count
        vec = (ctypes.c_ubyte * n)()
        rc = _libc.mincore(
            ctypes.c_void_p(self._addr), ctypes.c_size_t(self.length), vec
        )
        if rc != 0:
            return None
        return [bool(b & 1) for b in vec]

    def close(self) -> None:
        if getattr(self, "_view", None) is not None:
            self._view = None
        if getattr(self, "_mm", None) is not None:
            self._mm.close()
            self._mm = None
        if getattr(self, "_fd", -1) >= 0:
            os.close(self._fd)
            self._fd = -1

    def __enter__(self) -> "SharedRegion":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def open_region(path: str, cfg: ChannelConfig) -> SharedRegion:
    """Map cfg.region_size bytes of an existing readable file.

    No page is touched here; first access happens inside a timed slot.
    """
    if not os.path.exists(path):
        raise SetupError(
            f"backing file {path!r} does not exist; create one at least "
            f"{cfg.region_size} bytes long with 'pfchan send --create-region' "
            f"or create_backing_file()"
        )
    if not os.access(path, os.R_OK):
        raise SetupError(f"backing file {path!r} is not readable by this process")
    size = os.path.getsize(path)
    if size < cfg.region_size:
        raise SetupError(
            f"backing file {path!r} holds {size} bytes but the region needs "
            f"{cfg.region_size}; grow the file or shrink region_size"
        )
    sys_page = os.sysconf("SC_PAGE_SIZE") if hasattr(os, "sysconf") else cfg.page_size
    if cfg.page_size != sys_page:
        raise SetupError(
            f"cfg.page_size ({cfg.page_size}) must equal the system page size "
            f"({sys_page}) for the live backend"
        )
    return SharedRegion(path, cfg.region_size, cfg.page_size)


def create_backing_file(path: str, size: int) -> str:
    """Write a patterned file of the given size for use as a shared region.

    Blocks are written explicitly so the file is not sparse; reads from
    holes would never hit the disk and the channel would starve.
    """
    if size <= 0:
        raise ConfigError(f"size must be positive, got {size}")
    if os.path.exists(path) and os.path.getsize(path) >= size:
        return path
    block = bytes(range(256)) * 4096  # 1 MiB
    with open(path, "wb") as fh:
        remaining = size
        while remaining > 0:
            fh.write(block[: min(len(block), remaining)])
            remaining -= len(block)
        fh.flush()
        os.fsync(fh.fileno())
        if hasattr(os, "posix_fadvise"):
            # drop the write-time cache state; bulk writes land as
            # multi-page folios that page-sized advice cannot evict
            os.posix_fadvise(fh.fileno(), 0, 0, os.POSIX_FADV_DONTNEED)
    return path


def evict_pair(region: SharedRegion, pair: PagePair) -> EvictOutcome:
    """Advise both pages of the pair out of the page cache.

    Advisory semantics: absent pages are a no-op. When a residency probe
    exists the outcome reports whether both pages actually left the cache;
    an unconfirmed eviction is a warning, not a failure.
    """
    try:
        region.advise_dontneed(pair.p1)
        region.advise_dontneed(pair.p2)
    except OSError as exc:
        return EvictOutcome(pair=pair, advice_ok=False, confirmed=None, error=str(exc))
    residency = region.residency()
    if residency is None:
        return EvictOutcome(pair=pair, advice_ok=True, confirmed=None)
    confirmed = not residency[pair.p1] and not residency[pair.p2]
    return EvictOutcome(pair=pair, advice_ok=True, confirmed=confirmed)


def probe_capabilities(scratch_dir: str | None = None) -> BackendCapabilities:
    """Run small experiments against a scratch file and report what worked.

    Never raises; a failed or unavailable probe turns its flag off and adds
    a note.
    """
    notes: list[str] = []
    mapping_ok = False
    advice_ok = False
    affinity_ok = False

    import tempfile

    pages = 16
    try:
        sys_page = os.sysconf("SC_PAGE_SIZE")
    except (AttributeError, ValueError, OSError):  # pragma: no cover
        sys_page = 4096
    try:
        with tempfile.TemporaryDirectory(dir=scratch_dir) as tmp:
            scratch = os.path.join(tmp, "probe.bin")
            create_backing_file(scratch, pages * sys_page)
            cfg = ChannelConfig(
                page_size=sys_page,
                region_size=pages * sys_page,
                page_gap=4,
                sync_period_ns=1_000_000,
            )
            try:
                with open_region(scratch, cfg) as region:
                    region.read_byte(0)
                    region.drop_mapping(0)
                    mapping_ok = True
                    try:
                        # mirror the sender: cache-populate without mapping,
                        # since advice cannot drop a page anyone still maps
                        region.load_byte(2)
                        region.load_byte(3)
                        region.advise_dontneed(2)
                        region.advise_dontneed(3)
                        residency = region.residency()
                        if residency is None:
                            advice_ok = True
                            notes.append(
                                "no residency probe; eviction advice accepted "
                                "but unverified"
                            )
                        elif residency[2] or residency[3]:
                            advice_ok = False
                            notes.append(
                                "eviction advice accepted but pages stayed resident"
                            )
                        else:
                            advice_ok = True
                    except OSError as exc:
                        notes.append(f"eviction advice failed: {exc}")
            except (SetupError, OSError, ValueError) as exc:
                notes.append(f"private mapping failed: {exc}")
    except OSError as exc:  # pragma: no cover - scratch dir failure
        notes.append(f"scratch file setup failed: {exc}")

    try:
        original = os.sched_getaffinity(0)
        os.sched_setaffinity(0, {min(original)})
        os.sched_setaffinity(0, original)
        affinity_ok = True
    except (AttributeError, OSError) as exc:
        notes.append(f"cpu affinity control failed: {exc}")

    assumed_switch = os.name == "posix"
    return BackendCapabilities(
        shared_readonly_mapping=mapping_ok,
        cache_advice_eviction=advice_ok,
        cpu_affinity=affinity_ok,
        switch_on_hard_fault=assumed_switch,
        notes=tuple(notes),
    )


def _require_ready(capabilities: BackendCapabilities | None) -> BackendCapabilities:
    caps = capabilities if capabilities is not None else probe_capabilities()
    if not caps.transmission_ready():
        raise SetupError(
            "live backend lacks required capabilities:\n" + caps.summary()
        )
    return caps


def _now_ns() -> int:
    return time.clock_gettime_ns(time.CLOCK_REALTIME)


_SPIN_NS = 1_000_000


def _wait_until_ns(deadline_ns: int) -> None:
    """Sleep coarsely, then spin the last stretch for ms-scale precision."""
    while True:
        delta = deadline_ns - _now_ns()
        if delta <= 0:
            return
        if delta > _SPIN_NS:
            time.sleep((delta - _SPIN_NS) / 1e9)


def trojan_send(
    region: SharedRegion,
    cfg: ChannelConfig,
    payload: list[int],
    epoch_ns: int,
    capabilities: BackendCapabilities | None = None,
) -> list[SenderSlotLog]:
    """Transmit the payload: per slot, evict the pair then touch the encode
    target at the sender deadline.

    The sender is deliberately not pinned; only the receiver's thread pair
    needs to share a core. A missed deadline is logged and the slot still
    runs, since skipping would desynchronize every later slot. A failed
    eviction advice call abandons the slot's touch (the pair state is
    unknown) and the transmission moves on.
    """
    _require_ready(capabilities)
    log: list[SenderSlotLog] = []
    for k, bit in enumerate(payload):
        pair = page_pair_for_slot(cfg, k)
        target = encode_target(bit, pair)
        deadline = slot_deadline(cfg, epoch_ns, k, "sender")
        arrived = _now_ns()
        _wait_until_ns(deadline)
        start = _now_ns()
        outcome = evict_pair(region, pair)
        if outcome.advice_ok:
            # pread, not a mapped touch: a page table entry would pin the
            # target against the next wrap's eviction advice
            region.load_byte(target)
        log.append(
            SenderSlotLog(
                slot=k,
                p1=pair.p1,
                p2=pair.p2,
                target=target,
                deadline_ns=deadline,
                start_ns=start,
                end_ns=_now_ns(),
                advice_ok=outcome.advice_ok,
                evict_confirmed=outcome.confirmed,
                overrun=arrived > deadline,
            )
        )
    return log


def _probe_pair(region: SharedRegion, pair: PagePair) -> SlotObservation:
    """Read both pages from two fresh threads and observe completion order.

    Each thread touches its page and then takes the next value from a shared
    counter. The later sequence number marks the thread that finished last,
    which is the one whose page came from disk. Nothing here reads a clock.
    """
    counter = itertools.count(1)
    seqs: dict[str, int] = {}

    def accessor(name: str, page: int) -> None:
        region.read_byte(page)
        seqs[name] = next(counter)

    t1 = threading.Thread(target=accessor, args=("t1", pair.p1), daemon=True)
    t2 = threading.Thread(target=accessor, args=("t2", pair.p2), daemon=True)
    t1.start()
    t2.start()
    t1.join()
    t2.join()
    if "t1" not in seqs or "t2" not in seqs:
        raise RunAbort(f"accessor thread died in slot {pair.slot}")
    order = (
        ObservedOrder.T1_LAST if seqs["t1"] > seqs["t2"] else ObservedOrder.T2_LAST
    )
    return SlotObservation(
        slot=pair.slot, order=order, t1_seq=seqs["t1"], t2_seq=seqs["t2"]
    )


def spy_receive(
    region: SharedRegion,
    cfg: ChannelConfig,
    n_bits: int,
    epoch_ns: int,
    expected: list[int] | None = None,
    cpu: int | None = None,
    capabilities: BackendCapabilities | None = None,
) -> TransmissionReport:
    """Receive n_bits, probing each slot at its guard deadline.

    The whole process is pinned to a single core before the first slot so
    the two accessor threads contend for it; failure to pin is a startup
    failure. When the expected payload is known the report carries a real
    error rate, otherwise it is built blind.
    """
    _require_ready(capabilities)
    if expected is not None and len(expected) != n_bits:
        raise ConfigError(
            f"expected payload has {len(expected)} bits but n_bits is {n_bits}"
        )
    if n_bits == 0:
        return TransmissionReport(
            sent=[], received=[], per_slot=[], elapsed_ns=0, ber=0.0, bandwidth_bps=0.0
        )

    try:
        original_affinity = os.sched_getaffinity(0)
        target_cpu = cpu if cpu is not None else min(original_affinity)
        os.sched_setaffinity(0, {target_cpu})
    except (AttributeError, OSError) as exc:
        raise SetupError(f"cannot pin receiver to one core: {exc}") from exc

    slots: list[SlotRecord] = []
    try:
        for k in range(n_bits):
            pair = page_pair_for_slot(cfg, k)
            _wait_until_ns(slot_deadline(cfg, epoch_ns, k, "receiver"))
            obs = _probe_pair(region, pair)
            # release our page table entries so the pair stays evictable
            # when the schedule wraps back to it
            region.drop_mapping(pair.p1)
            region.drop_mapping(pair.p2)
            slots.append(
                SlotRecord(
                    slot=k,
                    pair=pair,
                    order=obs.order,
                    decoded=decode_from_order(obs.order),
                )
            )
        end_ns = _now_ns()
    finally:
        try:
            os.sched_setaffinity(0, original_affinity)
        except OSError:  # pragma: no cover
            pass

    elapsed = max(1, end_ns - epoch_ns)
    if expected is not None:
        return TransmissionReport.build(expected, slots, elapsed)
    return TransmissionReport.build_blind(slots, elapsed)

"""Deterministic discrete-event simulation kernel.

Single-threaded: one nanosecond clock, one priority queue, agents driven
purely by delivered events. All randomness flows through named streams
derived from the kernel seed, so adding an agent (or a new kind of draw)
never perturbs the draws seen by existing streams.
"""

from __future__ import annotations

import hashlib
import heapq
import zlib
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np

NS_PER_SEC = 1_000_000_000
NS_PER_MS = 1_000_000
NS_PER_US = 1_000


class CausalityError(RuntimeError):
    """An event was scheduled before the current simulation clock."""


@dataclass(frozen=True)
class LatencyModel:
    """Message delay: fixed base, uniform jitter, per-agent think time.

    Sampled latency is base_ns + U(-jitter_ns, +jitter_ns) + computation_ns,
    floored at zero.
    """

    base_ns: int = 1_000
    jitter_ns: int = 500
    computation_ns: int = 10_000

    def __post_init__(self) -> None:
        if self.jitter_ns < 0:
            raise ValueError("jitter_ns must be non-negative")

    def sample(self, rng: np.random.Generator) -> int:
        jitter = 0
        if self.jitter_ns > 0:
            jitter = int(rng.integers(-self.jitter_ns, self.jitter_ns + 1))
        return max(0, self.base_ns + jitter + self.computation_ns)


@dataclass(frozen=True)
class RunStats:
    events_processed: int
    final_clock: int


def stream_seed(master_seed: int, name: str) -> np.random.SeedSequence:
    """Stable, name-keyed seed derivation (independent of creation order)."""
    return np.random.SeedSequence(entropy=(master_seed, zlib.crc32(name.encode("utf-8"))))


class Agent:
    """Base class for kernel-driven agents.

    Subclasses receive messages via on_message() and may schedule wakeups
    or send messages to other agents. ``kernel`` and ``agent_id`` are
    assigned at registration.
    """

    def __init__(self, name: str, latency: Optional[LatencyModel] = None):
        self.name = name
        self.latency = latency or LatencyModel()
        self.kernel: Optional[Kernel] = None
        self.agent_id: int = -1

    def start(self) -> None:
        """Called once after registration, before the run begins."""

    def on_message(self, now: int, payload: Any) -> None:
        raise NotImplementedError

    def stream(self, suffix: str) -> np.random.Generator:
        assert self.kernel is not None
        return self.kernel.stream(f"{self.name}/{suffix}")

    def wakeup(self, at: int, payload: Any) -> None:
        assert self.kernel is not None
        self.kernel.schedule(at, self.agent_id, payload)

    def send(self, to: int, payload: Any) -> int:
        """Send one message; delivery delayed by a sampled latency."""
        assert self.kernel is not None
        delay = self.latency.sample(self.stream("latency"))
        deliver_at = self.kernel.now + delay
        self.kernel.schedule(deliver_at, to, payload)
        return deliver_at

    def send_batch(self, to: int, payloads: list) -> int:
        """Send several messages that travel together.

        One latency draw covers the whole batch and insertion order is kept,
        so e.g. cancels sent before a replacement order are always processed
        first at the destination.
        """
        assert self.kernel is not None
        delay = self.latency.sample(self.stream("latency"))
        deliver_at = self.kernel.now + delay
        for payload in payloads:
            self.kernel.schedule(deliver_at, to, payload)
        return deliver_at


class Kernel:
    """Priority-queue event kernel with deterministic tie-breaking.

    Events pop in (deliver_at, seq) order where seq is the insertion
    counter, so simultaneous events are processed in scheduling order.
    """

    def __init__(self, seed: int, start_ns: int = 0, record_trace: bool = False):
        self.seed = seed
        self.now = start_ns
        self.agents: list[Agent] = []
        self._heap: list[tuple[int, int, int, Any]] = []
        self._seq = 0
        self._streams: dict[str, np.random.Generator] = {}
        self._trace: Optional[list[tuple]] = [] if record_trace else None

    def stream(self, name: str) -> np.random.Generator:
        gen = self._streams.get(name)
        if gen is None:
            gen = np.random.default_rng(stream_seed(self.seed, name))
            self._streams[name] = gen
        return gen

    def register(self, agent: Agent) -> int:
        agent.kernel = self
        agent.agent_id = len(self.agents)
        self.agents.append(agent)
        return agent.agent_id

    def schedule(self, deliver_at: int, recipient: int, payload: Any) -> None:
        if deliver_at < self.now:
            raise CausalityError(
                f"cannot schedule event at {deliver_at}ns before clock {self.now}ns"
            )
        heapq.heappush(self._heap, (deliver_at, self._seq, recipient, payload))
        self._seq += 1

    def preload(self, events: list[tuple[int, int, Any]]) -> None:
        """Bulk-schedule (deliver_at, recipient, payload) triples.

        Faster than repeated schedule() for large replay files; insertion
        order still breaks ties.
        """
        for deliver_at, recipient, payload in events:
            if deliver_at < self.now:
                raise CausalityError(
                    f"cannot schedule event at {deliver_at}ns before clock {self.now}ns"
                )
            self._heap.append((deliver_at, self._seq, recipient, payload))
            self._seq += 1
        heapq.heapify(self._heap)

    def start_agents(self) -> None:
        for agent in self.agents:
            agent.start()

    def run_until(self, end_ns: int) -> RunStats:
        """Process all events with deliver_at <= end_ns in deterministic order.

        The clock ends at the last processed event time (never fast-forwards
        past it on an empty queue).
        """
        processed = 0
        heap = self._heap
        while heap and heap[0][0] <= end_ns:
            deliver_at, seq, recipient, payload = heapq.heappop(heap)
            self.now = deliver_at
            if self._trace is not None:
                key = getattr(payload, "trace_key", None)
                self._trace.append(
                    (deliver_at, seq, recipient, key() if key else type(payload).__name__)
                )
            self.agents[recipient].on_message(deliver_at, payload)
            processed += 1
        return RunStats(events_processed=processed, final_clock=self.now)

    @property
    def trace(self) -> list[tuple]:
        if self._trace is None:
            raise RuntimeError("kernel was created with record_trace=False")
        return self._trace

    def trace_hash(self) -> str:
        digest = hashlib.sha256()
        for entry in self.trace:
            digest.update(repr(entry).encode("utf-8"))
        return digest.hexdigest()

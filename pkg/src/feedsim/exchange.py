"""Exchange agent: historical replay, agent order handling, market data.

The exchange owns the book. Historical messages are replayed in file order;
agent orders arrive as kernel messages after a sampled latency and are
matched on arrival, so they impact the book that subsequent historical flow
sees. Snapshots are sampled on a fixed 5-second grid by an internal wakeup
so every agent observes the identical history.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

from .orderbook import (
    HISTORICAL,
    BookSnapshot,
    DuplicateOrderError,
    Fill,
    LimitOrderBook,
    LobsterMessage,
    Order,
    Side,
)
from .simkernel import NS_PER_SEC, Agent, LatencyModel

logger = logging.getLogger(__name__)

SNAPSHOT_INTERVAL_NS = 5 * NS_PER_SEC


@dataclass(frozen=True)
class TapeEntry:
    """One submitted order as seen at the exchange."""

    side: Side
    price: int
    quantity: int
    timestamp: int


class OrderStreamTape:
    """Ring buffer of the last ``capacity`` submitted orders, chronological."""

    def __init__(self, capacity: int = 10):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._entries: deque[TapeEntry] = deque(maxlen=capacity)

    def append(self, entry: TapeEntry) -> None:
        self._entries.append(entry)

    def entries(self) -> tuple[TapeEntry, ...]:
        return tuple(self._entries)

    def __len__(self) -> int:
        return len(self._entries)


@dataclass(frozen=True)
class MarketDataResponse:
    """The last L grid snapshots (oldest first, left-padded) plus the tape."""

    snapshots: tuple[BookSnapshot, ...]
    tape: tuple[TapeEntry, ...]
    as_of: int


@dataclass(frozen=True)
class SubmitOrder:
    sender: int
    side: Side
    price: int
    quantity: int
    tag: int = 0

    def trace_key(self) -> tuple:
        return ("Submit", self.sender, self.side.value, self.price, self.quantity, self.tag)


@dataclass(frozen=True)
class CancelOrder:
    sender: int
    order_id: int

    def trace_key(self) -> tuple:
        return ("Cancel", self.sender, self.order_id)


@dataclass(frozen=True)
class OrderAck:
    tag: int
    order_id: int
    resting_qty: int

    def trace_key(self) -> tuple:
        return ("Ack", self.tag, self.order_id, self.resting_qty)


@dataclass(frozen=True)
class CancelAck:
    order_id: int
    cancelled_qty: int

    def trace_key(self) -> tuple:
        return ("CancelAck", self.order_id, self.cancelled_qty)


@dataclass(frozen=True)
class FillReport:
    """One fill of one of the recipient's orders, at the executed price."""

    order_id: int
    side: Side
    price: int
    quantity: int
    fee: int = 0

    def trace_key(self) -> tuple:
        return ("FillReport", self.order_id, self.side.value, self.price, self.quantity)


class _SnapshotTick:
    def trace_key(self) -> tuple:
        return ("SnapshotTick",)


@dataclass
class ExchangeStats:
    replayed: int = 0
    skipped_refs: int = 0
    agent_orders: int = 0
    agent_fill_qty: int = 0


AGENT_ORDER_ID_BASE = 1_000_000_000_000


class ExchangeAgent(Agent):
    """Matching venue driven entirely by kernel events.

    Historical LOBSTER messages must be preloaded addressed to this agent;
    type 1 goes through the matching engine (so it can cross agent orders),
    types 2/3 cancel, types 4/6 reduce the referenced resting order, and
    types 5/7 are ignored. Unknown references are counted and skipped: they
    denote liquidity already consumed by agent activity.
    """

    def __init__(
        self,
        name: str = "EXCHANGE",
        symbol: str = "SYM",
        open_ns: int = 0,
        close_ns: int = 0,
        snapshot_depth: int = 10,
        tape_size: int = 10,
        latency: LatencyModel | None = None,
        fee_per_share: int = 0,
    ):
        super().__init__(name, latency)
        self.symbol = symbol
        self.open_ns = open_ns
        self.close_ns = close_ns
        self.snapshot_depth = snapshot_depth
        self.fee_per_share = fee_per_share
        self.book = LimitOrderBook(symbol)
        self.tape = OrderStreamTape(tape_size)
        self.snapshots: list[BookSnapshot] = []
        self.stats = ExchangeStats()
        self._owners: dict[int, tuple[int, Side]] = {}  # live agent order_id -> (agent_id, side)
        self._next_order_id = AGENT_ORDER_ID_BASE

    def start(self) -> None:
        if self.close_ns > self.open_ns:
            self.wakeup(self.open_ns + SNAPSHOT_INTERVAL_NS, _SnapshotTick())

    def on_message(self, now: int, payload) -> None:
        if isinstance(payload, LobsterMessage):
            self.replay_step(payload)
        elif isinstance(payload, SubmitOrder):
            self.handle_agent_order(payload, now)
        elif isinstance(payload, CancelOrder):
            self.handle_agent_cancel(payload)
        elif isinstance(payload, _SnapshotTick):
            self.snapshots.append(self.book.snapshot(self.snapshot_depth))
            if now + SNAPSHOT_INTERVAL_NS <= self.close_ns:
                self.wakeup(now + SNAPSHOT_INTERVAL_NS, payload)
        else:
            raise TypeError(f"exchange cannot handle {type(payload).__name__}")

    # -- historical replay ------------------------------------------------

    def replay_step(self, msg: LobsterMessage) -> None:
        self.stats.replayed += 1
        etype = msg.event_type
        if etype == LobsterMessage.SUBMIT:
            order = Order(
                order_id=msg.order_id,
                symbol=self.symbol,
                side=Side.from_direction(msg.direction),
                price=msg.price,
                quantity=msg.size,
                timestamp=msg.time_ns,
            )
            try:
                fills = self.book.submit_limit(order)
            except DuplicateOrderError:
                logger.debug("replay: duplicate order_id %d skipped", msg.order_id)
                self.stats.skipped_refs += 1
                return
            self.tape.append(TapeEntry(order.side, msg.price, msg.size, msg.time_ns))
            self._report_maker_fills(fills)
        elif etype == LobsterMessage.PARTIAL_CANCEL:
            if self.book.cancel(msg.order_id, msg.size) == 0:
                self._skip_ref(msg)
        elif etype == LobsterMessage.DELETE:
            if self.book.cancel(msg.order_id) == 0:
                self._skip_ref(msg)
        elif etype in (LobsterMessage.EXECUTE_VISIBLE, LobsterMessage.CROSS):
            # Reconstruction semantics: the matching counterparty is not in
            # the file, so an execution is a quantity reduction at the
            # referenced resting order.
            order = self.book.get(msg.order_id)
            if order is None:
                self._skip_ref(msg)
            else:
                self.book.cancel(msg.order_id, min(msg.size, order.quantity))
        # types 5 (hidden execution) and 7 (halt) do not touch the visible book

    def _skip_ref(self, msg: LobsterMessage) -> None:
        self.stats.skipped_refs += 1
        logger.debug(
            "replay: type-%d reference to unknown order_id %d skipped",
            msg.event_type,
            msg.order_id,
        )

    # -- agent flow --------------------------------------------------------

    def handle_agent_order(self, intent: SubmitOrder, arrival: int) -> None:
        if intent.quantity <= 0:
            return
        order_id = self._next_order_id
        self._next_order_id += 1
        order = Order(
            order_id=order_id,
            symbol=self.symbol,
            side=intent.side,
            price=intent.price,
            quantity=intent.quantity,
            timestamp=arrival,
            origin="agent",
        )
        self.stats.agent_orders += 1
        self._owners[order_id] = (intent.sender, intent.side)
        fills = self.book.submit_limit(order)
        self.tape.append(TapeEntry(intent.side, intent.price, intent.quantity, arrival))
        if order.quantity == 0:
            del self._owners[order_id]
        own_reports: list = [
            FillReport(order_id, intent.side, f.price, f.quantity, self.fee_per_share * f.quantity)
            for f in fills
        ]
        self.stats.agent_fill_qty += sum(f.quantity for f in fills)
        own_reports.append(OrderAck(intent.tag, order_id, order.quantity))
        self.send_batch(intent.sender, own_reports)
        self._report_maker_fills(fills)

    def handle_agent_cancel(self, req: CancelOrder) -> None:
        cancelled = self.book.cancel(req.order_id)
        if cancelled > 0:
            self._owners.pop(req.order_id, None)
        self.send(req.sender, CancelAck(req.order_id, cancelled))

    def _report_maker_fills(self, fills: list[Fill]) -> None:
        """Route fills whose maker is an agent order back to its owner."""
        by_agent: dict[int, list[FillReport]] = {}
        for f in fills:
            entry = self._owners.get(f.maker_order_id)
            if entry is None:
                continue
            owner, side = entry
            if f.maker_order_id not in self.book:
                del self._owners[f.maker_order_id]
            report = FillReport(
                f.maker_order_id, side, f.price, f.quantity, self.fee_per_share * f.quantity
            )
            by_agent.setdefault(owner, []).append(report)
            self.stats.agent_fill_qty += f.quantity
        for agent_id, reports in by_agent.items():
            self.send_batch(agent_id, reports)

    # -- market data --------------------------------------------------------

    def market_data(self, length: int, depth: int) -> MarketDataResponse:
        """Last ``length`` grid snapshots re-cut to ``depth``, plus the tape.

        Read synchronously between kernel events; snapshot history never
        mutates mid-read because only this agent's events touch it.
        """
        have = self.snapshots[-length:]
        pad = [BookSnapshot.padding(depth)] * (length - len(have))
        cut = [snap.at_depth(depth) for snap in have]
        return MarketDataResponse(
            snapshots=tuple(pad + cut),
            tape=self.tape.entries(),
            as_of=self.kernel.now if self.kernel else 0,
        )

    def last_defined_mid(self) -> int | None:
        snap = self.book.snapshot(1)
        if snap.mid_defined:
            return snap.mid_price
        for old in reversed(self.snapshots):
            if old.mid_defined:
                return old.mid_price
        return None

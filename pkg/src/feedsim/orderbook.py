"""Price-time-priority limit order book and LOBSTER message handling.

Prices are integer price-units throughout: 1 unit = $0.0001 (the LOBSTER
convention), so one cent tick = 100 units. No floating-point money.
"""

from __future__ import annotations

from bisect import bisect_left, insort
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

PRICE_UNITS_PER_DOLLAR = 10_000
UNITS_PER_TICK = 100

HISTORICAL = "historical"


class Side(Enum):
    BUY = 1
    SELL = -1

    @property
    def sign(self) -> int:
        return self.value

    @property
    def opposite(self) -> "Side":
        return Side.SELL if self is Side.BUY else Side.BUY

    @classmethod
    def from_direction(cls, direction: int) -> "Side":
        if direction == 1:
            return cls.BUY
        if direction == -1:
            return cls.SELL
        raise ValueError(f"unknown direction {direction}")


class DuplicateOrderError(ValueError):
    """Submitted order_id is already live in the book."""


class ParseError(ValueError):
    """A LOBSTER message row could not be parsed."""


@dataclass
class Order:
    order_id: int
    symbol: str
    side: Side
    price: int
    quantity: int
    timestamp: int
    origin: str = HISTORICAL

    def validate(self) -> None:
        if self.quantity <= 0:
            raise ValueError(f"order {self.order_id}: quantity must be positive")
        if self.price <= 0:
            raise ValueError(f"order {self.order_id}: price must be positive")


@dataclass(frozen=True)
class Fill:
    taker_order_id: int
    maker_order_id: int
    price: int
    quantity: int
    timestamp: int

    def trace_key(self) -> tuple:
        return ("Fill", self.taker_order_id, self.maker_order_id, self.price, self.quantity)


@dataclass(frozen=True)
class BookSnapshot:
    """Top-``depth`` aggregated view: exactly depth (price, qty) levels per
    side, zero-padded when the book is shallower. Bids descend, asks ascend.
    """

    bids: tuple[tuple[int, int], ...]
    asks: tuple[tuple[int, int], ...]
    mid_price: int
    mid_defined: bool
    padded: bool = False

    @property
    def depth(self) -> int:
        return len(self.bids)

    @classmethod
    def padding(cls, depth: int) -> "BookSnapshot":
        empty = tuple((0, 0) for _ in range(depth))
        return cls(bids=empty, asks=empty, mid_price=0, mid_defined=False, padded=True)

    def at_depth(self, depth: int) -> "BookSnapshot":
        """Re-cut to a different depth, truncating or zero-padding levels."""
        if depth == self.depth:
            return self
        pad = tuple((0, 0) for _ in range(depth - self.depth))
        return BookSnapshot(
            bids=self.bids[:depth] + pad,
            asks=self.asks[:depth] + pad,
            mid_price=self.mid_price,
            mid_defined=self.mid_defined,
            padded=self.padded,
        )


@dataclass(frozen=True)
class LobsterMessage:
    """One row of a LOBSTER message file, time already converted to ns."""

    time_ns: int
    event_type: int
    order_id: int
    size: int
    price: int
    direction: int

    SUBMIT = 1
    PARTIAL_CANCEL = 2
    DELETE = 3
    EXECUTE_VISIBLE = 4
    EXECUTE_HIDDEN = 5
    CROSS = 6
    HALT = 7

    def trace_key(self) -> tuple:
        return ("Hist", self.event_type, self.order_id, self.size, self.price, self.direction)


def parse_lobster_message(row: str, row_number: Optional[int] = None) -> LobsterMessage:
    """Parse a 6-column LOBSTER CSV row (time, type, id, size, price, dir)."""
    where = f"row {row_number}: " if row_number is not None else ""
    fields = row.strip().split(",")
    if len(fields) != 6:
        raise ParseError(f"{where}expected 6 fields, got {len(fields)}")
    try:
        time_s = float(fields[0])
        event_type = int(fields[1])
        order_id = int(fields[2])
        size = int(fields[3])
        price = int(fields[4])
        direction = int(fields[5])
    except ValueError as exc:
        raise ParseError(f"{where}{exc}") from None
    if event_type not in (1, 2, 3, 4, 5, 6, 7):
        raise ParseError(f"{where}unknown event_type {event_type}")
    if direction not in (1, -1):
        raise ParseError(f"{where}direction must be 1 or -1, got {direction}")
    if time_s < 0:
        raise ParseError(f"{where}negative timestamp")
    return LobsterMessage(
        time_ns=round(time_s * 1e9),
        event_type=event_type,
        order_id=order_id,
        size=size,
        price=price,
        direction=direction,
    )


def load_lobster_file(path: str) -> list[LobsterMessage]:
    messages = []
    with open(path, "r", encoding="utf-8") as handle:
        for row_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            messages.append(parse_lobster_message(line, row_number))
    return messages


class LimitOrderBook:
    """Two price-ordered maps of FIFO order queues plus an id index.

    Marketable submissions match immediately at the resting (maker) price,
    so best_bid < best_ask always holds when both sides are non-empty.
    """

    def __init__(self, symbol: str = ""):
        self.symbol = symbol
        self._levels: dict[Side, dict[int, deque[Order]]] = {Side.BUY: {}, Side.SELL: {}}
        # Both price lists ascend; best bid is the last entry, best ask the first.
        self._prices: dict[Side, list[int]] = {Side.BUY: [], Side.SELL: []}
        self._orders: dict[int, Order] = {}

    def __len__(self) -> int:
        return len(self._orders)

    def __contains__(self, order_id: int) -> bool:
        return order_id in self._orders

    def get(self, order_id: int) -> Optional[Order]:
        return self._orders.get(order_id)

    def best_bid(self) -> Optional[int]:
        prices = self._prices[Side.BUY]
        return prices[-1] if prices else None

    def best_ask(self) -> Optional[int]:
        prices = self._prices[Side.SELL]
        return prices[0] if prices else None

    def front_order(self, side: Side) -> Optional[Order]:
        """Time-priority head of the side's best price level."""
        prices = self._prices[side]
        if not prices:
            return None
        best = prices[-1] if side is Side.BUY else prices[0]
        return self._levels[side][best][0]

    def level_count(self, side: Side) -> int:
        return len(self._prices[side])

    def resting_orders(self) -> list[Order]:
        """All live orders, for inspection and oracle comparison."""
        out = []
        for side in (Side.BUY, Side.SELL):
            for price in self._prices[side]:
                out.extend(self._levels[side][price])
        return out

    def _remove_level_if_empty(self, side: Side, price: int) -> None:
        if not self._levels[side][price]:
            del self._levels[side][price]
            prices = self._prices[side]
            prices.pop(bisect_left(prices, price))

    def submit_limit(self, order: Order) -> list[Fill]:
        """Match while marketable (price-time priority, maker price), then
        rest any residual. Returns fills in match order."""
        order.validate()
        if order.order_id in self._orders:
            raise DuplicateOrderError(f"order_id {order.order_id} is already live")

        fills: list[Fill] = []
        opp = order.side.opposite
        opp_levels = self._levels[opp]
        opp_prices = self._prices[opp]

        def crosses(best: int) -> bool:
            if order.side is Side.BUY:
                return best <= order.price
            return best >= order.price

        while order.quantity > 0 and opp_prices:
            best = opp_prices[0] if opp is Side.SELL else opp_prices[-1]
            if not crosses(best):
                break
            queue = opp_levels[best]
            maker = queue[0]
            qty = min(order.quantity, maker.quantity)
            fills.append(
                Fill(
                    taker_order_id=order.order_id,
                    maker_order_id=maker.order_id,
                    price=maker.price,
                    quantity=qty,
                    timestamp=order.timestamp,
                )
            )
            maker.quantity -= qty
            order.quantity -= qty
            if maker.quantity == 0:
                queue.popleft()
                del self._orders[maker.order_id]
                self._remove_level_if_empty(opp, best)

        if order.quantity > 0:
            levels = self._levels[order.side]
            if order.price not in levels:
                levels[order.price] = deque()
                insort(self._prices[order.side], order.price)
            levels[order.price].append(order)
            self._orders[order.order_id] = order
        return fills

    def cancel(self, order_id: int, qty: Optional[int] = None) -> int:
        """Remove an order (or reduce it by qty). Returns shares actually
        cancelled; unknown ids return 0."""
        order = self._orders.get(order_id)
        if order is None:
            return 0
        if qty is None or qty >= order.quantity:
            cancelled = order.quantity
            order.quantity = 0
            self._levels[order.side][order.price].remove(order)
            del self._orders[order_id]
            self._remove_level_if_empty(order.side, order.price)
            return cancelled
        if qty <= 0:
            return 0
        order.quantity -= qty
        return qty

    def snapshot(self, depth: int) -> BookSnapshot:
        if depth < 1:
            raise ValueError("depth must be >= 1")
        bid_prices = self._prices[Side.BUY]
        ask_prices = self._prices[Side.SELL]
        bids = []
        for price in reversed(bid_prices[-depth:]):
            bids.append((price, sum(o.quantity for o in self._levels[Side.BUY][price])))
        asks = []
        for price in ask_prices[:depth]:
            asks.append((price, sum(o.quantity for o in self._levels[Side.SELL][price])))
        bids.extend((0, 0) for _ in range(depth - len(bids)))
        asks.extend((0, 0) for _ in range(depth - len(asks)))
        if bid_prices and ask_prices:
            mid = (bid_prices[-1] + ask_prices[0]) // 2
            defined = True
        else:
            mid, defined = 0, False
        return BookSnapshot(bids=tuple(bids), asks=tuple(asks), mid_price=mid, mid_defined=defined)

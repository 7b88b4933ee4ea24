"""Trading agents: the learning trader and the sentiment-driven trader.

Both trade marketable limit orders through the exchange, track their own
portfolio from fill reports, and cancel stale orders before each new
submission (cancels and the new order travel in one batch). Position is
hard-capped at 1000 shares either way; action decoding clamps against
holdings plus same-side open quantity so the cap holds even if a resting
order fills before its cancel lands.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .exchange import CancelOrder, CancelAck, ExchangeAgent, FillReport, MarketDataResponse, OrderAck, SubmitOrder
from .neuralnet import NumericFault
from .orderbook import BookSnapshot, Side, UNITS_PER_TICK
from .simkernel import NS_PER_SEC, Agent, LatencyModel
from .td3 import Action, Observation, TD3Learner, Transition

logger = logging.getLogger(__name__)

HOLDINGS_LIMIT = 1000
SHARE_SCALE = 1000  # shares per unit of a0
PRICE_NORM_UNITS = 50 * UNITS_PER_TICK
QTY_NORM = math.log1p(100_000.0)
DEFAULT_VALUE_OFFSET = 1_000_000_000  # price-units; $100,000

SENTIMENT_PHRASES = (
    "extremely negative",
    "very negative",
    "somewhat negative",
    "neutral",
    "somewhat positive",
    "very positive",
    "extremely positive",
)


class SentimentLabel(Enum):
    NEGATIVE = "negative"
    NEUTRAL = "neutral"
    POSITIVE = "positive"


@dataclass
class OpenOrder:
    side: Side
    quantity: int


@dataclass
class PortfolioState:
    cash: int = 0
    holdings: int = 0
    open_orders: dict[int, OpenOrder] = field(default_factory=dict)

    def open_qty(self, side: Side) -> int:
        return sum(o.quantity for o in self.open_orders.values() if o.side is side)

    def net_open_qty(self) -> int:
        return sum(o.side.sign * o.quantity for o in self.open_orders.values())

    def apply_fill(self, fill: FillReport) -> None:
        notional = fill.price * fill.quantity
        if fill.side is Side.BUY:
            self.holdings += fill.quantity
            self.cash -= notional + fill.fee
        else:
            self.holdings -= fill.quantity
            self.cash += notional - fill.fee
        if abs(self.holdings) > HOLDINGS_LIMIT:
            raise RuntimeError(f"holdings {self.holdings} breached the ±{HOLDINGS_LIMIT} cap")
        open_order = self.open_orders.get(fill.order_id)
        if open_order is not None:
            open_order.quantity -= fill.quantity
            if open_order.quantity <= 0:
                del self.open_orders[fill.order_id]


@dataclass(frozen=True)
class OrderIntent:
    side: Side
    quantity: int
    aggressiveness: int = 5  # ticks beyond the opposite best


@dataclass(frozen=True)
class ScoredPost:
    post: object
    label: SentimentLabel
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


# -- pure functions --------------------------------------------------------


def build_observation(md: MarketDataResponse, portfolio: PortfolioState) -> Observation:
    """Normalize snapshots: per level (price − own mid)/(50 ticks) clipped to
    [−1, 1] and log1p(qty)/log1p(1e5) clipped to [0, 1]; empty levels and
    padded or mid-less snapshots are zeros. Internal state is holdings and
    net open quantity, each over the position cap."""
    depth = md.snapshots[0].depth if md.snapshots else 0
    rows = []
    for snap in md.snapshots:
        row = np.zeros(4 * depth)
        if not snap.padded and snap.mid_defined:
            for i, (price, qty) in enumerate(snap.bids):
                if qty > 0:
                    row[2 * i] = np.clip((price - snap.mid_price) / PRICE_NORM_UNITS, -1.0, 1.0)
                    row[2 * i + 1] = min(math.log1p(qty) / QTY_NORM, 1.0)
            for i, (price, qty) in enumerate(snap.asks):
                if qty > 0:
                    row[2 * depth + 2 * i] = np.clip(
                        (price - snap.mid_price) / PRICE_NORM_UNITS, -1.0, 1.0
                    )
                    row[2 * depth + 2 * i + 1] = min(math.log1p(qty) / QTY_NORM, 1.0)
        rows.append(row)
    internal = np.array(
        [portfolio.holdings / HOLDINGS_LIMIT, portfolio.net_open_qty() / HOLDINGS_LIMIT]
    )
    return Observation(internal=internal, environmental=np.stack(rows))


def decode_action(action: Action, portfolio: PortfolioState, aggressiveness: int = 5) -> OrderIntent:
    """Share request = round(1000 * a0), clamped so the position cap holds
    even if every same-side open order fills."""
    raw = int(np.rint(SHARE_SCALE * action.a0))
    if raw > 0:
        room = HOLDINGS_LIMIT - portfolio.holdings - portfolio.open_qty(Side.BUY)
        return OrderIntent(Side.BUY, max(0, min(raw, room)), aggressiveness)
    if raw < 0:
        room = HOLDINGS_LIMIT + portfolio.holdings - portfolio.open_qty(Side.SELL)
        return OrderIntent(Side.SELL, max(0, min(-raw, room)), aggressiveness)
    return OrderIntent(Side.BUY, 0, aggressiveness)


def compute_reward(prev_value: int, new_value: int, offset: int = DEFAULT_VALUE_OFFSET) -> float:
    """Percent change of offset-adjusted portfolio value since last action."""
    prev = prev_value + offset
    new = new_value + offset
    if prev <= 0 or new <= 0:
        raise NumericFault("offset-adjusted portfolio value must stay positive")
    return 100.0 * (new / prev - 1.0)


def mark_to_market(
    portfolio: PortfolioState, snapshot: BookSnapshot, fallback_mid: Optional[int] = None
) -> int:
    if portfolio.holdings == 0:
        return portfolio.cash
    if snapshot.mid_defined:
        mid = snapshot.mid_price
    elif fallback_mid is not None:
        mid = fallback_mid
    else:
        raise ValueError("cannot value holdings: no defined mid price has ever existed")
    return portfolio.cash + portfolio.holdings * mid


def quantize_sentiment(a1: float) -> str:
    """Map a1 in [−1, 1] onto 7 equal-width sentiment phrases."""
    k = int(np.clip(np.rint(3.5 * a1), -3, 3))
    return SENTIMENT_PHRASES[k + 3]


def aggregate_sentiment(
    scored: list[ScoredPost],
) -> tuple[SentimentLabel, dict[SentimentLabel, float]]:
    """Confidence-weighted per-label sums; the winner must strictly beat both
    other labels, anything else (including an exact positive/negative tie)
    resolves to neutral."""
    table = {label: 0.0 for label in SentimentLabel}
    for item in scored:
        table[item.label] += item.confidence
    pos, neg, neu = (
        table[SentimentLabel.POSITIVE],
        table[SentimentLabel.NEGATIVE],
        table[SentimentLabel.NEUTRAL],
    )
    if pos > neg and pos > neu:
        return SentimentLabel.POSITIVE, table
    if neg > pos and neg > neu:
        return SentimentLabel.NEGATIVE, table
    return SentimentLabel.NEUTRAL, table


def sentiment_trade(
    label: SentimentLabel, portfolio: PortfolioState, lot: int = 100, aggressiveness: int = 5
) -> OrderIntent:
    if label is SentimentLabel.POSITIVE:
        room = HOLDINGS_LIMIT - portfolio.holdings - portfolio.open_qty(Side.BUY)
        return OrderIntent(Side.BUY, max(0, min(lot, room)), aggressiveness)
    if label is SentimentLabel.NEGATIVE:
        room = HOLDINGS_LIMIT + portfolio.holdings - portfolio.open_qty(Side.SELL)
        return OrderIntent(Side.SELL, max(0, min(lot, room)), aggressiveness)
    return OrderIntent(Side.BUY, 0, aggressiveness)


# -- kernel agents -----------------------------------------------------------


class _TradeTick:
    def trace_key(self) -> tuple:
        return ("TradeTick",)


class _FinalizeTick:
    def trace_key(self) -> tuple:
        return ("FinalizeTick",)


class TradingAgentBase(Agent):
    """Portfolio bookkeeping and order plumbing shared by both traders."""

    def __init__(
        self,
        name: str,
        exchange: ExchangeAgent,
        interval_ns: int,
        session_open_ns: int,
        session_close_ns: int,
        latency: Optional[LatencyModel] = None,
        jitter_frac: float = 0.1,
    ):
        super().__init__(name, latency)
        self.exchange = exchange
        self.interval_ns = interval_ns
        self.session_open_ns = session_open_ns
        self.session_close_ns = session_close_ns
        self.jitter_frac = jitter_frac
        self.portfolio = PortfolioState()
        self.final_value: Optional[int] = None
        self._tag = 0

    def start(self) -> None:
        self.final_value = None
        self._schedule_next(max(self.kernel.now, self.session_open_ns))

    def _schedule_next(self, now: int) -> None:
        jitter = 1.0 + float(self.stream("cadence").uniform(-self.jitter_frac, self.jitter_frac))
        at = now + max(1, int(self.interval_ns * jitter))
        if at >= self.session_close_ns:
            self.wakeup(self.session_close_ns, _FinalizeTick())
        else:
            self.wakeup(at, _TradeTick())

    def on_message(self, now: int, payload) -> None:
        if isinstance(payload, FillReport):
            self.portfolio.apply_fill(payload)
        elif isinstance(payload, OrderAck):
            if payload.resting_qty > 0:
                side = Side.BUY if payload.tag > 0 else Side.SELL
                self.portfolio.open_orders[payload.order_id] = OpenOrder(side, payload.resting_qty)
        elif isinstance(payload, CancelAck):
            self.portfolio.open_orders.pop(payload.order_id, None)
        elif isinstance(payload, _TradeTick):
            self.on_trade_tick(now)
            self._schedule_next(now)
        elif isinstance(payload, _FinalizeTick):
            self.on_finalize(now)
        else:
            raise TypeError(f"{self.name} cannot handle {type(payload).__name__}")

    def on_trade_tick(self, now: int) -> None:
        raise NotImplementedError

    def on_finalize(self, now: int) -> None:
        self.final_value = self.current_value()

    def current_value(self) -> int:
        live = self.exchange.book.snapshot(1)
        return mark_to_market(self.portfolio, live, self.exchange.last_defined_mid())

    def _limit_price_for(self, intent: OrderIntent) -> Optional[int]:
        """Marketable price: through the opposite best by the intent's tick
        aggressiveness; join own best if the opposite side is empty."""
        bb, ba = self.exchange.book.best_bid(), self.exchange.book.best_ask()
        step = intent.aggressiveness * UNITS_PER_TICK
        if intent.side is Side.BUY:
            if ba is not None:
                return ba + step
            return bb  # join the bid; nothing to cross
        if bb is not None:
            return bb - step
        return ba

    def execute_intent(self, intent: OrderIntent) -> None:
        """Cancel stale orders, then submit, all in one batched message."""
        batch: list = [CancelOrder(self.agent_id, oid) for oid in self.portfolio.open_orders]
        if intent.quantity > 0:
            price = self._limit_price_for(intent)
            if price is not None and price > 0:
                self._tag = abs(self._tag) + 1
                tag = self._tag if intent.side is Side.BUY else -self._tag
                batch.append(
                    SubmitOrder(self.agent_id, intent.side, price, intent.quantity, tag)
                )
        if batch:
            self.send_batch(self.exchange.agent_id, batch)


class RLTraderAgent(TradingAgentBase):
    """Observes the book, acts through the learner, optionally posts.

    One transition is stored per action (reward = percent value change since
    the previous action); one learner update runs per stored transition when
    training is enabled. At the session end a terminal transition is stored.
    """

    def __init__(
        self,
        name: str,
        exchange: ExchangeAgent,
        learner: TD3Learner,
        session_open_ns: int,
        session_close_ns: int,
        interval_ns: int = 30 * NS_PER_SEC,
        value_offset: int = DEFAULT_VALUE_OFFSET,
        poster=None,
        explore: bool = True,
        train_online: bool = True,
        aggressiveness: int = 5,
        latency: Optional[LatencyModel] = None,
    ):
        super().__init__(name, exchange, interval_ns, session_open_ns, session_close_ns, latency)
        self.learner = learner
        self.value_offset = value_offset
        self.poster = poster
        self.explore = explore
        self.train_online = train_online
        self.aggressiveness = aggressiveness
        self.rewards: list[float] = []
        self.actions_taken = 0
        self._prev: Optional[tuple[Observation, Action, int]] = None

    def start(self) -> None:
        self._prev = None
        self.rewards = []
        self.actions_taken = 0
        super().start()

    def _observe(self) -> Observation:
        md = self.exchange.market_data(self.learner.cfg.seq_len, self.learner.cfg.depth)
        return build_observation(md, self.portfolio)

    def _absorb(self, obs: Observation, value: int, done: bool) -> None:
        if self._prev is None:
            return
        prev_obs, prev_action, prev_value = self._prev
        r = compute_reward(prev_value, value, self.value_offset)
        self.rewards.append(r)
        self.learner.buffer.add(Transition(prev_obs, prev_action, r, obs, done))
        if self.train_online:
            self.learner.train_step()

    def on_trade_tick(self, now: int) -> None:
        obs = self._observe()
        value = self.current_value()
        self._absorb(obs, value, done=False)
        action = self.learner.select_action(obs, self.explore)
        self.actions_taken += 1
        self.execute_intent(decode_action(action, self.portfolio, self.aggressiveness))
        if self.poster is not None:
            self.poster.publish(quantize_sentiment(action.a1), now)
        self._prev = (obs, action, value)

    def on_finalize(self, now: int) -> None:
        obs = self._observe()
        value = self.current_value()
        self._absorb(obs, value, done=True)
        self._prev = None
        self.final_value = value


class SentimentTraderAgent(TradingAgentBase):
    """Samples the feed since its last wakeup, scores posts, trades momentum."""

    def __init__(
        self,
        name: str,
        exchange: ExchangeAgent,
        feed,
        scorer,
        session_open_ns: int,
        session_close_ns: int,
        interval_ns: int = 60 * NS_PER_SEC,
        lot: int = 100,
        aggressiveness: int = 5,
        latency: Optional[LatencyModel] = None,
    ):
        super().__init__(name, exchange, interval_ns, session_open_ns, session_close_ns, latency)
        self.feed = feed
        self.scorer = scorer
        self.lot = lot
        self.aggressiveness = aggressiveness
        self.last_sample_ns: Optional[int] = None
        self.labels_seen: dict[SentimentLabel, int] = {label: 0 for label in SentimentLabel}

    def start(self) -> None:
        self.last_sample_ns = max(self.kernel.now, self.session_open_ns)
        self.labels_seen = {label: 0 for label in SentimentLabel}
        super().start()

    def on_trade_tick(self, now: int) -> None:
        posts = self.feed.sample_since(self.last_sample_ns, now, self.stream("feedview"))
        self.last_sample_ns = now
        scored = []
        for post in posts:
            try:
                scored.append(self.scorer.score(post))
            except RuntimeError:  # unreachable backend: skip the post, keep trading
                logger.warning("classification failed for post %d; skipped", post.post_id)
        label, _ = aggregate_sentiment(scored)
        self.labels_seen[label] += 1
        intent = sentiment_trade(label, self.portfolio, self.lot, self.aggressiveness)
        self.execute_intent(intent)

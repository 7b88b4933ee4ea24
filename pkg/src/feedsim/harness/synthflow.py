"""Synthetic order-flow generation in the 6-column replay format.

A shadow book is simulated forward so every emitted row is consistent:
submits never cross, cancels and executions always reference live orders.
Price direction comes from a regime-switching drift (up/flat/down) that
biases which side gets executed and improved, plus a mean-reverting pull
toward the starting price. During a directional regime the favored side
also submits larger orders near the touch, so the imbalance visible in
book snapshots carries a learnable momentum signal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..orderbook import LimitOrderBook, LobsterMessage, Order, Side, UNITS_PER_TICK
from ..simkernel import NS_PER_SEC, stream_seed
from .config import FlowParams

REGIMES = (-1, 0, 1)  # down, flat, up


@dataclass
class _GenState:
    book: LimitOrderBook
    msgs: list[LobsterMessage]
    next_id: int = 1

    def emit(self, time_ns: int, etype: int, order_id: int, size: int, price: int, direction: int):
        self.msgs.append(
            LobsterMessage(
                time_ns=time_ns,
                event_type=etype,
                order_id=order_id,
                size=size,
                price=price,
                direction=direction,
            )
        )


def _draw_size(rng: np.random.Generator, mean: int, multiplier: float = 1.0) -> int:
    size = 1 + int(rng.geometric(1.0 / max(2.0, mean * multiplier)))
    return min(size, 20 * mean)


def _submit(state: _GenState, t: int, side: Side, price: int, size: int) -> None:
    order = Order(state.next_id, "", side, price, size, t)
    fills = state.book.submit_limit(order)
    assert not fills, "synthetic submits must never cross"
    state.emit(t, LobsterMessage.SUBMIT, state.next_id, size, price, side.sign)
    state.next_id += 1


def _seed_book(state: _GenState, params: FlowParams, rng: np.random.Generator, t0: int) -> int:
    """Lay down an initial ladder on both sides; returns the time cursor."""
    t = t0
    half_spread = UNITS_PER_TICK
    for level in range(params.seed_levels):
        for side in (Side.BUY, Side.SELL):
            price = params.base_price_units - side.sign * (half_spread + level * UNITS_PER_TICK)
            for _ in range(params.seed_orders_per_level):
                t += int(rng.integers(1_000, 100_000))
                _submit(state, t, side, price, _draw_size(rng, params.mean_order_size))
    return t


def generate_flow(
    params: FlowParams, seed: int, start_ns: int, end_ns: int
) -> list[LobsterMessage]:
    """Generate one day of message flow covering [start_ns, end_ns]."""
    rng = np.random.default_rng(stream_seed(seed, "synthflow"))
    state = _GenState(book=LimitOrderBook(), msgs=[])
    t = _seed_book(state, params, rng, start_ns)

    regime = 0
    regime_until = t
    anchor = params.base_price_units

    def touch(side: Side) -> int:
        price = state.book.best_bid() if side is Side.BUY else state.book.best_ask()
        assert price is not None
        return price

    while True:
        t += max(1, int(rng.exponential(1.0 / params.arrival_rate_hz) * NS_PER_SEC))
        if t > end_ns:
            break
        if t >= regime_until:
            regime = int(rng.choice(REGIMES))
            regime_until = t + max(
                NS_PER_SEC, int(rng.exponential(params.regime_dwell_mean_s) * NS_PER_SEC)
            )

        bb, ba = state.book.best_bid(), state.book.best_ask()
        mid = (bb + ba) // 2
        reversion = float(
            np.clip(
                (anchor - mid) / params.reversion_scale_units * params.reversion_strength,
                -0.2,
                0.2,
            )
        )

        u = rng.random()
        thin_bid = state.book.level_count(Side.BUY) <= 3
        thin_ask = state.book.level_count(Side.SELL) <= 3
        if u < params.p_execute and not (thin_bid or thin_ask):
            # Execution: regime biases which touch gets hit; up eats the ask.
            p_at_ask = 0.5 + regime * params.regime_drift_exec_bias + reversion
            side = Side.SELL if rng.random() < np.clip(p_at_ask, 0.05, 0.95) else Side.BUY
            target = state.book.front_order(side)
            size = min(target.quantity, _draw_size(rng, params.mean_order_size))
            state.emit(t, LobsterMessage.EXECUTE_VISIBLE, target.order_id, size, target.price, side.sign)
            state.book.cancel(target.order_id, size)
        elif u < params.p_execute + params.p_cancel:
            resting = state.book.resting_orders()
            candidates = [
                o
                for o in resting
                if state.book.level_count(o.side) > 3
                or o.price != touch(o.side)
            ]
            if not candidates:
                continue
            victim = candidates[int(rng.integers(0, len(candidates)))]
            if rng.random() < params.p_partial_cancel and victim.quantity > 1:
                part = 1 + int(rng.integers(0, victim.quantity - 1))
                state.emit(t, LobsterMessage.PARTIAL_CANCEL, victim.order_id, part, victim.price, victim.side.sign)
                state.book.cancel(victim.order_id, part)
            else:
                state.emit(t, LobsterMessage.DELETE, victim.order_id, victim.quantity, victim.price, victim.side.sign)
                state.book.cancel(victim.order_id)
        else:
            p_buy = 0.5 + regime * params.regime_drift_submit_bias + reversion
            side = Side.BUY if rng.random() < np.clip(p_buy, 0.05, 0.95) else Side.SELL
            own_touch = touch(side)
            spread_ticks = (ba - bb) // UNITS_PER_TICK
            v = rng.random()
            if v < params.p_improve and spread_ticks > 1:
                price = own_touch + side.sign * UNITS_PER_TICK
            elif v < params.p_improve + params.p_join:
                price = own_touch
            else:
                depth_ticks = min(
                    int(rng.geometric(params.level_geometric_p)), params.max_level_ticks
                )
                price = own_touch - side.sign * depth_ticks * UNITS_PER_TICK
            if price <= 0:
                continue
            multiplier = params.regime_size_multiplier if (regime * side.sign > 0) else 1.0
            size = _draw_size(rng, params.mean_order_size, multiplier)
            _submit(state, t, side, price, size)
    return state.msgs


def write_lobster_file(msgs: list[LobsterMessage], path: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for m in msgs:
            handle.write(
                f"{m.time_ns / 1e9:.9f},{m.event_type},{m.order_id},{m.size},{m.price},{m.direction}\n"
            )

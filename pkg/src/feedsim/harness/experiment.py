"""Experiment runner: four interaction modes, trial protocol, CSV emission.

Per trial: a fresh learner, five training passes over the training window,
a frozen-policy in-sample evaluation of the same window, and a frozen
out-of-sample evaluation of a later window. Every pass gets a fresh kernel
and exchange; the learner and its replay buffer persist across a trial's
passes. Trial and pass seeds derive from (master seed, trial, pass) only,
never from the mode, so direct and indirect runs of the same trial share
all random draws until the first injected post changes what the sentiment
trader sees.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..agents import RLTraderAgent, SentimentTraderAgent
from ..exchange import ExchangeAgent
from ..orderbook import LobsterMessage, ParseError, load_lobster_file
from ..simkernel import NS_PER_SEC, Kernel
from ..socialfeed import (
    BackendError,
    FeedStore,
    HttpSentiment,
    HttpTextGen,
    LexiconSentiment,
    Post,
    PostRequest,
    RlPoster,
    TemplateTextGen,
    pregenerate_feed,
)
from ..td3 import TD3Learner
from .config import DataError, ExperimentConfig, FeedParams
from .stats import descriptive_stats
from .synthflow import generate_flow

RL_AGENT = "rl_trader"
SENTIMENT_AGENT = "sentiment_trader"

PHASE_IN_SAMPLE = "in_sample"
PHASE_OOS = "oos"


@dataclass(frozen=True)
class ResultRow:
    mode: str
    symbol: str
    trial: int
    phase: str
    agent: str
    dollars: float


@dataclass
class PassResult:
    rl_final_units: Optional[int]
    sentiment_final_units: Optional[int]
    trace: Optional[list]
    injected_times: list[int]
    events_processed: int


def _derive_seed(*entropy: int) -> int:
    return int(np.random.SeedSequence(entropy=entropy).generate_state(1, dtype=np.uint64)[0])


def make_text_backend(feed: FeedParams):
    if feed.backend == "template":
        return TemplateTextGen()
    return HttpTextGen(
        url=feed.gen_url,
        model=feed.gen_model or "default",
        system=feed.gen_system,
        max_tokens=feed.gen_max_tokens,
        temperature=feed.gen_temperature,
    )


def make_classifier(feed: FeedParams):
    if feed.classifier == "lexicon":
        return LexiconSentiment()
    return HttpSentiment(feed.classify_url)


def probe_backends(cfg: ExperimentConfig) -> None:
    """Fail fast (as a data error) when a required HTTP service is down."""
    if cfg.mode == "rl_solo":
        return
    needs_textgen = cfg.feed.feed_file is None or cfg.mode == "direct"
    if cfg.feed.backend == "http" and needs_textgen:
        probe = PostRequest(
            prompt="ping", orders=(), sentiment=None, author_kind="analyst", seed=0, symbol=cfg.symbol
        )
        try:
            make_text_backend(cfg.feed).generate(probe)
        except BackendError as exc:
            raise DataError(f"text-generation backend unavailable: {exc}") from None
    if cfg.feed.classifier == "http":
        try:
            make_classifier(cfg.feed).classify("ping")
        except BackendError as exc:
            raise DataError(f"classification backend unavailable: {exc}") from None


def prepare_day(cfg: ExperimentConfig) -> tuple[list[LobsterMessage], list[Post]]:
    """Build or load the day's order flow, and the pre-generated feed."""
    if cfg.flow.file is not None:
        try:
            msgs = load_lobster_file(cfg.flow.file)
        except FileNotFoundError:
            raise DataError(f"order-flow file not found: {cfg.flow.file}") from None
        except ParseError as exc:
            raise DataError(f"{cfg.flow.file}: {exc}") from None
        if not msgs:
            raise DataError(f"order-flow file is empty: {cfg.flow.file}")
    else:
        msgs = generate_flow(cfg.flow, cfg.seed, cfg.premarket_open_ns, cfg.oos_end_ns)
    posts: list[Post] = []
    if cfg.mode != "rl_solo":
        if cfg.feed.feed_file is not None:
            try:
                store = FeedStore.load_jsonl(cfg.feed.feed_file)
            except FileNotFoundError:
                raise DataError(f"feed file not found: {cfg.feed.feed_file}") from None
            except (ValueError, KeyError) as exc:
                raise DataError(f"{cfg.feed.feed_file}: malformed feed record: {exc}") from None
        else:
            try:
                store = pregenerate_feed(
                    msgs,
                    cfg.symbol,
                    make_text_backend(cfg.feed),
                    np.random.default_rng(
                        np.random.SeedSequence(entropy=(cfg.seed, 0xFEED))
                    ),
                    open_ns=cfg.open_ns,
                    close_ns=cfg.oos_end_ns,
                    rate_per_minute=cfg.feed.rate_per_minute,
                    predecessors=cfg.feed.predecessors,
                )
            except BackendError as exc:
                raise DataError(f"feed pre-generation failed: {exc}") from None
        posts = list(store.posts)
    return msgs, posts


def run_pass(
    cfg: ExperimentConfig,
    msgs: list[LobsterMessage],
    base_posts: list[Post],
    learner: Optional[TD3Learner],
    pass_seed: int,
    window_open_ns: int,
    window_close_ns: int,
    explore: bool,
    train_online: bool,
    record_trace: bool = False,
) -> PassResult:
    """One kernel run: replay plus whatever agents the mode registers."""
    kernel = Kernel(seed=pass_seed, start_ns=cfg.premarket_open_ns, record_trace=record_trace)
    exchange = ExchangeAgent(
        symbol=cfg.symbol,
        open_ns=cfg.open_ns,
        close_ns=window_close_ns,
        snapshot_depth=cfg.td3.depth,
    )
    kernel.register(exchange)
    kernel.preload(
        [(m.time_ns, exchange.agent_id, m) for m in msgs if m.time_ns <= window_close_ns]
    )

    feed = None
    sentiment_agent = None
    rl_agent = None
    if cfg.mode in ("sentiment_solo", "indirect", "direct"):
        feed = FeedStore(
            p_seen=cfg.feed.p_seen,
            sample_cap=cfg.feed.sample_cap,
            allow_injection=(cfg.mode == "direct"),
        )
        for post in base_posts:
            feed.add(post)
        sentiment_agent = SentimentTraderAgent(
            SENTIMENT_AGENT,
            exchange,
            feed,
            make_classifier(cfg.feed),
            session_open_ns=window_open_ns,
            session_close_ns=window_close_ns,
            interval_ns=int(cfg.agents.sentiment_interval_s * NS_PER_SEC),
            lot=cfg.agents.lot,
            aggressiveness=cfg.agents.aggressiveness_ticks,
        )
        kernel.register(sentiment_agent)
    if cfg.mode in ("rl_solo", "indirect", "direct"):
        poster = None
        if cfg.mode == "direct":
            poster = RlPoster(
                feed, make_text_backend(cfg.feed), exchange, cfg.symbol, kernel.stream("rlposter")
            )
        rl_agent = RLTraderAgent(
            RL_AGENT,
            exchange,
            learner,
            session_open_ns=window_open_ns,
            session_close_ns=window_close_ns,
            interval_ns=int(cfg.agents.rl_interval_s * NS_PER_SEC),
            value_offset=cfg.agents.value_offset_units,
            poster=poster,
            explore=explore,
            train_online=train_online,
            aggressiveness=cfg.agents.aggressiveness_ticks,
        )
        kernel.register(rl_agent)

    kernel.start_agents()
    stats = kernel.run_until(window_close_ns)
    return PassResult(
        rl_final_units=rl_agent.final_value if rl_agent else None,
        sentiment_final_units=sentiment_agent.final_value if sentiment_agent else None,
        trace=kernel.trace if record_trace else None,
        injected_times=list(feed.injected_times) if feed else [],
        events_processed=stats.events_processed,
    )


def run_trial(
    cfg: ExperimentConfig, msgs: list[LobsterMessage], base_posts: list[Post], trial: int
) -> list[ResultRow]:
    trial_seed = _derive_seed(cfg.seed, trial)

    def units_to_dollars(units: int) -> float:
        return units / 10_000.0

    rows: list[ResultRow] = []
    if cfg.mode == "sentiment_solo":
        res = run_pass(
            cfg,
            msgs,
            base_posts,
            learner=None,
            pass_seed=_derive_seed(trial_seed, 100),
            window_open_ns=cfg.open_ns,
            window_close_ns=cfg.in_sample_end_ns,
            explore=False,
            train_online=False,
        )
        rows.append(
            ResultRow(
                cfg.mode,
                cfg.symbol,
                trial,
                PHASE_IN_SAMPLE,
                SENTIMENT_AGENT,
                units_to_dollars(res.sentiment_final_units),
            )
        )
        return rows

    learner = TD3Learner(cfg.td3, seed=_derive_seed(trial_seed, 999))
    for k in range(cfg.training_passes):
        run_pass(
            cfg,
            msgs,
            base_posts,
            learner,
            pass_seed=_derive_seed(trial_seed, k),
            window_open_ns=cfg.open_ns,
            window_close_ns=cfg.in_sample_end_ns,
            explore=True,
            train_online=True,
        )
    evals = (
        (PHASE_IN_SAMPLE, _derive_seed(trial_seed, 100), cfg.open_ns, cfg.in_sample_end_ns),
        (PHASE_OOS, _derive_seed(trial_seed, 200), cfg.oos_start_ns, cfg.oos_end_ns),
    )
    for phase, pass_seed, w_open, w_close in evals:
        res = run_pass(
            cfg,
            msgs,
            base_posts,
            learner,
            pass_seed=pass_seed,
            window_open_ns=w_open,
            window_close_ns=w_close,
            explore=False,
            train_online=False,
        )
        rows.append(
            ResultRow(
                cfg.mode, cfg.symbol, trial, phase, RL_AGENT, units_to_dollars(res.rl_final_units)
            )
        )
        if res.sentiment_final_units is not None:
            rows.append(
                ResultRow(
                    cfg.mode,
                    cfg.symbol,
                    trial,
                    phase,
                    SENTIMENT_AGENT,
                    units_to_dollars(res.sentiment_final_units),
                )
            )
    return rows


_WORKER_CTX: dict = {}


def _init_worker(cfg: ExperimentConfig, msgs: list[LobsterMessage], posts: list[Post]) -> None:
    _WORKER_CTX["cfg"] = cfg
    _WORKER_CTX["msgs"] = msgs
    _WORKER_CTX["posts"] = posts


def _trial_worker(trial: int) -> list[ResultRow]:
    return run_trial(_WORKER_CTX["cfg"], _WORKER_CTX["msgs"], _WORKER_CTX["posts"], trial)


def run_experiment(cfg: ExperimentConfig) -> list[ResultRow]:
    probe_backends(cfg)
    msgs, posts = prepare_day(cfg)
    workers = cfg.workers or os.cpu_count() or 1
    workers = min(workers, cfg.trials)
    rows: list[ResultRow] = []
    if workers <= 1:
        for trial in range(cfg.trials):
            rows.extend(run_trial(cfg, msgs, posts, trial))
    else:
        with ProcessPoolExecutor(
            max_workers=workers, initializer=_init_worker, initargs=(cfg, msgs, posts)
        ) as pool:
            for trial_rows in pool.map(_trial_worker, range(cfg.trials)):
                rows.extend(trial_rows)
    rows.sort(key=lambda r: (r.mode, r.symbol, r.trial, r.phase, r.agent))
    return rows


# -- emission -----------------------------------------------------------------


def write_results_csv(rows: list[ResultRow], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["mode", "symbol", "trial", "phase", "agent", "dollars"])
        for r in sorted(rows, key=lambda r: (r.mode, r.symbol, r.trial, r.phase, r.agent)):
            writer.writerow([r.mode, r.symbol, r.trial, r.phase, r.agent, repr(r.dollars)])


def write_summary_csv(rows: list[ResultRow], path: str) -> None:
    groups: dict[tuple[str, str, str], list[float]] = {}
    for r in rows:
        groups.setdefault((r.symbol, r.agent, r.phase), []).append(r.dollars)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(
            ["symbol", "agent", "phase", "mean", "std", "min", "q25", "median", "q75", "max", "count"]
        )
        for key in sorted(groups):
            s = descriptive_stats(groups[key])
            writer.writerow(
                list(key)
                + [repr(v) for v in (s.mean, s.std, s.min, s.q25, s.median, s.q75, s.max)]
                + [s.count]
            )


def write_distributions_csv(rows: list[ResultRow], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["mode", "symbol", "agent", "phase", "trial", "dollars"])
        for r in sorted(rows, key=lambda r: (r.mode, r.symbol, r.agent, r.phase, r.trial)):
            writer.writerow([r.mode, r.symbol, r.agent, r.phase, r.trial, repr(r.dollars)])


def write_outputs(rows: list[ResultRow], out_dir: str) -> dict[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "results": os.path.join(out_dir, "results.csv"),
        "summary": os.path.join(out_dir, "summary.csv"),
        "distributions": os.path.join(out_dir, "distributions.csv"),
    }
    write_results_csv(rows, paths["results"])
    write_summary_csv(rows, paths["summary"])
    write_distributions_csv(rows, paths["distributions"])
    return paths

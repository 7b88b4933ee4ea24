"""Simulated social-media feed: prompts, generation backends, store, sampling.

Posts are pre-generated offline from an order-flow file and replayed through
a time-indexed store; in direct-interaction runs the learning trader injects
additional posts live. Text generation and sentiment classification are
pluggable: HTTP clients for external model services, plus deterministic
offline stand-ins (a seeded template writer and a keyword lexicon scorer)
that form a closed loop: the lexicon recovers exactly the sentiment the
template writer was asked to express.
"""

from __future__ import annotations

import json
import logging
import re
from bisect import bisect_left, bisect_right
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import requests

from .agents import ScoredPost, SentimentLabel
from .exchange import TapeEntry
from .orderbook import LobsterMessage, Side
from .simkernel import NS_PER_SEC

logger = logging.getLogger(__name__)

ANALYST = "analyst"
TRADER = "trader"
RL_AGENT = "rl_agent"

RL_POST_ID_BASE = 1_000_000_000

ANALYST_TEMPLATE = (
    "You are an opinionated stock analyst who likes to post on social media.  "
    "You have recently observed the following stock orders: [orders].  "
    "Write a social media post analyzing the stock.  "
    "Pay attention to the orders when forming your opinion.  "
    "Do not mention a sentiment score.  "
    "Do not write any text outside of the post itself."
)

TRADER_TEMPLATE = (
    "You are an opinionated day trader who likes to post on social media.  "
    "You have recently observed the following stock orders placed by other traders: [orders].  "
    "Write a [sentiment] social media post giving your informed opinion based on the observed "
    "orders.  "
    "Do not mention a sentiment score.  "
    "Do not write any text outside of the post itself."
)

RL_TEMPLATE = (
    "You are an opinionated stock analyst who likes to post on social media.  "
    "You have recently observed the following stock orders: [orders].  "
    "You feel [sentiment] about the stock.  "
    "Write a social media post analyzing the stock.  "
    "Pay attention to the orders when forming your opinion.  "
    "Also include any relevant knowledge you have about the company's products, management, or "
    "competition.  "
    "Do not mention a sentiment score.  "
    "Do not mention individual trade quantities.  "
    "No bullet lists.  "
    "Do not write any text outside of the post itself."
)


class ModeError(RuntimeError):
    """An operation was attempted that the experiment mode forbids."""


class BackendError(RuntimeError):
    """A generation or classification backend failed."""


@dataclass(frozen=True)
class Post:
    post_id: int
    symbol: str
    post_time: int
    author_kind: str
    text: str

    def __post_init__(self):
        if not self.text:
            raise ValueError("post text must be non-empty")


@dataclass(frozen=True)
class PostRequest:
    """Everything a generation backend might need for one post."""

    prompt: str
    orders: tuple[TapeEntry, ...]
    sentiment: Optional[str]
    author_kind: str
    seed: int
    symbol: str


# -- prompt construction -----------------------------------------------------


def render_price(price_units: int) -> str:
    return f"{price_units // 10_000}.{price_units % 10_000:04d}"


def render_order_line(entry: TapeEntry) -> str:
    verb = "BUY" if entry.side is Side.BUY else "SELL"
    return f"{verb} {entry.quantity} @ ${render_price(entry.price)}"


def _render_orders(orders: Sequence[TapeEntry]) -> str:
    return "\n" + "\n".join(render_order_line(o) for o in orders)


def build_analyst_prompt(orders: Sequence[TapeEntry]) -> str:
    if not orders:
        raise ValueError("analyst prompt requires at least one order")
    return ANALYST_TEMPLATE.replace("[orders]", _render_orders(orders))


def build_trader_prompt(orders: Sequence[TapeEntry], requested_sentiment: str) -> str:
    if not orders:
        raise ValueError("trader prompt requires at least one order")
    if requested_sentiment not in ("positive", "negative"):
        raise ValueError(f"trader sentiment must be positive or negative, got {requested_sentiment!r}")
    prompt = TRADER_TEMPLATE.replace("[orders]", _render_orders(orders))
    return prompt.replace("[sentiment]", requested_sentiment)


def build_rl_prompt(orders: Sequence[TapeEntry], sentiment_phrase: str) -> str:
    rendered = _render_orders(orders) if orders else "(no recent orders)"
    prompt = RL_TEMPLATE.replace("[orders]", rendered)
    return prompt.replace("[sentiment]", sentiment_phrase)


# -- offline deterministic backends -------------------------------------------

POSITIVE_WORDS = frozenset(
    """bullish rally soaring upside breakout strong buying accumulating momentum
    optimistic undervalued surge gains booming""".split()
)
NEGATIVE_WORDS = frozenset(
    """bearish selloff plunge downside breakdown weak selling dumping capitulation
    pessimistic overvalued slump losses cratering""".split()
)

_POSITIVE_SENTENCES = (
    "I'm bullish on this rally.",
    "Buyers keep accumulating and the momentum is undeniable.",
    "Looks like a breakout with strong follow-through.",
    "Feeling optimistic here, the upside is real.",
    "The surge in buying says it all.",
    "Still undervalued even after these gains.",
)
_NEGATIVE_SENTENCES = (
    "I'm bearish on this selloff.",
    "Sellers keep dumping and the breakdown is ugly.",
    "Looks weak, with selling into every bounce.",
    "Feeling pessimistic here, the downside is real.",
    "The slump says this name is overvalued.",
    "Expecting more losses before any bottom forms.",
)
_FILLER_SENTENCES = (
    "Watching {symbol} closely around ${lo}-${hi} this session.",
    "Plenty of orders crossing the tape on {symbol} right now.",
    "Order sizes near the top of the book have my attention.",
    "Another busy stretch for {symbol} on my screen.",
    "The spread has been doing a little dance all morning.",
)
_NO_ORDER_FILLER = "Not much on the {symbol} tape at the moment."

_WORD_RE = re.compile(r"[a-z']+")


def _lexicon_counts(text: str) -> tuple[int, int]:
    words = _WORD_RE.findall(text.lower())
    pos = sum(1 for w in words if w in POSITIVE_WORDS)
    neg = sum(1 for w in words if w in NEGATIVE_WORDS)
    return pos, neg


def _sentiment_to_label(sentiment: Optional[str]) -> SentimentLabel:
    if sentiment is None:
        return SentimentLabel.NEUTRAL
    if "positive" in sentiment:
        return SentimentLabel.POSITIVE
    if "negative" in sentiment:
        return SentimentLabel.NEGATIVE
    return SentimentLabel.NEUTRAL


def template_generate(
    orders: Sequence[TapeEntry],
    sentiment: Optional[str],
    author_kind: str,
    seed: int,
    symbol: str = "STOCK",
) -> str:
    """Deterministic post text from seeded phrase banks.

    For a sentiment-bearing target every opinion sentence carries only
    matching lexicon words and fillers carry none, so the lexicon scorer
    recovers the target label (closed loop). Analyst posts with no requested
    sentiment take their polarity from the net direction of the context
    orders; a balanced context stays neutral.
    """
    rng = np.random.default_rng(seed)
    label = _sentiment_to_label(sentiment)
    if sentiment is None and author_kind == ANALYST:
        net = sum(o.side.sign for o in orders)
        if net > 0:
            label = SentimentLabel.POSITIVE
        elif net < 0:
            label = SentimentLabel.NEGATIVE
    if orders:
        prices = [o.price for o in orders]
        fillers = [
            s.format(symbol=symbol, lo=render_price(min(prices)), hi=render_price(max(prices)))
            for s in _FILLER_SENTENCES
        ]
    else:
        fillers = [_NO_ORDER_FILLER.format(symbol=symbol)]
    sentences: list[str] = []
    if label is SentimentLabel.NEUTRAL:
        count = int(rng.integers(1, min(3, len(fillers)) + 1))
        picks = rng.choice(len(fillers), size=count, replace=False)
        sentences.extend(fillers[i] for i in picks)
    else:
        bank = _POSITIVE_SENTENCES if label is SentimentLabel.POSITIVE else _NEGATIVE_SENTENCES
        strong = sentiment is not None and ("extremely" in sentiment or "very" in sentiment)
        count = 2 if strong else 1
        picks = rng.choice(len(bank), size=count, replace=False)
        sentences.extend(bank[i] for i in picks)
        if rng.random() < 0.5:
            sentences.append(fillers[int(rng.integers(0, len(fillers)))])
    sentences.append(f"#{symbol} #StockMarket")
    return " ".join(sentences)


class TemplateTextGen:
    """Offline generation backend: pure function of the request contents."""

    def generate(self, request: PostRequest) -> str:
        return template_generate(
            request.orders, request.sentiment, request.author_kind, request.seed, request.symbol
        )


class HttpTextGen:
    """Client for an external chat-completion-style service."""

    def __init__(
        self,
        url: str,
        model: str,
        system: Optional[str] = None,
        max_tokens: int = 256,
        temperature: float = 0.7,
        timeout_s: float = 30.0,
    ):
        self.url = url
        self.model = model
        self.system = system
        self.max_tokens = max_tokens
        self.temperature = temperature
        self.timeout_s = timeout_s

    def generate(self, request: PostRequest) -> str:
        payload = {
            "model": self.model,
            "prompt": request.prompt,
            "max_tokens": self.max_tokens,
            "temperature": self.temperature,
            "seed": request.seed,
        }
        if self.system is not None:
            payload["system"] = self.system
        try:
            resp = requests.post(self.url, json=payload, timeout=self.timeout_s)
            resp.raise_for_status()
            body = resp.json()
        except (requests.RequestException, ValueError) as exc:
            raise BackendError(f"text generation failed: {exc}") from exc
        text = body.get("text")
        if not isinstance(text, str) or not text:
            raise BackendError("text generation returned no usable text")
        return text


class SentimentBackend:
    def classify(self, text: str) -> tuple[SentimentLabel, float]:
        raise NotImplementedError

    def score(self, post: Post) -> ScoredPost:
        label, confidence = self.classify(post.text)
        return ScoredPost(post, label, confidence)


class LexiconSentiment(SentimentBackend):
    """Keyword scorer: label = sign of positive − negative hits; confidence
    = |pos − neg| / max(1, pos + neg)."""

    def classify(self, text: str) -> tuple[SentimentLabel, float]:
        if not text:
            raise ValueError("cannot classify empty text")
        pos, neg = _lexicon_counts(text)
        confidence = abs(pos - neg) / max(1, pos + neg)
        if pos > neg:
            return SentimentLabel.POSITIVE, confidence
        if neg > pos:
            return SentimentLabel.NEGATIVE, confidence
        return SentimentLabel.NEUTRAL, confidence


class HttpSentiment(SentimentBackend):
    def __init__(self, url: str, timeout_s: float = 30.0):
        self.url = url
        self.timeout_s = timeout_s

    def classify(self, text: str) -> tuple[SentimentLabel, float]:
        if not text:
            raise ValueError("cannot classify empty text")
        try:
            resp = requests.post(self.url, json={"text": text}, timeout=self.timeout_s)
            resp.raise_for_status()
            body = resp.json()
        except (requests.RequestException, ValueError) as exc:
            raise BackendError(f"classification failed: {exc}") from exc
        try:
            label = SentimentLabel(body["label"])
            confidence = float(body["confidence"])
        except (KeyError, ValueError, TypeError) as exc:
            raise BackendError(f"malformed classification response: {body!r}") from exc
        if not 0.0 <= confidence <= 1.0:
            raise BackendError(f"confidence {confidence} outside [0, 1]")
        return label, confidence


# -- feed store ----------------------------------------------------------------


class FeedStore:
    """Time-sorted posts with exact (t1, t2] interval queries.

    ``allow_injection`` gates live insertion: only direct-interaction runs
    may add posts once the store is built.
    """

    def __init__(self, p_seen: float = 0.5, sample_cap: int = 30, allow_injection: bool = False):
        if not 0.0 <= p_seen <= 1.0:
            raise ValueError("p_seen must be in [0, 1]")
        self.p_seen = p_seen
        self.sample_cap = sample_cap
        self.allow_injection = allow_injection
        self._posts: list[Post] = []
        self._times: list[int] = []
        self.injected_times: list[int] = []

    def __len__(self) -> int:
        return len(self._posts)

    @property
    def posts(self) -> tuple[Post, ...]:
        return tuple(self._posts)

    def add(self, post: Post) -> None:
        """Insert keeping time order; equal times keep insertion order."""
        if self._times and post.post_time < self._times[-1]:
            at = bisect_right(self._times, post.post_time)
            self._posts.insert(at, post)
            self._times.insert(at, post.post_time)
        else:
            self._posts.append(post)
            self._times.append(post.post_time)

    def inject(self, post: Post) -> None:
        if not self.allow_injection:
            raise ModeError("post injection is disabled in this mode")
        self.add(post)
        self.injected_times.append(post.post_time)

    def query(self, t1: int, t2: int) -> list[Post]:
        """Posts with t1 < post_time <= t2."""
        lo = bisect_right(self._times, t1)
        hi = bisect_right(self._times, t2)
        return self._posts[lo:hi]

    def sample_since(self, t_prev: int, t_now: int, rng: np.random.Generator) -> list[Post]:
        """Independent p_seen inclusion over (t_prev, t_now], then a uniform
        subsample down to the cap, original order preserved."""
        candidates = self.query(t_prev, t_now)
        if candidates and self.p_seen < 1.0:
            mask = rng.random(len(candidates)) < self.p_seen
            candidates = [p for p, keep in zip(candidates, mask) if keep]
        if len(candidates) > self.sample_cap:
            idx = sorted(rng.choice(len(candidates), size=self.sample_cap, replace=False))
            candidates = [candidates[i] for i in idx]
        return candidates

    def save_jsonl(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            for post in self._posts:
                handle.write(
                    json.dumps(
                        {
                            "post_id": post.post_id,
                            "symbol": post.symbol,
                            "post_time_ns": post.post_time,
                            "author_kind": post.author_kind,
                            "text": post.text,
                        },
                        ensure_ascii=False,
                    )
                )
                handle.write("\n")

    @classmethod
    def load_jsonl(
        cls, path: str, p_seen: float = 0.5, sample_cap: int = 30, allow_injection: bool = False
    ) -> "FeedStore":
        store = cls(p_seen=p_seen, sample_cap=sample_cap, allow_injection=allow_injection)
        with open(path, "r", encoding="utf-8") as handle:
            for line in handle:
                if not line.strip():
                    continue
                rec = json.loads(line)
                store.add(
                    Post(
                        post_id=int(rec["post_id"]),
                        symbol=rec["symbol"],
                        post_time=int(rec["post_time_ns"]),
                        author_kind=rec["author_kind"],
                        text=rec["text"],
                    )
                )
        return store


# -- pre-generation -------------------------------------------------------------


def _generate_with_retry(backend, request: PostRequest, retries: int = 3) -> Optional[str]:
    for attempt in range(retries):
        try:
            return backend.generate(request)
        except BackendError as exc:
            logger.warning("generation attempt %d/%d failed: %s", attempt + 1, retries, exc)
    logger.warning("skipping post after %d failed attempts (feed gap)", retries)
    return None


def pregenerate_feed(
    order_flow: Sequence[LobsterMessage],
    symbol: str,
    backend,
    rng: np.random.Generator,
    open_ns: int,
    close_ns: int,
    rate_per_minute: int = 100,
    predecessors: int = 10,
    p_seen: float = 0.5,
    sample_cap: int = 30,
    allow_injection: bool = False,
) -> FeedStore:
    """Build a day's feed from replayed order flow.

    Target count = rate × trading minutes, sampled uniformly without
    replacement from the day's submit messages; each selection's context is
    its ten predecessors (plus itself for analyst posts). Authorship is a
    50/50 draw; trader posts take their requested sentiment from the
    selected order's direction and fall back to analyst form when the
    selection has no predecessors.
    """
    submits = [m for m in order_flow if m.event_type == LobsterMessage.SUBMIT]
    minutes = max(0, (close_ns - open_ns) // (60 * NS_PER_SEC))
    target = min(int(rate_per_minute * minutes), len(submits))
    store = FeedStore(p_seen=p_seen, sample_cap=sample_cap, allow_injection=allow_injection)
    if target == 0:
        return store
    selected = sorted(int(i) for i in rng.choice(len(submits), size=target, replace=False))

    def entry(msg: LobsterMessage) -> TapeEntry:
        return TapeEntry(Side.from_direction(msg.direction), msg.price, msg.size, msg.time_ns)

    post_id = 0
    for i in selected:
        context = [entry(m) for m in submits[max(0, i - predecessors) : i]]
        chosen = entry(submits[i])
        author = ANALYST if rng.random() < 0.5 else TRADER
        if author == TRADER and not context:
            author = ANALYST
        if author == TRADER:
            sentiment = "positive" if chosen.side is Side.BUY else "negative"
            prompt = build_trader_prompt(context, sentiment)
            orders = tuple(context)
        else:
            sentiment = None
            orders = tuple(context) + (chosen,)
            prompt = build_analyst_prompt(orders)
        request = PostRequest(
            prompt=prompt,
            orders=orders,
            sentiment=sentiment,
            author_kind=author,
            seed=int(rng.integers(0, 2**63)),
            symbol=symbol,
        )
        text = _generate_with_retry(backend, request)
        if text is None:
            continue
        store.add(Post(post_id, symbol, chosen.timestamp, author, text))
        post_id += 1
    return store


class RlPoster:
    """Builds and injects one post per learning-trader action in direct mode."""

    def __init__(self, feed: FeedStore, backend, exchange, symbol: str, rng: np.random.Generator):
        self.feed = feed
        self.backend = backend
        self.exchange = exchange
        self.symbol = symbol
        self.rng = rng
        self.posts_made = 0

    def publish(self, sentiment_phrase: str, now: int) -> Optional[Post]:
        tape = self.exchange.tape.entries()
        request = PostRequest(
            prompt=build_rl_prompt(tape, sentiment_phrase),
            orders=tape,
            sentiment=sentiment_phrase,
            author_kind=RL_AGENT,
            seed=int(self.rng.integers(0, 2**63)),
            symbol=self.symbol,
        )
        text = _generate_with_retry(self.backend, request)
        if text is None:
            return None
        post = Post(RL_POST_ID_BASE + self.posts_made, self.symbol, now, RL_AGENT, text)
        self.feed.inject(post)
        self.posts_made += 1
        return post

"""Reward-stream generators.

Every adversary exposes ``n``, ``lo``, ``width`` and ``next(p)`` returning the
day's reward vector. Oblivious adversaries ignore ``p``.

The hard sequence walks a K-ary tree of depth L depth-first. Leaf ``a`` owns
actions ``2a`` and ``2a + 1`` (0-based). Visiting a leaf plays a two-coin game
for ``H_block`` days; after each child of an internal node the rest of that
node's subtree is skipped with probability 1/(2K). Actions whose leaf has been
passed (visited or skipped) read -1 from then on.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import LifecycleError, ParameterError


def block_length(delta: float) -> int:
    """round(1 / (400 Delta^2)), at least one day."""
    return max(1, round(1.0 / (400.0 * delta * delta)))


@dataclass(frozen=True)
class HardSeqConfig:
    K: int
    L: int
    Delta: float
    seed: int = 0

    def __post_init__(self):
        if self.K < 1 or self.L < 0:
            raise ParameterError(f"need K>=1 and L>=0, got K={self.K}, L={self.L}")
        if not 0 < self.Delta <= 1 / 20:
            raise ParameterError(f"Delta must lie in (0, 1/20], got {self.Delta}")

    @property
    def H_block(self) -> int:
        return block_length(self.Delta)

    @property
    def q(self) -> float:
        return 1.0 / (2 * self.K)

    @property
    def n(self) -> int:
        return 2 * self.K ** self.L

    @property
    def unit(self) -> float:
        return 1.0 / (16 * (self.L + 1))

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, path) -> "HardSeqConfig":
        with open(path) as fh:
            return cls(**json.load(fh))


# Rewards of the hard sequence lie in [-1, 1/16].
HARDSEQ_LO = -1.0
HARDSEQ_WIDTH = 1.0 + 1.0 / 16


def expected_length(config: HardSeqConfig) -> float:
    """H * C_K^L with C_K = sum_{k<K} (1 - 1/(2K))^k."""
    c = sum((1.0 - config.q) ** k for k in range(config.K))
    return config.H_block * c ** config.L


class HardSequence:
    """Lazy, seeded generator of the oblivious hard sequence.

    ``next()`` returns the next reward vector, then ``None`` once the root has
    completed; any further call raises :class:`LifecycleError`.
    """

    lo = HARDSEQ_LO
    width = HARDSEQ_WIDTH

    def __init__(self, config: HardSeqConfig, rng: np.random.Generator | None = None):
        self.config = config
        self.n = config.n
        self.rng = rng if rng is not None else np.random.default_rng(config.seed)
        self.template = np.zeros(self.n)
        self.day = 0
        self.visited_leaves: list[int] = []
        self.i_star: dict[int, int] = {}
        # level -> list of visited node addresses, in visit order
        self.visited: dict[int, list[int]] = {lvl: [] for lvl in range(config.L + 1)}
        self.finished = False
        self._closed = False
        self._gen = self._visit(config.L, 0)

    def _visit(self, level: int, a: int):
        c = self.config
        self.visited[level].append(a)
        if level == 0:
            rng, r, unit = self.rng, self.template, c.unit
            star = int(rng.integers(2))
            self.i_star[a] = star
            self.visited_leaves.append(a)
            base = c.L * unit
            biased, fair = 2 * a + star, 2 * a + 1 - star
            for _ in range(c.H_block):
                r[biased] = base + unit * (rng.random() < 0.5 + c.Delta)
                r[fair] = base + unit * (rng.random() < 0.5)
                yield r.copy()
            r[2 * a:2 * a + 2] = -1.0
            return
        size = 2 * c.K ** level
        span = slice(a * size, (a + 1) * size)
        self.template[span] = (c.L - level) * c.unit
        for k in range(c.K):
            yield from self._visit(level - 1, a * c.K + k)
            if self.rng.random() < c.q:
                self.template[span] = -1.0
                break

    def next(self, p=None) -> np.ndarray | None:
        if self._closed:
            raise LifecycleError("hard sequence already finished")
        try:
            r = next(self._gen)
        except StopIteration:
            self.finished = True
            self._closed = True
            return None
        self.day += 1
        return r

    def __iter__(self):
        while (r := self.next()) is not None:
            yield r


@dataclass
class HardSeqStream:
    rewards: np.ndarray
    realized_length: int
    padded: bool
    truncated: bool
    config: HardSeqConfig
    leaves: list[int] = field(default_factory=list)


def hardseq_stream(config: HardSeqConfig, horizon: int | None = None,
                   rng: np.random.Generator | None = None) -> HardSeqStream:
    """Materialize one hard sequence, zero-padded (or cut) to ``horizon`` days."""
    seq = HardSequence(config, rng)
    rows = list(seq)
    T_alg = len(rows)
    rewards = np.array(rows).reshape(T_alg, config.n)
    padded = truncated = False
    if horizon is not None:
        if horizon > T_alg:
            rewards = np.vstack([rewards, np.zeros((horizon - T_alg, config.n))])
            padded = True
        elif horizon < T_alg:
            rewards = rewards[:horizon]
            truncated = True
    return HardSeqStream(rewards, T_alg, padded, truncated, config, seq.visited_leaves)


def write_stream_csv(rewards: np.ndarray, path, metadata: dict | None = None) -> None:
    """CSV ``day,action,reward`` (1-based); metadata goes in leading ``#`` lines."""
    with open(path, "w", newline="") as fh:
        for key, value in (metadata or {}).items():
            fh.write(f"# {key}={value}\n")
        w = csv.writer(fh)
        w.writerow(["day", "action", "reward"])
        for t, row in enumerate(rewards):
            for i, v in enumerate(row):
                w.writerow([t + 1, i + 1, repr(float(v))])


def read_stream_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    cells = {}
    for row in csv.DictReader(lines):
        cells[(int(row["day"]), int(row["action"]))] = float(row["reward"])
    T = max(d for d, _ in cells)
    n = max(a for _, a in cells)
    out = np.zeros((T, n))
    for (d, a), v in cells.items():
        out[d - 1, a - 1] = v
    return out


class HardSequenceAdversary:
    """Fixed-horizon adversary built from hard sequences.

    ``mode="pad"`` plays one sequence then all-zero days; ``mode="repeat"``
    starts a fresh, independently seeded sequence whenever one finishes.
    """

    lo = HARDSEQ_LO
    width = HARDSEQ_WIDTH

    def __init__(self, config: HardSeqConfig, mode: str = "repeat"):
        if mode not in ("pad", "repeat"):
            raise ParameterError(f"unknown mode {mode!r}")
        self.config = config
        self.n = config.n
        self.mode = mode
        self.sequences = 0
        self._seq = self._new_sequence()

    def _new_sequence(self) -> HardSequence:
        rng = np.random.default_rng([self.config.seed, self.sequences])
        self.sequences += 1
        return HardSequence(self.config, rng)

    def next(self, p=None) -> np.ndarray:
        if self._seq is None:
            return np.zeros(self.n)
        r = self._seq.next()
        if r is not None:
            return r
        if self.mode == "pad":
            self._seq = None
            return np.zeros(self.n)
        self._seq = self._new_sequence()
        return self._seq.next()


@dataclass(frozen=True)
class TwoCoinConfig:
    Delta: float
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.Delta <= 1 / 20:
            raise ParameterError(f"Delta must lie in (0, 1/20], got {self.Delta}")

    @property
    def H(self) -> int:
        return block_length(self.Delta)


class TwoCoinGame:
    """H days of two coins, one fair and one with mean 1/2 + Delta, plus a dummy.

    Rewards are ``[coin0, coin1, 0]``; ``i_star`` is the 0-based biased coin.
    """

    lo = 0.0
    width = 1.0
    n = 3

    def __init__(self, config: TwoCoinConfig, rng: np.random.Generator | None = None):
        self.config = config
        self.rng = rng if rng is not None else np.random.default_rng(config.seed)
        self.i_star = int(self.rng.integers(2))
        self.day = 0

    def next(self, p=None) -> np.ndarray:
        if self.day >= self.config.H:
            raise LifecycleError(f"two-coin game lasts {self.config.H} days")
        self.day += 1
        means = [0.5, 0.5]
        means[self.i_star] += self.config.Delta
        return np.array([float(self.rng.random() < means[0]),
                         float(self.rng.random() < means[1]), 0.0])


def swap_to_biased_gain(probs: np.ndarray, rewards: np.ndarray, i_star: int) -> float:
    """Gain of moving all coin mass onto the biased coin.

    sum_h (p_h(0) + p_h(1)) r_h(i*) - (p_h(0) r_h(0) + p_h(1) r_h(1)).
    """
    coin_mass = probs[:, 0] + probs[:, 1]
    earned = probs[:, 0] * rewards[:, 0] + probs[:, 1] * rewards[:, 1]
    return float((coin_mass * rewards[:, i_star] - earned).sum())


class BestResponseAdversary:
    """Reward 1 on the learner's currently least-played action, 0 elsewhere."""

    lo = 0.0
    width = 1.0

    def __init__(self, n: int):
        self.n = n

    def next(self, p) -> np.ndarray:
        r = np.zeros(self.n)
        r[int(np.argmin(p))] = 1.0
        return r


class RandomAdversary:
    """i.i.d. rewards: uniform on ``[0, width]`` or Bernoulli with random means."""

    lo = 0.0

    def __init__(self, n: int, rng: np.random.Generator, kind: str = "uniform",
                 width: float = 1.0):
        if kind not in ("uniform", "bernoulli"):
            raise ParameterError(f"unknown kind {kind!r}")
        self.n, self.rng, self.kind, self.width = n, rng, kind, width
        self._means = rng.random(n) if kind == "bernoulli" else None

    def next(self, p=None) -> np.ndarray:
        if self.kind == "uniform":
            return self.width * self.rng.random(self.n)
        return self.width * (self.rng.random(self.n) < self._means)


def hardseq_config_for(n: int, Delta: float = 1 / 20, seed: int = 0) -> HardSeqConfig:
    """Hard-sequence shape with n = 2 K^L actions, preferring K = 2."""
    if n < 2 or n % 2:
        raise ParameterError(f"n must be even and >= 2, got {n}")
    half = n // 2
    if half == 1:
        return HardSeqConfig(2, 0, Delta, seed)
    L = round(math.log2(half))
    if 2 ** L == half:
        return HardSeqConfig(2, L, Delta, seed)
    return HardSeqConfig(half, 1, Delta, seed)

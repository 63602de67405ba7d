"""Two-party bit-metered CE protocol and utility-agnostic sparsification.

Alice runs multi-scale MWU. Each round she samples K actions from her current
strategy and sends them to Bob using ceil(log2 n) bits per index; Bob answers
with a best response to the uniform distribution over that multiset. Alice's
reward vector is her utility column against Bob's reply. Each party only ever
touches its own utility matrix.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, StructuralError
from .multiscale import MultiScaleConfig, MultiScaleLearner, msmwu_from_epsilon


def index_bits(n: int) -> int:
    """Fixed-width bits per action index."""
    return math.ceil(math.log2(n)) if n > 1 else 0


def comm_sample_count(n: int, epsilon: float) -> int:
    """K = ceil(8 ln^2(max(n, 3)) / eps^3)."""
    return math.ceil(8.0 * math.log(max(n, 3)) ** 2 / epsilon**3)


@dataclass
class Message:
    round: int
    sender: str
    bits: int
    payload_hash: str


@dataclass
class Transcript:
    messages: list[Message] = field(default_factory=list)
    total_bits: int = 0

    def log(self, rnd: int, sender: str, payload: np.ndarray, bits: int) -> None:
        digest = hashlib.sha256(np.asarray(payload, dtype=np.int64).tobytes()).hexdigest()[:16]
        self.messages.append(Message(rnd, sender, bits, digest))
        self.total_bits += bits

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["round", "sender", "bits", "payload_hash"])
            for msg in self.messages:
                w.writerow([msg.round, msg.sender, msg.bits, msg.payload_hash])


@dataclass
class TwoPlayerCeMatrix:
    """Joint distribution over (Alice action, Bob action); rows are Alice."""

    mass: np.ndarray

    def __post_init__(self):
        self.mass = np.asarray(self.mass, dtype=float)
        if self.mass.ndim != 2 or self.mass.shape[0] != self.mass.shape[1]:
            raise StructuralError(f"expected a square matrix, got {self.mass.shape}")
        if np.any(self.mass < 0) or abs(self.mass.sum() - 1.0) > 1e-12 * max(1, self.mass.size):
            raise StructuralError("mass must be nonnegative and sum to 1")

    @property
    def n(self) -> int:
        return self.mass.shape[0]

    @property
    def row_support(self) -> np.ndarray:
        return np.nonzero(self.mass.sum(axis=1) > 0)[0]

    @property
    def col_support(self) -> np.ndarray:
        return np.nonzero(self.mass.sum(axis=0) > 0)[0]

    def to_triplets(self, path) -> None:
        """Sparse text: ``n`` header line then ``row col mass`` (1-based)."""
        with open(path, "w") as fh:
            fh.write(f"{self.n}\n")
            for i, j in zip(*np.nonzero(self.mass)):
                fh.write(f"{i + 1} {j + 1} {float(self.mass[i, j])!r}\n")

    @classmethod
    def from_triplets(cls, path) -> "TwoPlayerCeMatrix":
        with open(path) as fh:
            n = int(fh.readline())
            mass = np.zeros((n, n))
            for line in fh:
                if line.strip():
                    i, j, v = line.split()
                    mass[int(i) - 1, int(j) - 1] = float(v)
        return cls(mass)


class Alice:
    """Row party: holds only her own utilities and the multi-scale learner."""

    def __init__(self, utilities: np.ndarray, config: MultiScaleConfig, K: int,
                 rng: np.random.Generator):
        self._u = np.asarray(utilities, dtype=float)
        self.learner = MultiScaleLearner(config)
        self.K = K
        self.rng = rng
        self.n = self._u.shape[0]
        self.empirical = np.zeros((self.n, self.n))
        self.strategy: np.ndarray | None = None

    def send(self) -> np.ndarray:
        self.strategy = self.learner.act()
        cdf = np.cumsum(self.strategy)
        idx = np.searchsorted(cdf, self.rng.random(self.K) * cdf[-1], side="right")
        return np.minimum(idx, self.n - 1)

    def receive(self, j: int) -> None:
        self.empirical[:, j] += self.strategy
        self.learner.update(self._u[:, j])


class Bob:
    """Column party: best-responds to the multiset using only his utilities.

    ``utilities[i, j]`` is Bob's payoff when Alice plays i and Bob plays j.
    """

    def __init__(self, utilities: np.ndarray):
        self._u = np.asarray(utilities, dtype=float)

    def reply(self, multiset: np.ndarray) -> int:
        counts = np.bincount(multiset, minlength=self._u.shape[0])
        return int(np.argmax(counts @ self._u))


@dataclass
class CommResult:
    matrix: TwoPlayerCeMatrix
    transcript: Transcript
    config: MultiScaleConfig
    K: int
    alice_rewards: np.ndarray
    alice_strategies: np.ndarray


def run_comm_protocol(alice_utilities, bob_utilities, epsilon: float,
                      rng: np.random.Generator | None = None,
                      config: MultiScaleConfig | None = None, K: int | None = None
                      ) -> CommResult:
    """Run the protocol for the multi-scale horizon; Alice keeps the output."""
    a = np.asarray(alice_utilities, dtype=float)
    b = np.asarray(bob_utilities, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape != b.shape:
        raise StructuralError("need two n x n utility matrices")
    if np.any(a < 0) or np.any(a > 1) or np.any(b < 0) or np.any(b > 1):
        raise StructuralError("utilities must lie in [0, 1]")
    if not 0 < epsilon <= 1:
        raise ParameterError(f"epsilon must lie in (0, 1], got {epsilon}")
    n = a.shape[0]
    rng = rng if rng is not None else np.random.default_rng()
    config = config if config is not None else msmwu_from_epsilon(epsilon / 2, n, 1.0)
    K = K if K is not None else comm_sample_count(n, epsilon)
    alice, bob = Alice(a, config, K, rng), Bob(b)
    transcript = Transcript()
    bits = index_bits(n)
    rewards = np.empty((config.T, n))
    strategies = np.empty((config.T, n))
    for t in range(config.T):
        multiset = alice.send()
        transcript.log(t + 1, "alice", multiset, K * bits)
        j = bob.reply(multiset)
        transcript.log(t + 1, "bob", np.array([j]), bits)
        strategies[t] = alice.strategy
        rewards[t] = a[:, j]
        alice.receive(j)
    return CommResult(TwoPlayerCeMatrix(alice.empirical / config.T), transcript, config, K,
                      rewards, strategies)


def sparsify_rows(n: int, col_support: int, delta: float) -> int:
    """D = ceil(8 S^2 ln(max(n, 2)) / delta^2)."""
    return math.ceil(8.0 * col_support**2 * math.log(max(n, 2)) / delta**2)


def sparsify(p: TwoPlayerCeMatrix, delta: float, rng: np.random.Generator) -> TwoPlayerCeMatrix:
    """Keep D rows sampled by row mass, each rescaled to a conditional row."""
    if not 0 < delta < 1:
        raise ParameterError(f"delta must lie in (0, 1), got {delta}")
    row_mass = p.mass.sum(axis=1)
    if row_mass.sum() <= 0:
        raise StructuralError("cannot sparsify a zero-mass matrix")
    D = sparsify_rows(p.n, p.col_support.size, delta)
    picks = rng.choice(p.n, size=D, p=row_mass / row_mass.sum())
    counts = np.bincount(picks, minlength=p.n)
    keep = counts > 0
    out = np.zeros_like(p.mass)
    out[keep] = p.mass[keep] * (counts[keep] / (D * row_mass[keep]))[:, None]
    return TwoPlayerCeMatrix(out / out.sum())

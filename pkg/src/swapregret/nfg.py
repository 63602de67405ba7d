"""Normal-form games, uncoupled multi-scale dynamics, and exact CE checks.

Each player runs its own multi-scale MWU. Per round the players commit mixed
strategies, build a reward vector from the others' strategies (exactly, or
by sampling K opponent profiles) and update. The output is the uniform
mixture over the T product profiles played.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import CapacityError, ParameterError, StructuralError
from .multiscale import MultiScaleConfig, MultiScaleLearner, msmwu_from_epsilon
from .regret import PlayRecord, _best_swap, swap_regret

DENSE_LIMIT = 10**7


class NormalFormGame:
    """An m-player game with n actions each and utilities in [0, 1].

    Backed either by a dense tensor ``utilities[i][a_1, ..., a_m]`` or by an
    oracle ``fn(i, profile) -> float``. Every payoff lookup made through
    :meth:`query` is counted in ``queries``.
    """

    def __init__(self, m: int, n: int, utilities: np.ndarray | None = None,
                 oracle: Callable[[int, tuple], float] | None = None):
        if (utilities is None) == (oracle is None):
            raise StructuralError("give exactly one of utilities or oracle")
        self.m, self.n = m, n
        self.queries = 0
        self._oracle = oracle
        self._dense = None
        if utilities is not None:
            u = np.asarray(utilities, dtype=float)
            if u.shape != (m,) + (n,) * m:
                raise StructuralError(f"utilities shape {u.shape}, expected {(m,) + (n,) * m}")
            if np.any(u < 0) or np.any(u > 1):
                raise StructuralError("utilities must lie in [0, 1]")
            self._dense = u

    @classmethod
    def from_bimatrix(cls, row_utilities, col_utilities) -> "NormalFormGame":
        a = np.asarray(row_utilities, dtype=float)
        b = np.asarray(col_utilities, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape != b.shape:
            raise StructuralError("bimatrix games need two equal square matrices")
        return cls(2, a.shape[0], np.stack([a, b]))

    @property
    def is_dense(self) -> bool:
        return self._dense is not None

    def query(self, i: int, profiles: np.ndarray) -> np.ndarray:
        """Utilities of player ``i`` at each row of an integer ``(q, m)`` array."""
        profiles = np.asarray(profiles, dtype=np.intp)
        self.queries += profiles.shape[0]
        if self._dense is not None:
            return self._dense[i][tuple(profiles.T)]
        return np.array([self._oracle(i, tuple(int(a) for a in row)) for row in profiles])

    def tensor(self) -> np.ndarray:
        """Full utility tensor for exact evaluation; not metered as queries."""
        if self._dense is None:
            size = self.m * self.n ** self.m
            if size > DENSE_LIMIT:
                raise CapacityError(f"dense evaluation needs {size} entries > {DENSE_LIMIT}")
            u = np.empty((self.m,) + (self.n,) * self.m)
            for idx in np.ndindex(*(self.n,) * self.m):
                for i in range(self.m):
                    u[(i,) + idx] = self._oracle(i, idx)
            self._dense = u
        return self._dense


def random_game(m: int, n: int, rng: np.random.Generator) -> NormalFormGame:
    return NormalFormGame(m, n, rng.random((m,) + (n,) * m))


def read_game(path) -> NormalFormGame:
    """Text format: ``nfg m n`` then ``a_1 ... a_m u_1 ... u_m`` (1-based actions)."""
    with open(path) as fh:
        lines = [ln.split() for ln in fh if ln.strip() and not ln.startswith("#")]
    head = lines[0]
    if len(head) != 3 or head[0] != "nfg":
        raise StructuralError(f"bad header {' '.join(head)!r}")
    m, n = int(head[1]), int(head[2])
    u = np.full((m,) + (n,) * m, np.nan)
    for row in lines[1:]:
        if len(row) != 2 * m:
            raise StructuralError(f"profile line needs {2 * m} fields: {' '.join(row)!r}")
        idx = tuple(int(a) - 1 for a in row[:m])
        u[(slice(None),) + idx] = [float(x) for x in row[m:]]
    if np.isnan(u).any():
        raise StructuralError("game file does not list every profile")
    return NormalFormGame(m, n, u)


def write_game(game: NormalFormGame, path) -> None:
    u = game.tensor()
    with open(path, "w") as fh:
        fh.write(f"nfg {game.m} {game.n}\n")
        for idx in np.ndindex(*(game.n,) * game.m):
            acts = " ".join(str(a + 1) for a in idx)
            pays = " ".join(repr(float(u[(i,) + idx])) for i in range(game.m))
            fh.write(f"{acts} {pays}\n")


@dataclass
class JointDistribution:
    """Weighted mixture of product distributions.

    ``factors[t, i]`` is player ``i``'s distribution in atom ``t``.
    """

    weights: np.ndarray
    factors: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.factors = np.asarray(self.factors, dtype=float)
        if self.factors.ndim != 3 or self.factors.shape[0] != self.weights.shape[0]:
            raise StructuralError("factors must be (atoms, players, actions)")
        if abs(self.weights.sum() - 1.0) > 1e-9 or np.any(self.weights < 0):
            raise StructuralError("atom weights must be nonnegative and sum to 1")
        if np.any(np.abs(self.factors.sum(axis=2) - 1.0) > 1e-9):
            raise StructuralError("every factor must be a distribution")

    @classmethod
    def uniform(cls, factors) -> "JointDistribution":
        factors = np.asarray(factors, dtype=float)
        return cls(np.full(factors.shape[0], 1.0 / factors.shape[0]), factors)

    @classmethod
    def from_matrix(cls, mass: np.ndarray) -> "JointDistribution":
        """Two-player joint matrix as point-mass atoms on its support."""
        mass = np.asarray(mass, dtype=float)
        rows, cols = np.nonzero(mass)
        n = mass.shape[0]
        factors = np.zeros((rows.size, 2, n))
        factors[np.arange(rows.size), 0, rows] = 1.0
        factors[np.arange(rows.size), 1, cols] = 1.0
        w = mass[rows, cols]
        return cls(w / w.sum(), factors)

    def marginal(self, i: int) -> np.ndarray:
        return self.weights @ self.factors[:, i, :]

    def to_matrix(self) -> np.ndarray:
        """Joint n x n matrix of a two-player distribution."""
        if self.factors.shape[1] != 2:
            raise StructuralError("to_matrix needs two players")
        return np.einsum("t,ti,tj->ij", self.weights, self.factors[:, 0], self.factors[:, 1])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["atom", "atom_weight", "player", "action", "prob"])
            for t, wt in enumerate(self.weights):
                for i in range(self.factors.shape[1]):
                    for a in np.nonzero(self.factors[t, i])[0]:
                        w.writerow([t + 1, repr(float(wt)), i + 1, a + 1,
                                    repr(float(self.factors[t, i, a]))])

    @classmethod
    def from_csv(cls, path, m: int, n: int) -> "JointDistribution":
        weights: dict[int, float] = {}
        entries = []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                t = int(row["atom"]) - 1
                weights[t] = float(row["atom_weight"])
                entries.append((t, int(row["player"]) - 1, int(row["action"]) - 1,
                                float(row["prob"])))
        factors = np.zeros((len(weights), m, n))
        for t, i, a, p in entries:
            factors[t, i, a] = p
        return cls(np.array([weights[t] for t in range(len(weights))]), factors)


@dataclass
class CeCertificate:
    """Per-player best swap functions and gains; the worst gain is epsilon."""

    swaps: list[np.ndarray]
    gains: list[float]

    @property
    def epsilon_achieved(self) -> float:
        return max(self.gains)


def _contract_others(u_i: np.ndarray, i: int, factors: np.ndarray) -> np.ndarray:
    """Rows r_t(j) = E_{a_-i ~ factors[t, -i]} u_i(j; a_-i) for every atom t."""
    m = factors.shape[1]
    x = np.moveaxis(u_i, i, 0)  # axes: own action, then the others in order
    others = [j for j in range(m) if j != i]
    if not others:
        return np.broadcast_to(x, (factors.shape[0], x.shape[0])).copy()
    x = np.tensordot(factors[:, others[0], :], x, axes=([1], [1]))
    for j in others[1:]:
        x = np.einsum("tib...,tb->ti...", x, factors[:, j, :])
    return x


def exact_reward_vector(game: NormalFormGame, i: int, strategies) -> np.ndarray:
    """Expected utility of each own action against the others' mixed strategies."""
    strategies = np.asarray(strategies, dtype=float)
    if strategies.shape != (game.m, game.n):
        raise StructuralError(f"strategies shape {strategies.shape}, expected {(game.m, game.n)}")
    if not game.is_dense and game.n ** game.m > DENSE_LIMIT:
        raise CapacityError(f"exact evaluation needs {game.n ** game.m} terms")
    return _contract_others(game.tensor()[i], i, strategies[None])[0]


def sample_profiles(strategies: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    """K joint action profiles drawn from the product of ``strategies``."""
    cdf = np.cumsum(strategies, axis=1)
    u = rng.random((K, strategies.shape[0]))
    prof = np.empty((K, strategies.shape[0]), dtype=np.intp)
    for j in range(strategies.shape[0]):
        prof[:, j] = np.minimum(np.searchsorted(cdf[j], u[:, j] * cdf[j, -1], side="right"),
                                strategies.shape[1] - 1)
    return prof


def sampled_reward_vector(game: NormalFormGame, i: int, strategies, K: int,
                          rng: np.random.Generator, profiles: np.ndarray | None = None
                          ) -> tuple[np.ndarray, int]:
    """Empirical reward vector from K opponent profiles; costs n * K queries.

    ``profiles`` lets callers share one batch of samples across players; the
    entry of player ``i`` in each shared profile is ignored.
    """
    if K < 1:
        raise ParameterError(f"K must be >= 1, got {K}")
    strategies = np.asarray(strategies, dtype=float)
    if profiles is None:
        profiles = sample_profiles(strategies, K, rng)
    n = game.n
    batch = np.repeat(profiles[None, :, :], n, axis=0)
    batch[:, :, i] = np.arange(n)[:, None]
    vals = game.query(i, batch.reshape(-1, game.m)).reshape(n, K)
    return vals.mean(axis=1), n * K


def sample_count(m: int, n: int, epsilon: float) -> int:
    """K = ceil(32 ln^2(max(mn, 3)) / eps^3)."""
    return math.ceil(32.0 * math.log(max(m * n, 3)) ** 2 / epsilon**3)


def verify_ce(game: NormalFormGame, dist: JointDistribution) -> CeCertificate:
    """Exact best swap gain per player under ``dist``.

    gain(j -> j') = sum_t w_t p_{i,t}(j) (r_t(j') - r_t(j)); the best swap
    function picks the best target separately for each recommendation j.
    """
    u = game.tensor()
    swaps, gains = [], []
    for i in range(game.m):
        r = _contract_others(u[i], i, dist.factors)
        gm = (dist.factors[:, i, :] * dist.weights[:, None]).T @ r
        gain, phi = _best_swap(gm)
        swaps.append(phi)
        gains.append(max(gain, 0.0))
    return CeCertificate(swaps, gains)


@dataclass
class DynamicsResult:
    distribution: JointDistribution
    certificate: CeCertificate | None
    queries: int
    config: MultiScaleConfig
    K: int | None
    records: list[PlayRecord] = field(default_factory=list)

    def swap_regrets(self) -> list[float]:
        return [swap_regret(r)[0] for r in self.records]


def run_uncoupled_dynamics(game: NormalFormGame, epsilon: float, mode: str = "exact",
                           rng: np.random.Generator | None = None,
                           config: MultiScaleConfig | None = None, K: int | None = None,
                           share_samples: bool = True, certify: bool = True
                           ) -> DynamicsResult:
    """Every player runs multi-scale MWU; returns the empirical mixture.

    Without ``config`` the horizon comes from ``msmwu_from_epsilon(eps/2, n)``,
    which overflows for most eps < 1/2; pass an explicit configuration then.
    In sampled mode ``K`` defaults to :func:`sample_count`.
    """
    if not 0 < epsilon <= 1:
        raise ParameterError(f"epsilon must lie in (0, 1], got {epsilon}")
    if mode not in ("exact", "sampled"):
        raise ParameterError(f"unknown mode {mode!r}")
    rng = rng if rng is not None else np.random.default_rng()
    if config is None:
        config = msmwu_from_epsilon(epsilon / 2, game.n, 1.0)
    if config.n != game.n or config.B != 1.0:
        raise ParameterError("config must have n equal to the game's and B = 1")
    if mode == "sampled":
        K = K if K is not None else sample_count(game.m, game.n, epsilon)
    m, n, T = game.m, game.n, config.T
    learners = [MultiScaleLearner(config) for _ in range(m)]
    factors = np.empty((T, m, n))
    rewards = np.empty((m, T, n))
    queries = 0
    dense = game.tensor() if mode == "exact" else None
    for t in range(T):
        strat = np.stack([lr.act() for lr in learners])
        factors[t] = strat
        shared = sample_profiles(strat, K, rng) if mode == "sampled" and share_samples else None
        for i in range(m):
            if mode == "exact":
                rewards[i, t] = _contract_others(dense[i], i, strat[None])[0]
            else:
                rewards[i, t], cost = sampled_reward_vector(game, i, strat, K, rng, shared)
                queries += cost
        for i in range(m):
            learners[i].update(rewards[i, t])
    dist = JointDistribution.uniform(factors)
    records = [PlayRecord(factors[:, i, :], rewards[i]) for i in range(m)]
    cert = verify_ce(game, dist) if certify else None
    return DynamicsResult(dist, cert, queries, config, K, records)

"""Play records, exact external/swap regret, and the MWU learner.

Indices are 0-based in memory. CSV files written here use 1-based days and
actions so they read naturally next to the rest of the experiment output.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import LifecycleError, ParameterError, StructuralError, WidthViolationError

PROB_ATOL = 1e-12
# Relative slack for width checks; aggregated meta-day sums pick up rounding.
WIDTH_RTOL = 1e-9
# Beyond this many days, column sums switch to chunked compensated summation.
COMPENSATED_THRESHOLD = 1_000_000


def check_distribution(p, n: int | None = None) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or (n is not None and p.shape[0] != n):
        raise StructuralError(f"expected a distribution over {n} actions, got shape {p.shape}")
    if np.any(p < 0) or abs(p.sum() - 1.0) > PROB_ATOL * max(1, p.shape[0]):
        raise StructuralError("probabilities must be nonnegative and sum to 1")
    return p


def check_rewards(r, n: int, lo: float = 0.0, width: float = 1.0) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if r.shape != (n,):
        raise StructuralError(f"reward vector has shape {r.shape}, expected ({n},)")
    slack = WIDTH_RTOL * max(1.0, width)
    low, high = r.min(), r.max()
    # written so that NaN fails the test
    if not (low >= lo - slack and high <= lo + width + slack):
        raise WidthViolationError(
            f"reward outside [{lo}, {lo + width}]: min={r.min()}, max={r.max()}"
        )
    return r


class CompensatedSum:
    """Elementwise Neumaier summation for a running vector total."""

    def __init__(self, shape):
        self.total = np.zeros(shape)
        self._comp = np.zeros(shape)

    def add(self, x) -> None:
        t = self.total + x
        big = np.abs(self.total) >= np.abs(x)
        self._comp += np.where(big, (self.total - t) + x, (x - t) + self.total)
        self.total = t

    @property
    def value(self) -> np.ndarray:
        return self.total + self._comp

    def reset(self, index=...) -> None:
        self.total[index] = 0.0
        self._comp[index] = 0.0


@dataclass
class PlayRecord:
    """The sequence of (p_t, r_t) pairs of one run.

    ``probs`` and ``rewards`` are ``(T, n)`` arrays. Rewards are declared to lie
    in ``[lo, lo + width]``.
    """

    probs: np.ndarray
    rewards: np.ndarray
    width: float = 1.0
    lo: float = 0.0

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        self.rewards = np.asarray(self.rewards, dtype=float)
        if self.probs.ndim != 2 or self.probs.shape != self.rewards.shape:
            raise StructuralError(
                f"probs {self.probs.shape} and rewards {self.rewards.shape} disagree"
            )

    @classmethod
    def from_days(cls, days: Iterable[tuple[Sequence[float], Sequence[float]]],
                  width: float = 1.0, lo: float = 0.0) -> "PlayRecord":
        days = list(days)
        if not days:
            raise StructuralError("empty record")
        n = len(days[0][0])
        for t, (p, r) in enumerate(days):
            if len(p) != n or len(r) != n:
                raise StructuralError(f"day {t + 1} has dimension {len(p)}/{len(r)}, expected {n}")
        return cls(np.array([d[0] for d in days]), np.array([d[1] for d in days]), width, lo)

    @property
    def horizon(self) -> int:
        return self.probs.shape[0]

    @property
    def n(self) -> int:
        return self.probs.shape[1]

    def __len__(self):
        return self.horizon

    def slice(self, start: int, stop: int) -> "PlayRecord":
        return PlayRecord(self.probs[start:stop], self.rewards[start:stop], self.width, self.lo)

    @staticmethod
    def concat(records: Sequence["PlayRecord"]) -> "PlayRecord":
        if not records:
            raise StructuralError("nothing to concatenate")
        return PlayRecord(
            np.concatenate([r.probs for r in records]),
            np.concatenate([r.rewards for r in records]),
            max(r.width for r in records),
            min(r.lo for r in records),
        )

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["day", "action", "prob", "reward"])
            for t in range(self.horizon):
                for i in range(self.n):
                    w.writerow([t + 1, i + 1, repr(float(self.probs[t, i])),
                                repr(float(self.rewards[t, i]))])

    @classmethod
    def from_csv(cls, path, width: float = 1.0, lo: float = 0.0) -> "PlayRecord":
        rows: dict[int, dict[int, tuple[float, float]]] = {}
        with open(Path(path), newline="") as fh:
            for row in csv.DictReader(fh):
                rows.setdefault(int(row["day"]), {})[int(row["action"])] = (
                    float(row["prob"]), float(row["reward"]))
        days = []
        for day in sorted(rows):
            acts = rows[day]
            days.append(([acts[a][0] for a in sorted(acts)], [acts[a][1] for a in sorted(acts)]))
        return cls.from_days(days, width, lo)


@dataclass
class RegretReport:
    external: float
    swap: float
    best_swap: np.ndarray
    best_fixed_action: int


def _column_sums(x: np.ndarray) -> np.ndarray:
    if x.shape[0] <= COMPENSATED_THRESHOLD:
        return x.sum(axis=0)
    acc = CompensatedSum(x.shape[1:])
    for start in range(0, x.shape[0], 1 << 16):
        acc.add(x[start:start + (1 << 16)].sum(axis=0))
    return acc.value


def _gain_matrix(record: PlayRecord) -> np.ndarray:
    """M[i, j] = sum_t p_t(i) r_t(j)."""
    p, r = record.probs, record.rewards
    if p.shape[0] <= COMPENSATED_THRESHOLD:
        return p.T @ r
    acc = CompensatedSum((p.shape[1], p.shape[1]))
    for start in range(0, p.shape[0], 1 << 16):
        acc.add(p[start:start + (1 << 16)].T @ r[start:start + (1 << 16)])
    return acc.value


def _check_nonempty(record: PlayRecord) -> None:
    if record.horizon == 0:
        raise StructuralError("empty record")


def external_regret(record: PlayRecord) -> float:
    _check_nonempty(record)
    cum = _column_sums(record.rewards)
    earned = _column_sums((record.probs * record.rewards).sum(axis=1)[:, None])[0]
    return float(cum.max() - earned)


def swap_regret(record: PlayRecord) -> tuple[float, np.ndarray]:
    """Best swap-function gain and a maximizing swap function.

    The objective separates over source actions, so each ``phi[i]`` is an
    argmax of row ``i`` of the gain matrix. Ties keep ``phi[i] = i`` when
    staying is optimal, otherwise go to the smallest index.
    """
    _check_nonempty(record)
    m = _gain_matrix(record)
    return _best_swap(m)


def _best_swap(m: np.ndarray) -> tuple[float, np.ndarray]:
    idx = np.arange(m.shape[0])
    phi = np.argmax(m, axis=1)
    stay = m[idx, idx] >= m[idx, phi]
    phi = np.where(stay, idx, phi)
    value = m[idx, phi].sum() - np.trace(m)
    return float(value), phi


def regret_report(record: PlayRecord) -> RegretReport:
    swap, phi = swap_regret(record)
    cum = _column_sums(record.rewards)
    return RegretReport(external_regret(record), swap, phi, int(np.argmax(cum)))


def mwu_step_size(n: int, horizon: int, width: float) -> float:
    """eta = sqrt(ln(n) / T) / B."""
    return math.sqrt(math.log(n) / horizon) / width


def mwu_regret_bound(n: int, horizon: int, width: float) -> float:
    return 2.0 * width * math.sqrt(horizon * math.log(n))


class MwuLearner:
    """Multiplicative weights over ``n`` actions with a fixed horizon.

    p_t(i) is proportional to exp(eta * sum_{tau < t} r_tau(i)); the exponent is
    shifted by its maximum before exponentiating.
    """

    def __init__(self, n: int, horizon: int, width: float = 1.0, lo: float = 0.0,
                 eta: float | None = None):
        if n < 1 or horizon < 1 or not width > 0:
            raise ParameterError(f"need n>=1, T>=1, B>0; got n={n}, T={horizon}, B={width}")
        self.n = int(n)
        self.horizon = int(horizon)
        self.width = float(width)
        self.lo = float(lo)
        self.eta = mwu_step_size(n, horizon, width) if eta is None else float(eta)
        self.t = 0
        self._cum = CompensatedSum(self.n)
        self._p: np.ndarray | None = None

    @property
    def cumulative(self) -> np.ndarray:
        return self._cum.value

    def act(self) -> np.ndarray:
        if self._p is None:
            self._p = softmax(self.eta * self._cum.value)
        return self._p

    def update(self, r) -> None:
        if self.t >= self.horizon:
            raise LifecycleError(f"MWU horizon {self.horizon} exhausted")
        r = check_rewards(r, self.n, self.lo, self.width)
        self._cum.add(r)
        self.t += 1
        self._p = None


class UniformLearner:
    """Plays the uniform distribution forever; a regret baseline."""

    def __init__(self, n: int):
        self.n = n
        self._p = np.full(n, 1.0 / n)

    def act(self) -> np.ndarray:
        return self._p

    def update(self, r) -> None:
        pass


def softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max())
    return z / z.sum()

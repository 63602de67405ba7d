"""Multi-scale MWU: 2^S nested MWU threads over geometrically longer meta-days.

Thread k (1-based) restarts every H^k days. Within a restart it runs an MWU
for H rounds, each round being a meta-day of H^(k-1) days whose summed reward
is fed to the inner learner with width H^(k-1) * B. The played distribution
is the uniform mixture of the thread strategies.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigurationError, LifecycleError, ParameterError, StructuralError
from .regret import COMPENSATED_THRESHOLD, CompensatedSum, MwuLearner, PlayRecord, check_rewards

U64_MAX = 2**64 - 1


@dataclass(frozen=True)
class MultiScaleConfig:
    n: int
    B: float
    S: int
    H: int
    T: int
    epsilon: float | None = None

    def __post_init__(self):
        if self.n < 1 or not self.B > 0:
            raise ParameterError(f"need n>=1 and B>0, got n={self.n}, B={self.B}")
        if self.S < 0 or self.H < 2:
            raise ParameterError(f"need S>=0 and H>=2, got S={self.S}, H={self.H}")
        if self.T != self.H ** (2 ** self.S):
            raise ParameterError(f"T={self.T} must equal H^(2^S)={self.H}^{2 ** self.S}")

    @classmethod
    def from_blocks(cls, n: int, B: float, S: int, H: int) -> "MultiScaleConfig":
        return cls(n, B, S, H, horizon_for(S, H))

    @property
    def threads(self) -> int:
        return 2 ** self.S

    @property
    def delta(self) -> float:
        """2 sqrt(ln(n) / H), the per-day cost term of the regret bound."""
        return 2.0 * math.sqrt(math.log(self.n) / self.H)

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, path) -> "MultiScaleConfig":
        with open(path) as fh:
            return cls(**json.load(fh))


def horizon_for(S: int, H: int) -> int:
    if S < 0 or H < 2:
        raise ParameterError(f"need S>=0 and H>=2, got S={S}, H={H}")
    T = H ** (2 ** S)
    if T > U64_MAX:
        raise ConfigurationError(
            f"horizon H^(2^S) = {H}^{2 ** S} ~ 10^{(2 ** S) * math.log10(H):.1f} "
            "exceeds 64-bit range"
        )
    return T


def msmwu_from_epsilon(epsilon: float, n: int, B: float = 1.0) -> MultiScaleConfig:
    """Parameters achieving epsilon * T * B swap regret.

    S = ceil(log2(1/eps)) + 1 and H = ceil(4 ln(max(n, 2)) 4^S).
    """
    if not 0 < epsilon <= 1:
        raise ParameterError(f"epsilon must lie in (0, 1], got {epsilon}")
    S = math.ceil(math.log2(1.0 / epsilon)) + 1
    H = math.ceil(4.0 * math.log(max(n, 2)) * 2 ** (2 * S))
    return MultiScaleConfig(n, B, S, H, horizon_for(S, H), epsilon)


class MultiScaleLearner:
    """Algorithm state for one run of multi-scale MWU over ``config.T`` days.

    Rewards may carry a lower offset ``lo``; they are shifted into ``[0, B]``
    before aggregation, which leaves every softmax unchanged.
    """

    def __init__(self, config: MultiScaleConfig, lo: float = 0.0):
        self.config = config
        self.lo = float(lo)
        self.t = 0
        c = config
        self.meta = [c.H ** (k - 1) for k in range(1, c.threads + 1)]
        self.period = [c.H ** k for k in range(1, c.threads + 1)]
        self.mwus = [self._fresh(k) for k in range(c.threads)]
        self._compensated = c.T > COMPENSATED_THRESHOLD
        self._buf = CompensatedSum((c.threads, c.n)) if self._compensated else np.zeros((c.threads, c.n))
        self.inner_updates = [0] * c.threads
        self._q = np.stack([m.act() for m in self.mwus])
        self._p: np.ndarray | None = None

    def _fresh(self, k: int) -> MwuLearner:
        c = self.config
        return MwuLearner(c.n, c.H, float(self.meta[k]) * c.B)

    @property
    def thread_strategies(self) -> np.ndarray:
        """Current q_{k,t}, one row per thread."""
        return self._q

    def act(self) -> np.ndarray:
        if self.t >= self.config.T:
            raise LifecycleError(f"horizon T={self.config.T} reached")
        if self._p is None:
            self._p = self._q.sum(axis=0) / self.config.threads
        return self._p

    def update(self, r) -> None:
        c = self.config
        if self.t >= c.T:
            raise LifecycleError(f"horizon T={c.T} reached")
        r = check_rewards(r, c.n, self.lo, c.B)
        x = r - self.lo
        self.t += 1
        if self._compensated:
            self._buf.add(x)
            sums = self._buf.value
        else:
            self._buf += x
            sums = self._buf
        for k in range(c.threads):
            if self.t % self.meta[k]:
                # meta-days only get longer with k
                break
            self.mwus[k].update(sums[k].copy())
            self.inner_updates[k] += 1
            if self._compensated:
                self._buf.reset(k)
            else:
                self._buf[k] = 0.0
            if self.t % self.period[k] == 0 and self.t < c.T:
                self.mwus[k] = self._fresh(k)
            self._q[k] = self.mwus[k].act()
            self._p = None

    @property
    def finished(self) -> bool:
        return self.t >= self.config.T


def eq3_bound(record: PlayRecord, S: int, H: int, B: float) -> float:
    """Deterministic swap-regret bound of a full multi-scale run.

    2^-S (sum_t ||r_t||_inf - ||sum_t r_t||_inf) + delta T B, evaluated on the
    rewards shifted by the record's lower offset into ``[0, B]``.
    """
    if S < 0 or H < 1:
        raise ParameterError(f"need S>=0 and H>=1, got S={S}, H={H}")
    T = H ** (2 ** S)
    if record.horizon != T:
        raise StructuralError(f"record has {record.horizon} days, expected H^(2^S) = {T}")
    return prefix_eq3_bound(record.rewards - record.lo, S, H, B)


def prefix_eq3_bound(shifted_rewards: np.ndarray, S: int, H: int, B: float) -> float:
    """The same expression on any prefix; guaranteed only at the full horizon."""
    n = shifted_rewards.shape[1]
    per_day = np.abs(shifted_rewards).max(axis=1).sum()
    total = np.abs(shifted_rewards.sum(axis=0)).max()
    delta = 2.0 * math.sqrt(math.log(n) / H)
    return float((per_day - total) / 2 ** S + delta * shifted_rewards.shape[0] * B)

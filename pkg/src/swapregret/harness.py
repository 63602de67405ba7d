"""Play loops, the restart wrapper, seeding, and the experiment runners.

Every experiment writes CSV files into an output directory and returns the
list of paths. Randomness comes from one global seed expanded by fixed
labels, so adding a component never shifts the streams of the others.
"""

from __future__ import annotations

import csv
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import adversaries as adv
from .comm import TwoPlayerCeMatrix, run_comm_protocol, sparsify, sparsify_rows
from .efg import random_tree_with, run_nfce_dynamics, verify_nfce
from .errors import ParameterError
from .multiscale import MultiScaleConfig, MultiScaleLearner, eq3_bound
from .nfg import JointDistribution, NormalFormGame, random_game, run_uncoupled_dynamics, verify_ce
from .regret import (MwuLearner, PlayRecord, UniformLearner, external_regret,
                     mwu_regret_bound, swap_regret)

WORKERS_ENV = "SWAPREGRET_WORKERS"
KINDS = ("regret-curve", "eq3-check", "hardseq", "nfg-dynamics", "comm", "sparsify",
         "efg-nfce", "twocoin")


def derive_rng(seed: int, label: str, *extra: int) -> np.random.Generator:
    """Independent stream for ``label`` under a global ``seed``."""
    return np.random.default_rng([seed, zlib.crc32(label.encode()), *extra])


def play(learner, adversary, horizon: int) -> PlayRecord:
    n = adversary.n
    probs = np.empty((horizon, n))
    rewards = np.empty((horizon, n))
    for t in range(horizon):
        p = learner.act()
        r = adversary.next(p)
        probs[t] = p
        rewards[t] = r
        learner.update(r)
    return PlayRecord(probs, rewards, adversary.width, adversary.lo)


class RestartingLearner:
    """Runs a fresh learner from ``factory()`` every ``segment`` days."""

    def __init__(self, factory: Callable[[], object], segment: int, total: int):
        if segment < 1:
            raise ParameterError(f"segment length must be >= 1, got {segment}")
        self.factory = factory
        self.segment = segment
        self.total = total
        self.t = 0
        self.restarts = 0
        self._inner = factory()

    def act(self) -> np.ndarray:
        return self._inner.act()

    def update(self, r) -> None:
        self._inner.update(r)
        self.t += 1
        if self.t % self.segment == 0 and self.t < self.total:
            self._inner = self.factory()
            self.restarts += 1


def restart_wrapper(factory: Callable[[], object], segment: int, total: int) -> RestartingLearner:
    return RestartingLearner(factory, segment, total)


def prefix_swap_regret(record: PlayRecord) -> np.ndarray:
    """Swap regret of every prefix of the record, one entry per day."""
    gm = np.cumsum(record.probs[:, :, None] * record.rewards[:, None, :], axis=0)
    return gm.max(axis=2).sum(axis=1) - np.trace(gm, axis1=1, axis2=2)


def prefix_external_regret(record: PlayRecord) -> np.ndarray:
    cum = np.cumsum(record.rewards, axis=0)
    earned = np.cumsum((record.probs * record.rewards).sum(axis=1))
    return cum.max(axis=1) - earned


@dataclass
class ExperimentConfig:
    kind: str
    seed: int = 0
    out: str = "out"
    n: int = 4
    eps: float = 0.4
    K: int = 2
    L: int = 3
    delta: float = 0.05
    H: int = 4
    S: int = 2
    players: int = 2
    T: int = 1000
    reps: int = 5
    adversary: str = "adaptive"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown experiment {self.kind!r}; choose from {', '.join(KINDS)}")
        if self.reps < 1:
            raise ParameterError("reps must be >= 1")


def _write_rows(path: Path, header, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
    return path


def _fan_out(fn, args: list) -> list:
    workers = int(os.environ.get(WORKERS_ENV, "1"))
    if workers <= 1 or len(args) <= 1:
        return [fn(a) for a in args]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, args))


def _adversary(kind: str, n: int, rng: np.random.Generator, seed: int):
    if kind == "adaptive":
        return adv.BestResponseAdversary(n)
    if kind == "random":
        return adv.RandomAdversary(n, rng)
    if kind == "hardseq":
        return adv.HardSequenceAdversary(adv.hardseq_config_for(n, seed=seed))
    raise ParameterError(f"unknown adversary {kind!r}; use adaptive, random or hardseq")


def _regret_curve(cfg: ExperimentConfig, out: Path) -> list[Path]:
    rng = derive_rng(cfg.seed, "regret-curve")
    a = _adversary(cfg.adversary, cfg.n, rng, cfg.seed)
    rec = play(MwuLearner(cfg.n, cfg.T, a.width, a.lo), a, cfg.T)
    ext, swp = prefix_external_regret(rec), prefix_swap_regret(rec)
    rows = [(t + 1, ext[t], swp[t], mwu_regret_bound(cfg.n, cfg.T, a.width)) for t in range(cfg.T)]
    return [_write_rows(out / "regret_curve.csv",
                        ["day", "external_regret", "swap_regret", "final_bound"], rows)]


def _eq3_check(cfg: ExperimentConfig, out: Path) -> list[Path]:
    config = MultiScaleConfig.from_blocks(cfg.n, 1.0, cfg.S, cfg.H)
    rng = derive_rng(cfg.seed, "eq3-check")
    a = _adversary(cfg.adversary, cfg.n, rng, cfg.seed)
    if a.lo != 0.0:
        config = MultiScaleConfig.from_blocks(cfg.n, a.width, cfg.S, cfg.H)
    rec = play(MultiScaleLearner(config, lo=a.lo), a, config.T)
    swp = prefix_swap_regret(rec)
    shifted = rec.rewards - rec.lo
    per_day = np.cumsum(shifted.max(axis=1))
    totals = np.cumsum(shifted, axis=0).max(axis=1)
    days = np.arange(1, config.T + 1)
    bound = (per_day - totals) / config.threads + config.delta * days * config.B
    bound[-1] = eq3_bound(rec, config.S, config.H, config.B)
    rows = [(t + 1, swp[t], bound[t]) for t in range(config.T)]
    return [_write_rows(out / "eq3_check.csv", ["day", "swap_regret_so_far", "eq3_bound"], rows)]


def _hardseq_rep(args) -> list[tuple]:
    cfg, rep = args
    hs = adv.HardSeqConfig(cfg.K, cfg.L, cfg.delta, seed=cfg.seed)
    stream = adv.hardseq_stream(hs, rng=derive_rng(cfg.seed, "hardseq", rep))
    T = stream.realized_length
    rows = []
    learners = {"mwu": MwuLearner(hs.n, T, adv.HARDSEQ_WIDTH, adv.HARDSEQ_LO),
                "uniform": UniformLearner(hs.n)}
    for name, learner in learners.items():
        probs = np.empty((T, hs.n))
        for t in range(T):
            probs[t] = learner.act()
            learner.update(stream.rewards[t])
        rec = PlayRecord(probs, stream.rewards, adv.HARDSEQ_WIDTH, adv.HARDSEQ_LO)
        rows.append((rep, name, T, swap_regret(rec)[0], external_regret(rec)))
    return rows


def _hardseq(cfg: ExperimentConfig, out: Path) -> list[Path]:
    results = _fan_out(_hardseq_rep, [(cfg, r) for r in range(cfg.reps)])
    rows = [row for rep in results for row in rep]
    return [_write_rows(out / "hardseq.csv",
                        ["rep", "learner", "T_alg", "swap_regret", "external_regret"], rows)]


def _nfg_rep(args) -> tuple:
    cfg, rep = args
    game = random_game(cfg.players, cfg.n, derive_rng(cfg.seed, "nfg-game", rep))
    config = MultiScaleConfig.from_blocks(cfg.n, 1.0, cfg.S, cfg.H)
    mode = cfg.extra.get("mode", "exact")
    res = run_uncoupled_dynamics(game, cfg.eps, mode, derive_rng(cfg.seed, "nfg-run", rep),
                                 config=config, K=cfg.extra.get("samples"))
    worst = max(res.swap_regrets()) / config.T
    return (rep, config.T, res.certificate.epsilon_achieved, worst, res.queries)


def _nfg_dynamics(cfg: ExperimentConfig, out: Path) -> list[Path]:
    rows = _fan_out(_nfg_rep, [(cfg, r) for r in range(cfg.reps)])
    return [_write_rows(out / "nfg_dynamics.csv",
                        ["rep", "T", "epsilon_achieved", "max_swap_regret_per_day", "queries"],
                        rows)]


def _comm_rep(args) -> tuple:
    cfg, rep = args
    g = derive_rng(cfg.seed, "comm-game", rep)
    a, b = g.random((cfg.n, cfg.n)), g.random((cfg.n, cfg.n))
    config = MultiScaleConfig.from_blocks(cfg.n, 1.0, cfg.S, cfg.H)
    res = run_comm_protocol(a, b, cfg.eps, derive_rng(cfg.seed, "comm-run", rep), config=config)
    game = NormalFormGame.from_bimatrix(a, b)
    cert = verify_ce(game, JointDistribution.from_matrix(res.matrix.mass))
    return (rep, config.T, res.K, res.transcript.total_bits, cert.epsilon_achieved)


def _comm(cfg: ExperimentConfig, out: Path) -> list[Path]:
    rows = _fan_out(_comm_rep, [(cfg, r) for r in range(cfg.reps)])
    return [_write_rows(out / "comm.csv", ["rep", "T", "K", "total_bits", "epsilon_achieved"], rows)]


def _sparsify(cfg: ExperimentConfig, out: Path) -> list[Path]:
    game = random_game(2, cfg.n, derive_rng(cfg.seed, "sparsify-game"))
    config = MultiScaleConfig.from_blocks(cfg.n, 1.0, cfg.S, cfg.H)
    res = run_uncoupled_dynamics(game, cfg.eps, "exact", derive_rng(cfg.seed, "sparsify-run"),
                                 config=config)
    p = TwoPlayerCeMatrix(res.distribution.to_matrix())
    base = verify_ce(game, JointDistribution.from_matrix(p.mass)).epsilon_achieved
    D = sparsify_rows(p.n, p.col_support.size, cfg.delta)
    rows = []
    for rep in range(cfg.reps):
        q = sparsify(p, cfg.delta, derive_rng(cfg.seed, "sparsify", rep))
        eps = verify_ce(game, JointDistribution.from_matrix(q.mass)).epsilon_achieved
        rows.append((rep, base, eps, q.row_support.size, q.col_support.size,
                     p.col_support.size, D))
    return [_write_rows(out / "sparsify.csv",
                        ["rep", "input_epsilon", "output_epsilon", "row_support", "col_support",
                         "input_col_support", "D"], rows)]


def _efg_rep(args) -> tuple:
    cfg, rep = args
    tree = random_tree_with(derive_rng(cfg.seed, "efg-tree", rep), players=cfg.players,
                            phi=cfg.extra.get("phi", 2), actions=cfg.n)
    dist = run_nfce_dynamics(tree, cfg.eps, derive_rng(cfg.seed, "efg-run", rep),
                             blocks=(cfg.H, cfg.S))
    gains = verify_nfce(tree, dist).gains
    return (rep, len(tree.nodes), len(dist.profiles), max(gains))


def _efg_nfce(cfg: ExperimentConfig, out: Path) -> list[Path]:
    rows = _fan_out(_efg_rep, [(cfg, r) for r in range(cfg.reps)])
    return [_write_rows(out / "efg_nfce.csv", ["rep", "nodes", "atoms", "epsilon_achieved"], rows)]


def _twocoin(cfg: ExperimentConfig, out: Path) -> list[Path]:
    conf = adv.TwoCoinConfig(cfg.delta, cfg.seed)
    uniform = np.full((conf.H, 3), 1.0 / 3)
    rows = []
    for rep in range(cfg.reps):
        game = adv.TwoCoinGame(conf, derive_rng(cfg.seed, "twocoin", rep))
        rewards = np.array([game.next() for _ in range(conf.H)])
        gain = adv.swap_to_biased_gain(uniform, rewards, game.i_star)
        rows.append((rep, game.i_star + 1, conf.H, gain,
                     expected_twocoin_gain(cfg.delta, conf.H, 2 / 3)))
    return [_write_rows(out / "twocoin.csv",
                        ["rep", "biased_coin", "H", "swap_gain", "expected_gain"], rows)]


RUNNERS = {
    "regret-curve": _regret_curve,
    "eq3-check": _eq3_check,
    "hardseq": _hardseq,
    "nfg-dynamics": _nfg_dynamics,
    "comm": _comm,
    "sparsify": _sparsify,
    "efg-nfce": _efg_nfce,
    "twocoin": _twocoin,
}


def run_experiment(cfg: ExperimentConfig) -> list[Path]:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return RUNNERS[cfg.kind](cfg, out)


def expected_twocoin_gain(delta: float, H: int, coin_mass: float) -> float:
    """E[swap-to-i* gain] = Delta * H / 2 * (mass on the two coins)."""
    return delta * H / 2 * coin_mass

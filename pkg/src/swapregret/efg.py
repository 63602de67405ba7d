"""Extensive-form games with perfect recall and implicit MWU over pure strategies.

A player's pure strategy picks one action at each of its information sets.
Its utility against fixed opponents is a sum of per-sequence weights
W(sigma) over the player's sequences (infoset, action) that the strategy is
consistent with, so the MWU distribution over the exponentially large
strategy space factorizes over the infoset tree. ``build_partition`` fills the
log-domain tables bottom-up and ``sample_strategy`` draws from that
distribution top-down, never materializing the strategy space.

Sequences of a player are numbered with 0 for the empty sequence. Infosets of
a player are indexed in parent-before-child order, ties by load order; a
strategy is an integer array of action indices in that order.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import CapacityError, ConfigurationError, StructuralError, ValidationError
from .multiscale import MultiScaleConfig, horizon_for, msmwu_from_epsilon
from .nfg import CeCertificate
from .regret import _best_swap, mwu_step_size

ENUM_LIMIT = 1_000_000
VERIFY_LIMIT = 12
PROB_ATOL = 1e-9


@dataclass
class Node:
    id: str
    kind: str  # "decision" | "chance" | "terminal"
    player: int = -1
    infoset: str | None = None
    probs: tuple[float, ...] = ()
    payoffs: tuple[float, ...] = ()
    children: list[tuple[str, int]] = field(default_factory=list)


@dataclass(frozen=True)
class Infoset:
    player: int
    id: str
    actions: tuple[str, ...]


class PlayerView:
    """Sequence-form bookkeeping for one player, derived from a tree."""

    def __init__(self, tree: "GameTree", player: int, order: list[str], parent_seq: dict,
                 term_seq: np.ndarray, constraints: np.ndarray):
        self.player = player
        self.infosets = order
        self.index = {h: k for k, h in enumerate(order)}
        self.sizes = np.array([len(tree.infosets[(player, h)].actions) for h in order], dtype=int)
        self.labels = [tree.infosets[(player, h)].actions for h in order]
        # sequence ids: 0 is empty, then (h, a) in infoset order
        self.seq_id = np.zeros((len(order), int(self.sizes.max(initial=1))), dtype=int)
        self.owner = [(-1, -1)]
        for k, size in enumerate(self.sizes):
            for a in range(size):
                self.seq_id[k, a] = len(self.owner)
                self.owner.append((k, a))
        self.n_seq = len(self.owner)
        self.parent = np.array([parent_seq[h] for h in order], dtype=int)
        self.children: list[list[int]] = [[] for _ in range(self.n_seq)]
        for k in range(len(order)):
            self.children[self.parent[k]].append(k)
        # free[s]: summed log-cardinality of all infosets below sequence s
        self.free = np.zeros(self.n_seq)
        for k in reversed(range(len(order))):
            below = math.log(self.sizes[k]) + sum(self.free[self.seq_id[k, a]]
                                                  for a in range(self.sizes[k]))
            self.free[self.parent[k]] += below
        self.term_seq = term_seq
        self.constraints = constraints

    @property
    def n_infosets(self) -> int:
        return len(self.infosets)

    @property
    def log_strategies(self) -> float:
        return float(np.log(self.sizes).sum())

    @property
    def n_strategies(self) -> int:
        return int(np.prod(self.sizes, dtype=object))

    def consistent(self, strategies: np.ndarray) -> np.ndarray:
        """(batch, n_terminals) mask of terminals whose player path matches."""
        strategies = np.atleast_2d(strategies)
        c = self.constraints[None, :, :]
        return np.all((c < 0) | (c == strategies[:, None, :]), axis=2)

    def sequence_mask(self, strategies: np.ndarray) -> np.ndarray:
        """(batch, n_seq) 0/1 matrix: strategy consistent with sequence."""
        strategies = np.atleast_2d(strategies)
        out = np.zeros((strategies.shape[0], self.n_seq))
        out[:, 0] = 1.0
        for k in range(self.n_infosets):
            for a in range(self.sizes[k]):
                out[:, self.seq_id[k, a]] = out[:, self.parent[k]] * (strategies[:, k] == a)
        return out

    def enumerate(self) -> np.ndarray:
        """All pure strategies in mixed-radix order, last infoset fastest."""
        if self.n_strategies > ENUM_LIMIT:
            raise CapacityError(f"{self.n_strategies} pure strategies exceed {ENUM_LIMIT}")
        grid = itertools.product(*(range(s) for s in self.sizes))
        return np.array(list(grid), dtype=int).reshape(self.n_strategies, self.n_infosets)

    def strategy_index(self, strategy) -> int:
        idx = 0
        for k, size in enumerate(self.sizes):
            idx = idx * int(size) + int(strategy[k])
        return idx


@dataclass(frozen=True)
class PureStrategy:
    """One player's choice per infoset, as action labels keyed by infoset id."""

    player: int
    actions: dict

    @classmethod
    def from_indices(cls, tree: "GameTree", player: int, choice) -> "PureStrategy":
        view = tree.view(player)
        return cls(player, {h: view.labels[k][int(choice[k])] for k, h in enumerate(view.infosets)})

    def indices(self, tree: "GameTree") -> np.ndarray:
        view = tree.view(self.player)
        missing = [h for h in view.infosets if h not in self.actions]
        if missing:
            raise StructuralError(f"player {self.player} strategy misses infosets {missing}")
        return np.array([view.labels[k].index(self.actions[h])
                         for k, h in enumerate(view.infosets)], dtype=int)


class GameTree:
    """Validated game tree; see :func:`read_tree` for the text format."""

    def __init__(self, players: int, nodes: list[Node], infosets: dict[tuple[int, str], Infoset]):
        self.players = players
        self.nodes = nodes
        self.infosets = infosets
        self.root = self._find_root()
        self._validate()
        self._views: dict[int, PlayerView] = {}

    def _find_root(self) -> int:
        if not self.nodes:
            raise StructuralError("empty tree")
        has_parent = np.zeros(len(self.nodes), dtype=bool)
        for node in self.nodes:
            for _, c in node.children:
                if has_parent[c]:
                    raise StructuralError(f"node {self.nodes[c].id} has two parents")
                has_parent[c] = True
        roots = np.nonzero(~has_parent)[0]
        if roots.size != 1:
            raise StructuralError(f"expected one root, found {roots.size}")
        return int(roots[0])

    def _validate(self) -> None:
        seen_labels: dict[str, tuple[int, str]] = {}
        for key, info in self.infosets.items():
            if len(set(info.actions)) != len(info.actions) or not info.actions:
                raise StructuralError(f"infoset {key} needs distinct, nonempty actions")
            for a in info.actions:
                if a in seen_labels:
                    raise StructuralError(f"action {a!r} shared by infosets {seen_labels[a]} and {key}")
                seen_labels[a] = key
        recall: dict[tuple[int, str], tuple] = {}
        visited = 0
        stack = [(self.root, tuple(() for _ in range(self.players)))]
        while stack:
            idx, seqs = stack.pop()
            visited += 1
            node = self.nodes[idx]
            if node.kind == "terminal":
                if node.children:
                    raise StructuralError(f"terminal {node.id} has children")
                if len(node.payoffs) != self.players or any(not 0 <= u <= 1 for u in node.payoffs):
                    raise StructuralError(f"terminal {node.id} needs {self.players} payoffs in [0, 1]")
                continue
            if node.kind == "chance":
                if len(node.probs) != len(node.children) or not node.children:
                    raise StructuralError(f"chance node {node.id} has {len(node.children)} children "
                                          f"but {len(node.probs)} probabilities")
                if any(p < 0 for p in node.probs) or abs(sum(node.probs) - 1.0) > PROB_ATOL:
                    raise StructuralError(f"chance node {node.id} probabilities do not sum to 1")
                stack.extend((c, seqs) for _, c in node.children)
                continue
            if node.kind != "decision":
                raise StructuralError(f"node {node.id} has unknown kind {node.kind!r}")
            key = (node.player, node.infoset)
            if key not in self.infosets:
                raise StructuralError(f"node {node.id} refers to unknown infoset {key}")
            labels = sorted(lbl for lbl, _ in node.children)
            if labels != sorted(self.infosets[key].actions):
                raise StructuralError(f"node {node.id} edges {labels} do not match infoset actions")
            own = seqs[node.player]
            if key in recall and recall[key] != own:
                raise ValidationError(f"perfect recall violated at infoset {key} (node {node.id})")
            recall[key] = own
            for lbl, c in node.children:
                nxt = list(seqs)
                nxt[node.player] = own + ((node.infoset, lbl),)
                stack.append((c, tuple(nxt)))
        if visited != len(self.nodes):
            raise StructuralError("tree has nodes unreachable from the root")
        unused = set(self.infosets) - set(recall)
        if unused:
            raise StructuralError(f"infosets without nodes: {sorted(unused)}")
        self._recall = recall

    @cached_property
    def terminals(self) -> list[int]:
        return [k for k, nd in enumerate(self.nodes) if nd.kind == "terminal"]

    @cached_property
    def _terminal_paths(self):
        """Chance reach and, per player, the (infoset, action index) path of each terminal."""
        reach = np.zeros(len(self.terminals))
        paths = [[None] * len(self.terminals) for _ in range(self.players)]
        where = {z: k for k, z in enumerate(self.terminals)}
        stack = [(self.root, 1.0, tuple(() for _ in range(self.players)))]
        while stack:
            idx, pr, seqs = stack.pop()
            node = self.nodes[idx]
            if node.kind == "terminal":
                reach[where[idx]] = pr
                for i in range(self.players):
                    paths[i][where[idx]] = seqs[i]
            elif node.kind == "chance":
                stack.extend((c, pr * p, seqs) for (_, c), p in zip(node.children, node.probs))
            else:
                actions = self.infosets[(node.player, node.infoset)].actions
                for lbl, c in node.children:
                    nxt = list(seqs)
                    nxt[node.player] = seqs[node.player] + ((node.infoset, actions.index(lbl)),)
                    stack.append((c, pr, tuple(nxt)))
        return reach, paths

    @cached_property
    def chance_reach(self) -> np.ndarray:
        return self._terminal_paths[0]

    @cached_property
    def payoffs(self) -> np.ndarray:
        return np.array([self.nodes[z].payoffs for z in self.terminals], dtype=float).reshape(
            len(self.terminals), self.players)

    def view(self, player: int) -> PlayerView:
        if player not in self._views:
            self._views[player] = self._build_view(player)
        return self._views[player]

    def _build_view(self, player: int) -> PlayerView:
        load = [h for (p, h) in self.infosets if p == player]
        depth = {h: len(self._recall[(player, h)]) for h in load}
        order = sorted(load, key=lambda h: (depth[h], load.index(h)))
        index = {h: k for k, h in enumerate(order)}
        sizes = [len(self.infosets[(player, h)].actions) for h in order]
        seq_base = np.concatenate([[1], 1 + np.cumsum(sizes)])[:-1] if order else np.array([], int)

        def seq_of(path):
            if not path:
                return 0
            h, a = path[-1]
            if isinstance(a, str):
                a = self.infosets[(player, h)].actions.index(a)
            return int(seq_base[index[h]] + a)

        parent_seq = {h: seq_of(self._recall[(player, h)]) for h in order}
        paths = self._terminal_paths[1][player]
        term_seq = np.array([seq_of(p) for p in paths], dtype=int)
        constraints = -np.ones((len(paths), len(order)), dtype=int)
        for z, path in enumerate(paths):
            for h, a in path:
                constraints[z, index[h]] = a
        return PlayerView(self, player, order, parent_seq, term_seq, constraints)

    def strategy_space_sizes(self) -> list[int]:
        return [self.view(i).n_strategies for i in range(self.players)]

    def infoset_counts(self) -> list[int]:
        return [self.view(i).n_infosets for i in range(self.players)]


def read_tree(path) -> GameTree:
    with open(path) as fh:
        return parse_tree(fh.read())


def parse_tree(text: str) -> GameTree:
    """Line format (players are 1-based in text)::

        node <id> decision <player> <infoset>
        node <id> chance p1 ... pk
        node <id> terminal u1 ... um
        edge <parent> <child> <label>
        infoset <player> <id> actions a1 ... ak

    Chance edges are matched to probabilities in the order they appear.
    """
    nodes: list[Node] = []
    ids: dict[str, int] = {}
    edges = []
    infosets: dict[tuple[int, str], Infoset] = {}
    players = 0
    for lineno, raw in enumerate(text.splitlines(), 1):
        tok = raw.split()
        if not tok or tok[0].startswith("#"):
            continue
        try:
            if tok[0] == "node":
                nid, kind = tok[1], tok[2]
                if nid in ids:
                    raise StructuralError(f"duplicate node {nid}")
                if kind == "decision":
                    node = Node(nid, kind, player=int(tok[3]) - 1, infoset=tok[4])
                elif kind == "chance":
                    node = Node(nid, kind, probs=tuple(float(x) for x in tok[3:]))
                elif kind == "terminal":
                    node = Node(nid, kind, payoffs=tuple(float(x) for x in tok[3:]))
                    players = max(players, len(node.payoffs))
                else:
                    raise StructuralError(f"unknown node kind {kind!r}")
                ids[nid] = len(nodes)
                nodes.append(node)
            elif tok[0] == "edge":
                edges.append((tok[1], tok[2], tok[3]))
            elif tok[0] == "infoset":
                if tok[3] != "actions":
                    raise StructuralError("expected 'actions' keyword")
                key = (int(tok[1]) - 1, tok[2])
                if key in infosets:
                    raise StructuralError(f"duplicate infoset {key}")
                infosets[key] = Infoset(key[0], key[1], tuple(tok[4:]))
            else:
                raise StructuralError(f"unknown record {tok[0]!r}")
        except (IndexError, ValueError) as exc:
            raise StructuralError(f"line {lineno}: {raw.strip()!r}: {exc}") from None
    for parent, child, label in edges:
        if parent not in ids or child not in ids:
            raise StructuralError(f"edge {parent}->{child} names an unknown node")
        nodes[ids[parent]].children.append((label, ids[child]))
    for (p, _) in infosets:
        players = max(players, p + 1)
    return GameTree(players, nodes, infosets)


def format_tree(tree: GameTree) -> str:
    lines = []
    for (p, h), info in tree.infosets.items():
        lines.append(f"infoset {p + 1} {h} actions {' '.join(info.actions)}")
    for node in tree.nodes:
        if node.kind == "decision":
            lines.append(f"node {node.id} decision {node.player + 1} {node.infoset}")
        elif node.kind == "chance":
            lines.append(f"node {node.id} chance {' '.join(repr(float(p)) for p in node.probs)}")
        else:
            lines.append(f"node {node.id} terminal {' '.join(repr(float(u)) for u in node.payoffs)}")
    for node in tree.nodes:
        for label, c in node.children:
            lines.append(f"edge {node.id} {tree.nodes[c].id} {label}")
    return "\n".join(lines) + "\n"


def write_tree(tree: GameTree, path) -> None:
    with open(path, "w") as fh:
        fh.write(format_tree(tree))


def random_tree(rng: np.random.Generator, players: int = 2, actions=(2, 3), max_depth: int = 4,
                chance_prob: float = 0.2, terminal_prob: float = 0.2, merge_prob: float = 0.6
                ) -> GameTree:
    """Random perfect-recall tree.

    Decision nodes join an existing infoset of the same player with the same
    own-action history with probability ``merge_prob``, which is what makes
    information imperfect while keeping recall perfect.
    """
    nodes: list[Node] = []
    infosets: dict[tuple[int, str], Infoset] = {}
    by_history: dict[tuple[int, tuple], list[str]] = {}
    lo, hi = (actions, actions) if isinstance(actions, int) else actions

    def grow(depth: int, seqs: tuple) -> int:
        idx = len(nodes)
        r = rng.random()
        if depth >= max_depth or (depth > 0 and r < terminal_prob):
            nodes.append(Node(f"n{idx}", "terminal", payoffs=tuple(float(u) for u in rng.random(players).round(6))))
            return idx
        if r < terminal_prob + chance_prob:
            k = int(rng.integers(2, 4))
            probs = rng.dirichlet(np.ones(k)).round(6)
            probs[-1] = round(1.0 - probs[:-1].sum(), 6)
            node = Node(f"n{idx}", "chance", probs=tuple(float(p) for p in probs))
            nodes.append(node)
            for c in range(k):
                node.children.append((f"c{c}", grow(depth + 1, seqs)))
            return idx
        p = int(rng.integers(players))
        pool = by_history.setdefault((p, seqs[p]), [])
        if pool and rng.random() < merge_prob:
            h = pool[int(rng.integers(len(pool)))]
        else:
            h = f"p{p + 1}i{sum(1 for q, _ in infosets if q == p)}"
            k = int(rng.integers(lo, hi + 1))
            infosets[(p, h)] = Infoset(p, h, tuple(f"{h}a{a}" for a in range(k)))
            pool.append(h)
        node = Node(f"n{idx}", "decision", player=p, infoset=h)
        nodes.append(node)
        for lbl in infosets[(p, h)].actions:
            nxt = list(seqs)
            nxt[p] = seqs[p] + ((h, lbl),)
            node.children.append((lbl, grow(depth + 1, tuple(nxt))))
        return idx

    grow(0, tuple(() for _ in range(players)))
    # chance children carry no labels in files; give them unique ones
    for node in nodes:
        if node.kind == "chance":
            node.children = [(f"{node.id}c{c}", k) for c, (_, k) in enumerate(node.children)]
    return GameTree(players, nodes, infosets)


def random_tree_with(rng: np.random.Generator, players: int = 2, phi: int | None = None,
                     actions=(2, 3), max_strategies: int | None = None,
                     min_strategies: int = 2, tries: int = 10_000, **kwargs) -> GameTree:
    """Rejection-sample :func:`random_tree` until every player matches the targets."""
    for _ in range(tries):
        tree = random_tree(rng, players, actions, **kwargs)
        if phi is not None and any(c != phi for c in tree.infoset_counts()):
            continue
        sizes = tree.strategy_space_sizes()
        if max_strategies is not None and max(sizes) > max_strategies:
            continue
        if min(sizes) < min_strategies:
            continue
        return tree
    raise ConfigurationError(f"no tree matched the targets in {tries} tries")


def _profile_indices(tree: GameTree, profile) -> list[np.ndarray]:
    if len(profile) != tree.players:
        raise StructuralError(f"profile has {len(profile)} strategies for {tree.players} players")
    out = []
    for i, s in enumerate(profile):
        if isinstance(s, PureStrategy):
            out.append(s.indices(tree))
        else:
            s = np.asarray(s, dtype=int)
            view = tree.view(i)
            if s.shape != (view.n_infosets,) or np.any(s < 0) or np.any(s >= view.sizes):
                raise StructuralError(f"player {i} strategy {s} is incomplete or out of range")
            out.append(s)
    return out


def eval_utility(tree: GameTree, profile) -> np.ndarray:
    """Expected payoff of every player under a pure profile, by one tree pass."""
    idx = _profile_indices(tree, profile)
    choice = {}
    for i, s in enumerate(idx):
        view = tree.view(i)
        for k, h in enumerate(view.infosets):
            choice[(i, h)] = view.labels[k][s[k]]

    def walk(n: int) -> np.ndarray:
        node = tree.nodes[n]
        if node.kind == "terminal":
            return np.array(node.payoffs, dtype=float)
        if node.kind == "chance":
            return sum(p * walk(c) for (_, c), p in zip(node.children, node.probs))
        pick = choice[(node.player, node.infoset)]
        return walk(next(c for lbl, c in node.children if lbl == pick))

    return walk(tree.root)


def terminal_weights(tree: GameTree, i: int, opponents, batch: int = 1) -> np.ndarray:
    """(batch, n_terminals) weights chance(z) * pi_-i(z) * gamma_i(z).

    ``opponents`` is a list over players of ``(batch, n_infosets_j)`` strategy
    arrays; entry ``i`` is ignored. ``batch`` only matters without opponents.
    """
    reach = tree.chance_reach * tree.payoffs[:, i]
    w = None
    for j in range(tree.players):
        if j != i:
            c = tree.view(j).consistent(opponents[j])
            w = c if w is None else w & c
    if w is None:
        return np.repeat(reach[None, :], batch, axis=0)
    return w * reach[None, :]


def sequence_weights(tree: GameTree, i: int, opponents, batch: int = 1) -> np.ndarray:
    """W(sigma) summed over the batch: reward mass on each of player i's sequences."""
    w = terminal_weights(tree, i, opponents, batch).sum(axis=0)
    return np.bincount(tree.view(i).term_seq, weights=w, minlength=tree.view(i).n_seq)


@dataclass(frozen=True)
class PartitionTables:
    """Log-domain partition functions of one player.

    ``log_u[k, a]`` is log U(h_k.a) (-inf past the infoset's actions),
    ``log_v[k]`` is log V(h_k), ``lam[s]`` is eta * W(s) per sequence and
    ``log_total`` is the log of the full sum over pure strategies.
    """

    log_v: np.ndarray
    log_u: np.ndarray
    lam: np.ndarray
    free: np.ndarray
    log_total: float

    def conditional(self, k: int) -> np.ndarray:
        return np.exp(self.log_u[k] - self.log_v[k])


def tables_from_weights(view: PlayerView, lam: np.ndarray) -> PartitionTables:
    """Bottom-up pass: U from sums of children V and free counts, V by log-sum-exp."""
    nh = view.n_infosets
    log_v = np.zeros(nh)
    log_u = np.full((nh, view.seq_id.shape[1]), -np.inf)
    for k in reversed(range(nh)):
        size = view.sizes[k]
        seqs = view.seq_id[k, :size]
        free = view.free[seqs]
        below = np.array([sum(log_v[c] for c in view.children[s]) for s in seqs])
        u = lam[seqs] + below + (free.sum() - free)
        log_u[k, :size] = u
        top = u.max()
        log_v[k] = top + math.log(np.exp(u - top).sum())
    total = float(lam[0] + sum(log_v[c] for c in view.children[0]))
    return PartitionTables(log_v, log_u, np.asarray(lam, dtype=float), view.free.copy(), total)


def build_partition(tree: GameTree, i: int, opponent_profiles, eta: float) -> PartitionTables:
    """Tables for p(s_i) proportional to exp(eta * sum_t u_i(s_i, s_-i,t)).

    ``opponent_profiles`` is an iterable of full pure profiles (player i's
    entry is ignored and may be ``None``).
    """
    if eta < 0:
        raise StructuralError(f"eta must be nonnegative, got {eta}")
    view = tree.view(i)
    profiles = list(opponent_profiles)
    if not profiles:
        return tables_from_weights(view, np.zeros(view.n_seq))
    opp = []
    for j in range(tree.players):
        if j == i:
            opp.append(None)
        else:
            opp.append(np.stack([_profile_indices_one(tree, j, p[j]) for p in profiles]))
    return tables_from_weights(view, eta * sequence_weights(tree, i, opp, len(profiles)))


def _profile_indices_one(tree: GameTree, j: int, s) -> np.ndarray:
    if isinstance(s, PureStrategy):
        return s.indices(tree)
    return np.asarray(s, dtype=int)


def sample_batch(tables: PartitionTables, view: PlayerView, size: int,
                 rng: np.random.Generator) -> np.ndarray:
    """``size`` strategies drawn top-down; unreachable infosets are uniform."""
    nh = view.n_infosets
    out = np.zeros((size, nh), dtype=int)
    reach = np.ones((nh, size), dtype=bool)
    for k in range(nh):
        s = view.parent[k]
        if s:
            g, b = view.owner[s]
            if g >= k:
                raise StructuralError("infoset order is not parent-before-child")
            reach[k] = reach[g] & (out[:, g] == b)
        u = rng.random(size)
        n_act = view.sizes[k]
        cdf = np.cumsum(tables.conditional(k)[:n_act])
        on = np.minimum(np.searchsorted(cdf, u * cdf[-1], side="right"), n_act - 1)
        off = np.minimum((u * n_act).astype(int), n_act - 1)
        out[:, k] = np.where(reach[k], on, off)
    return out


def sample_strategy(tables: PartitionTables, tree: GameTree, i: int,
                    rng: np.random.Generator) -> PureStrategy:
    view = tree.view(i)
    return PureStrategy.from_indices(tree, i, sample_batch(tables, view, 1, rng)[0])


def rule_log_probs(tables: PartitionTables, view: PlayerView, strategies: np.ndarray) -> np.ndarray:
    """(batch, n_infosets) log-probability of each sampling step."""
    strategies = np.atleast_2d(strategies)
    batch, nh = strategies.shape[0], view.n_infosets
    out = np.zeros((batch, nh))
    reach = np.ones((nh, batch), dtype=bool)
    for k in range(nh):
        s = view.parent[k]
        if s:
            g, b = view.owner[s]
            reach[k] = reach[g] & (strategies[:, g] == b)
        a = strategies[:, k]
        on = tables.log_u[k, a] - tables.log_v[k]
        out[:, k] = np.where(reach[k], on, -math.log(view.sizes[k]))
    return out


def prefix_log_prob(tables: PartitionTables, view: PlayerView, prefix) -> float:
    """log Pr[s(h_1) = a_1, ..., s(h_t) = a_t] under the sampler."""
    prefix = np.asarray(prefix, dtype=int)
    full = np.zeros(view.n_infosets, dtype=int)
    full[:prefix.size] = prefix
    return float(rule_log_probs(tables, view, full)[0, :prefix.size].sum())


def enumerated_log_softmax(view: PlayerView, lam: np.ndarray) -> np.ndarray:
    """log p(s) over :meth:`PlayerView.enumerate`, by brute force."""
    logits = view.sequence_mask(view.enumerate()) @ lam
    top = logits.max()
    return logits - (top + math.log(np.exp(logits - top).sum()))


@dataclass
class StrategyProfileDist:
    """Weighted pure profiles; ``profiles[t][i]`` is player i's index tuple."""

    weights: np.ndarray
    profiles: list[tuple[tuple[int, ...], ...]]

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if len(self.profiles) != self.weights.size:
            raise StructuralError("one weight per profile required")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise StructuralError("weights must be nonnegative and sum to 1")

    def deduplicated(self) -> "StrategyProfileDist":
        mass: dict = {}
        for w, prof in zip(self.weights, self.profiles):
            mass[prof] = mass.get(prof, 0.0) + float(w)
        return StrategyProfileDist(np.array(list(mass.values())), list(mass))

    def atoms(self, tree: GameTree) -> list[tuple[float, list[PureStrategy]]]:
        return [(float(w), [PureStrategy.from_indices(tree, i, s) for i, s in enumerate(prof)])
                for w, prof in zip(self.weights, self.profiles)]


def nfce_gain_matrix(tree: GameTree, dist: StrategyProfileDist, i: int) -> np.ndarray:
    """M[s, s'] = sum over atoms with s_i = s of w * u_i(s'; atom_-i)."""
    view = tree.view(i)
    if view.n_strategies > VERIFY_LIMIT:
        raise CapacityError(f"verify_nfce supports |S_i| <= {VERIFY_LIMIT}, "
                            f"player {i} has {view.n_strategies}")
    dist = dist.deduplicated()
    mask = view.sequence_mask(view.enumerate())
    m = np.zeros((view.n_strategies, view.n_strategies))
    for w, prof in zip(dist.weights, dist.profiles):
        opp = [np.array([p]) for p in prof]
        values = mask @ sequence_weights(tree, i, opp)
        m[view.strategy_index(prof[i])] += w * values
    return m


def verify_nfce(tree: GameTree, dist: StrategyProfileDist) -> CeCertificate:
    """Best swap gain per player; swaps are indices into :meth:`PlayerView.enumerate`."""
    swaps, gains = [], []
    for i in range(tree.players):
        gain, phi = _best_swap(nfce_gain_matrix(tree, dist, i))
        swaps.append(phi)
        gains.append(max(gain, 0.0))
    return CeCertificate(swaps, gains)


class ImplicitMultiScale:
    """Multi-scale MWU over a player's pure strategies, one table set per thread.

    Mirrors :class:`~swapregret.multiscale.MultiScaleLearner` but keeps per-thread
    cumulative sequence weights instead of one weight per strategy.
    """

    def __init__(self, view: PlayerView, config: MultiScaleConfig):
        self.view = view
        self.config = config
        c = config
        self.meta = [c.H ** k for k in range(c.threads)]
        self.period = [c.H ** (k + 1) for k in range(c.threads)]
        log_n = view.log_strategies
        self.eta = [math.sqrt(log_n / c.H) / (m * c.B) for m in self.meta]
        self.cum = np.zeros((c.threads, view.n_seq))
        self.buf = np.zeros((c.threads, view.n_seq))
        self.t = 0
        self.tables = [tables_from_weights(view, np.zeros(view.n_seq)) for _ in range(c.threads)]

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        k = int(rng.integers(self.config.threads))
        return sample_batch(self.tables[k], self.view, 1, rng)[0]

    def update(self, weights: np.ndarray) -> None:
        c = self.config
        self.t += 1
        self.buf += weights
        for k in range(c.threads):
            if self.t % self.meta[k]:
                break
            self.cum[k] += self.buf[k]
            self.buf[k] = 0.0
            if self.t % self.period[k] == 0 and self.t < c.T:
                self.cum[k] = 0.0
            self.tables[k] = tables_from_weights(self.view, self.eta[k] * self.cum[k])


def nfce_configs(tree: GameTree, epsilon: float, blocks: tuple[int, int] | None = None
                 ) -> list[MultiScaleConfig]:
    """One multi-scale configuration per player with a shared horizon.

    Without ``blocks`` = (H, S) the horizon follows msmwu_from_epsilon(eps/2)
    for the largest strategy space, which raises ConfigurationError when it
    does not fit in 64 bits.
    """
    sizes = tree.strategy_space_sizes()
    if blocks is None:
        ref = msmwu_from_epsilon(epsilon / 2, max(sizes), 1.0)
        H, S, T = ref.H, ref.S, ref.T
    else:
        H, S = blocks
        T = horizon_for(S, H)
    return [MultiScaleConfig(n, 1.0, S, H, T, epsilon) for n in sizes]


def run_nfce_dynamics(tree: GameTree, epsilon: float, rng: np.random.Generator | None = None,
                      blocks: tuple[int, int] | None = None) -> StrategyProfileDist:
    """Uncoupled dynamics; each round's sampled pure profile is one atom.

    Every player draws its pure strategy from its implicit multi-scale MWU and
    is rewarded with u_i(., s_-i,t) against the others' draws.
    """
    rng = rng if rng is not None else np.random.default_rng()
    configs = nfce_configs(tree, epsilon, blocks)
    learners = [ImplicitMultiScale(tree.view(i), configs[i]) for i in range(tree.players)]
    T = configs[0].T
    profiles = []
    for _ in range(T):
        prof = [lr.sample(rng) for lr in learners]
        opp = [p[None, :] for p in prof]
        for i, lr in enumerate(learners):
            lr.update(sequence_weights(tree, i, opp))
        profiles.append(tuple(tuple(int(a) for a in p) for p in prof))
    return StrategyProfileDist(np.full(T, 1.0 / T), profiles).deduplicated()

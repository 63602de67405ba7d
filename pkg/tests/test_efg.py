import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swapregret import (CapacityError, ConfigurationError, MultiScaleConfig, MultiScaleLearner,
                        StructuralError, ValidationError)
from swapregret.efg import (ImplicitMultiScale, PureStrategy, StrategyProfileDist,
                            build_partition, enumerated_log_softmax, eval_utility, format_tree,
                            nfce_gain_matrix, parse_tree, prefix_log_prob, random_tree,
                            random_tree_with, read_tree, run_nfce_dynamics, sample_batch,
                            sample_strategy, sequence_weights, tables_from_weights, verify_nfce,
                            write_tree)

import oracles

SINGLE = """
infoset 1 h actions x y
node r decision 1 h
node z1 terminal 0.3
node z2 terminal 0.8
edge r z1 x
edge r z2 y
"""

COIN = """
node r chance 0.5 0.5
node z1 terminal 0 0
node z2 terminal 1 1
edge r z1 c0
edge r z2 c1
"""

# player 1 moves, player 2 answers without seeing the move
MATCHING = """
infoset 1 a actions H T
infoset 2 b actions h t
node r decision 1 a
node l decision 2 b
node m decision 2 b
node z1 terminal 1 0
node z2 terminal 0 1
node z3 terminal 0 1
node z4 terminal 1 0
edge r l H
edge r m T
edge l z1 h
edge l z2 t
edge m z3 h
edge m z4 t
"""


def chain_tree(depth: int) -> str:
    lines = []
    for d in range(depth):
        lines.append(f"infoset 1 h{d} actions go{d} stop{d}")
        lines.append(f"node n{d} decision 1 h{d}")
        lines.append(f"node s{d} terminal {1 - (d + 1) / (depth + 1):.6f}")
        lines.append(f"edge n{d} s{d} stop{d}")
        nxt = f"n{d + 1}" if d + 1 < depth else "end"
        lines.append(f"edge n{d} {nxt} go{d}")
    lines.append("node end terminal 1")
    return "\n".join(lines)


def labels_of(tree, profile):
    out = []
    for i, s in enumerate(profile):
        view = tree.view(i)
        out.append({h: view.labels[k][s[k]] for k, h in enumerate(view.infosets)})
    return out


def random_profile(tree, rng):
    return [rng.integers(0, tree.view(i).sizes) for i in range(tree.players)]


def enumerated_log_total(tree, i, opponents, eta):
    view = tree.view(i)
    vals = []
    for s in view.enumerate():
        total = 0.0
        for prof in opponents:
            p = list(prof)
            p[i] = s
            total += eval_utility(tree, p)[i]
        vals.append(eta * total)
    vals = np.array(vals)
    return vals.max() + math.log(np.exp(vals - vals.max()).sum())


# ---- eval_utility ----

def test_utility_no_chance():
    tree = parse_tree(MATCHING)
    assert eval_utility(tree, [[0], [1]]).tolist() == [0.0, 1.0]
    assert eval_utility(tree, [[1], [1]]).tolist() == [1.0, 0.0]


def test_utility_coin():
    assert eval_utility(parse_tree(COIN), [[], []]).tolist() == [0.5, 0.5]


def test_utility_incomplete_profile():
    tree = parse_tree(MATCHING)
    with pytest.raises(StructuralError):
        eval_utility(tree, [[0]])
    with pytest.raises(StructuralError):
        eval_utility(tree, [[0], [2]])
    with pytest.raises(StructuralError):
        eval_utility(tree, [PureStrategy(0, {}), [0]])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 3))
def test_utility_matches_paths(seed, players):
    rng = np.random.default_rng(seed)
    tree = random_tree(rng, players, max_depth=4)
    if len(tree.terminals) > 50:
        return
    prof = random_profile(tree, rng)
    np.testing.assert_allclose(eval_utility(tree, prof),
                               oracles.efg_utility_by_paths(tree, labels_of(tree, prof)),
                               atol=1e-12)


def test_utility_affine_in_payoffs():
    rng = np.random.default_rng(3)
    tree = random_tree(rng, 2, max_depth=4)
    prof = random_profile(tree, rng)
    base = eval_utility(tree, prof)
    for z in tree.terminals:
        node = tree.nodes[z]
        old = node.payoffs
        vals = []
        for x in (0.0, 0.5, 1.0):
            node.payoffs = (x,) + old[1:]
            vals.append(eval_utility(tree, prof)[0])
        node.payoffs = old
        assert vals[2] - vals[1] == pytest.approx(vals[1] - vals[0], abs=1e-12)
        slope = 2 * (vals[1] - vals[0])
        assert base[0] == pytest.approx(vals[0] + slope * old[0], abs=1e-12)


# ---- loader ----

def test_format_roundtrip(tmp_path):
    tree = random_tree(np.random.default_rng(4), 2)
    write_tree(tree, tmp_path / "t.efg")
    back = read_tree(tmp_path / "t.efg")
    assert format_tree(back) == format_tree(tree)
    prof = random_profile(tree, np.random.default_rng(0))
    np.testing.assert_array_equal(eval_utility(back, prof), eval_utility(tree, prof))


def test_perfect_recall_violation():
    bad = """
    infoset 1 a actions L R
    infoset 1 b actions x y
    node r decision 1 a
    node u decision 1 b
    node v decision 1 b
    node z1 terminal 0
    node z2 terminal 1
    node z3 terminal 0
    node z4 terminal 1
    edge r u L
    edge r v R
    edge u z1 x
    edge u z2 y
    edge v z3 x
    edge v z4 y
    """
    with pytest.raises(ValidationError):
        parse_tree(bad)


def test_structural_errors():
    with pytest.raises(StructuralError):
        parse_tree(SINGLE.replace("actions x y", "actions x x"))
    with pytest.raises(StructuralError):
        parse_tree(COIN.replace("0.5 0.5", "0.5 0.4"))
    with pytest.raises(StructuralError):
        parse_tree(SINGLE.replace("edge r z2 y", "edge r z2 w"))
    shared = MATCHING.replace("actions h t", "actions H t").replace("z1 h", "z1 H").replace(
        "z3 h", "z3 H")
    with pytest.raises(StructuralError):
        parse_tree(shared)
    with pytest.raises(StructuralError):
        parse_tree(SINGLE + "node q terminal 0.1\n")


# ---- partition tables ----

def test_eta_zero_counts_strategies():
    tree = random_tree_with(np.random.default_rng(5), 2, max_strategies=100)
    for i in range(2):
        t = build_partition(tree, i, [random_profile(tree, np.random.default_rng(1))], 0.0)
        assert t.log_total == pytest.approx(tree.view(i).log_strategies, abs=1e-12)


def test_single_infoset_closed_form():
    tree = parse_tree(SINGLE)
    eta = 2.5
    t = build_partition(tree, 0, [[None]], eta)
    assert math.exp(t.log_v[0]) == pytest.approx(math.exp(0.3 * eta) + math.exp(0.8 * eta))
    # T opponent rounds multiply the single-player weights
    t3 = build_partition(tree, 0, [[None]] * 3, eta)
    assert math.exp(t3.log_v[0]) == pytest.approx(math.exp(0.9 * eta) + math.exp(2.4 * eta))


def check_table_invariants(tables, view):
    for k in range(view.n_infosets):
        size = view.sizes[k]
        u = tables.log_u[k, :size]
        assert tables.log_v[k] == pytest.approx(np.logaddexp.reduce(u), abs=1e-9)
        for a in range(size):
            s = view.seq_id[k, a]
            below = sum(tables.log_v[c] for c in view.children[s])
            others = sum(view.free[view.seq_id[k, b]] for b in range(size) if b != a)
            assert u[a] == pytest.approx(tables.lam[s] + below + others, abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.0, 5.0), st.integers(1, 4))
def test_partition_matches_enumeration(seed, eta, rounds):
    rng = np.random.default_rng(seed)
    tree = random_tree_with(rng, 2, max_strategies=100, min_strategies=1)
    i = int(rng.integers(2))
    opponents = [random_profile(tree, rng) for _ in range(rounds)]
    tables = build_partition(tree, i, opponents, eta)
    check_table_invariants(tables, tree.view(i))
    want = enumerated_log_total(tree, i, opponents, eta)
    assert abs(math.expm1(tables.log_total - want)) <= 1e-9


def test_chain_log_domain_stability():
    tree = parse_tree(chain_tree(30))
    view = tree.view(0)
    assert view.n_infosets == 30
    tables = build_partition(tree, 0, [[None]], 1000.0)
    assert np.all(np.isfinite(tables.log_v))
    assert np.isfinite(tables.log_total)
    check_table_invariants(tables, view)
    # the best strategy (go everywhere, payoff 1) dominates
    s = sample_batch(tables, view, 1, np.random.default_rng(0))[0]
    assert s[0] == 0


def test_noneg_eta():
    with pytest.raises(StructuralError):
        build_partition(parse_tree(SINGLE), 0, [[None]], -1.0)


# ---- sampler ----

def test_two_to_one_sampling():
    tree = parse_tree(SINGLE)
    view = tree.view(0)
    tables = tables_from_weights(view, np.array([0.0, math.log(2), 0.0]))
    draws = sample_batch(tables, view, 10**5, np.random.default_rng(6))[:, 0]
    frac = (draws == 0).mean()
    assert abs(frac - 2 / 3) < 3 * math.sqrt(2 / 9 / 10**5)
    assert sample_strategy(tables, tree, 0, np.random.default_rng(0)).actions["h"] in ("x", "y")


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.0, 4.0))
def test_prefix_probabilities_match_enumeration(seed, eta):
    rng = np.random.default_rng(seed)
    tree = random_tree_with(rng, 2, max_strategies=30, min_strategies=1)
    i = int(rng.integers(2))
    view = tree.view(i)
    tables = build_partition(tree, i, [random_profile(tree, rng) for _ in range(3)], eta)
    logp = enumerated_log_softmax(view, tables.lam)
    strategies = view.enumerate()
    for t in range(1, view.n_infosets + 1):
        for prefix in {tuple(s[:t]) for s in strategies}:
            hit = np.all(strategies[:, :t] == prefix, axis=1)
            want = np.logaddexp.reduce(logp[hit])
            assert abs(prefix_log_prob(tables, view, prefix) - want) <= 1e-9


def test_empirical_tv_against_softmax():
    rng = np.random.default_rng(7)
    tree = random_tree_with(rng, 2, max_strategies=30, min_strategies=8)
    view = tree.view(0)
    tables = build_partition(tree, 0, [random_profile(tree, rng) for _ in range(2)], 2.0)
    draws = sample_batch(tables, view, 10**6, rng)
    idx = draws @ np.cumprod(np.r_[view.sizes[1:], 1][::-1])[::-1]
    emp = np.bincount(idx, minlength=view.n_strategies) / 10**6
    p = np.exp(enumerated_log_softmax(view, tables.lam))
    assert 0.5 * np.abs(emp - p).sum() <= 0.01


def test_unreachable_infosets_uniform():
    # player 1 picks L or R; only under L does it face infoset b
    text = """
    infoset 1 a actions L R
    infoset 1 b actions x y z
    node r decision 1 a
    node u decision 1 b
    node zr terminal 1
    node z1 terminal 0.9
    node z2 terminal 0.1
    node z3 terminal 0.0
    edge r u L
    edge r zr R
    edge u z1 x
    edge u z2 y
    edge u z3 z
    """
    tree = parse_tree(text)
    view = tree.view(0)
    tables = build_partition(tree, 0, [[None]] * 4, 3.0)
    draws = sample_batch(tables, view, 60_000, np.random.default_rng(8))
    cut = draws[draws[:, 0] == 1, 1]
    counts = np.bincount(cut, minlength=3) / cut.size
    assert np.all(np.abs(counts - 1 / 3) < 4 * math.sqrt(2 / 9 / cut.size))
    assert prefix_log_prob(tables, view, [1, 2]) == pytest.approx(
        prefix_log_prob(tables, view, [1]) - math.log(3), abs=1e-12)


def test_order_violation_raises():
    tree = random_tree_with(np.random.default_rng(9), 1, phi=3, actions=2)
    view = tree.view(0)
    if not np.any(view.parent[1:] > 0):
        pytest.skip("tree has no nested infosets")
    k = int(np.flatnonzero(view.parent > 0)[0])
    g, _ = view.owner[view.parent[k]]
    tables = build_partition(tree, 0, [[None]], 1.0)
    view.owner[view.parent[k]] = (k + 1, 0)
    with pytest.raises(StructuralError):
        sample_batch(tables, view, 1, np.random.default_rng(0))


# ---- verify_nfce ----

def test_best_response_point_mass():
    tree = parse_tree(MATCHING)
    # player 2 best-responds to H with t? payoffs (0,1) at H,t so yes; player 1 then prefers T
    dist = StrategyProfileDist([1.0], [((1,), (1,))])
    cert = verify_nfce(tree, dist)
    assert cert.gains[0] == 0.0
    assert cert.gains[1] == pytest.approx(1.0)
    mixed = StrategyProfileDist([0.25] * 4, [((a,), (b,)) for a in range(2) for b in range(2)])
    assert verify_nfce(tree, mixed).epsilon_achieved == pytest.approx(0.0, abs=1e-15)


def test_gain_permutation_invariant():
    rng = np.random.default_rng(10)
    tree = random_tree_with(rng, 2, max_strategies=12)
    profiles = [tuple(tuple(int(a) for a in s) for s in random_profile(tree, rng))
                for _ in range(6)]
    w = rng.dirichlet(np.ones(6))
    a = verify_nfce(tree, StrategyProfileDist(w, profiles))
    perm = rng.permutation(6)
    b = verify_nfce(tree, StrategyProfileDist(w[perm], [profiles[k] for k in perm]))
    np.testing.assert_allclose(a.gains, b.gains, atol=1e-14)


@pytest.mark.parametrize("seed", range(5))
def test_gain_matches_swap_enumeration(seed):
    rng = np.random.default_rng(seed)
    tree = random_tree_with(rng, 2, phi=2, actions=2, max_strategies=4, min_strategies=4)
    profiles = [tuple(tuple(int(a) for a in s) for s in random_profile(tree, rng))
                for _ in range(5)]
    dist = StrategyProfileDist(rng.dirichlet(np.ones(5)), profiles)
    cert = verify_nfce(tree, dist)
    for i in range(2):
        want = oracles.nfce_gain_by_swap_enumeration(tree, dist, i)
        assert cert.gains[i] == pytest.approx(max(want, 0.0), abs=1e-12)


def test_verify_capacity():
    tree = parse_tree(chain_tree(4))
    dist = StrategyProfileDist([1.0], [((0, 0, 0, 0),)])
    with pytest.raises(CapacityError, match="12"):
        nfce_gain_matrix(tree, dist, 0)


# ---- implicit multi-scale MWU and dynamics ----

def test_implicit_matches_explicit_learner():
    rng = np.random.default_rng(11)
    tree = random_tree_with(rng, 2, max_strategies=12, min_strategies=3)
    view = tree.view(0)
    mask = view.sequence_mask(view.enumerate())
    cfg = MultiScaleConfig.from_blocks(view.n_strategies, 1.0, 1, 4)
    implicit = ImplicitMultiScale(view, cfg)
    explicit = MultiScaleLearner(cfg)
    for _ in range(cfg.T):
        for k, tables in enumerate(implicit.tables):
            p = np.exp(enumerated_log_softmax(view, tables.lam))
            np.testing.assert_allclose(p, explicit.thread_strategies[k], atol=1e-12)
        w = sequence_weights(tree, 0, [None, random_profile(tree, rng)[1][None, :]])
        implicit.update(w)
        explicit.update(mask @ w)


def test_single_player_concentrates():
    tree = parse_tree(SINGLE)
    dist = run_nfce_dynamics(tree, 0.5, np.random.default_rng(12), blocks=(64, 1))
    mass = dict(zip(dist.profiles, dist.weights))
    assert mass.get(((1,),), 0.0) > 0.5
    assert verify_nfce(tree, dist).epsilon_achieved <= 0.5


def test_tree_as_normal_form():
    # a 2x2 game in tree clothing: the atoms' play frequencies match a direct evaluation
    tree = parse_tree(MATCHING)
    dist = run_nfce_dynamics(tree, 0.4, np.random.default_rng(13), blocks=(64, 1))
    for i in range(2):
        marginal = np.zeros(2)
        for w, prof in zip(dist.weights, dist.profiles):
            marginal[prof[i][0]] += w
        assert 0.5 * np.abs(marginal - 0.5).sum() <= 0.1
    assert verify_nfce(tree, dist).epsilon_achieved <= 0.4


def test_default_horizon_overflow():
    tree = random_tree_with(np.random.default_rng(14), 2, phi=2, actions=2)
    with pytest.raises(ConfigurationError):
        run_nfce_dynamics(tree, 0.5, np.random.default_rng(0))

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mixtailor.aggregators import AggKind, AggregatorSpec, PoolSpec, aggregate, agg_mixtailor
from mixtailor.attacks import (
    DEFAULT_LAMBDA_GRID,
    ADAPTIVE_EPSILONS,
    AdversaryView,
    AttackCost,
    AttackKind,
    AttackSpec,
    a_little_default_z,
    attack_a_little,
    attack_adaptive,
    attack_epsilon_reverse,
    attack_minmax_pool,
    attack_partial_knowledge,
    attack_random_epsilon,
    generate_attack,
    parse_attack,
    verify_attack,
)
from mixtailor.core import ConfigurationError, InvalidInputError, SeededRng, Stream
from oracles import norm_phi_inv

MEAN = AggregatorSpec(AggKind.MEAN)
COMED = AggregatorSpec(AggKind.COORD_MEDIAN)
KRUM = AggregatorSpec(AggKind.KRUM, p=2.0)


def honest_panel(seed, rows=10, d=5, loc=1.0, scale=0.1):
    rng = np.random.default_rng(seed)
    return loc + scale * rng.normal(size=(rows, d))


# ---- epsilon reverse ---------------------------------------------------------------------

def test_reverse_examples():
    out = attack_epsilon_reverse(AdversaryView([[1.0, 0.0], [1.0, 0.0]]), 3, 10.0)
    np.testing.assert_array_equal(out, [[-10.0, 0.0]] * 3)
    out = attack_epsilon_reverse(AdversaryView([[2.0, -4.0]]), 2, 0.1)
    np.testing.assert_allclose(out, [[-0.2, 0.4]] * 2, rtol=1e-15)
    assert 0.1 in ADAPTIVE_EPSILONS and 10.0 in ADAPTIVE_EPSILONS


def test_reverse_errors():
    with pytest.raises(InvalidInputError):
        AdversaryView(np.zeros((0, 3)))
    with pytest.raises(InvalidInputError):
        attack_epsilon_reverse(AdversaryView([[1.0]]), 1, 0.0)


@given(st.floats(0.01, 100), st.floats(0.01, 100))
def test_reverse_linear_in_epsilon(e1, e2):
    view = AdversaryView(honest_panel(0))
    a = attack_epsilon_reverse(view, 2, e1)
    b = attack_epsilon_reverse(view, 2, e2)
    np.testing.assert_allclose(a * (e2 / e1), b, rtol=1e-12, atol=1e-14)


# ---- partial knowledge -------------------------------------------------------------------

def test_partial_full_knowledge_is_bit_identical():
    honest = honest_panel(1, rows=8)
    a = attack_partial_knowledge(AdversaryView(honest), 10, 2, 0.5)
    b = attack_epsilon_reverse(AdversaryView(honest), 2, 0.5)
    np.testing.assert_array_equal(a, b)


def test_partial_single_known_gradient():
    g = np.array([[0.3, -1.2, 4.0]])
    out = attack_partial_knowledge(AdversaryView(g), 10, 2, 10.0)
    np.testing.assert_allclose(out, np.tile(-10.0 * g, (2, 1)), rtol=1e-15)


def test_partial_matches_explicit_filled_panel():
    n, f, k, eps = 10, 2, 6, 10.0
    honest = honest_panel(2, rows=n - f)
    known = honest[: k - f]
    fill = [sum(known[:, c]) / len(known) for c in range(known.shape[1])]
    panel = [list(r) for r in known] + [fill] * (n - k)
    direction = [sum(r[c] for r in panel) / len(panel) for c in range(known.shape[1])]
    oracle = np.array([[-eps * v for v in direction]] * f)
    out = generate_attack(AttackSpec(AttackKind.PARTIAL_KNOWLEDGE, epsilon=eps, k=k),
                          AdversaryView(honest), n, f).byzantine
    np.testing.assert_allclose(out, oracle, rtol=1e-12)


def test_partial_requires_k_above_f():
    with pytest.raises(ConfigurationError):
        AttackSpec(AttackKind.PARTIAL_KNOWLEDGE, epsilon=1.0, k=2).check_feasible(10, 2)
    with pytest.raises(ConfigurationError):
        AttackSpec(AttackKind.PARTIAL_KNOWLEDGE, epsilon=1.0)


# ---- random epsilon ----------------------------------------------------------------------

def test_random_epsilon_frequencies():
    view = AdversaryView(honest_panel(3), rng=SeededRng(0, Stream.ATTACK))
    counts = {0.1: 0, 10.0: 0}
    for _ in range(10_000):
        byz, eps = attack_random_epsilon(view, 2, (0.1, 10.0))
        counts[eps] += 1
    assert all(4700 <= c <= 5300 for c in counts.values()), counts
    np.testing.assert_array_equal(byz, attack_epsilon_reverse(view, 2, eps))


def test_random_epsilon_singleton_and_errors():
    view = AdversaryView(honest_panel(4), rng=SeededRng(1, Stream.ATTACK))
    byz, eps = attack_random_epsilon(view, 2, (0.5,))
    assert eps == 0.5
    np.testing.assert_array_equal(byz, attack_epsilon_reverse(view, 2, 0.5))
    with pytest.raises(InvalidInputError):
        attack_random_epsilon(view, 2, ())


# ---- adaptive ----------------------------------------------------------------------------

def test_adaptive_mean_picks_largest_epsilon():
    honest = honest_panel(5)
    view = AdversaryView(honest, PoolSpec((MEAN,)), SeededRng(2, Stream.ATTACK))
    cost = AttackCost()
    byz, eps, member = attack_adaptive(view, 2, (0.1, 10.0), 12, cost)
    assert eps == 10.0 and member == 0
    assert cost.aggregator_evaluations == 2
    gbar = honest.mean(axis=0)
    dots = {e: (1.0 - 2 * e / 12) * (10 / 12) * float(gbar @ gbar) for e in (0.1, 10.0)}
    assert dots[10.0] < dots[0.1]


def test_adaptive_choice_is_exhaustive_minimum():
    pool = PoolSpec((MEAN, COMED, KRUM, AggregatorSpec(AggKind.GEOM_MEDIAN)))
    for seed in range(20):
        honest = honest_panel(100 + seed, scale=1.0)
        cost = AttackCost()
        view = AdversaryView(honest, pool, SeededRng(seed, Stream.ATTACK))
        byz, eps, member = attack_adaptive(view, 2, ADAPTIVE_EPSILONS, 12, cost)
        assert eps in ADAPTIVE_EPSILONS
        assert cost.aggregator_evaluations == len(ADAPTIVE_EPSILONS)
        spec = pool.members[member]
        gbar = honest.mean(axis=0)
        dots = []
        for e in ADAPTIVE_EPSILONS:
            panel = np.vstack([np.tile(-e * gbar, (2, 1)), honest])
            dots.append(float(aggregate(spec, panel, 2).result @ gbar))
        assert dots[ADAPTIVE_EPSILONS.index(eps)] == pytest.approx(min(dots), rel=1e-9, abs=1e-12)


def test_adaptive_singleton_and_missing_pool():
    view = AdversaryView(honest_panel(6), PoolSpec((COMED,)), SeededRng(0, Stream.ATTACK))
    assert attack_adaptive(view, 2, (0.5,), 12)[1] == 0.5
    with pytest.raises(InvalidInputError):
        attack_adaptive(AdversaryView(honest_panel(6), rng=SeededRng(0)), 2, (0.5,), 12)


# ---- min-max pool ------------------------------------------------------------------------

def test_minmax_mean_picks_largest_lambda():
    view = AdversaryView(honest_panel(7), PoolSpec((MEAN,)))
    byz, xi, lam = attack_minmax_pool(view, 2, (0.01, 0.1, 1.0, 3.0))
    assert lam == 3.0
    honest = view.honest_gradients
    np.testing.assert_allclose(byz, np.tile(-3.0 * honest.sum(axis=0), (2, 1)))
    gbar = honest.mean(axis=0)
    expected = (honest.sum(axis=0) * (1 - 2 * 3.0) / 12) @ gbar
    assert xi == pytest.approx(expected, rel=1e-12)


def test_minmax_zero_grid_is_no_attack_limit():
    honest = honest_panel(8)
    pool = PoolSpec((COMED, KRUM))
    byz, xi, lam = attack_minmax_pool(AdversaryView(honest, pool), 2, (0.0,))
    assert np.all(byz == 0)
    gbar = honest.mean(axis=0)
    panel = np.vstack([np.zeros((2, honest.shape[1])), honest])
    expected = max(float(aggregate(m, panel, 2).result @ gbar) for m in pool.members)
    assert xi == pytest.approx(expected, rel=1e-12)


def test_minmax_matches_double_loop_oracle():
    honest = honest_panel(9, scale=1.0)
    pool = PoolSpec((COMED, KRUM))
    grid = DEFAULT_LAMBDA_GRID
    cost = AttackCost()
    _, xi, lam = attack_minmax_pool(AdversaryView(honest, pool), 2, grid, cost)
    assert cost.aggregator_evaluations == len(grid) * len(pool)
    gbar = honest.mean(axis=0)
    best = np.inf
    for g in grid:
        worst = -np.inf
        for m in pool.members:
            panel = np.vstack([np.tile(-g * honest.sum(axis=0), (2, 1)), honest])
            worst = max(worst, float(aggregate(m, panel, 2).result @ gbar))
        best = min(best, worst)
    assert xi == pytest.approx(best, rel=1e-12)


def test_minmax_nonincreasing_under_refinement():
    honest = honest_panel(10, scale=1.0)
    pool = PoolSpec((COMED, KRUM, MEAN))
    coarse = DEFAULT_LAMBDA_GRID[::4]
    fine = DEFAULT_LAMBDA_GRID
    xi_c = attack_minmax_pool(AdversaryView(honest, pool), 2, coarse)[1]
    xi_f = attack_minmax_pool(AdversaryView(honest, pool), 2, fine)[1]
    assert xi_f <= xi_c
    assert len(DEFAULT_LAMBDA_GRID) == 25
    assert DEFAULT_LAMBDA_GRID[0] == pytest.approx(0.01) and DEFAULT_LAMBDA_GRID[-1] == pytest.approx(100.0)


def test_minmax_infeasible_member():
    pool = PoolSpec((AggregatorSpec(AggKind.BULYAN),))
    with pytest.raises(ConfigurationError):
        attack_minmax_pool(AdversaryView(honest_panel(11, rows=8), pool), 2, (1.0,))


# ---- A Little ----------------------------------------------------------------------------

def test_a_little_examples():
    honest = honest_panel(12)
    np.testing.assert_allclose(attack_a_little(AdversaryView(honest), 2, 12, z=0.0),
                               np.tile(honest.mean(axis=0), (2, 1)))
    np.testing.assert_array_equal(attack_a_little(AdversaryView([[0.0], [2.0]]), 1, 3, z=1.0), [[0.0]])
    same = np.tile([1.0, -2.0], (5, 1))
    np.testing.assert_array_equal(attack_a_little(AdversaryView(same), 2, 7, z=3.7), same[:2])
    with pytest.raises(InvalidInputError):
        attack_a_little(AdversaryView([[1.0]]), 1, 2)


def test_a_little_default_z_matches_bisection():
    for n, f in [(12, 2), (20, 4), (50, 10), (7, 1)]:
        s = (n // 2 + 1) - f
        assert a_little_default_z(n, f) == pytest.approx(norm_phi_inv((n - s) / n), abs=1e-9)


# ---- verification ------------------------------------------------------------------------

def test_verify_mean_closed_form():
    honest = honest_panel(13)
    gbar = honest.mean(axis=0)
    byz = attack_epsilon_reverse(AdversaryView(honest), 2, 10.0)
    cost = AttackCost()
    dot, ok = verify_attack(byz, honest, MEAN, 2, cost=cost)
    assert ok
    assert dot == pytest.approx(-(10 / 12) * float(gbar @ gbar), rel=1e-12)
    assert cost.aggregator_evaluations == 1


def test_verify_clean_round_and_comed():
    honest = honest_panel(14, scale=0.01)
    dot, ok = verify_attack(np.zeros((0, 5)), honest, MEAN, 0)
    assert dot > 0 and not ok
    byz = attack_epsilon_reverse(AdversaryView(honest), 2, 0.1)
    dot, ok = verify_attack(byz, honest, COMED, 2)
    assert not ok


def test_verify_precondition():
    with pytest.raises(InvalidInputError):
        verify_attack(np.zeros((2, 5)), honest_panel(15, rows=4), KRUM, 2)


# ---- stream isolation --------------------------------------------------------------------

def test_adversary_and_server_choices_uncorrelated():
    pool = PoolSpec((MEAN, COMED, KRUM, AggregatorSpec(AggKind.TRIMMED_MEAN),
                     AggregatorSpec(AggKind.KRUM, p=1.0), AggregatorSpec(AggKind.KRUM, p=4.0)))
    server = SeededRng(3, Stream.POOL)
    adversary = SeededRng(3, Stream.ATTACK)
    data = np.random.default_rng(3)
    server_choices, adv_choices = [], []
    for _ in range(1000):
        honest = 1.0 + data.normal(size=(10, 3))
        view = AdversaryView(honest, pool, adversary)
        res = generate_attack(AttackSpec(AttackKind.ADAPTIVE, epsilon_set=(0.1, 10.0)), view, 12, 2)
        panel = np.vstack([res.byzantine, honest])
        server_choices.append(agg_mixtailor(panel, pool, 2, server).chosen_member)
        adv_choices.append(res.simulated_member)
    r = np.corrcoef(server_choices, adv_choices)[0, 1]
    assert abs(r) < 0.1


# ---- dispatch and parsing ----------------------------------------------------------------

def test_generate_none_and_f0():
    view = AdversaryView(honest_panel(16))
    assert generate_attack(AttackSpec(), view, 12, 2).byzantine.shape == (0, 5)
    spec = AttackSpec(AttackKind.EPSILON_REVERSE, epsilon=1.0)
    assert generate_attack(spec, view, 10, 0).byzantine.shape == (0, 5)


def test_parse_attack():
    s = parse_attack("reverse eps=0.1")
    assert s.kind is AttackKind.EPSILON_REVERSE and s.epsilon == 0.1
    s = parse_attack("adaptive")
    assert s.epsilon_set == ADAPTIVE_EPSILONS
    s = parse_attack("partial eps=10 k=6")
    assert s.k == 6
    s = parse_attack("minmax grid=0.1,1,10")
    assert s.lambda_grid == (0.1, 1.0, 10.0)
    assert parse_attack("alittle z=1.5").z == 1.5
    assert parse_attack("none").kind is AttackKind.NONE
    with pytest.raises(InvalidInputError):
        parse_attack("reverse eps=0.1 bogus=1")
    with pytest.raises(ConfigurationError):
        parse_attack("reverse")
    with pytest.raises(InvalidInputError):
        parse_attack("nosuch")

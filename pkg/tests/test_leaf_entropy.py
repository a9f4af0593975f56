import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from oracles import brute_generator, brute_separated, dp_generator, dp_separated, pairwise_dn

from anosovlab import families
from anosovlab.leaf_entropy import (ImageTable, dn_distance, dn_matrix, entropy_growth_gap, greedy_generator,
                               greedy_separated, leaf_entropy, max_separated, min_generator,
                               separated_count_bound, separation_table)
from anosovlab.errors import ResolutionTooCoarse
from anosovlab.foliation import grow_leaf

LOG_UU = 1.17772521152335946
X0 = np.array([0.1234, 0.5678, 0.3141])


@pytest.fixture(scope="module")
def table():
    f = families.single_mode(0.05)
    K = grow_leaf(f, X0, "uu", 0.05, 1e-3)
    return ImageTable.build(f, K, 4, 1e-3)


def monotone_tables():
    """Random increasing position tables lam[j, i], row j growing like 3^j."""
    return st.tuples(st.integers(2, 14), st.integers(1, 4), st.integers(0, 2 ** 31 - 1)).map(_table)


def _table(args):
    m, n, seed = args
    rng = np.random.default_rng(seed)
    steps = rng.exponential(1.0, size=(n, m - 1)) * (3.0 ** np.arange(n))[:, None]
    lam = np.concatenate([np.zeros((n, 1)), np.cumsum(steps, axis=1)], axis=1)
    return lam / lam[0, -1]


@settings(max_examples=60, deadline=None)
@given(monotone_tables(), st.floats(0.01, 1.0))
def test_greedy_matches_brute_force(lam, eps):
    n = lam.shape[0]
    D = pairwise_dn(lam, n)
    assert np.allclose(dn_matrix(lam, n), D)
    sep = greedy_separated(lam, n, eps)
    gen = greedy_generator(lam, n, eps)
    assert len(sep) == brute_separated(D, eps)
    assert len(gen) == brute_generator(D, eps)
    # the returned sets have the claimed properties
    assert all(D[a, b] > eps for a in sep for b in sep if a < b)
    assert np.all(np.min(D[gen], axis=0) <= eps)


@settings(max_examples=60, deadline=None)
@given(st.tuples(st.integers(2, 50), st.integers(1, 4), st.integers(0, 2 ** 31 - 1)).map(_table),
       st.floats(0.005, 1.0))
def test_dp_oracle_agrees_on_larger_tables(lam, eps):
    n = lam.shape[0]
    D = pairwise_dn(lam, n)
    assert len(greedy_separated(lam, n, eps)) == dp_separated(D, eps)
    assert len(greedy_generator(lam, n, eps)) == dp_generator(D, eps)


@settings(max_examples=30, deadline=None)
@given(monotone_tables(), st.floats(0.01, 1.0))
def test_separated_generator_sandwich(lam, eps):
    n = lam.shape[0]
    g = len(greedy_generator(lam, n, eps))
    s = len(greedy_separated(lam, n, eps))
    gh = len(greedy_generator(lam, n, eps / 2))
    assert g <= s <= gh


def test_dn_distance_matches_positions(table):
    t = table.params
    y, z = t[10], t[400]
    want = max(abs(table.lam[j, 400] - table.lam[j, 10]) for j in range(4))
    assert abs(float(dn_distance(table, y, z, 4)) - want) < 1e-12
    with pytest.raises(ValueError):
        dn_distance(table, y, z, 5)


def test_continuous_sweep_brackets_discrete(table):
    for n in (1, 2, 4):
        for eps in (0.02, 0.01):
            c = max_separated(table, n, eps)
            d = max_separated(table, n, eps, continuous=False)
            assert d <= c <= d + 1 + d // 10
            cg = min_generator(table, n, eps)
            dg = min_generator(table, n, eps, continuous=False)
            assert abs(cg - dg) <= 1 + dg // 10


def test_linear_counts_follow_lengths():
    f = families.linear()
    K = grow_leaf(f, X0, "uu", 0.05, 1e-3)
    tab = ImageTable.build(f, K, 4, 1e-3)
    for n in range(1, 5):
        L = 0.1 * math.exp((n - 1) * LOG_UU)
        for eps in (0.02, 0.01):
            assert abs(max_separated(tab, n, eps) - (math.floor(L / eps) + 1)) <= 1


def test_resolution_guard(table):
    with pytest.raises(ResolutionTooCoarse):
        max_separated(table, 4, table.resolution(4) * 5)


def test_separation_table_properties(table):
    sep = separation_table(table, [1, 2, 3, 4], [0.04, 0.02])
    assert sep.sandwich_holds() and sep.monotone()
    rows = list(sep.csv_rows())
    assert rows[0] == "n,eps,s_count,g_count" and len(rows) == 9


def test_counting_bound(table):
    k, s = separated_count_bound(table, 4, 0.02)
    assert k is not None and s >= 1


def test_leaf_entropy_linear_uu():
    f = families.linear()
    K = grow_leaf(f, X0, "uu", 0.1, 1e-3)
    est = leaf_entropy(f, "uu", K, n_max=6)
    assert abs(est.h - LOG_UU) < 5e-3
    assert est.diagnostics["sandwich"] and est.diagnostics["monotone"]
    assert '"h"' in est.to_json()


def test_leaf_entropy_requires_expanding_tag():
    f = families.linear()
    K = grow_leaf(f, X0, "s", 0.1)
    with pytest.raises(ValueError):
        leaf_entropy(f, "s", K, n_max=3)
    with pytest.raises(ValueError):
        leaf_entropy(f, "uu", grow_leaf(f, X0, "uu", 0.1))


def test_entropy_growth_gap_small():
    gap, ent, chi = entropy_growth_gap(families.single_mode(0.05), "uu", X0, 0.05, 5)
    assert abs(gap) < 2e-2 and abs(chi - LOG_UU) < 2e-2

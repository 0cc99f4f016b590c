import itertools

import pytest
from hypothesis import given, settings, strategies as st

from reslat.lattice import (
    LatticeRegion,
    NeighborBond,
    bonds_touching,
    chain,
    combinatorics_report,
    count_contributing_sequences,
    enumerate_bonds,
    inflate_region,
    make_box_region,
    neighbor_norm_bounds,
)


def test_box_1d():
    assert make_box_region(1, [3], [0]).points == ((0,), (1,), (2,))


def test_box_2d():
    assert set(make_box_region(2, [2, 2], [0, 0]).points) == {(0, 0), (0, 1), (1, 0), (1, 1)}


def test_box_rejects_empty_side_and_mismatch():
    with pytest.raises(ValueError):
        make_box_region(1, [0])
    with pytest.raises(ValueError):
        make_box_region(2, [2])
    with pytest.raises(ValueError):
        make_box_region(1, [2], [0, 0])


def test_region_sorted_and_deduplicated():
    r = LatticeRegion(1, [(2,), (0,), (2,), 1])
    assert r.points == ((0,), (1,), (2,))
    assert len(r) == 3 and (1,) in r and 1 in r


def test_region_set_operations():
    a, b = chain(3), chain(3, start=2)
    assert a.union(b) == chain(5)
    assert a.difference(b) == chain(2)
    assert chain(2).issubset(a) and not b.issubset(a)
    with pytest.raises(ValueError):
        a.union(make_box_region(2, [1, 1]))


def test_region_json_roundtrip():
    r = make_box_region(2, [2, 3], [-1, 4])
    assert LatticeRegion.from_json(r.to_json()) == r
    assert LatticeRegion.from_json("[]", dim=2) == LatticeRegion(2, [])
    with pytest.raises(ValueError):
        LatticeRegion.from_json("[]")


def test_bond_validation_and_canonical_order():
    b = NeighborBond((1,), (0,))
    assert b.first == (0,) and b.second == (1,)
    with pytest.raises(ValueError):
        NeighborBond((0,), (2,))
    with pytest.raises(ValueError):
        NeighborBond((0, 0), (1, 1))


def test_chain_bonds():
    assert enumerate_bonds(chain(3)) == [NeighborBond((0,), (1,)), NeighborBond((1,), (2,))]


def test_square_and_singleton_bonds():
    assert len(enumerate_bonds(make_box_region(2, [2, 2]))) == 4
    assert enumerate_bonds(chain(1)) == []


def test_bonds_touching_center():
    assert len(bonds_touching(chain(3), [(1,)])) == 2
    assert len(bonds_touching(make_box_region(2, [3, 3]), [(1, 1)])) == 4


@given(st.integers(1, 3), st.integers(1, 4))
def test_box_bond_count(d, s):
    region = make_box_region(d, [s] * d)
    assert len(enumerate_bonds(region)) == d * s ** (d - 1) * (s - 1)


def test_inflate_examples():
    assert inflate_region(LatticeRegion(1, [0]), 2) == chain(5, start=-2)
    r = make_box_region(2, [2, 1])
    assert inflate_region(r, 0) == r
    assert len(inflate_region(LatticeRegion(2, [(0, 0)]), 1)) == 9
    with pytest.raises(ValueError):
        inflate_region(r, -1)


@settings(max_examples=30)
@given(st.integers(1, 2), st.integers(1, 3), st.integers(0, 2), st.integers(0, 2))
def test_inflate_monotone_and_additive_for_boxes(d, s, m, n):
    box = make_box_region(d, [s] * d)
    assert inflate_region(box, n).issubset(inflate_region(box, n + 1))
    assert inflate_region(inflate_region(box, m), n) == inflate_region(box, m + n)


def test_combinatorics_examples():
    r = combinatorics_report(1, 1, 1)
    assert (r.N_n_bound, r.L_n_bound) == (4, 2)
    r = combinatorics_report(2, 2, 1)
    assert (r.N_n_bound, r.L_n_bound) == (96, 4)
    assert combinatorics_report(1, 1, 2).N_n_bound == 8


def test_combinatorics_overflow_reported():
    with pytest.raises(OverflowError):
        combinatorics_report(5, 40, 3)
    big = combinatorics_report(5, 40, 3, limit=10**200)
    assert big.N_n_bound > 2**63


def test_combinatorics_rejects_nonpositive():
    with pytest.raises(ValueError):
        combinatorics_report(0, 1, 1)


@pytest.mark.parametrize("d,L0,n", [(d, L0, n) for d in (1, 2) for L0 in (1, 2, 3) for n in (1, 2, 3)])
def test_bound_dominates_brute_force(d, L0, n):
    start = LatticeRegion(d, [(i,) + (0,) * (d - 1) for i in range(L0)])
    assert count_contributing_sequences(start, n) <= combinatorics_report(L0, n, d).N_n_bound


def test_brute_force_small_values():
    # one site in 1d: 2 bonds; the grown pair then touches 3 distinct bonds
    assert count_contributing_sequences(LatticeRegion(1, [0]), 1) == 2
    assert count_contributing_sequences(LatticeRegion(1, [0]), 2) == 2 * 3


def test_neighbor_bounds():
    for d in (1, 2, 3, 4):
        b = neighbor_norm_bounds(d, 1.0)
        assert b["pow2"] >= b["neighbor_count"]
    assert neighbor_norm_bounds(3, 0.5) == {"pow2": 4.0, "neighbor_count": 3.0}


def test_region_hashable_and_lexicographic():
    pts = list(itertools.product(range(2), range(2)))
    r = LatticeRegion(2, reversed(pts))
    assert r.points == tuple(sorted(pts))
    assert {r: 1}[make_box_region(2, [2, 2])] == 1

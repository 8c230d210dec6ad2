import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dipolarxx.lattice import (LatticeSpec, build_coupling_table, kac_factor, min_image_distance,
                               normalization, point_group)


def brute_distance(spec, i, j):
    """Minimum over a 5x5 block of images, independent of the library routine."""
    a = spec.primitive_vectors
    xi, yi = spec.coords(i)
    xj, yj = spec.coords(j)
    best = np.inf
    for k1, k2 in itertools.product(range(-2, 3), repeat=2):
        v = (xj - xi + k1 * spec.Lx) * a[0] + (yj - yi + k2 * spec.Ly_) * a[1]
        best = min(best, np.hypot(*v))
    return best


def test_spec_validation():
    with pytest.raises(ValueError):
        LatticeSpec("kagome", 4, 3.0)
    with pytest.raises(ValueError):
        LatticeSpec("square", 1, 3.0)
    with pytest.raises(ValueError):
        LatticeSpec("square", 4, -1.0)
    assert LatticeSpec("square", 5, 3.0, Ly=4).N == 20


def test_alpha_zero_couplings_are_one():
    for geom in ("square", "triangular"):
        t = build_coupling_table(LatticeSpec(geom, 3, 0.0))
        off = ~np.eye(t.N, dtype=bool)
        assert np.all(t.couplings[off] == 1.0)
        assert np.all(np.diag(t.couplings) == 0)


def test_square_nearest_and_diagonal():
    spec = LatticeSpec("square", 4, 3.0)
    t = build_coupling_table(spec)
    assert t.couplings[0, spec.site(1, 0)] == pytest.approx(1.0)
    assert t.couplings[0, spec.site(1, 1)] == pytest.approx(2 ** -1.5, abs=1e-12)
    assert 2 ** -1.5 == pytest.approx(0.353553, abs=1e-6)


def test_square_4x4_classes_match_enumeration():
    # pairs grouped by distance by hand: 1, sqrt2, 2, sqrt5, sqrt8
    spec = LatticeSpec("square", 4, 3.0)
    t = build_coupling_table(spec)
    assert t.n_classes == 5
    got = sorted(zip(np.round(t.class_distance**2).astype(int), t.class_size))
    assert got == [(1, 32), (2, 32), (4, 16), (5, 32), (8, 8)]
    # cross-check by grouping all pairs on their brute-force distance
    groups = {}
    for i in range(t.N):
        for j in range(i + 1, t.N):
            r2 = round(brute_distance(spec, i, j) ** 2, 9)
            groups[r2] = groups.get(r2, 0) + 1
    assert sorted(groups.values()) == sorted(t.class_size.tolist())


def test_distance_symmetric_and_matches_brute_force():
    for spec in (LatticeSpec("square", 4, 3.0), LatticeSpec("triangular", 4, 3.0),
                 LatticeSpec("square", 5, 3.0, Ly=4)):
        t = build_coupling_table(spec)
        assert np.allclose(t.distances, t.distances.T)
        for i in range(t.N):
            for j in range(t.N):
                if i != j:
                    assert t.distances[i, j] == pytest.approx(brute_distance(spec, i, j), abs=1e-12)


def test_distance_rejects_same_site():
    with pytest.raises(ValueError):
        min_image_distance(LatticeSpec("square", 4, 3.0), 2, 2)


def test_kac_small_square():
    # 2x2 cell: per site two neighbours at distance 1 and one at sqrt 2
    assert kac_factor(LatticeSpec("square", 2, 3.0)) == pytest.approx(2 + 2 ** -1.5, abs=1e-12)
    assert kac_factor(LatticeSpec("square", 2, 3.0)) == pytest.approx(2.353553, abs=1e-6)


def test_kac_regression_constants():
    assert kac_factor(LatticeSpec("square", 4, 3.0)) == pytest.approx(6.066178612597227, rel=1e-12)
    assert kac_factor(LatticeSpec("triangular", 4, 3.0)) == pytest.approx(7.529701, rel=1e-6)


@settings(max_examples=15, deadline=None)
@given(st.sampled_from(["square", "triangular"]), st.integers(2, 6))
def test_kac_alpha_zero_is_n_minus_one(geom, L):
    spec = LatticeSpec(geom, L, 3.0)
    assert kac_factor(spec, 0.0) == pytest.approx(spec.N - 1, abs=1e-12)


def test_kac_converges_with_size():
    k = {L: kac_factor(LatticeSpec("square", L, 3.0)) for L in (8, 10, 12)}
    assert abs(k[12] - k[10]) < abs(k[10] - k[8])


@settings(max_examples=10, deadline=None)
@given(st.sampled_from(["square", "triangular"]), st.integers(2, 6), st.floats(0.0, 4.0))
def test_class_sums_reproduce_pair_sum(geom, L, alpha):
    t = build_coupling_table(LatticeSpec(geom, L, alpha))
    iu = np.triu_indices(t.N, 1)
    assert np.all(t.class_of[iu] >= 0)
    total = t.couplings[iu].sum()
    assert t.pair_sum() == pytest.approx(total, rel=1e-12)
    # every pair of a class has the class distance
    assert np.allclose(t.distances[iu], t.class_distance[t.class_of[iu]])


def test_point_group_sizes():
    assert len(point_group(LatticeSpec("square", 4, 3.0))) == 8
    assert len(point_group(LatticeSpec("triangular", 4, 3.0))) == 12
    assert len(point_group(LatticeSpec("square", 5, 3.0, Ly=4))) == 4


def test_normalization():
    assert normalization(LatticeSpec("square", 4, 0.0)) == 16
    assert normalization(LatticeSpec("square", 4, 3.0)) == 1


def test_csv_export(tmp_path):
    t = build_coupling_table(LatticeSpec("square", 3, 3.0))
    path = tmp_path / "c.csv"
    t.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "i,j,r_ij,J_ij,class_id"
    assert len(lines) == 1 + t.N * (t.N - 1) // 2

from functools import reduce
from types import SimpleNamespace

import numpy as np
import pytest
from scipy.special import comb

from dipolarxx import dicke, exact
from dipolarxx.lattice import LatticeSpec
from dipolarxx.model import XXModel

# single-site matrices in the basis (down, up), matching bit value 0, 1
SX = np.array([[0, 1], [1, 0]]) / 2
SY = np.array([[0, 1j], [-1j, 0]]) / 2
SZ = np.diag([-0.5, 0.5])


def site_op(op, i, N):
    # bit i of the basis index is site i, so site 0 is the rightmost factor
    mats = [np.eye(2)] * N
    mats[N - 1 - i] = op
    return reduce(np.kron, mats)


def dense_hamiltonian(model):
    """Kronecker-product oracle."""
    N = model.N
    H = np.zeros((1 << N, 1 << N), dtype=complex)
    J = model.table.couplings
    for i in range(N):
        for j in range(i + 1, N):
            H -= (model.coupling / model.norm_value) * J[i, j] * (
                site_op(SX, i, N) @ site_op(SX, j, N) + site_op(SY, i, N) @ site_op(SY, j, N))
    return H


def two_site_model(amplitude):
    return SimpleNamespace(N=2, flip_amplitude=np.array([[0.0, amplitude], [amplitude, 0.0]]))


def test_two_spin_blocks():
    # alpha = 0 with norm N = 2: element -1/(2*2)
    blk = exact.build_sector(two_site_model(-0.25), 0.0)
    assert blk.dim == 2
    assert np.allclose(blk.dense(), [[0, -0.25], [-0.25, 0]])
    assert np.allclose(np.linalg.eigvalsh(blk.dense()), [-0.25, 0.25])
    blk = exact.build_sector(two_site_model(-0.5), 0.0)
    assert np.allclose(np.linalg.eigvalsh(blk.dense()), [-0.5, 0.5])


def test_block_spectrum_matches_dense_2x2():
    model = XXModel(LatticeSpec("square", 2, 3.0))
    blocks = exact.build_blocks(model)
    assert [b.dim for b in blocks] == [int(comb(4, k)) for k in range(5)]
    ev = np.sort(np.concatenate([np.linalg.eigvalsh(b.dense()) for b in blocks]))
    assert np.allclose(ev, np.linalg.eigvalsh(dense_hamiltonian(model)), atol=1e-12)


def test_blocks_are_real_symmetric():
    model = XXModel(LatticeSpec("triangular", 3, 3.0))
    for b in exact.build_blocks(model):
        h = b.dense()
        assert np.allclose(h, h.T)
        x = np.random.default_rng(1).normal(size=b.dim)
        assert np.allclose(b.matvec(x), h @ x)


def test_sector_validation_and_caps():
    model = XXModel(LatticeSpec("square", 2, 3.0))
    with pytest.raises(ValueError):
        exact.build_sector(model, 3.0)
    with pytest.raises(ValueError):
        exact.build_sector(model, 0.5)
    big = XXModel(LatticeSpec("square", 5, 3.0))
    with pytest.raises(ValueError, match="refuses"):
        exact.build_sector(big, 0.0, size_cap=30)
    with pytest.raises(ValueError, match="size cap"):
        exact.build_sector(XXModel(LatticeSpec("square", 5, 3.0, Ly=4)), 0.0, size_cap=16)


def test_css_x_full():
    st = exact.css_x_full(2)
    assert np.allclose(st.dense(), 0.5)
    N = 10
    st = exact.css_x_full(N)
    assert np.allclose(st.sector_weights(), [comb(N, k) / 2**N for k in range(N + 1)])
    row = exact.full_observables(st)
    assert row["J2"] == pytest.approx(N / 2 * (N / 2 + 1))
    assert row["parity"] == pytest.approx(0, abs=1e-12)
    assert row["xi2"] == pytest.approx(1.0)
    assert row["C"] == pytest.approx(0, abs=1e-12)
    assert row["F_px"] == pytest.approx(1.0)


@pytest.mark.parametrize("N", [4, 6, 8])
def test_ideal_ghz_saturates_parity_bound(N):
    row = exact.full_observables(exact.ghz_dense(N))
    assert 4 * row["VarJx"] == pytest.approx(N**2)
    assert row["C"] == pytest.approx(1.0)
    assert row["dparity_dtheta"] ** 2 == pytest.approx(N**2)


def test_parity_derivative_matches_finite_difference():
    # rotate about x by +-h with the dense J^x and difference <P>
    N = 6
    rng = np.random.default_rng(3)
    psi = rng.normal(size=1 << N) + 1j * rng.normal(size=1 << N)
    psi /= np.linalg.norm(psi)
    jx = sum(site_op(SX, i, N) for i in range(N))
    w, v = np.linalg.eigh(jx)
    par = exact._parity_table(N)
    h = 1e-5

    def parity(theta):
        phi = v @ (np.exp(-1j * theta * w) * (v.conj().T @ psi))
        return np.sum(par * np.abs(phi) ** 2)

    fd = (parity(h) - parity(-h)) / (2 * h)
    assert exact.moments_dense(psi, N).dparity == pytest.approx(fd, abs=1e-8)


def test_moments_match_dense_operators():
    N = 5
    rng = np.random.default_rng(4)
    psi = rng.normal(size=1 << N) + 1j * rng.normal(size=1 << N)
    psi /= np.linalg.norm(psi)
    ops = [sum(site_op(S, i, N) for i in range(N)) for S in (SX, SY, SZ)]
    m = exact.moments_dense(psi, N)
    for a in range(3):
        assert m.mean[a] == pytest.approx(np.vdot(psi, ops[a] @ psi).real, abs=1e-12)
        for b in range(3):
            sym = 0.5 * (ops[a] @ ops[b] + ops[b] @ ops[a])
            assert m.second[a, b] == pytest.approx(np.vdot(psi, sym @ psi).real, abs=1e-12)


def test_alpha_zero_matches_dicke():
    spec = LatticeSpec("square", 4, 0.0, Ly=2)
    model = XXModel(spec)
    N = model.N
    oat = dicke.OatSpec(N, N / model.coupling)
    times = np.linspace(0, oat.t_rev, 9)
    rows, _, _ = exact.evolve(model, times)
    ref = dicke.oat_series(N, oat.I, times)
    for r, d in zip(rows, ref):
        for key in ("Jx", "VarJx", "Jy2", "Jz2", "xi2", "F_GHZ", "C"):
            if np.isfinite(d[key]):
                assert r[key] == pytest.approx(d[key], abs=1e-7), key


def test_alpha_zero_tower_is_oat():
    model = XXModel(LatticeSpec("square", 2, 0.0, Ly=3))
    rec = exact.sector_spectrum(exact.build_blocks(model), k=2)
    N = model.N
    e0 = rec.energies[0.0][0]
    for M, e in rec.energies.items():
        assert e[0] - e0 == pytest.approx(M**2 / (2 * N), abs=1e-10)


def test_spectrum_against_dense_and_eigsh():
    model = XXModel(LatticeSpec("square", 3, 3.0))
    blocks = exact.build_blocks(model)
    dense = exact.sector_spectrum(blocks, k=3, dense_below=10**6)
    sparse = exact.sector_spectrum(blocks, k=3, dense_below=10)
    for M in dense.energies:
        if blocks[int(M + model.N / 2)].dim > 3:
            assert np.allclose(dense.energies[M], sparse.energies[M], atol=1e-8)
            assert dense.tos_index[M] == sparse.tos_index[M]


@pytest.fixture(scope="module")
def dipolar16():
    model = XXModel(LatticeSpec("square", 4, 3.0))
    return model, exact.build_blocks(model)


def test_time_reversal(dipolar16):
    model, blocks = dipolar16
    psi0 = exact.css_x_full(model.N, [b.basis for b in blocks])
    fwd = exact.propagate(psi0, blocks, 3.0)
    back = exact.propagate(fwd, blocks, -3.0)
    assert exact.overlap_full(back, psi0) == pytest.approx(1.0, abs=1e-6)


def test_conservation_laws_and_length(dipolar16):
    model, blocks = dipolar16
    t_rev = 4 * np.pi * 2.4168
    times = np.linspace(0, t_rev, 25)
    w0 = None
    seen = []

    def check(n, t, state):
        nonlocal w0
        w = state.sector_weights()
        if w0 is None:
            w0 = w
        assert np.allclose(w, w0, atol=1e-10)
        seen.append(t)

    rows, _, _ = exact.evolve(model, times, blocks=blocks, on_step=check)
    e = np.array([r["energy"] for r in rows])
    assert np.all(np.abs(e - e[0]) <= 1e-8 * abs(e[0]) * np.maximum(times, 1.0))
    assert max(abs(r["parity"]) for r in rows) < 1e-10
    j2 = np.array([r["J2"] for r in rows])
    assert np.all(j2 / j2[0] >= 0.9)
    assert len(seen) == len(times)


def test_small_step_is_near_identity(dipolar16):
    model, blocks = dipolar16
    psi0 = exact.css_x_full(model.N, [b.basis for b in blocks])
    for dt in (1e-2, 1e-3):
        st = exact.propagate(psi0, blocks, dt)
        assert 1 - exact.overlap_full(st, psi0) < 10 * dt**2 * model.N**2


def test_overlaps():
    N = 8
    css = np.full(1 << N, 2.0 ** (-N / 2))
    assert exact.overlap_full(css, css) == pytest.approx(1.0)
    for theta in (0.3, 1.1, 2.5):
        assert exact.overlap_full(css, exact.css_theta_dense(N, theta)) == pytest.approx(
            np.cos(theta / 2) ** (2 * N), abs=1e-12)
    a = np.zeros(1 << N)
    b = np.zeros(1 << N)
    a[0], b[3] = 1, 1
    assert exact.overlap_full(a, b) == 0
    with pytest.raises(ValueError):
        exact.overlap_full(css, css[:16])


def test_p_jx_full_matches_dicke():
    N = 10
    for t in (0.0, 3.0, 7.7, np.pi * N):
        st = dicke.oat_evolve(dicke.css_x_dicke(N), dicke.OatSpec.bare(N), t)
        assert np.allclose(exact.p_jx_full(exact.embed_dicke(st)), dicke.p_jx_dicke(st), atol=1e-8)
    p = exact.p_jx_full(exact.css_x_full(N))
    assert p[-1] == pytest.approx(1.0)


def test_ghz_dense_matches_dicke_branch():
    for N in (4, 6, 8):
        g = dicke.ghz_dicke(N, dicke.ghz_branch(N))
        assert exact.overlap_full(exact.embed_dicke(g), exact.ghz_dense(N)) == pytest.approx(1.0)


def test_checkpoint_roundtrip(tmp_path, dipolar16):
    model, blocks = dipolar16
    st = exact.propagate(exact.css_x_full(model.N, [b.basis for b in blocks]), blocks, 0.7)
    path = tmp_path / "s.dxxs"
    exact.save_checkpoint(path, st, 0.7, {"lattice": model.spec.label()})
    back, header = exact.load_checkpoint(path)
    assert header["t"] == 0.7 and header["lattice"] == model.spec.label()
    assert np.array_equal(back.dense(), st.dense())
    (tmp_path / "bad").write_bytes(b"nope")
    with pytest.raises(ValueError):
        exact.load_checkpoint(tmp_path / "bad")


def test_krylov_against_expm():
    from scipy.linalg import expm
    rng = np.random.default_rng(0)
    A = rng.normal(size=(40, 40))
    H = A + A.T
    v = rng.normal(size=40) + 0j
    got = exact.expm_krylov(lambda x: H @ x, v, 0.8, tol=1e-12)
    assert np.allclose(got, expm(-0.8j * H) @ v, atol=1e-9)

from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relnet.extract import (
    ExtractError,
    LinearRep,
    collapse,
    collapse_all,
    load_matrices,
    load_rep,
    rep_from_matrix,
    save_matrices,
    verify_matrix_relations,
)
from relnet.netcore import GeneratorNet, layers_for, make_net
from relnet.presentation import builtin, parse_presentation, parse_relation
from relnet.trainer import init_nets

DATA = Path(__file__).parent / "data"
SWAP = np.array([[0.0, 1.0], [1.0, 0.0]])


def test_collapse_hand_product():
    w1 = np.array([[1.0, 1.0], [0.0, 1.0]])
    w2 = np.array([[2.0, 0.0], [0.0, 1.0]])
    net = GeneratorNet("f", 1, 2, 2, layers_for([2, 2, 2], "linear"), [(w1, None), (w2, None)], "linear")
    m, c = collapse(net)
    assert m.tolist() == [[2.0, 2.0], [0.0, 1.0]]
    assert c is None


def test_collapse_affine_offset():
    rng = np.random.default_rng(0)
    net = make_net("f", 1, (2, 2), "affine", rng)
    for _, b in net.params:
        b[...] = rng.normal(size=b.shape)
    m, c = collapse(net)
    x = rng.uniform(-1, 1, (10, 2))
    np.testing.assert_allclose(net.forward(x), x @ m.T + c, atol=1e-12)


def test_collapse_rejects_nonlinear():
    with pytest.raises(ExtractError, match="nonlinear"):
        collapse(make_net("f", 1, (2, 2), "nonlinear", 0))


def test_swap_solves_yang_baxter_exactly():
    p = builtin("yang_baxter")
    rep = LinearRep(1, {"R": SWAP, "R_inv": SWAP}, {"R": None, "R_inv": None})
    assert all(v == 0.0 for v in verify_matrix_relations(rep, p).values())


def test_identity_is_degenerate_braid_solution():
    p = builtin("braid")
    rep = LinearRep(1, {"f": np.eye(2), "g": np.eye(2)}, {"f": None, "g": None})
    assert all(v == 0.0 for v in verify_matrix_relations(rep, p).values())


def test_missing_inverse_uses_exact_inverse():
    p = builtin("braid")
    m = np.array([[2.0, 1.0], [1.0, 1.0]])
    res = verify_matrix_relations(rep_from_matrix(m, p), p)
    assert res["f∘g=id"] < 1e-15 and res["g∘f=id"] < 1e-15


def test_dimension_mismatch():
    p = builtin("braid")
    rep = LinearRep(1, {"f": np.eye(3), "g": np.eye(3)}, {"f": None, "g": None})
    with pytest.raises(ExtractError, match="arity needs"):
        verify_matrix_relations(rep, p)
    with pytest.raises(ExtractError):
        rep_from_matrix(np.eye(3), p)


def test_rep_from_matrix_block_dim():
    assert rep_from_matrix(np.eye(4), builtin("braid")).block_dim == 2
    assert rep_from_matrix(np.eye(4), builtin("rt_system")).block_dim == 2
    assert rep_from_matrix(np.eye(9), builtin("rt_system")).block_dim == 3


def test_tensor_frobenius_of_kron_swap():
    # the flip on V (x) V satisfies the braid part of the RT system
    p = builtin("rt_system")
    flip = np.eye(4)[[0, 2, 1, 3]]
    rep = rep_from_matrix(flip, p)
    res = verify_matrix_relations(rep, p, [p.relation("Yang Baxter"), p.relation("R⊗R⁻¹=id_{V⊗V}")])
    assert max(res.values()) == 0.0


def _published(name, pres):
    return load_rep(DATA / name, pres)


def test_published_tl_n2_is_idempotent():
    p = builtin("temperley_lieb", {"delta": 1.0})
    rep = _published("tl_n2.txt", p)
    assert rep.block_dim == 1
    m = rep.matrices["U"]
    assert np.linalg.norm(m @ m - m) < 1e-3
    assert verify_matrix_relations(rep, p)["U^2 = delta U"] < 1e-3


def test_published_tl_n4_is_idempotent():
    p = builtin("temperley_lieb", {"delta": 1.0})
    m = _published("tl_n4.txt", p).matrices["U"]
    assert np.linalg.norm(m @ m - m) < 1e-5


def test_published_braid_n2_is_invertible():
    m = _published("braid_n2.txt", builtin("braid")).matrices["f"]
    assert abs(np.linalg.det(m)) > 0.1


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(["braid", "temperley_lieb"]))
def test_frobenius_bounds_sampled_residual(seed, name):
    # mean ||D x||^2 over [-1,1]^d equals ||D||_F^2 / 3 in expectation and never exceeds d ||D||_F^2
    p = builtin(name, {"delta": 1.0})
    nets = init_nets(p, 1, "linear", seed)
    rep = collapse_all(nets)
    exact = verify_matrix_relations(rep, p)
    from relnet.relcomp import compile_relations, relation_residual

    rng = np.random.default_rng(seed)
    for rel in compile_relations(p, nets):
        x = rng.uniform(-1, 1, (4096, rel.in_width))
        r = relation_residual(rel, x)
        assert r <= rel.in_width * exact[rel.label] ** 2 + 1e-15
        assert r == pytest.approx(exact[rel.label] ** 2 / 3, rel=0.15, abs=1e-14)


def test_composition_functoriality():
    rng = np.random.default_rng(1)
    f = make_net("f", 1, (2, 2), "linear", rng)
    g = make_net("g", 1, (2, 2), "linear", rng)
    fm, _ = collapse(f)
    gm, _ = collapse(g)
    x = rng.uniform(-1, 1, (5, 2))
    np.testing.assert_allclose(f.forward(g.forward(x)), x @ (fm @ gm).T, atol=1e-13)


def test_probe_relation_via_matrices():
    p = builtin("braid")
    rep = LinearRep(1, {"f": SWAP, "g": SWAP}, {"f": None, "g": None})
    probe = parse_relation(p, "f * f = id^2")
    assert verify_matrix_relations(rep, p, [probe])["f * f = id^2"] == 0.0


def test_matrix_file_round_trip(tmp_path):
    nets = init_nets(builtin("rt_system"), 2, "linear", 0)
    rep = collapse_all(nets)
    save_matrices(rep, tmp_path / "m.json")
    back = load_matrices(tmp_path / "m.json")
    assert back.block_dim == 2 and back.monoidal == "tensor"
    for k in rep.matrices:
        assert back.matrices[k].tobytes() == rep.matrices[k].tobytes()


def test_malformed_matrix_file(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("1 2\n3\n")
    with pytest.raises(ExtractError):
        load_rep(bad, builtin("braid"))
    (tmp_path / "bad.json").write_text('{"generators": {}}')
    with pytest.raises(ExtractError):
        load_matrices(tmp_path / "bad.json")


def test_custom_presentation_matrix():
    p = parse_presentation("structure algebra\nscalar delta = 2.0\ngenerator U arity 2->2\nrelation U * U = delta U\n")
    rep = rep_from_matrix(2 * np.eye(2), p)
    assert verify_matrix_relations(rep, p)["U * U = delta U"] == 0.0

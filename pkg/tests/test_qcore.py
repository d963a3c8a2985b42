import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qrsim import qcore
from qrsim.errors import ValidationError
from qrsim.qcore import (
    EPSILON, Distribution, KrausChannel, LabeledSpace, apply_channel, apply_unitary, from_matrix,
    make_basis_state, measure_complete, measure_emptiness, move, partial_trace, prepare_epsilon,
    pure_state, statistical_distance, tensor, validate_channel,
)

BITQ = LabeledSpace((EPSILON, "0", "1"))
B2 = LabeledSpace(("0", "1"))
X = np.array([[0, 1], [1, 0]])
H = np.array([[1, 1], [1, -1]]) / math.sqrt(2)


def dense(state, regs):
    return state.reduced(list(regs))


def test_basis_state_projectors():
    rho = make_basis_state(BITQ, EPSILON)
    assert np.allclose(dense(rho, ["r0"]), np.diag([1, 0, 0]))
    s = LabeledSpace(("1", "11", "111"))
    assert np.allclose(dense(make_basis_state(s, "11"), ["r0"]), np.diag([0, 1, 0]))


def test_basis_state_unknown_label_names_it():
    with pytest.raises(ValidationError, match="'0'"):
        make_basis_state(LabeledSpace((EPSILON,)), "0")


def test_tensor_products_and_weights():
    a = make_basis_state(B2, "0", "a")
    b = make_basis_state(B2, "1", "b")
    ab = tensor(a, b)
    m = dense(ab, ["a", "b"])
    assert m.shape == (4, 4) and np.isclose(np.trace(m), 1) and np.isclose(m[1, 1], 1)
    assert tensor(a.with_weight(0.5), b.with_weight(0.5)).weight == 0.25
    with pytest.raises(ValidationError):
        tensor(a, a)


def test_tensor_then_trace_out_mixed_part():
    rho = pure_state([("a", B2)], [0.6, 0.8j])
    mixed = from_matrix([("b", LabeledSpace(("x", "y", "z")))], np.eye(3) / 3)
    back = partial_trace(tensor(rho, mixed), ["b"])
    assert np.allclose(dense(back, ["a"]), dense(rho, ["a"]))


def test_identity_and_depolarising_example():
    rho = make_basis_state(B2, "0")
    assert np.allclose(dense(apply_channel(KrausChannel.identity([2]), rho, ["r0"]), ["r0"]),
                       dense(rho, ["r0"]))
    ch = KrausChannel((np.sqrt(0.5) * np.eye(2), np.sqrt(0.5) * X), (2,))
    out = apply_channel(ch, rho, ["r0"])
    assert np.allclose(dense(out, ["r0"]), np.eye(2) / 2)


def test_swap_channel_exchanges_registers():
    s = LabeledSpace(("a", "b"))
    st_ = tensor(make_basis_state(s, "a", "x"), make_basis_state(s, "b", "y"))
    swap = np.eye(4)[[0, 2, 1, 3]]
    out = apply_unitary(st_, swap, ["x", "y"])
    assert out.label("x") == "b" and out.label("y") == "a"


def test_channel_dimension_mismatch_rejected():
    with pytest.raises(ValidationError):
        apply_channel(KrausChannel.identity([3]), make_basis_state(B2, "0"), ["r0"])


def test_validate_channel_examples():
    assert validate_channel(KrausChannel.identity([2])).ok
    report = validate_channel(KrausChannel((np.sqrt(0.5) * np.eye(2), np.sqrt(0.5) * X), (2,)))
    assert report.ok and "completely positive" in report.message
    bad = validate_channel(KrausChannel((np.eye(2), np.eye(2)), (2,)))
    assert not bad.ok and math.isclose(bad.defect, 1.0)


def test_measure_complete_examples():
    assert list(measure_complete(make_basis_state(B2, "0"), "r0")) == ["0"]
    mixed = from_matrix([("r0", B2)], np.eye(2) / 2)
    out = measure_complete(mixed, "r0")
    assert {k: round(v.weight, 12) for k, v in out.items()} == {"0": 0.5, "1": 0.5}
    plus = pure_state([("r0", B2)], [1 / math.sqrt(2), 1 / math.sqrt(2)])
    out = measure_complete(plus, "r0")
    assert {k: round(v.weight, 12) for k, v in out.items()} == {"0": 0.5, "1": 0.5}
    assert out["1"].label("r0") == "1"


def test_measure_emptiness_examples():
    assert list(measure_emptiness(make_basis_state(BITQ, EPSILON), "r0")) == ["empty"]
    payload = pure_state([("r0", BITQ)], [0, 0.6, 0.8])
    out = measure_emptiness(payload, "r0")
    assert list(out) == ["nonempty"]
    assert np.allclose(dense(out["nonempty"], ["r0"]), dense(payload, ["r0"]))
    half = from_matrix([("r0", BITQ)], np.diag([0.5, 0.5, 0]))
    out = measure_emptiness(half, "r0")
    assert math.isclose(out["empty"].weight, 0.5) and math.isclose(out["nonempty"].weight, 0.5)


def test_prepare_epsilon_examples():
    st_ = make_basis_state(BITQ, "1")
    assert prepare_epsilon(st_, "r0").label("r0") == EPSILON
    bell = pure_state([("a", BITQ), ("b", BITQ)],
                      np.array([0, 0, 0, 0, 1, 0, 0, 0, 1]) / math.sqrt(2))
    out = prepare_epsilon(bell, "a")
    assert out.label("a") == EPSILON
    assert np.allclose(dense(out, ["b"]), np.diag([0, 0.5, 0.5]))
    eps = make_basis_state(BITQ, EPSILON)
    assert prepare_epsilon(eps, "r0") is eps


def test_move_examples():
    st_ = tensor(make_basis_state(BITQ, "1", "src"), make_basis_state(BITQ, EPSILON, "dst"))
    out = move(st_, "src", "dst")
    assert out.label("src") == EPSILON and out.label("dst") == "1"
    psi = np.array([0, 0.6, 0.8j])
    st_ = tensor(pure_state([("src", BITQ)], psi), make_basis_state(BITQ, EPSILON, "dst"))
    out = move(st_, "src", "dst")
    assert math.isclose(qcore.state_fidelity(dense(out, ["dst"]), psi), 1.0, abs_tol=1e-12)
    empty = tensor(make_basis_state(BITQ, EPSILON, "src"), make_basis_state(BITQ, EPSILON, "dst"))
    out = move(empty, "src", "dst")
    assert out.label("src") == EPSILON and out.label("dst") == EPSILON


def test_move_carries_entanglement_and_back():
    amp = np.zeros(9)
    amp[1 * 3 + 1] = amp[2 * 3 + 2] = 1 / math.sqrt(2)
    st_ = tensor(pure_state([("ref", BITQ), ("src", BITQ)], amp),
                 make_basis_state(BITQ, EPSILON, "dst"))
    there = move(st_, "src", "dst")
    assert np.allclose(dense(there, ["ref", "dst"]), dense(st_, ["ref", "src"]))
    back = move(there, "dst", "src")
    assert np.allclose(dense(back, ["ref", "src"]), dense(st_, ["ref", "src"]))


def test_move_basis_mismatch():
    st_ = tensor(make_basis_state(BITQ, EPSILON, "a"), make_basis_state(B2, "0", "b"))
    with pytest.raises(ValidationError):
        move(st_, "a", "b")


def test_statistical_distance_examples():
    d = Distribution({"a": 0.3, "b": 0.7})
    assert statistical_distance(d, d) == 0
    assert statistical_distance(Distribution({"a": 1.0}), Distribution({"b": 1.0})) == 1
    assert math.isclose(statistical_distance(Distribution({"a": 0.75, "b": 0.25}),
                                             Distribution({"a": 0.25, "b": 0.75})), 0.5)


def test_distribution_rejects_negative_mass():
    with pytest.raises(ValidationError):
        Distribution({"a": -0.1})


def test_support_tracking_keeps_groups_small():
    # A Bell pair stored in two large registers stays a 2x2-support factor.
    big = LabeledSpace(tuple(f"w{i}" for i in range(3000)))
    amp = np.zeros(4)
    amp[0] = amp[3] = 1 / math.sqrt(2)
    st_ = pure_state([("a", B2), ("b", B2)], amp)
    st_ = tensor(st_, tensor(make_basis_state(big, "w0", "x"), make_basis_state(big, "w0", "y")))
    st_ = qcore.apply_basis_map(st_, ["a", "x"], lambda t: (t[0], "w" + str(int(t[0]) + 7)))
    st_ = qcore.apply_basis_map(st_, ["b", "y"], lambda t: (t[0], "w" + str(int(t[0]) + 9)))
    assert st_.violations() == []
    probs = measure_complete(st_, "x")
    assert sorted(probs) == ["w7", "w8"]
    assert probs["w8"].label("y") == "w10"


# -- random suite ----------------------------------------------------------------


def random_channel(rng, d, n_ops):
    g = rng.normal(size=(n_ops * d, d)) + 1j * rng.normal(size=(n_ops * d, d))
    q, _ = np.linalg.qr(g)
    return KrausChannel(tuple(q[i * d:(i + 1) * d] for i in range(n_ops)), (d,))


def random_density(rng, d, rank=None):
    rank = rank or d
    g = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    m = g @ g.conj().T
    return m / np.trace(m)


def test_random_channels_preserve_trace_and_positivity():
    rng = np.random.default_rng(7)
    for _ in range(100):
        d = int(rng.integers(2, 7))
        ch = random_channel(rng, d, int(rng.integers(1, 4)))
        assert validate_channel(ch).ok
        space = LabeledSpace(tuple(str(i) for i in range(d)))
        rho = from_matrix([("r", space)], random_density(rng, d))
        out = apply_channel(ch, rho, ["r"])
        assert abs(np.trace(dense(out, ["r"])) - 1) <= 1e-9
        assert abs(out.weight - 1) <= 1e-9
        assert out.violations() == []


def test_measurement_normalisation_and_repeatability():
    rng = np.random.default_rng(11)
    for _ in range(50):
        d = int(rng.integers(2, 6))
        space = LabeledSpace(tuple(str(i) for i in range(d)))
        rho = from_matrix([("r", space), ("s", B2)], random_density(rng, 2 * d))
        out = measure_complete(rho, "r")
        assert abs(math.fsum(s.weight for s in out.values()) - 1) <= 1e-9
        for lab, post in out.items():
            again = measure_complete(post, "r")
            assert list(again) == [lab] and math.isclose(again[lab].weight, post.weight)


dists = st.dictionaries(st.sampled_from("abcde"), st.floats(0.01, 1.0), min_size=1)


def _norm(d):
    t = sum(d.values())
    return Distribution({k: v / t for k, v in d.items()})


@settings(max_examples=100, deadline=None)
@given(dists, dists, dists)
def test_statistical_distance_axioms(a, b, c):
    p, q, r = _norm(a), _norm(b), _norm(c)
    assert math.isclose(statistical_distance(p, q), statistical_distance(q, p))
    assert statistical_distance(p, r) <= statistical_distance(p, q) + statistical_distance(q, r) + 1e-12
    assert statistical_distance(p, p) == 0
    if statistical_distance(p, q) <= 1e-12:
        assert all(abs(p[x] - q[x]) <= 1e-12 for x in set(p) | set(q))

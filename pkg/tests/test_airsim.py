import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from steermac.airsim import (
    ReceivedMatrix,
    Scenario,
    TransmitterSpec,
    make_equally_spaced_assignment,
    random_scenario,
    run_until,
    signal_rank,
    simulate_slot,
    stop_at,
    transmission_coefficient,
    virtual_column_count,
)
from steermac.algebra import shift
from steermac.decoder import RankStop
from steermac.errors import DimensionError, DomainError, NoConvergenceError, ReplayFormatError

A32 = make_equally_spaced_assignment(32)


def _packet(rng, P):
    return tuple(rng.integers(0, 256, size=P).astype(float))


def test_assignment_examples():
    assert make_equally_spaced_assignment(1).angles == (0.0,)
    np.testing.assert_allclose(make_equally_spaced_assignment(4).angles, [0, np.pi / 4, np.pi / 2, 3 * np.pi / 4])
    assert A32.size == 32
    assert max(A32.angles) == pytest.approx(31 * np.pi / 32) and max(A32.angles) < np.pi
    np.testing.assert_allclose(A32.roots, np.exp(1j * np.asarray(A32.angles)), atol=1e-12)
    with pytest.raises(DomainError):
        make_equally_spaced_assignment(0)


def test_transmission_coefficient_examples():
    r = np.exp(1j * np.pi / 4)
    assert transmission_coefficient(r, 1, False) == pytest.approx(1)
    assert transmission_coefficient(r, 1, True) == pytest.approx(1)
    assert transmission_coefficient(r, 2, True) == pytest.approx(2 * r)
    assert transmission_coefficient(r, 3, True) == pytest.approx(np.exp(1j * np.pi / 2))
    assert transmission_coefficient(r, 2, False) == pytest.approx(r)


def test_simulate_single_aligned():
    s = (3.0, 1.0, 4.0, 1.0, 5.0)
    sc = Scenario(make_equally_spaced_assignment(4), (TransmitterSpec(0, s),), 5)
    np.testing.assert_array_equal(simulate_slot(sc, 1), s)


def test_simulate_three_aligned_slot_two():
    rng = np.random.default_rng(0)
    txs = tuple(TransmitterSpec(k, _packet(rng, 6)) for k in (1, 5, 9))
    sc = Scenario(A32, txs, 6)
    expect = sum(A32.root(t.id) * t.packet_array() for t in txs)
    np.testing.assert_allclose(simulate_slot(sc, 2), expect, rtol=1e-14)


def test_simulate_misaligned_slot_two():
    s = np.array([7.0, 3.0, 5.0, 2.0])
    A = make_equally_spaced_assignment(4)
    sc = Scenario(A, (TransmitterSpec(1, tuple(s), 1, 2),), 4)
    r = A.root(1)
    np.testing.assert_allclose(simulate_slot(sc, 2), r * shift(s, 2) + shift(s, -2), rtol=1e-14)
    np.testing.assert_allclose(simulate_slot(sc, 1), shift(s, 2))


def test_virtual_column_count_examples():
    rng = np.random.default_rng(1)
    aligned = [TransmitterSpec(k, _packet(rng, 8)) for k in range(3)]
    assert virtual_column_count(Scenario(A32, aligned, 8)) == 3
    mixed = aligned[:2] + [TransmitterSpec(7, _packet(rng, 8), 1, 3)]
    assert virtual_column_count(Scenario(A32, mixed, 8)) == 4
    assert virtual_column_count(Scenario(A32, (), 8)) == 0


def test_scenario_validation():
    rng = np.random.default_rng(2)
    with pytest.raises(DomainError):
        TransmitterSpec(0, _packet(rng, 8), 1, 2.5)
    with pytest.raises(DimensionError):
        Scenario(A32, (TransmitterSpec(0, _packet(rng, 7)),), 8)
    with pytest.raises(DomainError):
        Scenario(A32, (TransmitterSpec(0, _packet(rng, 8)), TransmitterSpec(0, _packet(rng, 8))), 8)
    with pytest.raises(DimensionError):
        Scenario(A32, tuple(TransmitterSpec(k, _packet(rng, 3)) for k in range(3)), 3)
    with pytest.raises(DomainError):
        Scenario(A32, (TransmitterSpec(0, _packet(rng, 8), 1, 8),), 8)


def test_run_until_stop_at():
    sc = random_scenario("slot_aligned", K=3, seed=4)
    assert run_until(sc, stop_at(3)).N == 3


def test_run_until_rank_rule_k8():
    sc = random_scenario("aligned_t0", K=8, sigma2=1e-6, seed=9)
    assert run_until(sc, RankStop(1e-6, 5)).N == 13


def test_run_until_deterministic():
    sc = random_scenario("misaligned", K=5, P=24, sigma2=1e-3, seed=17)
    a = run_until(sc, stop_at(9)).matrix
    b = run_until(sc, stop_at(9)).matrix
    assert a.tobytes() == b.tobytes()


def test_run_until_cap():
    sc = random_scenario("aligned_t0", K=2, seed=1)
    with pytest.raises(NoConvergenceError) as info:
        run_until(sc, lambda Y: False, cap=5)
    assert info.value.partial.N == 5


def test_noise_does_not_depend_on_transmitters():
    rng = np.random.default_rng(3)
    one = Scenario(A32, (TransmitterSpec(2, _packet(rng, 10)),), 10, sigma2=0.5, seed=42)
    two = Scenario(A32, one.transmitters + (TransmitterSpec(5, _packet(rng, 10)),), 10, sigma2=0.5, seed=42)
    clean_one = Scenario(A32, one.transmitters, 10, seed=42)
    clean_two = Scenario(A32, two.transmitters, 10, seed=42)
    for n in (1, 4):
        np.testing.assert_allclose(
            simulate_slot(one, n) - simulate_slot(clean_one, n),
            simulate_slot(two, n) - simulate_slot(clean_two, n),
            atol=1e-12,
        )


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31), P=st.integers(3, 30), n_k=st.integers(1, 5), factor2=st.booleans(), data=st.data())
def test_two_virtual_transmitter_equivalence(seed, P, n_k, factor2, data):
    p = data.draw(st.integers(1, P - 1))
    rng = np.random.default_rng(seed)
    s = rng.standard_normal(P) + 1j * rng.standard_normal(P)
    k = int(rng.integers(0, 32))
    mis = Scenario(A32, (TransmitterSpec(k, tuple(s), n_k, p),), P, factor2_enabled=factor2)
    head = Scenario(A32, (TransmitterSpec(k, tuple(shift(s, p)), n_k),), P, factor2_enabled=factor2)
    tail = Scenario(A32, (TransmitterSpec(k, tuple(shift(s, p - P)), n_k + 1),), P, factor2_enabled=factor2)
    for n in range(1, n_k + 4):
        assert (simulate_slot(mis, n) == simulate_slot(head, n) + simulate_slot(tail, n)).all()


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), mode=st.sampled_from(["slot_aligned", "misaligned", "static_gain"]))
def test_superposition(seed, mode):
    sc = random_scenario(mode, K=4, P=24, seed=seed)
    singles = [Scenario(sc.assignment, (t,), sc.P, factor2_enabled=sc.factor2_enabled, seed=sc.seed) for t in sc.transmitters]
    for n in range(1, 8):
        total = np.zeros(sc.P, dtype=complex)
        for one in singles:
            total = total + simulate_slot(one, n)
        assert (simulate_slot(sc, n) == total).all()


def test_noise_statistics():
    sc = Scenario(A32, (), 1000, sigma2=0.3, seed=8)
    Y = run_until(sc, stop_at(100), cap=100).matrix
    assert Y.size >= 1e5
    assert np.mean(np.abs(Y) ** 2) == pytest.approx(0.3, rel=0.05)
    assert np.var(Y.real) == pytest.approx(0.15, rel=0.05)
    assert np.var(Y.imag) == pytest.approx(0.15, rel=0.05)


def test_fading_table_matches_simulation():
    sc = random_scenario("fading", K=3, P=24, seed=12)
    table = sc.fading_table(6)
    t = sc.transmitters[0]
    for n in range(1, 7):
        assert table[t.id, n - 1] == sc.fading_gain(t, n)
    assert random_scenario("aligned_t0", K=3, seed=1).fading_table(4) is None


def test_signal_rank_structure():
    rng = np.random.default_rng(0)
    txs = (TransmitterSpec(0, _packet(rng, 12)), TransmitterSpec(3, _packet(rng, 12), 3), TransmitterSpec(6, _packet(rng, 12), 3, 4))
    sc = Scenario(A32, txs, 12)
    for n in range(1, 8):
        Y = run_until(sc, stop_at(n)).matrix
        assert np.linalg.matrix_rank(Y, tol=1e-8 * np.abs(Y).max()) == signal_rank(sc, n)


def test_replay_roundtrip(tmp_path):
    sc = random_scenario("misaligned", K=3, P=24, sigma2=1e-4, seed=5)
    Y = run_until(sc, stop_at(7))
    path = tmp_path / "y.bin"
    Y.save(path)
    data = path.read_bytes()
    assert len(data) == 16 + 16 * 7 * 24
    assert data[:16] == (7).to_bytes(8, "little") + (24).to_bytes(8, "little")
    assert ReceivedMatrix.load(path).matrix.tobytes() == Y.matrix.tobytes()
    with pytest.raises(ReplayFormatError):
        ReceivedMatrix.from_bytes(data[:-3])
    with pytest.raises(ReplayFormatError):
        ReceivedMatrix.from_bytes(data[:10])


def test_random_scenario_modes():
    for mode in ("aligned_t0", "slot_aligned", "misaligned", "static_gain", "fading"):
        sc = random_scenario(mode, K=8, P=40, seed=3)
        assert sc.K == 8 and len({t.id for t in sc.transmitters}) == 8
        if mode == "aligned_t0":
            assert all(t.arrival_slot == 1 and t.symbol_offset == 0 for t in sc.transmitters)
        if mode in ("aligned_t0", "slot_aligned"):
            assert all(t.static_gain == 1 for t in sc.transmitters) and not sc.factor2_enabled
        else:
            assert sc.factor2_enabled
        if mode in ("static_gain", "fading"):
            assert all(0.5 <= abs(t.static_gain) <= 2 for t in sc.transmitters)
    assert math.isclose(abs(random_scenario("aligned_t0", K=1).transmitters[0].static_gain), 1)

import numpy as np
import pytest

import oracles
from cascade_qoe.abr import AbrConfig, AbrKind
from cascade_qoe.errors import CascadeQoeError, InvalidParams, SessionError, ZeroBitrate
from cascade_qoe.controller import UniformAllocator
from cascade_qoe.qoe import ObjectiveConfig
from cascade_qoe.simulator import (
    Allocator,
    EstimationNoise,
    PlayerSpec,
    buffer_step,
    contention_share,
    run_session,
)
from cascade_qoe.traces import synth_trace

BBA = AbrConfig(AbrKind.BBA)


def test_buffer_step_examples():
    assert buffer_step(5, 2000, 1000, 1, 30) == pytest.approx(6)
    assert buffer_step(0.5, 0, 1000, 1, 30) == 0
    assert buffer_step(29.8, 2000, 1000, 1, 30) == 30


def test_buffer_step_vectorised_matches_oracle(rng):
    b = rng.uniform(0, 30, 200)
    w = rng.uniform(0, 8000, 200)
    r = rng.uniform(300, 4300, 200)
    got = buffer_step(b, w, r, 1.0, 30.0)
    want = [oracles.buffer_step(*args, 1.0, 30.0) for args in zip(b, w, r)]
    np.testing.assert_allclose(got, want, rtol=1e-12)


def test_buffer_step_zero_bitrate():
    with pytest.raises(ZeroBitrate):
        buffer_step(1, 1, 0, 1, 30)


def test_contention_examples():
    np.testing.assert_allclose(contention_share([True] * 4, 4000), [1000] * 4)
    np.testing.assert_allclose(contention_share([True, False, True, True], 4000), [4000 / 3, 0, 4000 / 3, 4000 / 3])
    np.testing.assert_allclose(contention_share([True], 4000), [4000])
    np.testing.assert_allclose(contention_share([False, False], 4000), [0, 0])
    with pytest.raises(InvalidParams):
        contention_share([True], 0)


def test_single_bba_ample_bandwidth_fills_buffer():
    # 5000 kbps exceeds the top rung, so the buffer climbs to the cap and
    # then alternates between idle and download steps just below it
    tr = synth_trace("constant", {"level_kbps": 5000, "duration_s": 320})
    log = run_session([PlayerSpec("a", BBA)], tr)
    buf, rate = log.buffer[:, 0], log.bitrate[:, 0]
    first_full = int(np.argmax(buf >= 30 - 1e-9))
    assert buf[first_full] == pytest.approx(30)
    assert np.all(buf[first_full:] >= 29 - 1e-9)
    assert np.all(rate[first_full:] == 4300)
    # idle steps download nothing and keep the bitrate
    idle = buf >= 30 - 1e-9
    assert np.all(log.goodput[idle, 0] == 0)


def test_symmetric_players_identical_logs():
    tr = synth_trace("constant", {"level_kbps": 3000, "duration_s": 60})
    specs = [PlayerSpec("a", BBA), PlayerSpec("b", BBA)]
    log = run_session(specs, tr, UniformAllocator())
    for arr in (log.allocation, log.bitrate, log.buffer, log.qoe):
        np.testing.assert_array_equal(arr[:, 0], arr[:, 1])


def test_zero_noise_is_bit_identical():
    tr = synth_trace("random_walk", {}, 3)
    specs = [PlayerSpec("a", BBA), PlayerSpec("b", AbrConfig(AbrKind.BOLA))]
    plain = run_session(specs, tr, UniformAllocator(), steps=80)
    noisy = run_session(specs, tr, UniformAllocator(), estimation_noise=EstimationNoise(0.0, 0.0, 5), steps=80)
    for name in ("allocation", "goodput", "bitrate", "buffer", "qoe"):
        np.testing.assert_array_equal(getattr(plain, name), getattr(noisy, name))


def test_session_bounds_and_shapes():
    tr = synth_trace("random_walk", {}, 11)
    specs = [PlayerSpec(str(i), AbrConfig(k)) for i, k in enumerate((AbrKind.BBA, AbrKind.BOLA, AbrKind.CLIENT_MPC))]
    log = run_session(specs, tr)
    assert log.allocation.shape == (320, 3)
    assert np.all((log.buffer >= 0) & (log.buffer <= 30))
    assert np.all(np.isin(log.bitrate, [300, 750, 1200, 1850, 2850, 4300]))
    np.testing.assert_allclose(log.allocation.sum(axis=1)[log.buffer.max(axis=1) < 30], tr.capacities[log.buffer.max(axis=1) < 30])


def test_qoe_log_matches_oracle():
    tr = synth_trace("random_walk", {}, 4)
    log = run_session([PlayerSpec("a", BBA, theta=3.1e-3)], tr, steps=50)
    r_prev = 300.0
    for t in range(50):
        want = oracles.instant_qoe(0.1, 0.1, 0.5, 3.1e-3, log.bitrate[t, 0], r_prev, log.buffer[t, 0])
        assert log.qoe[t, 0] == pytest.approx(want, rel=1e-12, abs=1e-15)
        r_prev = log.bitrate[t, 0]


def test_summary_uses_etas_and_gamma():
    tr = synth_trace("constant", {"level_kbps": 3000, "duration_s": 20})
    specs = [PlayerSpec("a", BBA), PlayerSpec("b", BBA)]
    log = run_session(specs, tr, obj=ObjectiveConfig(0.5, (0.7, 1.0)))
    s = log.summary()
    u = log.mean_qoe()
    assert s["pairwise_unfairness"] == pytest.approx(abs(0.7 * u[0] - u[1]) / 2)
    assert s["weighted_sum_index"] == pytest.approx(-0.5 * s["social_welfare"] + 0.5 * s["pairwise_unfairness"])


class _Exploding(Allocator):
    name = "boom"

    def allocate(self, ctx):
        if ctx.step == 3:
            raise CascadeQoeError("boom")
        return np.full(len(ctx.specs), ctx.capacity_kbps / len(ctx.specs))


class _WrongShape(Allocator):
    def allocate(self, ctx):
        return np.zeros(len(ctx.specs) + 1)


def test_allocator_failures_become_session_errors():
    tr = synth_trace("constant", {"level_kbps": 3000, "duration_s": 10})
    with pytest.raises(SessionError) as exc:
        run_session([PlayerSpec("a", BBA)], tr, _Exploding())
    assert exc.value.step == 3
    with pytest.raises(SessionError):
        run_session([PlayerSpec("a", BBA)], tr, _WrongShape())


def test_player_spec_validation():
    with pytest.raises(InvalidParams):
        PlayerSpec("a", BBA, eta=0)
    with pytest.raises(InvalidParams):
        PlayerSpec("a", BBA, initial_buffer_s=40)
    with pytest.raises(InvalidParams):
        run_session([], synth_trace("constant", {"level_kbps": 1, "duration_s": 2}))

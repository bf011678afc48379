import json
import math

import numpy as np
import pytest

import oracles
from cascade_qoe.abr import AbrConfig, AbrKind, BitrateLadder
from cascade_qoe.blackbox import (
    AbrDataset,
    PolyModel,
    eval_polynomials,
    evaluate_accuracy,
    expand_features,
    fit_poly_model,
    generate_dataset,
    load_model,
    monomial_exponents,
    n_coefficients,
    predict_bitrate,
    save_model,
)
from cascade_qoe.errors import (
    DimensionMismatch,
    EmptyTestSplit,
    HistoryLengthMismatch,
    InsufficientTraces,
    ModelIOError,
    SchemaVersionMismatch,
    SingularSystem,
)
from cascade_qoe.traces import synth_trace


def dataset_from(x, y, t_b=3, t_w=3, sessions=None):
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    return AbrDataset(
        x[:, : t_b + 1],
        x[:, t_b + 1 : t_b + t_w + 2],
        x[:, -1],
        np.asarray(y, dtype=float),
        np.zeros(n, dtype=int) if sessions is None else sessions,
        "synthetic",
    )


def random_inputs(rng, n, t_b=3, t_w=3):
    return np.column_stack(
        [rng.uniform(0, 30, (n, t_b + 1)), rng.uniform(0, 6000, (n, t_w + 1)), rng.choice([300, 1200, 4300], n)]
    )


@pytest.fixture(scope="module")
def traces10():
    return [synth_trace("random_walk", {}, s) for s in range(10)]


def test_dataset_row_count(traces10):
    data = generate_dataset(AbrConfig(AbrKind.BBA), traces10)
    assert len(data) == 3160
    assert data.inputs.shape == (3160, 9)


def test_dataset_scripted_constant_and_deterministic(traces10):
    cfg = AbrConfig(AbrKind.SCRIPTED, {"script": [1850]})
    a = generate_dataset(cfg, traces10[:2])
    assert np.all(a.target_bitrate == 1850)
    b = generate_dataset(AbrConfig(AbrKind.BOLA), traces10[:3], seed=1)
    c = generate_dataset(AbrConfig(AbrKind.BOLA), traces10[:3], seed=1)
    np.testing.assert_array_equal(b.inputs, c.inputs)
    np.testing.assert_array_equal(b.target_bitrate, c.target_bitrate)


def test_dataset_needs_two_traces(traces10):
    with pytest.raises(InsufficientTraces):
        generate_dataset(AbrConfig(AbrKind.BBA), traces10[:1])


def test_split_is_by_session(traces10):
    data = generate_dataset(AbrConfig(AbrKind.BBA), traces10)
    train, test = data.split_by_session(0.8, seed=3)
    assert not set(train.session) & set(test.session)
    assert len(set(train.session)) == 8 and len(train) + len(test) == len(data)


def test_coefficient_count():
    assert n_coefficients(9, 5) == math.comb(14, 5) == 2002
    assert len(monomial_exponents(9, 5)) == 2002
    assert expand_features(np.zeros((2, 9)), 5).shape == (2, 2002)


def test_linear_recovery(rng):
    x = random_inputs(rng, 200)
    y = 2 * x[:, 3] + 500  # 2 * b(t) + 500
    m = fit_poly_model(dataset_from(x, y), degree=1, ridge=0)
    # map scaled coefficients back to the raw inputs
    slope = m.coefficients[1:] / m.scale
    intercept = m.coefficients[0] - np.sum(slope * m.offset)
    assert intercept == pytest.approx(500, abs=1e-6)
    assert slope[3] == pytest.approx(2, abs=1e-6)
    assert np.all(np.abs(np.delete(slope, 3)) < 1e-6)


def test_constant_target(rng):
    x = random_inputs(rng, 300)
    m = fit_poly_model(dataset_from(x, np.full(300, 1200.0)), degree=2, ridge=0)
    np.testing.assert_allclose(m.raw(random_inputs(rng, 50)), 1200, atol=1e-6)
    assert predict_bitrate(m, [5] * 4, [1000] * 4, 300, quantize=True) == 1200


def _const_model(value, ladder=BitrateLadder()):
    coef = np.zeros(n_coefficients(9, 2))
    coef[0] = value
    return PolyModel("c", 3, 3, 2, coef, np.zeros(9), np.ones(9), ladder)


def test_predict_clamp_and_nearest():
    assert predict_bitrate(_const_model(5000), [0] * 4, [0] * 4, 300) == 4300
    assert predict_bitrate(_const_model(100), [0] * 4, [0] * 4, 300) == 300
    lad = BitrateLadder((1200.0, 1850.0))
    assert predict_bitrate(_const_model(1500, lad), [0] * 4, [0] * 4, 1200, quantize=True) == 1200
    assert predict_bitrate(_const_model(1500, lad), [0] * 4, [0] * 4, 1200) == 1500


def test_predict_history_length():
    with pytest.raises(HistoryLengthMismatch):
        predict_bitrate(_const_model(1000), [0] * 3, [0] * 4, 300)


def test_accuracy_examples():
    x = np.zeros((10, 9))
    y = np.array([300.0, 4300.0] * 5)
    assert evaluate_accuracy(_const_model(300), dataset_from(x, y)) == 0.5
    assert evaluate_accuracy(_const_model(300), dataset_from(x, np.full(10, 300.0))) == 1.0
    with pytest.raises(EmptyTestSplit):
        evaluate_accuracy(_const_model(300), dataset_from(np.zeros((0, 9)), np.zeros(0)))


def test_replay_model_is_exact(rng):
    # a model scored against its own quantised output replays it exactly
    x = random_inputs(rng, 400)
    m = fit_poly_model(dataset_from(x, 300 + 4000 * (x[:, 3] / 30)), degree=1, ridge=0)
    assert evaluate_accuracy(m, dataset_from(x, m.predict(x, quantize=True))) == 1.0


def test_polynomial_recovery_degree3(rng):
    x = random_inputs(rng, 800)
    x[:, -1] = rng.uniform(300, 4300, 800)
    probe = fit_poly_model(dataset_from(x[:600], np.zeros(600)), degree=3, ridge=0)
    truth = PolyModel("t", 3, 3, 3, rng.normal(0, 100, 220), probe.offset, probe.scale)
    y = truth.raw(x)
    m = fit_poly_model(dataset_from(x[:600], y[:600]), degree=3, ridge=0)
    held = y[600:]
    np.testing.assert_allclose(m.raw(x[600:]), held, rtol=1e-6, atol=1e-6 * np.abs(held).max())


def test_eval_matches_enumeration_oracle(bundled_models, rng):
    m = bundled_models["bba"]
    x = random_inputs(rng, 20)
    got = m.raw(x)
    for row, g in zip(x, got):
        assert g == pytest.approx(oracles.polynomial_value(m, list(row)), rel=1e-9, abs=1e-6)


def test_eval_polynomials_matches_dense_features(rng):
    z = rng.uniform(-1, 1, (30, 9))
    coef = rng.normal(size=(2, 2002))
    rows = rng.integers(0, 2, 30)
    want = np.einsum("ij,ij->i", expand_features(z, 5), coef[rows])
    np.testing.assert_allclose(eval_polynomials(z, coef, rows.astype(np.int64), 5), want, rtol=1e-10)


def test_ridge_shrinks_coefficients(rng):
    x = random_inputs(rng, 100)
    y = rng.uniform(300, 4300, 100)
    small = fit_poly_model(dataset_from(x, y), degree=2, ridge=1e-6)
    big = fit_poly_model(dataset_from(x, y), degree=2, ridge=10.0)
    assert np.linalg.norm(big.coefficients) < np.linalg.norm(small.coefficients)


def test_fit_errors(rng):
    x = random_inputs(rng, 10)
    with pytest.raises(SingularSystem):
        fit_poly_model(dataset_from(x, np.ones(10)), degree=5, ridge=0)
    with pytest.raises(DimensionMismatch):
        fit_poly_model(dataset_from(x, np.ones(10)), t_b=2)


def test_save_load_round_trip(tmp_path, bundled_models):
    m = bundled_models["bola"]
    save_model(m, tmp_path / "m.json")
    assert load_model(tmp_path / "m.json") == m


def test_load_wrong_version(tmp_path, bundled_models):
    from cascade_qoe.blackbox import model_to_dict

    d = model_to_dict(bundled_models["bba"])
    d["version"] = 99
    (tmp_path / "m.json").write_text(json.dumps(d))
    with pytest.raises(SchemaVersionMismatch):
        load_model(tmp_path / "m.json")


def test_load_truncated(tmp_path, bundled_models):
    save_model(bundled_models["bba"], tmp_path / "m.json")
    text = (tmp_path / "m.json").read_text()
    (tmp_path / "bad.json").write_text(text[: len(text) // 2])
    with pytest.raises(ModelIOError):
        load_model(tmp_path / "bad.json")
    with pytest.raises(ModelIOError):
        load_model(tmp_path / "missing.json")

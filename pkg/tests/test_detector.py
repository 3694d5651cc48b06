import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.base import clone

from breathline.core import BreathState, ParseError, frames_from_labels
from breathline.detector import (
    N_FEATURES,
    BrightnessBaselineDetector,
    DegenerateDatasetError,
    Frame,
    FrameFeatureExtractor,
    InvalidFrameError,
    LinearModel,
    LinearSVMDetector,
    brightness_baseline,
    extract_feature_matrix,
    extract_features,
    load_external_predictions,
    load_model,
    parse_predictions_jsonl,
    predict,
    read_pgm,
    render_predictions_jsonl,
    save_model,
    train_linear,
    write_pgm,
)
from breathline.core import InvalidInputError
from breathline.simulate import ScenarioConfig, generate


def _zeros(n=16):
    return Frame(np.zeros((n, n)))


# -- features -------------------------------------------------------------------


def test_all_zero_frame_features():
    f = extract_features(_zeros())
    assert f.shape == (N_FEATURES,) == (22,)
    assert f[0] == 0 and f[1] == 0
    assert f[2] == 1.0 and np.all(f[3:18] == 0)
    assert f[18] == 0


def test_all_ones_frame_features():
    f = extract_features(Frame(np.ones((16, 16))))
    assert f[0] == 1 and f[1] == 0
    assert f[17] == 1.0 and np.all(f[2:17] == 0)


def test_histogram_sums_to_one():
    rng = np.random.default_rng(0)
    f = extract_features(Frame(rng.random((32, 40))))
    assert abs(f[2:18].sum() - 1.0) < 1e-9
    assert np.all(np.isfinite(f))


def test_global_statistics_translation_invariant():
    base = np.full((40, 40), 0.3)
    a, b = base.copy(), base.copy()
    a[5:10, 5:10] = 0.9
    b[25:30, 20:25] = 0.9
    fa, fb = extract_features(Frame(a)), extract_features(Frame(b))
    assert abs(fa[0] - fb[0]) < 1e-9 and abs(fa[1] - fb[1]) < 1e-9


def test_exhalation_frame_brighter_top_decile():
    sc = generate(ScenarioConfig(seed=7, duration_s=5), render_frames=True)
    ex = next(i for i, f in enumerate(sc.truth_labels) if f.label is BreathState.EXHALATION)
    inh = next(i for i, f in enumerate(sc.truth_labels) if f.label is BreathState.INHALATION)
    direct = [np.mean(sc.frames[i].pixels >= 0.9) for i in (ex, inh)]
    feats = [extract_features(sc.frames[i])[19] for i in (ex, inh)]
    assert feats == direct
    assert feats[0] > feats[1]


def test_invalid_frame_rejected():
    with pytest.raises(InvalidFrameError):
        Frame(np.full((4, 4), 1.5))
    with pytest.raises(InvalidFrameError):
        extract_features(np.full((4, 4), -0.1))


# -- linear model -----------------------------------------------------------------------


def _clusters(seed=0, n=200, dim=5, sep=10.0):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    X = rng.normal(0, 0.5, size=(n, dim))
    X[:, 0] += np.where(y == 1, sep / 2, -sep / 2)
    return X, y


def test_separable_training_accuracy():
    X, y = _clusters()
    model = train_linear(X, y, seed=1)
    pred = (model.decision_function(X) > 0).astype(int)
    assert np.mean(pred == y) == 1.0
    assert all(predict(model, x)[0] == yi for x, yi in zip(X, y))


def test_single_class_rejected():
    X, _ = _clusters()
    with pytest.raises(DegenerateDatasetError):
        train_linear(X, np.ones(len(X)))


def test_training_deterministic_bitwise():
    X, y = _clusters(3, sep=1.0)
    a = train_linear(X, y, epochs=5, seed=9)
    b = train_linear(X, y, epochs=5, seed=9)
    assert a.weights.tobytes() == b.weights.tobytes() and a.bias == b.bias


def test_training_loss_non_increasing():
    X, y = _clusters(4, sep=1.0)
    model = train_linear(X, y, epochs=30, seed=2)
    hist = model.loss_history
    running = np.minimum.accumulate(hist)
    assert np.all(np.asarray(hist) <= running + 1e-6)


def test_flipped_labels_negate_decisions():
    X, y = _clusters(5, sep=1.0)
    a = train_linear(X, y, epochs=10, seed=3)
    b = train_linear(X, 1 - y, epochs=10, seed=3)
    sa, sb = a.decision_function(X), b.decision_function(X)
    np.testing.assert_allclose(sb, -sa, atol=1e-12)
    acc = np.mean((sa > 0) == y)
    ties = np.sum(sa == 0)
    assert np.mean((sb > 0) == y) == pytest.approx(1 - acc, abs=ties / len(y) + 1e-12)


def test_standardization_round_trip():
    X, y = _clusters(6, sep=2.0)
    raw = train_linear(X, y, epochs=8, seed=4)
    Z = raw.standardize(X)
    pre = train_linear(Z, y, epochs=8, seed=4, standardize=False)
    assert np.array_equal(pre.decision_function(Z) > 0, raw.decision_function(X) > 0)


def _model(w, b):
    n = len(w)
    return LinearModel(np.asarray(w, float), b, np.zeros(n), np.ones(n))


def test_zero_weights_bias_decides():
    x = np.arange(3.0)
    assert predict(_model([0, 0, 0], 1.0), x)[0] is BreathState.EXHALATION
    assert predict(_model([0, 0, 0], -1.0), x)[0] is BreathState.INHALATION


def test_zero_score_is_inhalation():
    label, score = predict(_model([0, 0], 0.0), np.ones(2))
    assert score == 0.0 and label is BreathState.INHALATION


def test_predict_length_mismatch():
    with pytest.raises(InvalidInputError):
        predict(_model([1, 1], 0.0), np.ones(3))


@given(
    st.lists(st.floats(-5, 5), min_size=3, max_size=3),
    st.floats(-5, 5),
    st.floats(0.01, 100),
    st.lists(st.floats(-10, 10), min_size=3, max_size=3),
)
def test_positive_scaling_keeps_label(w, b, k, x):
    base = predict(_model(w, b), np.asarray(x))[0]
    scaled = predict(_model(np.asarray(w) * k, b * k), np.asarray(x))[0]
    assert base == scaled


def test_model_json_round_trip(tmp_path):
    X, y = _clusters()
    model = train_linear(X, y, epochs=3, seed=1)
    save_model(tmp_path / "m.json", model)
    back = load_model(tmp_path / "m.json")
    assert np.array_equal(back.decision_function(X), model.decision_function(X))
    payload = json.loads((tmp_path / "m.json").read_text())
    assert {"weights", "bias", "feature_means", "feature_stds", "hyperparameters"} <= set(payload)


def test_corrupt_model_rejected(tmp_path):
    (tmp_path / "bad.json").write_text('{"weights": [1]}')
    with pytest.raises(ParseError):
        load_model(tmp_path / "bad.json")


# -- baseline ----------------------------------------------------------------------------


def test_baseline_extremes():
    assert brightness_baseline(_zeros()) is BreathState.INHALATION
    assert brightness_baseline(Frame(np.ones((8, 8)))) is BreathState.EXHALATION


def test_baseline_on_simulated_exhalation():
    sc = generate(ScenarioConfig(seed=7, duration_s=5))
    for frame, truth in zip(sc.frames, sc.truth_labels):
        if truth.label is BreathState.EXHALATION:
            # direct count: bubbles of 0.9 over a 0.3 background
            assert np.mean(frame.pixels > 0.6) > 0.02
            assert brightness_baseline(frame) is BreathState.EXHALATION


# -- estimators ---------------------------------------------------------------------------


def test_estimators_compose_in_pipeline():
    from sklearn.pipeline import make_pipeline

    sc = generate(ScenarioConfig(seed=2, duration_s=8))
    frames = np.stack([f.pixels for f in sc.frames])
    y = np.array([int(f.label) for f in sc.truth_labels])
    pipe = make_pipeline(FrameFeatureExtractor(), LinearSVMDetector(epochs=10, seed=1))
    pipe.fit(frames, y)
    assert pipe.score(frames, y) >= 0.9
    clone(pipe)
    assert LinearSVMDetector().get_params() == {
        "epochs": 50,
        "learning_rate": 0.001,
        "lam": 1e-4,
        "seed": 0,
        "standardize": True,
    }
    base = BrightnessBaselineDetector().fit()
    assert base.predict(frames).shape == y.shape


# -- file formats ---------------------------------------------------------------------------


def test_pgm_round_trip(tmp_path):
    px = np.round(np.random.default_rng(0).random((7, 5)) * 255) / 255
    write_pgm(tmp_path / "f.pgm", Frame(px))
    back = read_pgm(tmp_path / "f.pgm")
    assert back.width == 5 and back.height == 7
    np.testing.assert_allclose(back.pixels, px, atol=1e-12)


def test_pgm_with_comment(tmp_path):
    (tmp_path / "c.pgm").write_bytes(b"P5\n# made by hand\n2 1\n255\n\x00\xff")
    assert read_pgm(tmp_path / "c.pgm").pixels.tolist() == [[0.0, 1.0]]


def test_pgm_rejects_ascii(tmp_path):
    (tmp_path / "a.pgm").write_bytes(b"P2\n1 1\n255\n0\n")
    with pytest.raises(ParseError):
        read_pgm(tmp_path / "a.pgm")


def test_predictions_three_frames(tmp_path):
    text = "".join(json.dumps({"index": i, "timestamp_s": i / 10, "label": i % 2}) + "\n" for i in range(3))
    (tmp_path / "p.jsonl").write_text(text)
    stream = load_external_predictions(tmp_path / "p.jsonl")
    assert [int(f.label) for f in stream] == [0, 1, 0]


def test_predictions_empty(tmp_path):
    (tmp_path / "e.jsonl").write_text("")
    assert load_external_predictions(tmp_path / "e.jsonl") == []


def test_predictions_round_trip():
    stream = frames_from_labels([0, 1, 1, 0, 1], 29.94)
    assert parse_predictions_jsonl(render_predictions_jsonl(stream, [0.1, 2, 3, -1, 0.5])) == stream


@pytest.mark.parametrize(
    "body,line",
    [
        ('{"index": 0, "timestamp_s": 0.0, "label": 0}\nnot json\n', 2),
        ('{"index": 0, "timestamp_s": 0.0, "label": 0}\n{"index": 0, "timestamp_s": 0.1, "label": 1}\n', 2),
        ('{"index": 1, "timestamp_s": 0.0, "label": 0}\n{"index": 0, "timestamp_s": 0.1, "label": 1}\n', 2),
        ('{"index": 0, "timestamp_s": 0.0, "label": 2}\n', 1),
        ('{"index": 0, "label": 1}\n', 1),
    ],
)
def test_predictions_parse_errors(body, line):
    with pytest.raises(ParseError, match=f"line {line}"):
        parse_predictions_jsonl(body)

import json
import logging
import random

import httpx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prefrec.errors import BackendError, DomainError, FormatError, NumericalError, ProtocolError
from prefrec.scorer import (
    FeatureConfig,
    RandomScorer,
    RemoteScorer,
    ScoredExample,
    ScoreInput,
    ScorerModel,
    TrainConfig,
    design_matrix,
    featurize,
    load_model,
    mse_loss_and_grad,
    predict_score,
    remote_score,
    save_model,
    score_matrix,
    train_scorer,
)
from prefrec.synthetic import KEYWORDS

SMALL = FeatureConfig(hash_dim_log2=12)
text = st.text(alphabet="abcdefg ", min_size=1, max_size=30).filter(lambda s: s.strip())


def test_featurize_deterministic():
    inp = ScoreInput("I like onsen", "Hot spring town", "For bath lovers")
    assert featurize(inp) == featurize(ScoreInput("I like onsen", "Hot spring town", "For bath lovers"))


def test_swapping_fields_changes_features():
    a = featurize(ScoreInput("mountain hike", "sea view"))
    b = featurize(ScoreInput("sea view", "mountain hike"))
    assert a != b


def test_absent_rec_info_has_no_r_features():
    cfg = FeatureConfig(hash_dim_log2=20, cross_features=False, normalize=False)
    without = featurize(ScoreInput("abc", "xyz"), cfg)
    with_r = featurize(ScoreInput("abc", "xyz", "qqq"), cfg)
    assert set(without) < set(with_r)


def test_empty_fields_rejected():
    with pytest.raises(DomainError):
        ScoreInput("", "d")
    with pytest.raises(DomainError):
        ScoreInput("s", "  ")


def test_zero_model_scores_half():
    assert predict_score(ScorerModel.zeros(SMALL), ScoreInput("a b", "c d")) == 0.5


@given(s=text, d=text, delta=st.floats(0.01, 5.0))
@settings(max_examples=50)
def test_raising_a_present_weight_raises_score(s, d, delta):
    rng = np.random.default_rng(0)
    model = ScorerModel(rng.normal(0, 0.1, SMALL.dim), 0.1, SMALL)
    inp = ScoreInput(s, d)
    feats = featurize(inp, SMALL)
    idx = next(i for i in sorted(feats) if feats[i] > 0)
    bumped = model.weights.copy()
    bumped[idx] += delta
    assert predict_score(ScorerModel(bumped, 0.1, SMALL), inp) > predict_score(model, inp)


@given(s=text, d=text, r=st.one_of(st.none(), text))
@settings(max_examples=50)
def test_score_strictly_inside_unit_interval(s, d, r):
    model = ScorerModel(np.full(SMALL.dim, 50.0), 10.0, SMALL)
    p = predict_score(model, ScoreInput(s, d, r))
    assert 0.0 < p < 1.0


def test_weight_length_checked():
    with pytest.raises(DomainError):
        ScorerModel(np.zeros(10), 0.0, SMALL)


def test_nonfinite_weights_rejected():
    w = np.zeros(SMALL.dim)
    w[0] = np.inf
    with pytest.raises(NumericalError):
        ScorerModel(w, 0.0, SMALL)


@pytest.mark.parametrize("seed", range(5))
def test_mse_gradient_matches_finite_difference(seed):
    cfg = FeatureConfig(hash_dim_log2=6)
    rng = np.random.default_rng(seed)
    words = ["alpha", "beta", "gamma", "delta", "onsen", "sushi"]
    inputs = [
        ScoreInput(" ".join(rng.choice(words, 3)), " ".join(rng.choice(words, 3)),
                   " ".join(rng.choice(words, 2)))
        for _ in range(8)
    ]
    X = design_matrix(inputs, cfg)
    y = rng.integers(0, 2, 8).astype(float)
    w = rng.normal(0, 0.5, cfg.dim)
    b = 0.3
    _, gw, gb = mse_loss_and_grad(w, b, X, y, 1e-3)
    eps = 1e-5
    for j in range(cfg.dim):
        wp, wm = w.copy(), w.copy()
        wp[j] += eps
        wm[j] -= eps
        fd = (mse_loss_and_grad(wp, b, X, y, 1e-3)[0] - mse_loss_and_grad(wm, b, X, y, 1e-3)[0]) / (2 * eps)
        assert abs(fd - gw[j]) <= 1e-4 * max(abs(fd), abs(gw[j])) + 1e-10
    fd_b = (mse_loss_and_grad(w, b + eps, X, y, 1e-3)[0] - mse_loss_and_grad(w, b - eps, X, y, 1e-3)[0]) / (2 * eps)
    assert abs(fd_b - gb) <= 1e-4 * abs(gb) + 1e-10


def test_single_example_converges():
    ex = ScoredExample(ScoreInput("I like onsen", "Hot spring town"), 1)
    model, _ = train_scorer([ex] * 64, [], TrainConfig(lr=0.5, epochs=200, seed=0), SMALL)
    assert model.predict(ex.input) >= 0.9


def test_small_lr_reduces_loss():
    rng = random.Random(1)
    exs = [ScoredExample(ScoreInput(f"I like {kw}", f"Spot for {rng.choice(KEYWORDS)}"), i % 2)
           for i, kw in enumerate(KEYWORDS[:5])]
    _, history = train_scorer(exs, [], TrainConfig(lr=0.01, epochs=20, batch_size=5), SMALL)
    assert history[-1].train_loss < history[0].train_loss
    losses = [h.train_loss for h in history]
    assert all(b <= a + 1e-15 for a, b in zip(losses, losses[1:]))


def test_training_deterministic():
    exs = [ScoredExample(ScoreInput(f"likes {k}", f"place with {k2}"), int(k == k2))
           for k in KEYWORDS[:4] for k2 in KEYWORDS[:4]]
    hyper = TrainConfig(epochs=5, batch_size=3, seed=9)
    a, ha = train_scorer(exs, exs[:4], hyper, SMALL)
    b, hb = train_scorer(exs, exs[:4], hyper, SMALL)
    assert a.weights.tobytes() == b.weights.tobytes()
    assert a.bias == b.bias
    assert ha == hb


def test_training_errors():
    with pytest.raises(DomainError):
        train_scorer([], [], TrainConfig(), SMALL)
    with pytest.raises(DomainError):
        TrainConfig(lr=0)
    with pytest.raises(DomainError):
        TrainConfig(epochs=0)
    with pytest.raises(DomainError):
        ScoredExample(ScoreInput("a", "b"), 2)


def test_divergence_detected():
    exs = [ScoredExample(ScoreInput("aa bb", "cc dd"), 1), ScoredExample(ScoreInput("ee", "ff"), 0)]
    with pytest.raises(NumericalError):
        train_scorer(exs, [], TrainConfig(lr=1e308, epochs=3), SMALL)


def test_best_epoch_selected_by_validation():
    exs = [ScoredExample(ScoreInput(f"likes {k}", f"place with {k}"), 1) for k in KEYWORDS]
    val = [ScoredExample(ScoreInput(f"likes {k}", f"place with {k}"), 0) for k in KEYWORDS]
    model, history = train_scorer(exs, val, TrainConfig(lr=1.0, epochs=5), SMALL)
    # Training only pushes scores towards 1, so the untrained model is best on val.
    assert not np.any(model.weights) and model.bias == 0.0
    assert history[0].val_mse == min(h.val_mse for h in history)


def test_trained_scorer_prefers_match(trained_scorer):
    pos = ScoreInput("I really like onsen", "A popular spot famous for onsen. Open all year round.",
                     "A popular spot famous for onsen. Open all year round. Suitable for matching visitors.")
    neg = ScoreInput("I really like onsen", "A popular spot famous for skiing. Open all year round.",
                     "A popular spot famous for skiing. Open all year round. Suitable for matching visitors.")
    assert trained_scorer.predict(pos) > 0.8
    assert trained_scorer.predict(neg) < trained_scorer.predict(pos)


def test_score_matrix_pointwise():
    rng = np.random.default_rng(4)
    model = ScorerModel(rng.normal(0, 1, SMALL.dim), -0.2, SMALL)
    sums = ["I like sea", "we want hills"]
    recs = ["for sea fans", "for hikers", "for all"]
    descs = ["beach", "mountain", "city"]
    m = score_matrix(sums, recs, descs, model)
    assert m.shape == (2, 3)
    for k in range(2):
        for j in range(3):
            assert m[k, j] == predict_score(model, ScoreInput(sums[k], descs[j], recs[j]))
    assert score_matrix(sums, None, descs, model)[1, 2] == predict_score(model, ScoreInput(sums[1], "city"))


def test_score_matrix_errors():
    model = ScorerModel.zeros(SMALL)
    with pytest.raises(DomainError):
        score_matrix(["s"], [], [], model)
    with pytest.raises(DomainError):
        score_matrix(["s"], ["r1", "r2"], ["d1"], model)


def test_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    w = np.where(rng.random(SMALL.dim) < 0.3, rng.normal(0, 1, SMALL.dim), 0.0)
    model = ScorerModel(w, 0.123456789, SMALL)
    path = tmp_path / "m.json"
    save_model(model, path)
    loaded = load_model(path, expected_cfg=SMALL)
    r = random.Random(0)
    for _ in range(100):
        inp = ScoreInput(" ".join(r.choices(KEYWORDS, k=3)), " ".join(r.choices(KEYWORDS, k=4)),
                         r.choice([None, " ".join(r.choices(KEYWORDS, k=2))]))
        assert loaded.predict(inp) == model.predict(inp)


def test_load_truncated(tmp_path):
    path = tmp_path / "m.json"
    save_model(ScorerModel.zeros(SMALL), path)
    path.write_text(path.read_text()[:-10])
    with pytest.raises(FormatError):
        load_model(path)


def test_load_dim_mismatch(tmp_path):
    path = tmp_path / "m.json"
    save_model(ScorerModel.zeros(SMALL), path)
    doc = json.loads(path.read_text())
    doc["dim"] = 2**10
    path.write_text(json.dumps(doc))
    with pytest.raises(FormatError):
        load_model(path)
    save_model(ScorerModel.zeros(SMALL), path)
    with pytest.raises(FormatError):
        load_model(path, expected_cfg=FeatureConfig(hash_dim_log2=10))


def test_load_version_mismatch(tmp_path):
    path = tmp_path / "m.json"
    save_model(ScorerModel.zeros(SMALL), path)
    doc = json.loads(path.read_text())
    doc["version"] = 99
    path.write_text(json.dumps(doc))
    with pytest.raises(FormatError):
        load_model(path)


def _score_client(*responses):
    seq = iter(responses)
    seen = []

    def handler(request):
        seen.append(json.loads(request.content))
        return next(seq)

    return httpx.Client(transport=httpx.MockTransport(handler)), seen


def test_remote_passthrough():
    client, seen = _score_client(httpx.Response(200, json={"score": 0.7}))
    inp = ScoreInput("sum", "desc", "rec")
    assert remote_score("http://score.test", inp, client=client) == 0.7
    assert seen == [{"summary": "sum", "rec_info": "rec", "description": "desc"}]


def test_remote_clamps_with_warning(caplog):
    client, _ = _score_client(httpx.Response(200, json={"score": 1.3}))
    with caplog.at_level(logging.WARNING):
        assert remote_score("http://score.test", ScoreInput("s", "d"), client=client) == 1.0
    assert "clamping" in caplog.text


def test_remote_out_of_range():
    client, _ = _score_client(httpx.Response(200, json={"score": 11.0}))
    with pytest.raises(ProtocolError):
        remote_score("http://score.test", ScoreInput("s", "d"), client=client)


def test_remote_server_error_after_retries():
    client, seen = _score_client(*[httpx.Response(500)] * 3)
    scorer = RemoteScorer("http://score.test", client=client, sleep=lambda s: None)
    with pytest.raises(BackendError):
        scorer.predict(ScoreInput("s", "d"))
    assert len(seen) == 3


def test_random_scorer_uniform_and_deterministic():
    r = RandomScorer(3)
    scores = [r.predict(ScoreInput(f"s{i}", "d")) for i in range(2000)]
    assert scores == [RandomScorer(3).predict(ScoreInput(f"s{i}", "d")) for i in range(2000)]
    assert all(0 < s < 1 for s in scores)
    assert abs(np.mean(scores) - 0.5) < 0.03

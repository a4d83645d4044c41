import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from protoscope.data import gen_blobs
from protoscope.errors import ConfigurationError, EvaluationError, UndefinedSimilarity
from protoscope.metrics import (
    CSV_COLUMNS,
    FeatureGroup,
    accuracy_bounds,
    between_class_separation,
    class_mean_directions,
    classifier_orthogonality,
    cos_sim,
    evaluate_dataless,
    report_from_features,
    within_class_similarity,
)
from protoscope.network import NetworkSpec, build_model
from protoscope.protogen import Prototype, PrototypeSet, ProtoConfig, generate_prototypes
from protoscope.trainer import TrainConfig, train


def naive_cos(a, b):
    return float(np.dot(a, b) / math.sqrt(np.dot(a, a) * np.dot(b, b)))


def naive_m_in(groups):
    per_class = []
    for g in groups:
        vals = [naive_cos(g[i], g[j]) for i in range(len(g)) for j in range(i + 1, len(g))]
        per_class.append(sum(vals) / len(vals))
    return sum(per_class) / len(per_class)


def all_pairs_bt(groups):
    # every vector of class l against every vector of every other class
    vals = []
    for l, i in itertools.permutations(range(len(groups)), 2):
        vals.append(np.mean([naive_cos(a, b) for a in groups[l] for b in groups[i]]))
    return float(np.mean(vals))


def test_cos_sim_examples():
    assert cos_sim([2, 0], [5, 0]) == 1.0
    assert cos_sim([1, 0], [0, 1]) == 0.0
    assert cos_sim([1, 1], [1, 0]) == pytest.approx(0.70711, abs=1e-5)
    with pytest.raises(UndefinedSimilarity):
        cos_sim([0, 0], [1, 0])


def test_orthogonality_examples():
    assert classifier_orthogonality([[1, 0], [0, 1]]) == pytest.approx((1.0, 90.0))
    assert classifier_orthogonality([[1, 0], [1, 0]]) == pytest.approx((0.0, 0.0))
    r = 1 / math.sqrt(2)
    h, angle = classifier_orthogonality([[1, 0], [0, 1], [r, r]])
    mean_cos = (0 + r + r) / 3
    assert h == pytest.approx(1 - mean_cos, abs=1e-12)
    assert h == pytest.approx(0.5286, abs=1e-4)
    assert angle == pytest.approx(61.87, abs=0.01)


def test_orthogonality_angle_matches_reported_table_values():
    # mean cosine 0.0001745 corresponds to 89.99 degrees
    a, b = np.array([1.0, 0.0]), np.array([0.0001745, math.sqrt(1 - 0.0001745**2)])
    h, angle = classifier_orthogonality([a, b])
    assert h == pytest.approx(1 - 0.0001745, abs=1e-12)
    assert round(angle, 2) == 89.99


def test_orthogonality_zero_row_named():
    with pytest.raises(UndefinedSimilarity, match="row 1"):
        classifier_orthogonality([[1, 0], [0, 0], [0, 1]])


@settings(max_examples=60, deadline=None)
@given(
    W=arrays(np.float64, (4, 6), elements=st.floats(-5, 5)).filter(
        lambda w: np.all(np.linalg.norm(w, axis=1) > 1e-3)
    ),
    scales=arrays(np.float64, 4, elements=st.floats(0.01, 100)),
    perm=st.permutations(range(4)),
)
def test_orthogonality_invariances(W, scales, perm):
    h, _ = classifier_orthogonality(W)
    assert classifier_orthogonality(W * scales[:, None])[0] == pytest.approx(h, abs=1e-12)
    assert classifier_orthogonality(W[list(perm)])[0] == pytest.approx(h, abs=1e-12)


def test_within_class_examples():
    fg = FeatureGroup.from_features([[[1, 0], [0, 1]], [[1, 1], [2, 2]]])
    mean, std, per_class = within_class_similarity(fg)
    assert per_class == pytest.approx([0.0, 1.0])
    assert mean == pytest.approx(0.5)
    fg = FeatureGroup.from_features([[[1, 2, 3]] * 3, [[0, 4, 1]] * 4])
    mean, std, _ = within_class_similarity(fg)
    assert mean == pytest.approx(1.0) and std == pytest.approx(0.0, abs=1e-15)


def test_within_class_needs_two_vectors():
    fg = FeatureGroup.from_features([[[1, 0], [0, 1]], [[1, 1]]])
    with pytest.raises(ConfigurationError, match=r"\[1\]"):
        within_class_similarity(fg)


def test_zero_vectors_excluded_and_counted():
    fg = FeatureGroup.from_features([[[1, 0], [0, 0], [1, 1]], [[0, 1], [1, 1]]])
    assert fg.counts == [2, 2]
    assert sum(fg.excluded_zero) == 1
    assert np.allclose(np.linalg.norm(fg.groups[0], axis=1), 1.0)


@pytest.mark.parametrize("seed", range(5))
def test_gram_matches_naive_loop(seed):
    rng = np.random.default_rng(seed)
    groups = [rng.random((5, 7)) for _ in range(3)]
    mean, _, _ = within_class_similarity(FeatureGroup.from_features(groups))
    assert abs(mean - naive_m_in(groups)) <= 1e-12


def test_between_class_examples():
    fg = FeatureGroup.from_features([[[1, 2], [2, 4]], [[1, 2], [2, 4]]])
    mean, _, m_bt = between_class_separation(fg)
    assert mean == pytest.approx(1.0, abs=1e-12) and m_bt == pytest.approx(0.0, abs=1e-12)
    # identical but spread-out sets score below 1: the class mean is not parallel to its members
    fg = FeatureGroup.from_features([[[1, 0], [0, 1]], [[1, 0], [0, 1]]])
    assert between_class_separation(fg)[0] == pytest.approx(1 / math.sqrt(2), abs=1e-12)
    fg = FeatureGroup.from_features([[[1, 0], [2, 0]], [[0, 1], [0, 3]]])
    mean, std, m_bt = between_class_separation(fg)
    assert mean == 0.0 and m_bt == 1.0 and std == 0.0


def test_between_class_reduced_equals_all_pairs_for_identical_vectors():
    rng = np.random.default_rng(11)
    groups = [np.repeat(rng.random((1, 6)) * s, 4, axis=0) * np.arange(1, 5)[:, None] for s in (1, 2, 3)]
    mean, _, _ = between_class_separation(FeatureGroup.from_features(groups))
    assert mean == all_pairs_bt(groups)


def test_mean_directions_are_unit():
    rng = np.random.default_rng(1)
    fg = FeatureGroup.from_features([rng.random((4, 5)) for _ in range(3)])
    np.testing.assert_allclose(np.linalg.norm(class_mean_directions(fg), axis=1), 1.0, atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**16))
def test_feature_metric_invariances(seed):
    rng = np.random.default_rng(seed)
    groups = [rng.random((4, 5)) + 0.01 for _ in range(3)]
    Q, _ = np.linalg.qr(rng.normal(size=(5, 5)))
    scaled = [g * rng.uniform(0.1, 10, size=(g.shape[0], 1)) for g in groups]
    base = FeatureGroup.from_features(groups)
    for other in ([g @ Q.T for g in groups], scaled):
        fg = FeatureGroup.from_features(other)
        assert within_class_similarity(fg)[0] == pytest.approx(within_class_similarity(base)[0], abs=1e-12)
        assert within_class_similarity(fg)[1] == pytest.approx(within_class_similarity(base)[1], abs=1e-12)
        assert between_class_separation(fg)[0] == pytest.approx(between_class_separation(base)[0], abs=1e-12)
        assert between_class_separation(fg)[1] == pytest.approx(between_class_separation(base)[1], abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**16))
def test_nonnegative_features_give_unit_interval(seed):
    rng = np.random.default_rng(seed)
    fg = FeatureGroup.from_features([rng.random((3, 4)) * (rng.random((3, 4)) > 0.3) + 1e-3 for _ in range(3)])
    m_in = within_class_similarity(fg)[0]
    bt, _, m_bt = between_class_separation(fg)
    assert 0 <= m_in <= 1 and 0 <= bt <= 1 and 0 <= m_bt <= 1


def test_bound_arithmetic_table_values():
    assert accuracy_bounds(0.9844, 0.0077, 0.5, 0.1).upper == pytest.approx(0.9690, abs=1e-4)
    assert accuracy_bounds(0.9, 0.01, 0.3721, 0.1140).lower == pytest.approx(0.3998, abs=1e-3)
    assert accuracy_bounds(0.9, 0.01, 0.2897, 0.0858).lower == pytest.approx(0.5386, abs=1e-3)


def test_bounds_clamp_flag():
    b = accuracy_bounds(0.5, 0.4, 0.9, 0.2)
    assert (b.upper, b.lower, b.clamped) == (0.0, 0.0, True)
    assert not accuracy_bounds(0.9, 0.01, 0.2, 0.05).clamped


def test_report_identities_and_csv():
    rng = np.random.default_rng(2)
    fg = FeatureGroup.from_features([rng.random((4, 6)) for _ in range(3)])
    r = report_from_features(rng.normal(size=(3, 6)), fg)
    assert r.upper_bound == r.m_in_mean - 2 * r.m_in_std
    assert r.lower_bound == 1 - (r.bt_cossim_mean + 2 * r.bt_cossim_std)
    assert r.m_bt == 1 - r.bt_cossim_mean
    lines = r.to_csv(0.5).splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert lines[1].startswith("0.5,") and lines[1].endswith(",")  # no accuracy without validation
    assert "accuracy" not in json.loads(r.to_json())


@pytest.fixture(scope="module")
def trained():
    ds = gen_blobs(4, 100, 8, separation=10, spread=0.5, seed=1)
    model, _ = train(build_model(NetworkSpec(8, 32, 4, (64, 64), seed=1)), ds, TrainConfig(seed=1))
    return model


def test_end_to_end_report(trained, tmp_path):
    protos = generate_prototypes(trained, ProtoConfig(seed=1))
    r = evaluate_dataless(trained, protos)
    assert r.upper_bound == r.m_in_mean - 2 * r.m_in_std
    assert r.lower_bound == 1 - (r.bt_cossim_mean + 2 * r.bt_cossim_std)
    assert 0 <= r.lower_bound_clamped <= 1 and 0 <= r.upper_bound_clamped <= 1
    assert 0 <= r.m_in_mean <= 1 and 0 <= r.bt_cossim_mean <= 1
    assert r.vectors_per_class == [4, 4, 4, 4]
    assert r.extra["model_sha256"] == trained.digest()
    r.save(tmp_path / "a.json")
    evaluate_dataless(trained, generate_prototypes(trained, ProtoConfig(seed=1))).save(tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_too_few_converged_prototypes():
    m = build_model(NetworkSpec(2, 4, 2, ()))
    p = lambda t, o, ok: Prototype(np.ones(2), t, o, 0.0 if ok else 5.0, 1, ok)
    protos = PrototypeSet([p(0, None, True), p(1, None, True)], [p(0, 1, True), p(1, 0, False)])
    with pytest.raises(EvaluationError, match=r"\[1\]"):
        evaluate_dataless(m, protos)

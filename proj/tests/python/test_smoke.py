# SPDX-License-Identifier: Apache-2.0
import json

import numpy as np
import pytest

import hbgl

TAXONOMY = json.dumps(
    {
        "labels": [
            {"name": "Sport", "parents": []},
            {"name": "Ball", "parents": ["Sport"]},
            {"name": "Football", "parents": ["Ball"]},
            {"name": "Tennis", "parents": ["Ball"]},
        ]
    }
)


def tiny():
    return hbgl.preset("tiny")


def test_hierarchy_levels_and_mask():
    h = hbgl.Hierarchy.from_json(TAXONOMY)
    assert len(h) == 4
    assert h.depth == 3
    assert [h.level(i) for i in range(4)] == [1, 2, 3, 3]
    assert h.children(h.id("Ball")) == [2, 3]
    mask = h.attention_mask()
    assert mask.dtype == np.bool_ and mask.shape == (4, 4)
    assert np.array_equal(mask, mask.T)
    assert mask[0, 1] and mask[1, 2] and not mask[0, 2] and not mask[2, 3]
    assert h.local_hierarchy([3, 0, 1]) == [[0], [1], [3]]


def test_packed_mask_shape_and_text_isolation():
    m = hbgl.packed_attention_mask(5, 3)
    assert m.shape == (5 + 2 * 3 + 4,) * 2
    text = 5 + 2
    assert not m[:text, text:].any()
    assert m[:text, :text].all()


def test_errors_map_to_python_exceptions():
    with pytest.raises(hbgl.ParseError):
        hbgl.Hierarchy.from_json("{not json")
    with pytest.raises(hbgl.ValidationError):
        hbgl.Hierarchy.from_json(json.dumps({"labels": []}))
    with pytest.raises(hbgl.ConfigError):
        hbgl.preset("huge")
    bad = tiny()
    bad["global"]["stepz"] = 3
    with pytest.raises(hbgl.ConfigError):
        hbgl.validate_config(bad)
    assert issubclass(hbgl.ConfigError, hbgl.Error)


def test_f1_counts():
    h = hbgl.Hierarchy.from_json(TAXONOMY)
    r = hbgl.f1(h, [["Sport", "Ball", "Tennis"]], [["Sport", "Ball", "Football"]])
    assert r["micro_f1"] == pytest.approx(2 / 3)


def test_synthetic_is_deterministic():
    a = hbgl.generate_synthetic(tiny())
    b = hbgl.generate_synthetic(tiny())
    assert a == b
    assert len(a["taxonomy"]["labels"]) == 9
    assert len(a["train"]) == 84
    assert len(a["train"]) + len(a["dev"]) + len(a["test"]) == 120


def test_experiment_reports_and_is_reproducible():
    r1 = hbgl.run_experiment(tiny(), check_invariants=True)
    r2 = hbgl.run_experiment(tiny(), check_invariants=True)
    assert r1["manifest"] == r2["manifest"]
    checks = {k: v for k, v in r1["invariants"].items() if isinstance(v, dict)}
    assert checks and all(v["pass"] for v in checks.values())
    assert 0.0 <= r1["manifest"]["local"]["test"]["macro_f1"] <= 1.0
    assert r1["manifest"]["global"]["increment"] == pytest.approx(0.3 / 20, abs=1e-12)


def test_classifier_roundtrip(tmp_path):
    clf = hbgl.Classifier.train(tiny())
    data = hbgl.generate_synthetic(tiny())
    text = data["test"][0]["text"]
    labels = clf.predict(text)
    assert labels == clf.predict(text, cached=False)
    assert set(labels) <= {clf.hierarchy.name(i) for i in range(len(clf.hierarchy))}
    path = tmp_path / "model.ckpt"
    clf.save(str(path))
    again = hbgl.Classifier.load(str(path))
    assert again.predict(text) == labels
    assert set(clf.predict(text, threshold=0.9)) <= set(clf.predict(text, threshold=0.1))


def test_sha256():
    assert hbgl.sha256_hex(b"abc").startswith("ba7816bf")

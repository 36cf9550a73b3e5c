import json

import numpy as np
import pytest

from graphon_stackelberg import config, fixtures


def test_corpus_round_trip(tmp_path):
    for name, fn in fixtures.CORPUS.items():
        doc = fn()
        path = tmp_path / f"{name}.json"
        path.write_text(json.dumps(doc))
        loaded, raw = config.load_json(path)
        assert loaded == json.loads(json.dumps(doc))
        assert config.sha256_bytes(raw) == config.sha256_bytes(path.read_bytes())
        if "gfbsde" in doc:
            config.build_gfbsde(loaded)
        else:
            config.build_game(loaded)


def test_json_syntax_error_has_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n "dims": {"n1": 1,\n}\n')
    with pytest.raises(config.ConfigError) as exc:
        config.load_json(p)
    assert exc.value.line == 3


def test_field_errors():
    doc = fixtures.decoupled_scalar()
    doc["follower"]["B"] = [[1.0, 0.0, 0.0]]
    with pytest.raises(config.ConfigError) as exc:
        config.build_game(doc)
    assert exc.value.field == "follower.B"
    doc = fixtures.decoupled_scalar()
    doc["time"]["N"] = 0
    with pytest.raises(config.ConfigError, match="time.N"):
        config.build_game(doc)
    doc = fixtures.decoupled_scalar()
    doc["graphon"]["kind"] = "ring"
    with pytest.raises(config.ConfigError, match="graphon.kind"):
        config.build_game(doc)


def test_time_varying_coefficient():
    doc = fixtures.decoupled_scalar(N=4)
    doc["follower"]["A"] = {"nodes": [0.0, 1.0, 2.0, 3.0, 4.0]}
    spec = config.build_game(doc)
    np.testing.assert_array_equal(spec.follower.A.nodes[:, 0, 0], [0, 1, 2, 3, 4])
    doc["follower"]["A"] = {"nodes": [0.0, 1.0]}
    with pytest.raises(config.ConfigError, match="nodes"):
        config.build_game(doc)


def test_defaults():
    spec = config.build_game(fixtures.decoupled_scalar(N=4))
    np.testing.assert_array_equal(spec.follower.C.nodes, 0.0)
    np.testing.assert_array_equal(spec.leader.R.nodes[0], [[1.0]])


def test_per_index_forcing():
    doc = fixtures.gfbsde_manufactured(M=4)
    p = config.build_gfbsde(doc)
    assert p.b.nodes.shape == (51, 4, 1, 1)
    doc["gfbsde"]["b"] = {"per_index": [1.0, 2.0]}
    with pytest.raises(config.ConfigError, match="gfbsde.b"):
        config.build_gfbsde(doc)

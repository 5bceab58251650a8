"""Config schema, coercion, and stage content-addressing."""

import os

import pytest

from physhape.config import (DEFAULTS, RunConfig, digest, file_digest,
                             stage_digests)
from physhape.errors import IoError, ValidationError


def test_defaults_present_and_typed():
    cfg = RunConfig()
    assert cfg["run"]["seed"] == 0
    assert isinstance(cfg["run"]["seed"], int)
    assert cfg["material"]["E"] == 1.0
    assert cfg["material"]["nu"] == 0.3
    assert cfg["pretrain"]["w_bc"] == 50.0
    assert cfg["cotrain"]["w_gc"] == 1e5
    assert cfg["cotrain"]["M_v"] is None
    assert cfg["cotrain"]["two_phase"] is True
    assert cfg["density"]["tau"] == 0.02
    assert cfg["fem"]["resolution"] == 64


def test_partial_override_keeps_other_defaults():
    cfg = RunConfig({"material": {"E": 100.0}})
    assert cfg["material"]["E"] == 100.0
    assert cfg["material"]["nu"] == 0.3
    assert cfg["fem"]["resolution"] == 64


def test_unknown_section_named():
    with pytest.raises(ValidationError, match="unknown config section 'femm'"):
        RunConfig({"femm": {"resolution": 8}})


def test_unknown_key_named_with_candidates():
    with pytest.raises(ValidationError) as exc:
        RunConfig({"fem": {"resolutionn": 8}})
    msg = str(exc.value)
    assert "fem.resolutionn" in msg
    assert "resolution" in msg


def test_type_errors_name_field():
    with pytest.raises(ValidationError, match="run.seed must be an integer"):
        RunConfig({"run": {"seed": "abc"}})
    with pytest.raises(ValidationError, match="material.E must be a number"):
        RunConfig({"material": {"E": [1]}})
    with pytest.raises(ValidationError, match="cotrain.two_phase"):
        RunConfig({"cotrain": {"two_phase": 1}})
    with pytest.raises(ValidationError, match="run.seed"):
        RunConfig({"run": {"seed": True}})
    with pytest.raises(ValidationError, match="boundary.load_band"):
        RunConfig({"boundary": {"load_band": [2, 0.5]}})


def test_numeric_strings_accepted_for_floats():
    # unquoted 1e-3 in YAML parses as a string; accept it for floats
    cfg = RunConfig({"pretrain": {"lr": "1e-3"}})
    assert cfg["pretrain"]["lr"] == 1e-3


def test_band_coercion():
    cfg = RunConfig({"boundary": {"dirichlet_band": ["1", -1, "-0.5"]}})
    band = cfg["boundary"]["dirichlet_band"]
    assert band == [1, -1.0, -0.5]
    assert isinstance(band[0], int) and isinstance(band[1], float)


def test_optional_float():
    assert RunConfig({"cotrain": {"M_v": None}})["cotrain"]["M_v"] is None
    assert RunConfig({"cotrain": {"M_v": 0.4}})["cotrain"]["M_v"] == 0.4


def test_root_must_be_mapping():
    with pytest.raises(ValidationError, match="mapping"):
        RunConfig([1, 2])
    with pytest.raises(ValidationError, match="section 'fit' must be"):
        RunConfig({"fit": [1]})


def test_empty_section_allowed():
    cfg = RunConfig({"fit": None})
    assert cfg["fit"]["epochs"] == DEFAULTS["fit"]["epochs"]


def test_from_file_roundtrip(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("run:\n  seed: 7\npretrain:\n  lr: 1e-4\n")
    cfg = RunConfig.from_file(str(p))
    assert cfg["run"]["seed"] == 7
    assert cfg["pretrain"]["lr"] == 1e-4


def test_from_file_errors(tmp_path):
    with pytest.raises(IoError, match="cannot read config"):
        RunConfig.from_file(str(tmp_path / "nope.yaml"))
    p = tmp_path / "bad.yaml"
    p.write_text("run: [\n")
    with pytest.raises(ValidationError, match="not valid YAML"):
        RunConfig.from_file(str(p))


def test_canonical_deterministic_and_selective():
    a = RunConfig({"fem": {"resolution": 32}})
    b = RunConfig({"fem": {"resolution": 32}})
    assert a.canonical() == b.canonical()
    assert a.canonical(["fem"]) == b.canonical(["fem"])
    assert "cotrain" not in a.canonical(["fem"])
    c = RunConfig({"fem": {"resolution": 16}})
    assert a.canonical(["fem"]) != c.canonical(["fem"])
    # sections outside the selection do not leak into the hash basis
    d = RunConfig({"fem": {"resolution": 32}, "cotrain": {"t": 5}})
    assert a.canonical(["fem"]) == d.canonical(["fem"])


def test_digest_stability():
    assert digest("a", "b") == digest("a", "b")
    assert digest("a", "b") != digest("ab")
    assert digest("a", "b") != digest("a", "c")
    assert len(digest("x")) == 12


def test_file_digest(tmp_path):
    p = tmp_path / "f.bin"
    p.write_bytes(b"hello")
    assert file_digest(str(p)) == file_digest(str(p))
    q = tmp_path / "g.bin"
    q.write_bytes(b"hellp")
    assert file_digest(str(p)) != file_digest(str(q))
    with pytest.raises(IoError):
        file_digest(str(tmp_path / "missing.bin"))


def test_stage_digests_scoped_invalidation():
    base = stage_digests(RunConfig(), "meshhash")
    # editing co-training weights leaves upstream stages valid
    cot = stage_digests(RunConfig({"cotrain": {"t": 5}}), "meshhash")
    assert cot["fit"] == base["fit"]
    assert cot["fem"] == base["fem"]
    assert cot["pretrain"] == base["pretrain"]
    assert cot["cotrain"] != base["cotrain"]
    # editing the solver invalidates fem and everything after it
    fem = stage_digests(RunConfig({"fem": {"resolution": 32}}), "meshhash")
    assert fem["fit"] == base["fit"]
    assert fem["fem"] != base["fem"]
    assert fem["pretrain"] != base["pretrain"]
    assert fem["cotrain"] != base["cotrain"]
    # a different mesh invalidates everything
    other = stage_digests(RunConfig(), "otherhash")
    assert all(other[k] != base[k] for k in base)
    # so does the seed
    seeded = stage_digests(RunConfig({"run": {"seed": 1}}), "meshhash")
    assert all(seeded[k] != base[k] for k in base)
    # run.out and run.name are bookkeeping, not content
    named = stage_digests(RunConfig({"run": {"name": "x", "out": "y"}}),
                          "meshhash")
    assert named == base


def test_stage_digests_ablation_scoping():
    base = stage_digests(RunConfig(), "meshhash")
    nofem = stage_digests(RunConfig(), "meshhash",
                          pretrain_ablation="no_fem_embed")
    assert nofem["fit"] == base["fit"]
    assert nofem["fem"] == base["fem"]
    assert nofem["pretrain"] != base["pretrain"]
    assert nofem["cotrain"] != base["cotrain"]
    nogc = stage_digests(RunConfig(), "meshhash", cotrain_ablation="no_gc")
    assert nogc["pretrain"] == base["pretrain"]
    assert nogc["cotrain"] != base["cotrain"]


def test_schema_covers_defaults():
    from physhape.config import _SCHEMA
    assert set(_SCHEMA) == set(DEFAULTS)
    for sec in DEFAULTS:
        assert set(_SCHEMA[sec]) == set(DEFAULTS[sec])

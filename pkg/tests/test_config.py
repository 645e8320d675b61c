import numpy as np
import pytest

from keyforge import config
from keyforge.errors import ConfigValidation


def paths(doc):
    with pytest.raises(ConfigValidation) as info:
        config.validate(doc)
    return [p for p, _ in info.value.violations]


def test_minimal_bb84():
    cfg = config.validate({"scenario": {"protocol": "bb84", "qber": 0.03}})
    assert cfg.method.names == ["frank_wolfe"]
    sc = config.build_scenario(cfg.scenario)
    assert sc.dim == 4


def test_yaml_and_json_parse():
    yaml_doc = config.parse_document("scenario:\n  protocol: bb84\n  qber: 0.01\n")
    json_doc = config.parse_document('{"scenario": {"protocol": "bb84", "qber": 0.01}}')
    assert yaml_doc == json_doc


def test_format_path():
    assert config.format_path(("scenario", "povms_a", 0, 1)) == "scenario.povms_a[0][1]"
    assert config.format_path(()) == "<document>"


def test_all_violations_reported():
    doc = {
        "scenario": {"protocol": "bb84", "qber": 0.7, "granularity": "medium"},
        "finite": {"framework": "eur", "n": 100, "m_test": 200},
        "extra": 1,
    }
    found = paths(doc)
    assert "extra" in found
    assert "scenario.granularity" in found
    assert "scenario.qber" in found
    assert "finite.m_test" in found


def test_non_hermitian_povm_path():
    doc = {
        "scenario": {
            "protocol": "custom",
            "dims": [2, 2],
            "povms_a": [[[[1, 0], [0, 0]], [[0, 1], [0, 1]]]],
            "povms_b": [[[[1, 0], [0, 0]], [[0, 0], [0, 1]]]],
            "kept": [[0, 0]],
            "key_map": [[0, 0, 0, 0], [0, 1, 0, 1]],
        }
    }
    assert "scenario.povms_a[0][1]" in paths(doc)


def test_custom_missing_fields():
    found = paths({"scenario": {"protocol": "custom"}})
    for key in ("dims", "povms_a", "povms_b", "kept", "key_map"):
        assert f"scenario.{key}" in found


def test_complex_entries_and_custom_build():
    s = 1 / np.sqrt(2)
    y_plus = [[0.5, [0, -0.5]], [[0, 0.5], 0.5]]
    y_minus = [[0.5, [0, 0.5]], [[0, -0.5], 0.5]]
    z = [[[1, 0], [0, 0]], [[0, 0], [0, 1]]]
    doc = {
        "scenario": {
            "protocol": "custom",
            "dims": [2, 2],
            "povms_a": [z, [y_plus, y_minus]],
            "povms_b": [z],
            "kept": [[0, 0]],
            "key_map": [[0, 0, 0, 0], [0, 1, 0, 1]],
            "constraints": [{"op": np.kron(np.diag([1, 0]), np.eye(2)).tolist(), "value": 0.5}],
        }
    }
    sc = config.build_scenario(config.validate(doc).scenario)
    assert sc.povms_a[1].elements[0][0, 1] == pytest.approx(-0.5j)
    assert s > 0


def test_decoy_section_checks():
    found = paths({"decoy": {"intensities": [0.5], "gains": [0.1, 0.2], "error_gains": [0.3]}})
    assert "decoy.intensities" in found
    assert "decoy.gains" in found
    assert "decoy.error_gains[0]" in found


def test_sweep_aliases_and_parameter():
    cfg = config.validate(
        {
            "scenario": {"protocol": "bb84", "qber": 0.0},
            "sweep": {"parameter": "scenario.qber", "from": 0.0, "to": 0.1, "steps": 3},
        }
    )
    assert (cfg.sweep.start, cfg.sweep.stop) == (0.0, 0.1)
    bad = {"scenario": {"protocol": "bb84", "qber": 0.0}, "sweep": {"parameter": "scenario.nope", "from": 0, "to": 1, "steps": 2}}
    assert "sweep.parameter" in paths(bad)


def test_with_parameter_copies():
    doc = {"scenario": {"protocol": "bb84", "qber": 0.0}}
    new = config.with_parameter(doc, "scenario.qber", 0.05)
    assert new["scenario"]["qber"] == 0.05 and doc["scenario"]["qber"] == 0.0


def test_bb84_efficiency_build():
    cfg = config.validate(
        {
            "scenario": {
                "protocol": "bb84",
                "qber": 0.02,
                "imperfections": {"noclick": True, "efficiency": [{"basis": 0, "outcome": 0, "eta": 0.9}]},
            }
        }
    )
    sc = config.build_scenario(cfg.scenario)
    assert sc.discard_b
    assert "scenario.imperfections.efficiency[0].eta" in paths(
        {"scenario": {"protocol": "bb84", "qber": 0.02, "imperfections": {"efficiency": [{"basis": 0, "outcome": 0, "eta": 1.5}]}}}
    )

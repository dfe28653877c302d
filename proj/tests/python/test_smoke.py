"""Smoke tests for the python bindings of the core operations."""

import math

import pytest

import fleetlab


def test_signature_is_md5_hex():
    assert fleetlab.signature("") == "d41d8cd98f00b204e9800998ecf8427e"
    assert fleetlab.signature("abc") == "900150983cd24fb0d6963f7d28e17f72"
    assert fleetlab.signature("abc") == fleetlab.md5_hex("abc")
    assert len(fleetlab.signature("anything")) == 32


def test_filter_parse_and_eval():
    assert fleetlab.eval_filter("x > 100", 101) is True
    assert fleetlab.eval_filter("x > 100", 100) is False
    assert fleetlab.eval_filter("x >= 0 and x <= 1", 0.5) is True
    assert fleetlab.eval_filter("x > 1 or x < -1", 0) is False
    assert fleetlab.eval_filter("x == x", float("nan")) is False
    assert fleetlab.parse_filter("x > 100")
    with pytest.raises(ValueError):
        fleetlab.parse_filter("y > 1")


def test_validate_assignment():
    doc = {
        "name": "Sample Assignment",
        "user_id": "u1",
        "clients": "all",
        "onboard": {
            "computation": "collect",
            "signals": ["speed"],
            "filters": "x > 100",
            "frequency": 10,
            "samples": 36000,
        },
        "offboard": {"computation": "collect", "iterations": 10},
    }
    result = fleetlab.validate_assignment(doc)
    assert result["ok"] is True
    assert result["violations"] == []

    doc["onboard"]["frequency"] = 0
    result = fleetlab.validate_assignment(doc)
    assert result["ok"] is False
    assert any(v["field"] == "onboard.frequency" for v in result["violations"])


def test_validate_custom_stages():
    ok = fleetlab.validate_custom("fn custom_code(xs) { return xs; }")
    assert ok["ok"] is True

    bad = fleetlab.validate_custom('fn custom_code(xs) { return "hello"; }')
    assert bad["ok"] is False
    assert bad["violations"][0]["stage"] == "return_type"

    cap = fleetlab.validate_custom('fn custom_code(xs) { open("f"); return 0; }')
    assert cap["violations"][0]["stage"] == "capability"


def test_execute_custom_identity_and_mean():
    out = fleetlab.execute_custom("fn custom_code(xs) { return xs; }", [1.0, 2.0, 3.0])
    assert out["ok"] is True
    assert out["value"] == [1.0, 2.0, 3.0]
    assert out["signature"] == fleetlab.signature("fn custom_code(xs) { return xs; }")

    mean = fleetlab.execute_custom("fn custom_code(xs) { return mean(xs); }", [2.0, 4.0, 6.0])
    assert mean["ok"] is True
    assert mean["value"] == 4.0


def test_execute_custom_timeout_is_contained():
    out = fleetlab.execute_custom(
        "fn custom_code(xs) { while (true) { } return 0; }", [1.0], timeout_s=0.1
    )
    assert out["ok"] is False
    assert out["error"] == "timeout"
    assert out["elapsed_ms"] < 150.0


def test_execute_custom_params():
    out = fleetlab.execute_custom(
        'fn custom_code(xs) { return param("input_model"); }',
        [0.0],
        params={"input_model": [9.0, 8.0]},
    )
    assert out["ok"] is True
    assert out["value"] == [9.0, 8.0]


def test_majority_filter():
    out = fleetlab.majority_filter([("c1", "A"), ("c2", "A"), ("c3", "B")])
    assert out["winner"] == "A"
    assert out["kept"] == ["c1", "c2"]
    assert out["discarded"] == ["c3"]

    tie = fleetlab.majority_filter([("c1", "A"), ("c2", "B")], deployed_signature="B")
    assert tie["winner"] == "B"

    stale = fleetlab.majority_filter([("c1", "A"), ("c2", "B")], deployed_signature="C")
    assert stale["winner"] is None
    assert stale["kept"] == []


def test_frame_round_trip():
    frame = fleetlab.encode_frame("status", "a-1", "u1", {"event": "ping"})
    assert frame[:4] == (len(frame) - 4).to_bytes(4, "big")
    decoded = fleetlab.decode_frame(frame)
    assert decoded["status"] == "ok"
    assert decoded["kind"] == "status"
    assert decoded["assignment_id"] == "a-1"
    assert decoded["body"]["event"] == "ping"

    partial = fleetlab.decode_frame(frame[: len(frame) // 2])
    assert partial["status"] == "need_more"
    assert partial["consumed"] == 0


def test_sensor_streams_are_deterministic():
    a = fleetlab.sensor_samples("speed", seed=7, count=50)
    b = fleetlab.sensor_samples("speed", seed=7, count=50)
    assert a == b
    assert all(math.isfinite(x) for x in a)

    ramp = fleetlab.sensor_samples(
        "r", seed=1, count=3, catalog={"r": {"kind": "ramp", "start": 5, "step": 2}}
    )
    assert ramp == [5.0, 7.0, 9.0]


def test_builtin_computations():
    assert fleetlab.builtin_mean([2.0, 4.0, 6.0]) == 4.0
    bins = fleetlab.builtin_histogram([float(i) for i in range(10)])
    assert bins == [1.0] * 10

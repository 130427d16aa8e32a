"""Deterministic JSON serialization and the config hash."""

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from selectivebayes.reports import (
    SCHEMA_VERSION,
    ReportDocument,
    ReportError,
    config_hash,
    dumps_stable,
)


class TestFloats:
    def test_17_significant_digits(self):
        assert dumps_stable(0.1) == "0.10000000000000001"
        assert dumps_stable(1.0 / 3.0) == "0.33333333333333331"

    def test_floats_are_self_identifying(self):
        assert dumps_stable(2.0) == "2.0"
        assert dumps_stable(2) == "2"

    def test_nonfinite(self):
        assert dumps_stable(float("nan")) == "NaN"
        assert dumps_stable(float("inf")) == "Infinity"
        assert dumps_stable(float("-inf")) == "-Infinity"

    @given(st.floats(allow_nan=False, allow_infinity=False))
    def test_round_trip_exact(self, x):
        assert float(json.loads(dumps_stable(x))) == x


class TestDump:
    def test_key_order_preserved(self):
        assert dumps_stable({"b": 1, "a": 2}) == '{"b": 1, "a": 2}'

    def test_nested_containers(self):
        obj = {"v": [1, 2.5, None, True], "w": {"x": "s"}}
        assert dumps_stable(obj) == '{"v": [1, 2.5, null, true], "w": {"x": "s"}}'

    def test_ndarray_as_list(self):
        assert dumps_stable(np.array([1.0, 2.0])) == "[1.0, 2.0]"

    def test_string_escaping(self):
        assert dumps_stable('a"b\\c') == '"a\\"b\\\\c"'

    def test_non_string_key_rejected(self):
        with pytest.raises(ReportError, match="non-string key"):
            dumps_stable({1: "x"})

    def test_unserializable_rejected(self):
        with pytest.raises(ReportError, match="unserializable"):
            dumps_stable(object())


class TestConfigHash:
    def test_invariant_to_key_order(self):
        a = {"data": {"n": "100", "d": "3"}, "sampler": {"chains": "2"}}
        b = {"sampler": {"chains": "2"}, "data": {"d": "3", "n": "100"}}
        assert config_hash(a) == config_hash(b)

    def test_sensitive_to_values(self):
        a = {"data": {"n": "100"}}
        b = {"data": {"n": "101"}}
        assert config_hash(a) != config_hash(b)


class TestReportDocument:
    def test_metadata_first(self):
        doc = ReportDocument(seed=4, config={"data": {"n": "10"}}, body={"z": 1})
        parsed = json.loads(doc.to_json())
        assert list(parsed.keys()) == [
            "schema_version", "seed", "config_hash", "warnings", "z",
        ]
        assert parsed["schema_version"] == SCHEMA_VERSION
        assert parsed["seed"] == 4

    def test_byte_identical_rerun(self):
        body = {"metrics": {"a": np.linspace(0, 1, 7)}}
        a = ReportDocument(seed=0, config={}, body=body).to_json()
        b = ReportDocument(seed=0, config={}, body=body).to_json()
        assert a.encode() == b.encode()

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skyfork.config import ConfigError, FunctionConfig
from skyfork.manifest import ManifestEntry, ManifestError, emit_manifest, read_manifest


def entry(ident="m.py@1:1#0", name="m:f", memory=1024):
    return ManifestEntry(name, "cppless-worker", FunctionConfig(memory=memory), ident)


def test_emit_layout():
    text = emit_manifest([entry()])
    doc = json.loads(text)
    assert list(doc) == ["entry_points"]
    point = doc["entry_points"][0]
    assert list(point) == ["original_function_name", "filename", "user_meta"]
    assert point["user_meta"] == {"ephemeral_storage": 512, "memory": 1024, "timeout": 10,
                                  "identifier": "m.py@1:1#0"}
    assert text.endswith("\n")


def test_emit_rejects_empty_and_duplicates():
    with pytest.raises(ManifestError, match="at least one"):
        emit_manifest([])
    with pytest.raises(ManifestError, match="m:f.*m:g"):
        emit_manifest([entry(name="m:f"), entry(name="m:g")])


@pytest.mark.parametrize("mutate,path", [
    (lambda d: d.update(extra=1), "$"),
    (lambda d: d["entry_points"][0].pop("filename"), "$.entry_points[0]"),
    (lambda d: d["entry_points"][0]["user_meta"].update(memory="big"), "$.entry_points[0].user_meta.memory"),
    (lambda d: d["entry_points"][0]["user_meta"].update(memory=64), "$.entry_points[0].user_meta"),
    (lambda d: d["entry_points"][0]["user_meta"].update(timeout=True), "$.entry_points[0].user_meta.timeout"),
    (lambda d: d.update(entry_points={}), "$.entry_points"),
])
def test_read_reports_field_path(mutate, path):
    doc = json.loads(emit_manifest([entry()]))
    mutate(doc)
    with pytest.raises(ManifestError) as info:
        read_manifest(json.dumps(doc))
    assert info.value.path == path


def test_read_rejects_bad_json():
    with pytest.raises(ManifestError, match="invalid JSON"):
        read_manifest("{")


def test_config_validation():
    with pytest.raises(ConfigError):
        FunctionConfig(memory=100)
    with pytest.raises(ConfigError):
        FunctionConfig(timeout=0)
    assert FunctionConfig.from_dict(FunctionConfig(memory=2048).to_dict()) == FunctionConfig(memory=2048)
    with pytest.raises(ConfigError):
        FunctionConfig.from_dict({"memroy": 1})


idents = st.builds(lambda f, l, c, o: f"{f}.py@{l}:{c}#{o}",
                   st.text("abcxyz/_é", min_size=1, max_size=12), st.integers(1, 10 ** 5),
                   st.integers(1, 200), st.integers(0, 5))


@settings(max_examples=100)
@given(st.lists(st.tuples(idents, st.text(max_size=20), st.integers(128, 10240),
                          st.integers(1, 900), st.integers(512, 10240)),
                min_size=1, max_size=6, unique_by=lambda t: t[0]))
def test_emit_read_is_byte_lossless(rows):
    entries = [ManifestEntry(name, "cppless-worker", FunctionConfig(mem, timeout, eph), ident)
               for ident, name, mem, timeout, eph in rows]
    text = emit_manifest(entries)
    assert read_manifest(text) == entries
    assert emit_manifest(read_manifest(text)) == text

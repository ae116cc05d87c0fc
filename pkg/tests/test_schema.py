import json
import string

import pytest
from hypothesis import given, settings, strategies as st

from tacc.errors import SchemaInvalid
from tacc.schema import (ClusterLimits, ResourceReq, canonicalize, parse_task_spec,
                         spec_hash_hex, validate)

MINIMAL = {"name": "train", "user": "alice", "entrypoint": "python train.py",
           "resources": {"cpus": 1, "mem_mib": 256}}


def doc(**over):
    d = json.loads(json.dumps(MINIMAL))
    d.update(over)
    return json.dumps(d)


def test_minimal_document_gets_defaults():
    spec = parse_task_spec(doc())
    assert spec.resources == ResourceReq(1, 0, 256)
    assert spec.nodes == 1
    assert spec.qos == "normal"
    assert spec.walltime_estimate_s == 3600
    assert spec.env == () and spec.datasets == () and spec.dependencies == ()
    assert spec.runtime_preference is None
    assert spec.code_root == "."


def test_missing_entrypoint_names_field():
    d = dict(MINIMAL)
    del d["entrypoint"]
    with pytest.raises(SchemaInvalid) as err:
        parse_task_spec(json.dumps(d))
    assert err.value.field == "entrypoint"


def test_negative_gpus_rejected_at_path():
    with pytest.raises(SchemaInvalid) as err:
        parse_task_spec(doc(resources={"cpus": 1, "gpus": -1, "mem_mib": 256}))
    assert err.value.field == "resources.gpus"


@pytest.mark.parametrize("over, field", [
    ({"colour": "red"}, "colour"),
    ({"nodes": 0}, "nodes"),
    ({"nodes": True}, "nodes"),
    ({"walltime_estimate_s": 0}, "walltime_estimate_s"),
    ({"qos": "urgent"}, "qos"),
    ({"env": {"1BAD": "x"}}, "env.1BAD"),
    ({"runtime_preference": ["a", "a"]}, "runtime_preference"),
    ({"code_root": "../up"}, "code_root"),
    ({"name": ""}, "name"),
    ({"name": "x" * 129}, "name"),
    ({"resources": {"cpus": 0, "mem_mib": 1}}, "resources.cpus"),
    ({"resources": {"cpus": 1, "mem_mib": 1, "tpus": 1}}, "resources.tpus"),
])
def test_invalid_fields(over, field):
    with pytest.raises(SchemaInvalid) as err:
        parse_task_spec(doc(**over))
    assert err.value.field == field


def test_malformed_and_duplicate_keys():
    with pytest.raises(SchemaInvalid):
        parse_task_spec("{not json")
    with pytest.raises(SchemaInvalid):
        parse_task_spec('{"name": "a", "name": "b"}')
    with pytest.raises(SchemaInvalid):
        parse_task_spec(doc(walltime_estimate_s=float("nan")))


def test_dataset_uris_allowed():
    spec = parse_task_spec(doc(datasets=["s3://bucket/x", "data/train"]))
    assert spec.datasets == ("s3://bucket/x", "data/train")


LIMITS_8 = ClusterLimits.from_capacities([ResourceReq(32, 8, 65536)])


def test_validate_within_limits():
    spec = parse_task_spec(doc(resources={"cpus": 1, "gpus": 4, "mem_mib": 256}))
    assert validate(spec, LIMITS_8).ok


def test_validate_exceeds_largest_node():
    spec = parse_task_spec(doc(resources={"cpus": 1, "gpus": 16, "mem_mib": 256}))
    report = validate(spec, LIMITS_8)
    assert not report.ok
    assert [(i.field_path, i.code) for i in report.errors] == [("resources.gpus", "UNSATISFIABLE")]


def test_validate_exceeds_cluster_total():
    # 3 nodes x 4 gpus = 12 > 8 in total
    limits = ClusterLimits.from_capacities([ResourceReq(16, 4, 8192), ResourceReq(16, 4, 8192)])
    spec = parse_task_spec(doc(nodes=3, resources={"cpus": 1, "gpus": 4, "mem_mib": 256}))
    report = validate(spec, limits)
    assert not report.ok
    assert report.errors[0].code == "UNSATISFIABLE"
    assert 3 * 4 > limits.total.gpus


def test_validate_long_walltime_is_warning_only():
    spec = parse_task_spec(doc(walltime_estimate_s=8 * 86400))
    report = validate(spec, LIMITS_8)
    assert report.ok
    assert [i.severity for i in report.issues] == ["warning"]


def test_key_order_does_not_change_hash():
    a = parse_task_spec('{"name":"n","user":"u","entrypoint":"e",'
                        '"resources":{"cpus":1,"mem_mib":2}}')
    b = parse_task_spec('{ "resources" : {"mem_mib":2, "cpus":1},\n "entrypoint":"e",'
                        '"user":"u","name":"n", "nodes": 1}')
    assert canonicalize(a) == canonicalize(b)


def test_env_change_changes_hash():
    a = parse_task_spec(doc(env={"A": "1"}))
    b = parse_task_spec(doc(env={"A": "2"}))
    assert spec_hash_hex(a) != spec_hash_hex(b)


def test_canonical_text_shape():
    text, digest = canonicalize(parse_task_spec(doc()))
    assert text.endswith("\n") and "\n" not in text[:-1]
    assert ": " not in text and ", " not in text
    import hashlib
    assert hashlib.sha256(text.encode()).digest() == digest
    assert len(digest) == 32


# -- properties -------------------------------------------------------------

names = st.text(alphabet=string.ascii_letters + string.digits + "-_ éü", min_size=1,
                max_size=20)
env_keys = st.from_regex(r"[A-Za-z_][A-Za-z0-9_]{0,6}", fullmatch=True)


@st.composite
def documents(draw):
    d = {"name": draw(names), "user": draw(names), "entrypoint": draw(names),
         "resources": {"cpus": draw(st.integers(1, 64)), "mem_mib": draw(st.integers(1, 10**6))}}
    if draw(st.booleans()):
        d["resources"]["gpus"] = draw(st.integers(0, 8))
    if draw(st.booleans()):
        d["qos"] = draw(st.sampled_from(["high", "normal", "preemptible"]))
    if draw(st.booleans()):
        d["env"] = draw(st.dictionaries(env_keys, names, max_size=4))
    if draw(st.booleans()):
        d["nodes"] = draw(st.integers(1, 16))
    if draw(st.booleans()):
        d["runtime_preference"] = draw(st.lists(names, unique=True, max_size=3))
    if draw(st.booleans()):
        d["dependencies"] = draw(st.lists(names, max_size=3))
    return d


@settings(max_examples=300, deadline=None)
@given(documents(), st.randoms())
def test_canonical_fixed_point_and_order_independence(d, rnd):
    text, digest = canonicalize(parse_task_spec(json.dumps(d)))
    assert canonicalize(parse_task_spec(text)) == (text, digest)
    items = list(d.items())
    rnd.shuffle(items)
    shuffled = json.dumps(dict(items), indent=rnd.choice([None, 1, 4]))
    assert canonicalize(parse_task_spec(shuffled))[1] == digest


def test_no_hash_collisions_over_ten_thousand_specs():
    seen = {}
    for i in range(10_000):
        spec = parse_task_spec(doc(name=f"job-{i}", nodes=1 + i % 7,
                                   env={"SEED": str(i // 7)}))
        text, digest = canonicalize(spec)
        assert seen.setdefault(digest, text) == text
    assert len(seen) == 10_000

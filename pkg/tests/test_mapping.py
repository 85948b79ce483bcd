import pytest

from marlflow.envs import make_env
from marlflow.errors import ConfigurationError, ProtocolViolation
from marlflow.mapping import PolicyMap, SharingMode, build_policy_map


@pytest.fixture
def spec_2v2():
    return make_env("matrix", {"preset": "team_2v2"}).spec


def test_cardinalities(spec_2v2):
    assert len(build_policy_map(spec_2v2, "full").policy_ids) == 1
    assert build_policy_map(spec_2v2, "group").policy_ids == ("red", "blue")
    assert build_policy_map(spec_2v2, SharingMode.NONE).policy_ids == ("a0", "a1", "a2", "a3")


def test_ids_are_deterministic(spec_2v2):
    full = build_policy_map(spec_2v2, "full")
    assert {full.resolve(a) for a in spec_2v2.agents} == {"shared_0"}
    group = build_policy_map(spec_2v2, "group")
    assert group.resolve("a2") == "blue" and group.agents_of("red") == ["a0", "a1"]
    assert build_policy_map(spec_2v2, "group") == group


def test_slot_indexes_agents_within_a_policy(spec_2v2):
    pm = build_policy_map(spec_2v2, "group")
    assert pm.slot("a3") == (1, 2)
    assert build_policy_map(spec_2v2, "none").slot("a3") == (0, 1)


def test_custom_mapping(spec_2v2):
    pm = build_policy_map(spec_2v2, "custom", {"a0": "p", "a1": "q", "a2": "p", "a3": "q"})
    assert pm.policy_ids == ("p", "q") and pm.agents_of("p") == ["a0", "a2"]
    with pytest.raises(ConfigurationError):
        build_policy_map(spec_2v2, "custom", {"a0": "p"})
    with pytest.raises(ConfigurationError):
        build_policy_map(spec_2v2, "custom")


def test_unknown_mode_and_agent(spec_2v2):
    with pytest.raises(ConfigurationError):
        build_policy_map(spec_2v2, "partial")
    with pytest.raises(ProtocolViolation):
        build_policy_map(spec_2v2, "full").resolve("ghost")


def test_map_is_immutable(spec_2v2):
    pm = build_policy_map(spec_2v2, "full")
    with pytest.raises(TypeError):
        pm.bindings["a0"] = "other"
    with pytest.raises(Exception):
        pm.policy_ids = ()
    assert isinstance(pm, PolicyMap)
    assert pm.to_dict()["policy_ids"] == ["shared_0"]

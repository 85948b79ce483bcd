"""Policy mapping: bind each agent's virtual policy to a physical one.

Agents bound to the same physical policy share its parameters. The rest of
the library only ever asks a :class:`PolicyMap` which policy an agent uses,
so changing the sharing mode never touches algorithm code.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from types import MappingProxyType
from typing import Mapping

from .errors import ConfigurationError, ProtocolViolation
from .interface import AgentId, EnvSpec

PolicyId = str


class SharingMode(str, Enum):
    FULL = "full"
    GROUP = "group"
    NONE = "none"
    CUSTOM = "custom"


@dataclass(frozen=True)
class PolicyMap:
    bindings: Mapping[AgentId, PolicyId]
    policy_ids: tuple[PolicyId, ...]
    agents: tuple[AgentId, ...]

    def __post_init__(self):
        object.__setattr__(self, "bindings", MappingProxyType(dict(self.bindings)))
        if len(set(self.policy_ids)) != len(self.policy_ids):
            raise ConfigurationError("policy mapping: policy ids must be distinct")
        missing = [a for a in self.agents if a not in self.bindings]
        if missing:
            raise ConfigurationError(f"policy mapping: agents without a policy: {missing}")
        extra = [a for a in self.bindings if a not in self.agents]
        if extra:
            raise ConfigurationError(f"policy mapping: bindings for undeclared agents: {extra}")
        unknown = {p for p in self.bindings.values() if p not in self.policy_ids}
        if unknown:
            raise ConfigurationError(f"policy mapping: unknown policy ids {sorted(unknown)}")
        unused = [p for p in self.policy_ids if p not in set(self.bindings.values())]
        if unused:
            raise ConfigurationError(f"policy mapping: policies bound to no agent: {unused}")

    def resolve(self, agent: AgentId) -> PolicyId:
        try:
            return self.bindings[agent]
        except KeyError:
            raise ProtocolViolation(f"agent {agent!r} is not declared in the policy map") from None

    def agents_of(self, policy_id: PolicyId) -> list[AgentId]:
        """Agents bound to ``policy_id``, in declaration order."""
        return [a for a in self.agents if self.bindings[a] == policy_id]

    def slot(self, agent: AgentId) -> tuple[int, int]:
        """(index among co-bound agents, number of co-bound agents)."""
        peers = self.agents_of(self.resolve(agent))
        return peers.index(agent), len(peers)

    def to_dict(self) -> dict:
        return {"bindings": dict(self.bindings), "policy_ids": list(self.policy_ids)}


def build_policy_map(spec: EnvSpec, mode, custom: Mapping[AgentId, PolicyId] | None = None) -> PolicyMap:
    """Derive a PolicyMap for ``spec``.

    Policy ids are deterministic: ``shared_0`` for full sharing, the group
    label for group sharing, the agent id itself for no sharing. ``custom``
    takes an explicit agent -> policy table.
    """
    try:
        mode = SharingMode(mode)
    except ValueError:
        raise ConfigurationError(
            f"sharing: unknown mode {mode!r}; valid: {[m.value for m in SharingMode]}") from None
    agents = tuple(spec.agents)
    if mode is SharingMode.FULL:
        bindings = {a: "shared_0" for a in agents}
    elif mode is SharingMode.NONE:
        bindings = {a: a for a in agents}
    elif mode is SharingMode.GROUP:
        if not spec.groups:
            raise ConfigurationError("sharing: group mode requires the environment to declare groups")
        bindings = {a: spec.groups[a] for a in agents}
    else:
        if not custom:
            raise ConfigurationError("sharing: custom mode requires a custom_mapping table")
        bindings = {str(a): str(p) for a, p in custom.items()}
    policy_ids = tuple(dict.fromkeys(bindings[a] for a in agents if a in bindings))
    return PolicyMap(bindings, policy_ids, agents)

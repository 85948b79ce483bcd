"""marlflow: agent-level dataflow for multi-agent reinforcement learning."""
from .errors import (AlignmentError, CollectionError, ConfigurationError, IllegalActionError, MarlflowError,
                     ModeError, NumericError, ProtocolViolation, RegistryError, ShapeError)
from .interface import ActionSpace, EnvSpec, MultiAgentEnv, ObservationBundle, StepOutput, check_conformance
from .mapping import PolicyMap, SharingMode, build_policy_map

__version__ = "0.1.0"

"""Exception hierarchy shared by every marlflow module."""


class MarlflowError(Exception):
    """Base class for all library errors."""


class ConfigurationError(MarlflowError, ValueError):
    pass


class RegistryError(ConfigurationError):
    pass


class ProtocolViolation(MarlflowError):
    """An environment or caller broke the interaction contract."""


class IllegalActionError(ProtocolViolation):
    def __init__(self, agent, action):
        super().__init__(f"illegal action {action!r} for agent {agent!r}")
        self.agent = agent
        self.action = action


class ShapeError(MarlflowError, ValueError):
    pass


class NumericError(MarlflowError, ArithmeticError):
    pass


class ModeError(MarlflowError):
    """Operation not defined for the environment's task mode or interaction style."""


class AlignmentError(MarlflowError):
    pass


class CollectionError(MarlflowError):
    def __init__(self, message, step=None):
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)
        self.step = step

"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration value is missing, malformed, or out of range."""


class InfeasibleActionError(ValueError):
    """An action violates the feasibility constraints of its decision problem."""


class SchemaError(ValueError):
    """An input file does not match its declared schema."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or gradient.

    Carries enough context (step, agent, offending values) to locate the blow-up.
    """

    def __init__(self, message, step=None, agent_id=None, values=None):
        super().__init__(message)
        self.step = step
        self.agent_id = agent_id
        self.values = values

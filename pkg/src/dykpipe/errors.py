"""Exception types shared across the pipeline."""


class PipelineError(Exception):
    """Base class for all pipeline failures."""


class InputError(PipelineError):
    """Rejected input: bad arguments, malformed files, unmet preconditions."""


class ValidationError(PipelineError):
    """A produced artifact violates one of its structural invariants."""


class TransportError(PipelineError):
    """A remote backend could not be reached or kept failing after retries."""


class ContractError(PipelineError):
    """A remote backend answered, but the response violates the wire contract."""


class SkipFact(PipelineError):
    """Signal that a fact cannot be used for the current dimension.

    Not an error condition: callers catch this and move on, counting the skip.
    """

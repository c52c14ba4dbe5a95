"""Exception hierarchy shared by every dlfuzz module."""


class DlfuzzError(Exception):
    pass


class NoRoute(DlfuzzError):
    pass


class UnknownAgent(DlfuzzError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class ParseError(DlfuzzError, ValueError):
    """Raised on malformed scenario/observation/config documents.

    ``field`` names the offending JSON path when it is known.
    """

    def __init__(self, message, field=None):
        self.field = field
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)


class InvalidScenario(DlfuzzError, ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


class InsufficientHistory(DlfuzzError, ValueError):
    pass


class NonUniformSampling(DlfuzzError, ValueError):
    pass


class WindowOutOfRange(DlfuzzError, ValueError):
    pass


class CollidedObservation(DlfuzzError, ValueError):
    pass


class DegenerateTrajectories(DlfuzzError, ValueError):
    pass


class NoFeasibleCandidate(DlfuzzError):
    pass


class InitExhausted(DlfuzzError):
    pass


class EmptyCorpus(DlfuzzError, IndexError):
    pass


class ConfigError(DlfuzzError, ValueError):
    pass

"""Exception and warning types shared across the package."""


class CTarzanError(Exception):
    pass


class DegenerateNetwork(CTarzanError):
    """The network is too small to find distinct mimics within the retry budget."""


class NoSharedCycle(CTarzanError):
    """A directed link is not covered by any registered cycle."""


class TunnelUnbuildable(CTarzanError):
    """No tunnel of the requested length could be sampled."""


class ParityMismatch(CTarzanError, ValueError):
    pass


class UnknownKey(CTarzanError):
    """A relay received a cell whose outer layer it cannot remove."""


class UnknownPreset(CTarzanError, KeyError):
    pass


class NonIntegralK(CTarzanError, ValueError):
    pass


class EquivalenceViolation(CTarzanError):
    """Paired cover traffic or latency differ by more than the allowed error."""


class NonIntegralWarning(UserWarning):
    pass

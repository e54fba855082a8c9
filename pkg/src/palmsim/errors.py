"""Exception hierarchy for palmsim."""


class PalmSimError(Exception):
    """Base class for all palmsim errors."""


class ZeroMassBox(PalmSimError):
    """A conditional draw was requested from a box carrying no mass."""


class EmptyMeasure(PalmSimError):
    """No unit box of the window carries positive mass."""


class OriginNotInSupport(PalmSimError):
    pass


class DegenerateWeight(PalmSimError):
    """A change of measure produced a zero importance weight."""


class NonpositiveDensity(PalmSimError):
    pass


class IncompleteBlocks(PalmSimError):
    """A binary code ran out of digits in the middle of a run."""


class AtomicInput(PalmSimError):
    """A diffuse measure was required but atoms were supplied."""


class InsufficientMass(PalmSimError):
    """A line integral never reaches the requested level."""


class EmptyEnsemble(PalmSimError):
    pass


class DegenerateSample(PalmSimError):
    """A two-sample comparison received a side with no usable weight."""


class ConfigError(PalmSimError):
    """Invalid experiment configuration; ``field`` names the culprit."""

    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        where = []
        if field is not None:
            where.append(f"field '{field}'")
        if line is not None:
            where.append(f"line {line}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)

"""Exception hierarchy shared across modules."""


class SynthgenError(Exception):
    """Base class; the CLI maps these to exit code 2."""


class SchemaError(SynthgenError):
    pass


class DataError(SynthgenError):
    pass


class FitError(SynthgenError):
    """Optimizer divergence, separation, singular information, ..."""


class SamplingError(SynthgenError):
    pass

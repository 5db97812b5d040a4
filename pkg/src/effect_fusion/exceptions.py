"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class EffectFusionError(Exception):
    exit_code = 1


class ConfigError(EffectFusionError, ValueError):
    exit_code = 2


class DataError(EffectFusionError, ValueError):
    exit_code = 3


class ProvenanceError(DataError):
    """Stored draws do not match the covariate specs they claim to come from."""


class NumericalError(EffectFusionError, ArithmeticError):
    exit_code = 4

"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: configuration / argument problems exit
with 2, missing data or assets with 3, numerical failures with 4.
"""


class DeepjsccWzError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(DeepjsccWzError, ValueError):
    """An operation received an argument violating its preconditions."""


class ConfigurationError(DeepjsccWzError, ValueError):
    """A configuration object is internally inconsistent."""


class DegenerateInputError(InvalidArgumentError):
    """Input is numerically degenerate (e.g. all-zero latent before power
    normalization, which would divide by zero)."""


class UnsupportedVariantError(InvalidArgumentError):
    """Operation is not defined for the model variant it was called on."""


class MissingAssetError(DeepjsccWzError):
    """A required external asset (e.g. feature-net weights) was not found."""


class MissingDataError(DeepjsccWzError):
    """Dataset files referenced by a manifest or spec are absent."""


class CheckpointMismatchError(DeepjsccWzError):
    """Checkpoint contents do not match the expected model configuration."""


class NumericalDivergenceError(DeepjsccWzError):
    """Training produced a non-finite loss; carries diagnostic context."""


class RunExistsError(DeepjsccWzError):
    """Refusing to overwrite an existing run directory without --force."""

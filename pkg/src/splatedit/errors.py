"""Exception types shared across the pipeline.

The CLI maps these onto its exit-code partition, so new error types should
subclass one of the categories below rather than raising bare exceptions.
"""


class SplatEditError(Exception):
    """Base class for all library errors."""


class InputError(SplatEditError):
    """Bad user input: malformed files, invalid config, contract violations."""


class FormatError(InputError):
    """A file does not match its expected layout (e.g. PLY missing a field)."""


class DataError(InputError):
    """Structurally valid input carrying invalid values (NaN, bad ranges)."""


class LocalizationFailedError(SplatEditError):
    """No view produced a non-empty edit mask for the prompt."""


class InitializationFailedError(SplatEditError):
    """Every masked pixel was skipped; no new Gaussians could be created."""


class DegenerateScaleError(SplatEditError):
    """Monocular disparity has zero spread; the affine fit is underdetermined."""


class DegenerateTargetError(SplatEditError):
    """Rendered disparity has zero spread; the affine fit is underdetermined."""


class OracleError(SplatEditError):
    """A learned-prior oracle (mock or bridge) failed to serve a request."""


class OracleTimeoutError(OracleError):
    """The bridge did not answer within the configured timeout."""


class OracleProtocolError(OracleError):
    """The bridge answered with something that is not a valid response."""


class BridgeExitError(OracleError):
    """The bridge process terminated with a nonzero status."""


class NumericAbortError(SplatEditError):
    """Optimization produced a non-finite loss and was aborted."""

    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message)
        self.iteration = iteration


class StageError(SplatEditError):
    """Wraps a failure with the pipeline stage (and view, if any) it came from."""

    def __init__(self, stage: str, message: str, view_index: int | None = None):
        detail = f"[{stage}] {message}"
        if view_index is not None:
            detail += f" (view {view_index})"
        super().__init__(detail)
        self.stage = stage
        self.view_index = view_index

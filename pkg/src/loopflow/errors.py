"""Exception hierarchy for the loop-flow engine.

Error identifiers (the ``code`` attribute) are stable strings used in
machine-readable output records.
"""


class LoopflowError(Exception):
    """Base class; carries a stable string code."""

    code = "loopflow-error"

    def __init__(self, message="", **context):
        super().__init__(message or self.code)
        self.context = context


class FarFromManifoldError(LoopflowError):
    code = "far-from-manifold"


class BeyondInjectivityRadiusError(LoopflowError):
    code = "beyond-injectivity-radius"


class GridMismatchError(LoopflowError):
    code = "grid-mismatch"


class FrameConstructionError(LoopflowError):
    code = "frame-construction-failed"


class NoConvergenceError(LoopflowError):
    code = "no-convergence"


class DegenerateHessianError(LoopflowError):
    code = "degenerate-hessian"


class RegularValueError(LoopflowError):
    code = "a-is-critical"


class EndpointDegenerateError(LoopflowError):
    code = "endpoint-degenerate"


class TrackingAmbiguousError(LoopflowError):
    code = "tracking-ambiguous"


class DegenerateCriticalPointError(LoopflowError):
    code = "degenerate"


class ProjectionFailedError(LoopflowError):
    code = "projection-failed"


class AmbiguousCaptureError(LoopflowError):
    code = "ambiguous-capture"


class InsufficientTailError(LoopflowError):
    code = "insufficient-tail"


class IndexZeroChartError(LoopflowError):
    code = "index-zero"


class NonTransverseError(LoopflowError):
    code = "non-transverse-suspect"


class FrameCollapseError(LoopflowError):
    code = "frame-collapse"


class ResidualTooLargeError(LoopflowError):
    code = "residual-too-large"


class StalledError(LoopflowError):
    code = "stalled"


class DanglingOrbitError(LoopflowError):
    code = "dangling-orbit"


class NotAComplexError(LoopflowError):
    code = "not-a-complex"


class ConfigError(LoopflowError):
    code = "config-error"

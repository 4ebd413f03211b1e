"""Exception hierarchy.

Every failure mode carries a stable ``code`` string so callers (and the CLI)
can branch on it without matching message text.
"""


class MVDepthError(Exception):
    code = "ERROR"


class RadiusInsideScene(MVDepthError, ValueError):
    code = "RADIUS_INSIDE_SCENE"


class BehindCamera(MVDepthError, ValueError):
    code = "BEHIND_CAMERA"


class ResolutionTooSmall(MVDepthError, ValueError):
    code = "RESOLUTION_TOO_SMALL"


class ImageTooSmall(MVDepthError, ValueError):
    code = "IMAGE_TOO_SMALL"


class ViewCountMismatch(MVDepthError, ValueError):
    code = "VIEW_COUNT_MISMATCH"


class ResolutionMismatch(MVDepthError, ValueError):
    code = "RESOLUTION_MISMATCH"


class InvalidRange(MVDepthError, ValueError):
    code = "INVALID_RANGE"


class StepOutOfRange(MVDepthError, IndexError):
    code = "STEP_OUT_OF_RANGE"


class StepsExceedT(MVDepthError, ValueError):
    code = "STEPS_EXCEED_T"


class ViewMisalignment(MVDepthError, ValueError):
    code = "VIEW_MISALIGNMENT"


class OracleContextMissing(MVDepthError, ValueError):
    code = "ORACLE_CONTEXT_MISSING"


class DegenerateFit(MVDepthError, ValueError):
    code = "DEGENERATE_FIT"


class EmptyDataset(MVDepthError, ValueError):
    code = "EMPTY_DATASET"


class ConfigMismatch(MVDepthError, ValueError):
    code = "CONFIG_MISMATCH"


class EmptyInput(MVDepthError, ValueError):
    code = "EMPTY_INPUT"

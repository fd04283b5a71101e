from typing import Any, Dict, Optional


class AlphaScalingError(Exception):
    """Base error; `module` names the component that raised it."""

    exit_key = "config"

    def __init__(self, message: str, module: str = "core", **extra: Any):
        super().__init__(message)
        self.message = message
        self.module = module
        self.extra = extra

    def to_dict(self) -> Dict[str, Any]:
        payload: Dict[str, Any] = {
            "error": type(self).__name__,
            "module": self.module,
            "message": self.message,
        }
        payload.update(self.extra)
        return payload


class ConfigError(AlphaScalingError):
    """Invalid configuration, schema violation or unusable input."""


class PositivityError(ConfigError):
    """Estimated propensity of the requested arm is zero for some subject."""


class GridResolutionError(ConfigError):
    """Backward recursion grid too coarse for the requested accuracy."""


class InfeasibleTargetError(AlphaScalingError):
    exit_key = "infeasible"

    def __init__(self, message: str, module: str = "calibration", limit: Optional[float] = None,
                 level: Optional[float] = None, **extra: Any):
        super().__init__(message, module, limit=limit, level=level, **extra)
        self.limit = limit
        self.level = level


class NonConvergenceError(AlphaScalingError):
    exit_key = "nonconvergence"

    def __init__(self, message: str, module: str = "core", detail: Optional[float] = None, **extra: Any):
        super().__init__(message, module, detail=detail, **extra)
        self.detail = detail

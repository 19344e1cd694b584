from ._core import (
    EpsMode,
    ForwardMode,
    NoiseSchedule,
    RespacedSchedule,
    ReverseMode,
    SamplerConfig,
    StepError,
    ValidationError,
    ZeconError,
    analytic_eps,
    infonce,
    linear_schedule,
    preset_names,
    respace,
    run,
    sample,
    tensor_digest,
    validate_config,
)

__all__ = [
    "EpsMode",
    "ForwardMode",
    "NoiseSchedule",
    "RespacedSchedule",
    "ReverseMode",
    "SamplerConfig",
    "StepError",
    "ValidationError",
    "ZeconError",
    "analytic_eps",
    "infonce",
    "linear_schedule",
    "preset_names",
    "respace",
    "run",
    "sample",
    "tensor_digest",
    "validate_config",
]

"""Resolution-specialized conv2d: reference kernel, schedulable kernel,
measured black-box schedule search, and throughput-vs-resolution reports."""

from .engine import conv_reference, conv_scheduled, seeded_operands
from .schedule import (
    DEFAULT_SCHEDULE,
    LOOP_ORDERS,
    ConvSchedule,
    ConvShape,
    is_valid,
    sample_schedules,
    validate_schedule,
)
from .tuner import (
    ScalingReport,
    TuneResult,
    conv_stack,
    measure,
    resolution_scaling_report,
    tune,
)

__all__ = [
    "conv_reference",
    "conv_scheduled",
    "seeded_operands",
    "ConvSchedule",
    "ConvShape",
    "DEFAULT_SCHEDULE",
    "LOOP_ORDERS",
    "is_valid",
    "sample_schedules",
    "validate_schedule",
    "measure",
    "tune",
    "conv_stack",
    "TuneResult",
    "ScalingReport",
    "resolution_scaling_report",
]

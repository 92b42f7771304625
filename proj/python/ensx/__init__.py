"""Python front end of the ensx core."""

from ._core import (
    EnsxError,
    Sessions,
    auto_select,
    binary_auc,
    build_library,
    default_grid,
    f_measure,
    q_statistic,
)

__all__ = [
    "EnsxError",
    "Sessions",
    "auto_select",
    "binary_auc",
    "build_library",
    "default_grid",
    "f_measure",
    "q_statistic",
]

"""Segmentation and morphometry of wood fibers and vessels.

Masks are 2-D arrays (nonzero = foreground), images H x W x 3 uint8 RGB.
Lengths and widths are reported in pixels and micrometers.
"""

from ._core import (
    Analysis,
    Detection,
    Detector,
    DimensionMismatchError,
    EmptyGeometryError,
    InvalidArgument,
    IoError,
    ModelContractError,
    OnnxDetector,
    ParseError,
    SessionError,
    StatisticsError,
    ThresholdDetector,
    TTestResult,
    TTestVariant,
    analyze,
    analyze_file,
    box_iou,
    contour,
    distance_transform,
    evaluate,
    group_report,
    incomplete_beta,
    letterbox,
    mask_iou,
    measure_mask,
    plan_tiles,
    quantile,
    rasterize,
    read_csv_column,
    read_image,
    render_overlay,
    student_t_two_sided,
    t_test,
)

__version__ = "0.1.0"

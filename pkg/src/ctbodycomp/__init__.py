"""Deterministic CT body-composition analytics.

DICOM ingestion, axial series and L3 slice selection, HU preprocessing,
ensemble probability-map fusion into skeletal-muscle masks, SMA/SMI
computation, uncertainty quantification with threshold flagging, and the
downstream survival / cachexia / recurrence statistics.
"""

from .catalog import SeriesCatalog, SeriesGroup, build_catalog, choose_series, classify_orientation
from .dicom import CtSlice, SliceHeader, parse_dicom_file, serialize_dicom
from .errors import CtBodyCompError
from .fusion import (
    MuscleMask,
    ProbabilityStack,
    SegmentationReport,
    average_window_sma,
    fuse_mean_threshold,
    fuse_two_level,
    mask_metrics,
    metrics_from_counts,
    sma_from_mask,
    smi,
)
from .nifti import LabelVolume, parse_nifti_labels, serialize_nifti_labels
from .phantom import PhantomSpec, generate_prob_maps, generate_study, write_study
from .pipeline import ManifestRow, RunConfig, emit_longitudinal, run_pipeline
from .predictor import MlpModel, MlpSpec, evaluate, mlp_forward, mlp_train, smote
from .preprocess import NormalizedSlice, WindowedSlice, export_png, normalize, window_hu
from .stats import (
    CovariateRow,
    CoxModel,
    bmi,
    classify_cachexia_two_stage,
    concordance_index,
    corr_significance,
    fit_coxph,
    pearson_r,
)
from .uncertainty import (
    CalibrationModel,
    UncertaintyReport,
    apply_platt,
    binary_entropy,
    compute_report,
    fit_platt,
)
from .vertebra import L3Range, averaging_window, l3_slice_range, mid_slice_index, select_l3

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]

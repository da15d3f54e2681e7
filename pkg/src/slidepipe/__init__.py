"""slidepipe: on-the-fly tissue patch streaming from pyramidal whole-slide
TIFFs — tissue masking, seeded uniform sampling, runtime augmentation, and
a bounded prefetch pipeline, with a pre-chop benchmark baseline."""

from .augment import (
    AugmentConfig,
    AugmentDraw,
    apply_augmentation,
    color_shift,
    dihedral,
    draw_augmentation,
    identity_config,
    piecewise_affine,
)
from .bench import BenchReport, ChopReport, run_bench, run_chop
from .config import (
    CONFIG_KEYS,
    config_from_mapping,
    config_to_mapping,
    parse_config_file,
    write_config_file,
)
from .errors import (
    DecodeFailure,
    DegenerateHistogram,
    EndOfStream,
    FoldedGrid,
    InvalidCode,
    InvalidPyramid,
    IoFailure,
    MalformedHeader,
    NoSlides,
    NotAPng,
    NoTissue,
    OutOfBounds,
    SlidepipeError,
    TruncatedFile,
    UnsupportedTag,
    WorkerFailure,
    WrongBitDepth,
)
from .mask import (
    OtsuStats,
    TissueMask,
    build_mask,
    decode_mask_png,
    encode_mask_png,
    grayscale,
    otsu_threshold,
)
from .kernels import binary_erode, box_blur
from .pipeline import (
    Batch,
    PatchStream,
    PipelineConfig,
    PipelineStats,
    batch_checksum,
    discover_slides,
    load_or_build_mask,
    start,
)
from .sampler import (
    MultiSlideSampler,
    PatchSpec,
    TissueIndex,
    best_level,
    build_index,
    extract_patch,
    grid_coordinates,
    sample_coordinate,
    worker_rng,
)
from .synth import synth_slide
from .tiff import (
    Compression,
    LevelInfo,
    Patch,
    PixelRegion,
    SlidePyramid,
    open_slide,
    write_pyramid,
)

__version__ = "0.1.0"

"""Flat key=value pipeline configuration.

The same keys work in config files, as CLI flag overrides, and as the
mapping accepted by the binding layer.  Unknown keys are rejected so a
typo never silently falls back to a default.
"""

from pathlib import Path

from .augment import AugmentConfig
from .pipeline import PipelineConfig
from .sampler import PatchSpec

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _to_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in _TRUE:
        return True
    if text in _FALSE:
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _to_jitter(value):
    if value is None or str(value).strip().lower() in ("auto", "none", ""):
        return None
    return float(value)


#: documented config keys -> value parser
CONFIG_KEYS = {
    "slide_dir": str,
    "mask_dir": str,
    "patch_size_px": int,
    "downsample": float,
    "seed": int,
    "batch_size": int,
    "workers": int,
    "prefetch_depth": int,
    "total_steps": int,
    "ordered": _to_bool,
    "slide_weighting": str,
    "patch_anchor": str,
    "dihedral_enabled": _to_bool,
    "color_gain_range": float,
    "color_bias_range": int,
    "warp_grid": int,
    "warp_jitter_px": _to_jitter,
    "blur_radius": int,
    "erode_iters": int,
}


def parse_config_file(path) -> dict:
    """Read ``key = value`` lines; ``#`` starts a comment."""
    mapping = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        mapping[key.strip()] = value.strip()
    return mapping


def config_from_mapping(mapping) -> PipelineConfig:
    """Build a :class:`PipelineConfig` from string or typed values."""
    parsed = {}
    for key, value in mapping.items():
        if key not in CONFIG_KEYS:
            raise ValueError(f"unknown config key {key!r}")
        if value is None and key != "warp_jitter_px":
            continue
        parsed[key] = CONFIG_KEYS[key](value)
    if "slide_dir" not in parsed:
        raise ValueError("config requires slide_dir")

    spec = PatchSpec(
        patch_size_px=parsed.get("patch_size_px", 256),
        downsample=parsed.get("downsample", 1.0),
        seed=parsed.get("seed", 0),
    )
    augment = AugmentConfig(
        dihedral_enabled=parsed.get("dihedral_enabled", True),
        color_gain_range=parsed.get("color_gain_range", 0.05),
        color_bias_range=parsed.get("color_bias_range", 10),
        warp_grid=parsed.get("warp_grid", 4),
        warp_jitter_px=parsed.get("warp_jitter_px"),
    )
    kwargs = {}
    for key in ("batch_size", "workers", "prefetch_depth", "total_steps",
                "ordered", "slide_weighting", "patch_anchor", "blur_radius",
                "erode_iters"):
        if key in parsed:
            kwargs[key] = parsed[key]
    if "mask_dir" in parsed:
        kwargs["mask_dir"] = Path(parsed["mask_dir"])
    return PipelineConfig(slide_dir=Path(parsed["slide_dir"]), spec=spec,
                          augment=augment, **kwargs)


def config_to_mapping(config: PipelineConfig) -> dict[str, str]:
    """Round-trippable flat representation of a config."""
    jitter = config.augment.warp_jitter_px
    mapping = {
        "slide_dir": str(config.slide_dir),
        "patch_size_px": str(config.spec.patch_size_px),
        "downsample": repr(config.spec.downsample),
        "seed": str(config.spec.seed),
        "batch_size": str(config.batch_size),
        "workers": str(config.workers),
        "prefetch_depth": str(config.prefetch_depth),
        "total_steps": str(config.total_steps),
        "ordered": "true" if config.ordered else "false",
        "slide_weighting": config.slide_weighting,
        "patch_anchor": config.patch_anchor,
        "dihedral_enabled": "true" if config.augment.dihedral_enabled else "false",
        "color_gain_range": repr(config.augment.color_gain_range),
        "color_bias_range": str(config.augment.color_bias_range),
        "warp_grid": str(config.augment.warp_grid),
        "warp_jitter_px": "auto" if jitter is None else repr(jitter),
        "blur_radius": str(config.blur_radius),
        "erode_iters": str(config.erode_iters),
    }
    if config.mask_dir is not None:
        mapping["mask_dir"] = str(config.mask_dir)
    return mapping


def write_config_file(config: PipelineConfig, path) -> None:
    lines = [f"{key} = {value}" for key, value in
             config_to_mapping(config).items()]
    Path(path).write_text("\n".join(lines) + "\n")

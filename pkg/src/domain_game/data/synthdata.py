"""Deterministic synthetic multi-domain segmentation benchmark.

Anatomies are 2.5-D stacks of nested smooth blobs; domains are intensity
renderings of those anatomies. Every sample draws from its own generator seeded
by ``(seed, domain index, sample index)`` so serial and parallel generation are
bit-identical.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy import ndimage
from tenacity import retry, retry_if_exception_type, stop_after_attempt, wait_exponential

from domain_game.common.exceptions import (
    AnatomyGenerationError,
    InvalidBenchmarkConfiguration,
    MissingSampleError,
)
from domain_game.utils.logging_config import setup_logging

# Set up logging configuration
setup_logging()

# Create a logger
logger = logging.getLogger(__name__)

MIN_SOURCE_SAMPLES = 10
SPLIT_FRACTIONS = {"train": 0.7, "val": 0.1, "test": 0.2}
MANIFEST_FILENAME = "manifest.yaml"
DEFAULT_TISSUE_INTENSITIES: Dict[int, float] = {0: 0.15, 1: 0.55, 2: 0.85}


class DomainStyle(BaseModel):
    """Parameters of the intensity rendering that defines one domain."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    domain_id: str
    gamma: float = Field(1.0, gt=0)
    contrast: float = Field(1.0, gt=0)
    brightness_bias: float = 0.0
    bias_field_amplitude: float = Field(0.0, ge=0, lt=1)
    noise_sigma: float = Field(0.0, ge=0)
    tissue_intensities: Dict[int, float] = Field(default_factory=lambda: dict(DEFAULT_TISSUE_INTENSITIES))
    #: scales the lesion blobs of fresh anatomies drawn for this domain
    lesion_scale: float = Field(1.0, gt=0)
    #: classes scored for this domain; None scores every foreground class
    evaluated_classes: Optional[List[int]] = None

    @field_validator("tissue_intensities")
    @classmethod
    def _intensities_in_unit_range(cls, value: Dict[int, float]) -> Dict[int, float]:
        for class_id, intensity in value.items():
            if not 0.0 <= intensity <= 1.0:
                raise ValueError(f"tissue intensity of class {class_id} must lie in [0, 1], got {intensity}")
        return value

    @property
    def is_identity(self) -> bool:
        return (
            self.gamma == 1.0
            and self.contrast == 1.0
            and self.brightness_bias == 0.0
            and self.bias_field_amplitude == 0.0
            and self.noise_sigma == 0.0
        )


STYLE_PRESETS: Dict[str, DomainStyle] = {
    "source": DomainStyle(domain_id="source", gamma=1.0, contrast=1.1, noise_sigma=0.02, bias_field_amplitude=0.05),
    # low-field scanner: heavy noise and a strong bias field
    "lowfield": DomainStyle(
        domain_id="lowfield", gamma=1.2, contrast=0.8, noise_sigma=0.08, bias_field_amplitude=0.35
    ),
    "bright": DomainStyle(domain_id="bright", gamma=0.7, contrast=1.0, brightness_bias=0.15, noise_sigma=0.03),
    "lowcontrast": DomainStyle(
        domain_id="lowcontrast", gamma=1.0, contrast=0.45, brightness_bias=-0.05, noise_sigma=0.03
    ),
    # population shift: smaller lesions, only the innermost class is scored
    "pediatric": DomainStyle(
        domain_id="pediatric",
        gamma=1.1,
        contrast=0.9,
        noise_sigma=0.03,
        bias_field_amplitude=0.1,
        lesion_scale=0.75,
        evaluated_classes=[2],
    ),
}


def get_style(name_or_style) -> DomainStyle:
    if isinstance(name_or_style, DomainStyle):
        return name_or_style
    if isinstance(name_or_style, dict):
        return DomainStyle(**name_or_style)
    try:
        return STYLE_PRESETS[name_or_style]
    except KeyError:
        raise InvalidBenchmarkConfiguration(
            title="Unknown style preset",
            detail=f"style '{name_or_style}' is not one of {sorted(STYLE_PRESETS)}",
        )


@dataclass
class AnatomySample:
    volume: np.ndarray  # [D, H, W] float in [0, 1]
    labels: np.ndarray  # [D, H, W] int
    sample_id: str


@dataclass
class WindowSample:
    window: np.ndarray  # [3, H, W]
    center_label: np.ndarray  # [H, W]
    source_sample: str
    center_index: int


def _blob_field(
    rng: np.random.Generator,
    grid: Tuple[np.ndarray, np.ndarray, np.ndarray],
    center_box: Tuple[Tuple[float, float], ...],
    sigma_range: Tuple[float, float],
    n_bumps: int,
) -> np.ndarray:
    """Sum of anisotropic Gaussian bumps on a normalised ``[0, 1]^3`` grid."""
    zz, yy, xx = grid
    field = np.zeros_like(zz)
    for _ in range(n_bumps):
        center = [rng.uniform(lo, hi) for lo, hi in center_box]
        sigma_yx = rng.uniform(*sigma_range, size=2)
        sigma_z = rng.uniform(0.35, 0.7)
        exponent = (
            ((zz - center[0]) / sigma_z) ** 2
            + ((yy - center[1]) / sigma_yx[0]) ** 2
            + ((xx - center[2]) / sigma_yx[1]) ** 2
        )
        field += np.exp(-0.5 * exponent)
    return field


def _erode_slices(mask: np.ndarray) -> np.ndarray:
    """In-plane erosion with the full 3x3 neighbourhood, slice by slice."""
    structure = np.zeros((3, 3, 3), dtype=bool)
    structure[1] = True
    return ndimage.binary_erosion(mask, structure=structure, border_value=0)


def generate_anatomy(
    rng: np.random.Generator,
    depth: int,
    height: int,
    width: int,
    num_classes: int,
    sample_id: str = "sample",
    lesion_scale: float = 1.0,
    tissue_intensities: Optional[Dict[int, float]] = None,
    max_retries: int = 25,
) -> AnatomySample:
    """Draw nested smooth blobs; class ``k+1`` lies inside the eroded class-``k`` region.

    Raises:
        InvalidBenchmarkConfiguration: for an invalid geometry request.
        AnatomyGenerationError: when no valid anatomy is found within ``max_retries``.
    """
    if height != width:
        raise InvalidBenchmarkConfiguration(title="Non-square canvas", detail=f"got {height}x{width}")
    if num_classes < 2 or depth < 3:
        raise InvalidBenchmarkConfiguration(
            title="Invalid anatomy geometry",
            detail=f"need num_classes >= 2 and depth >= 3, got {num_classes} and {depth}",
        )
    intensities = tissue_intensities or DEFAULT_TISSUE_INTENSITIES
    missing = [k for k in range(num_classes) if k not in intensities]
    if missing:
        raise InvalidBenchmarkConfiguration(title="Missing tissue intensities", detail=f"classes {missing}")

    grid = np.meshgrid(
        (np.arange(depth) + 0.5) / depth,
        (np.arange(height) + 0.5) / height,
        (np.arange(width) + 0.5) / width,
        indexing="ij",
    )
    for attempt in range(max_retries):
        labels = np.zeros((depth, height, width), dtype=np.int64)
        region = np.ones_like(labels, dtype=bool)
        box = ((0.3, 0.7), (0.3, 0.7), (0.3, 0.7))
        sigma_range = (0.09 * lesion_scale, 0.17 * lesion_scale)
        valid = True
        for class_id in range(1, num_classes):
            field = _blob_field(rng, grid, box, sigma_range, n_bumps=int(rng.integers(1, 4)))
            candidate = field > 0.5
            if class_id > 1:
                candidate &= _erode_slices(region)
            else:
                candidate &= region
            if not candidate.any():
                valid = False
                break
            labels[candidate] = class_id
            region = candidate
            # inner classes shrink toward the parent blob
            zc, yc, xc = [g[candidate].mean() for g in grid]
            box = tuple((c - 0.05, c + 0.05) for c in (zc, yc, xc))
            sigma_range = (sigma_range[0] * 0.6, sigma_range[1] * 0.6)
        if valid:
            lookup = np.array([intensities[k] for k in range(num_classes)], dtype=np.float64)
            volume = lookup[labels]
            return AnatomySample(volume=volume, labels=labels, sample_id=sample_id)
        logger.debug(f"anatomy {sample_id}: attempt {attempt + 1} produced an empty class, resampling")
    raise AnatomyGenerationError(
        title="Anatomy generation failed",
        detail=f"{sample_id}: no valid anatomy after {max_retries} attempts",
    )


def bias_field(rng: np.random.Generator, shape: Tuple[int, ...], amplitude: float) -> np.ndarray:
    """Smooth multiplicative field with values in ``[1 - amplitude, 1 + amplitude]``."""
    if amplitude == 0.0:
        return np.ones(shape)
    noise = rng.standard_normal(shape)
    smooth = ndimage.gaussian_filter(noise, sigma=(shape[0] / 2.0, shape[1] / 3.0, shape[2] / 3.0), mode="wrap")
    smooth -= smooth.mean()
    scale = np.abs(smooth).max()
    if scale > 0:
        smooth /= scale
    return 1.0 + amplitude * smooth


def render_domain(anatomy: AnatomySample, style: DomainStyle, rng: np.random.Generator, clip: bool = True) -> np.ndarray:
    """Render an anatomy's labels with a domain style.

    ``clamp(((I[label] * b)^gamma - 0.5) * contrast + 0.5 + bias + noise)``; the
    identity style returns the tissue template bit-exactly.
    """
    labels = anatomy.labels
    missing = sorted(set(np.unique(labels).tolist()) - set(style.tissue_intensities))
    if missing:
        raise InvalidBenchmarkConfiguration(
            title="Style lacks tissue intensities",
            detail=f"style '{style.domain_id}' has no intensity for classes {missing}",
        )
    lookup = np.zeros(int(labels.max()) + 1)
    for class_id, intensity in style.tissue_intensities.items():
        if class_id < lookup.size:
            lookup[class_id] = intensity
    if style.is_identity:
        return lookup[labels]
    image = lookup[labels] * bias_field(rng, labels.shape, style.bias_field_amplitude)
    if style.gamma != 1.0:
        image = np.maximum(image, 0.0) ** style.gamma
    if style.contrast != 1.0:
        image = (image - 0.5) * style.contrast + 0.5
    image = image + style.brightness_bias
    if style.noise_sigma > 0:
        image = image + rng.normal(0.0, style.noise_sigma, size=labels.shape)
    return np.clip(image, 0.0, 1.0) if clip else image


def sliding_windows(volume: np.ndarray, labels: np.ndarray, sample_id: str = "") -> List[WindowSample]:
    """One 3-slice window per slice, replicating the edge slices."""
    depth = volume.shape[0]
    windows = []
    for d in range(depth):
        indices = [max(d - 1, 0), d, min(d + 1, depth - 1)]
        windows.append(
            WindowSample(
                window=volume[indices].astype(np.float32),
                center_label=labels[d].astype(np.int64),
                source_sample=sample_id,
                center_index=d,
            )
        )
    return windows


class BenchmarkConfig(BaseModel):
    """Size, domains and seed of a synthetic benchmark."""

    model_config = ConfigDict(extra="forbid")

    depth: int = Field(8, ge=3)
    image_size: int = Field(32, ge=8)
    num_classes: int = Field(2, ge=2)
    n_source_samples: int = 20
    n_target_samples: int = 8
    source_style: str = "source"
    target_styles: List[str] = Field(default_factory=lambda: ["lowfield", "bright", "lowcontrast"])
    custom_styles: Dict[str, DomainStyle] = Field(default_factory=dict)
    #: render targets from the source test anatomies instead of fresh ones
    paired_targets: bool = False
    seed: int = 0
    workers: int = 1

    @model_validator(mode="after")
    def _check_domains(self):
        if not self.target_styles:
            raise ValueError("at least one target domain is required")
        return self

    def resolve_style(self, name: str) -> DomainStyle:
        if name in self.custom_styles:
            return self.custom_styles[name]
        return get_style(name)


class BenchmarkManifest(BaseModel):
    """Domains, per-domain splits and the seed of a materialised benchmark."""

    model_config = ConfigDict(extra="forbid")

    source_domain: DomainStyle
    target_domains: List[DomainStyle]
    splits: Dict[str, Dict[str, List[str]]]
    seed: int
    num_classes: int
    depth: int
    image_size: int
    #: target test volume i restyles source test volume i
    paired_targets: bool = False

    @property
    def domains(self) -> List[DomainStyle]:
        return [self.source_domain, *self.target_domains]

    def domain(self, domain_id: str) -> DomainStyle:
        for style in self.domains:
            if style.domain_id == domain_id:
                return style
        raise KeyError(domain_id)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.model_dump(mode="json"), sort_keys=True, default_flow_style=False)

    @classmethod
    def from_yaml(cls, text: str) -> "BenchmarkManifest":
        return cls(**yaml.safe_load(text))


def split_counts(n: int) -> Dict[str, int]:
    """70/10/20 split by sample.

    Raises:
        InvalidBenchmarkConfiguration: below the minimum sample count.
    """
    if n < MIN_SOURCE_SAMPLES:
        raise InvalidBenchmarkConfiguration(
            title="Too few source samples",
            detail=f"a 70/10/20 split needs at least {MIN_SOURCE_SAMPLES} source samples, got {n}",
        )
    n_val = max(1, round(n * SPLIT_FRACTIONS["val"]))
    n_test = max(1, round(n * SPLIT_FRACTIONS["test"]))
    return {"train": n - n_val - n_test, "val": n_val, "test": n_test}


ANATOMY_STREAM = 0
RENDER_STREAM = 1


def sample_generator(seed: int, domain_index: int, sample_index: int, stream: int = ANATOMY_STREAM) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, domain_index, sample_index, stream]))


def _materialize(job: Tuple[BenchmarkConfig, int, int, str, str, Optional[int]]) -> Tuple[AnatomySample, np.ndarray]:
    """Generate (or regenerate) one anatomy and render it; runs in worker processes."""
    config, domain_index, sample_index, sample_id, style_name, anatomy_source = job
    style = config.resolve_style(style_name)
    anatomy_index = domain_index if anatomy_source is None else 0
    anatomy_sample = sample_index if anatomy_source is None else anatomy_source
    lesion_scale = style.lesion_scale if anatomy_source is None else config.resolve_style(config.source_style).lesion_scale
    anatomy = generate_anatomy(
        sample_generator(config.seed, anatomy_index, anatomy_sample),
        config.depth,
        config.image_size,
        config.image_size,
        config.num_classes,
        sample_id=sample_id,
        lesion_scale=lesion_scale,
        tissue_intensities=style.tissue_intensities,
    )
    # rendering noise is always keyed by the rendering domain
    image = render_domain(anatomy, style, sample_generator(config.seed, domain_index, sample_index, RENDER_STREAM))
    return anatomy, image


def make_benchmark(
    config: BenchmarkConfig, rng: Optional[np.random.Generator] = None
) -> Tuple[BenchmarkManifest, Dict[str, Tuple[AnatomySample, np.ndarray]]]:
    """Generate all domains and the source split.

    Args:
        config: benchmark configuration.
        rng: generator for the split permutation; defaults to one seeded by ``config.seed``.

    Returns:
        the manifest and a mapping from sample id to ``(anatomy, rendered image)``.
    """
    counts = split_counts(config.n_source_samples)
    rng = rng or np.random.default_rng(config.seed)
    source = config.resolve_style(config.source_style)
    targets = [config.resolve_style(name) for name in config.target_styles]
    if len({s.domain_id for s in [source, *targets]}) != len(targets) + 1:
        raise InvalidBenchmarkConfiguration(title="Duplicate domain ids", detail="every domain needs a unique id")
    for style in [source, *targets]:
        unknown = [c for c in style.evaluated_classes or [] if not 1 <= c < config.num_classes]
        if unknown:
            raise InvalidBenchmarkConfiguration(
                title="Evaluated classes out of range",
                detail=f"domain '{style.domain_id}' scores classes {unknown}, foreground classes are 1..{config.num_classes - 1}",
            )

    source_ids = [f"{source.domain_id}-{i:04d}" for i in range(config.n_source_samples)]
    order = rng.permutation(config.n_source_samples)
    train_end = counts["train"]
    val_end = train_end + counts["val"]
    splits = {
        source.domain_id: {
            "train": sorted(source_ids[i] for i in order[:train_end]),
            "val": sorted(source_ids[i] for i in order[train_end:val_end]),
            "test": sorted(source_ids[i] for i in order[val_end:]),
        }
    }
    jobs = [(config, 0, i, sid, config.source_style, None) for i, sid in enumerate(source_ids)]
    test_indices = sorted(source_ids.index(sid) for sid in splits[source.domain_id]["test"])
    for domain_index, (name, style) in enumerate(zip(config.target_styles, targets), start=1):
        if config.paired_targets:
            anatomy_sources = test_indices
        else:
            anatomy_sources = [None] * config.n_target_samples
        ids = [f"{style.domain_id}-{i:04d}" for i in range(len(anatomy_sources))]
        splits[style.domain_id] = {"train": [], "val": [], "test": ids}
        jobs.extend(
            (config, domain_index, i, sid, name, src) for i, (sid, src) in enumerate(zip(ids, anatomy_sources))
        )

    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as executor:
            results = list(executor.map(_materialize, jobs))
    else:
        results = [_materialize(job) for job in jobs]
    samples = {job[3]: result for job, result in zip(jobs, results)}
    for style in [source, *targets]:
        logger.info(f"generated domain '{style.domain_id}': {sum(len(v) for v in splits[style.domain_id].values())} samples")

    manifest = BenchmarkManifest(
        source_domain=source,
        target_domains=targets,
        splits=splits,
        seed=config.seed,
        num_classes=config.num_classes,
        depth=config.depth,
        image_size=config.image_size,
        paired_targets=config.paired_targets,
    )
    return manifest, samples


@retry(
    retry=retry_if_exception_type(OSError),
    stop=stop_after_attempt(3),
    wait=wait_exponential(multiplier=0.1, min=0.1, max=1),
    reraise=True,
)
def _save_sample(path: str, anatomy: AnatomySample, image: np.ndarray, domain_id: str) -> None:
    with open(path, "wb") as handle:
        np.savez(
            handle,
            volume=image.astype(np.float32),
            labels=anatomy.labels.astype(np.int16),
            template=anatomy.volume.astype(np.float32),
            sample_id=np.array(anatomy.sample_id),
            domain_id=np.array(domain_id),
        )


def write_benchmark(
    out_dir: str, manifest: BenchmarkManifest, samples: Dict[str, Tuple[AnatomySample, np.ndarray]]
) -> str:
    """Write one ``.npz`` per volume plus ``manifest.yaml``; returns the manifest path."""
    os.makedirs(os.path.join(out_dir, "samples"), exist_ok=True)
    for domain_id, split in manifest.splits.items():
        for sample_id in [sid for ids in split.values() for sid in ids]:
            anatomy, image = samples[sample_id]
            _save_sample(os.path.join(out_dir, "samples", f"{sample_id}.npz"), anatomy, image, domain_id)
    manifest_path = os.path.join(out_dir, MANIFEST_FILENAME)
    with open(manifest_path, "w") as handle:
        handle.write(manifest.to_yaml())
    logger.info(f"benchmark written to {out_dir}")
    return manifest_path


def load_manifest(data_dir: str) -> BenchmarkManifest:
    path = os.path.join(data_dir, MANIFEST_FILENAME)
    if not os.path.exists(path):
        raise FileNotFoundError(f"benchmark manifest not found: {path}")
    with open(path) as handle:
        return BenchmarkManifest.from_yaml(handle.read())


def load_samples(data_dir: str, sample_ids: Sequence[str]) -> List[Tuple[np.ndarray, np.ndarray, str]]:
    """Load ``(volume, labels, sample_id)`` triples.

    Raises:
        MissingSampleError: naming every sample id without a file.
    """
    paths = {sid: os.path.join(data_dir, "samples", f"{sid}.npz") for sid in sample_ids}
    missing = [sid for sid, path in paths.items() if not os.path.exists(path)]
    if missing:
        raise MissingSampleError(
            title="Missing samples",
            detail=f"{len(missing)} sample(s) not found in {data_dir}: {', '.join(missing)}",
            sample_ids=missing,
        )
    loaded = []
    for sid in sample_ids:
        with np.load(paths[sid]) as archive:
            loaded.append((archive["volume"].astype(np.float32), archive["labels"].astype(np.int64), sid))
    return loaded


def load_windows(data_dir: str, sample_ids: Sequence[str]) -> List[WindowSample]:
    windows = []
    for volume, labels, sid in load_samples(data_dir, sample_ids):
        windows.extend(sliding_windows(volume, labels, sid))
    return windows

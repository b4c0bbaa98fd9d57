"""Context-aware hard-sample augmentation.

Background tiles are split into dirt and grass by HSV thresholds, hard or
labelled patches are jittered (scale, rotation, illumination), dropped onto a
habitat-matched spot and composited with gradient-domain (Poisson) blending.

Images are ``(H, W, 3)`` float arrays in [0, 1]; masks are ``(h, w)`` bool.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from PIL import Image
from scipy import ndimage
from skimage.color import hsv2rgb, rgb2hsv

from . import kernels
from .geometry import BBox, ClassId, Detection, iou

log = logging.getLogger(__name__)

DIRT, GRASS = 0, 1
LABEL_NAMES = {DIRT: "dirt", GRASS: "grass"}


class SourceKind(str, Enum):
    LABELED = "labeled"
    FALSE_POSITIVE = "false_positive"
    FALSE_NEGATIVE = "false_negative"


class AugmentError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, msg, residual):
        super().__init__(f"{msg} (relative residual {residual:.3e})")
        self.residual = residual


def as_rgb(img) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 3 or a.shape[2] != 3 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"expected an H x W x 3 image, got {a.shape}")
    if not np.all(np.isfinite(a)) or a.min() < 0 or a.max() > 1:
        raise ValueError("image values must be finite and in [0, 1]")
    return a


@dataclass
class Patch:
    image: np.ndarray
    mask: np.ndarray
    source_kind: SourceKind = SourceKind.LABELED
    class_id: ClassId = ClassId.PRAIRIE_DOG

    def __post_init__(self):
        self.image = as_rgb(self.image)
        self.mask = np.asarray(self.mask, dtype=bool)
        self.source_kind = SourceKind(self.source_kind)
        self.class_id = ClassId(self.class_id)
        if self.mask.shape != self.image.shape[:2]:
            raise ValueError("mask and image dimensions differ")
        if not self.mask.any():
            raise ValueError("patch mask is empty")

    @property
    def annotated(self) -> bool:
        # confusers are reinserted as hard negatives and stay unlabelled
        return self.source_kind is not SourceKind.FALSE_POSITIVE

    def mask_bbox(self) -> tuple[int, int, int, int]:
        rows = np.flatnonzero(self.mask.any(axis=1))
        cols = np.flatnonzero(self.mask.any(axis=0))
        return int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1


@dataclass(frozen=True)
class AugmentParams:
    scale: float = 1.0
    rotation_deg: float = 0.0
    brightness: float = 1.0
    contrast: float = 1.0
    dirt_fraction: float = 0.90

    def __post_init__(self):
        if not 0.9 <= self.scale <= 1.1:
            raise ValueError("scale must lie in [0.9, 1.1]")
        if not -90.0 <= self.rotation_deg <= 90.0:
            raise ValueError("rotation must lie in [-90, 90] degrees")
        if not (self.brightness > 0 and self.contrast > 0):
            raise ValueError("brightness and contrast must be positive")
        if not 0.0 <= self.dirt_fraction <= 1.0:
            raise ValueError("dirt_fraction must lie in [0, 1]")


@dataclass(frozen=True)
class AugmentConfig:
    """Sampling ranges for :func:`augment_image`."""

    n_patches: tuple[int, int] = (1, 3)
    pool_mix: tuple[float, float, float] = (0.50, 0.25, 0.25)  # labeled, FP, FN
    scale_range: tuple[float, float] = (0.9, 1.1)
    rotation_range: tuple[float, float] = (-90.0, 90.0)
    brightness_range: tuple[float, float] = (0.8, 1.2)
    contrast_range: tuple[float, float] = (0.9, 1.1)
    dirt_fraction: float = 0.90
    max_resample: int = 10
    overlap_iou: float = 0.3
    grass_hue: tuple[float, float] = (60.0, 170.0)
    grass_min_sat: float = 0.15

    def __post_init__(self):
        lo, hi = self.n_patches
        if not 1 <= lo <= hi:
            raise ValueError("n_patches must satisfy 1 <= lo <= hi")
        if min(self.pool_mix) < 0 or sum(self.pool_mix) <= 0:
            raise ValueError("pool_mix must be non-negative with a positive sum")
        if not (0.9 <= self.scale_range[0] <= self.scale_range[1] <= 1.1):
            raise ValueError("scale_range must lie within [0.9, 1.1]")
        if not (-90 <= self.rotation_range[0] <= self.rotation_range[1] <= 90):
            raise ValueError("rotation_range must lie within [-90, 90]")
        if not (0 < self.brightness_range[0] <= self.brightness_range[1]
                and 0 < self.contrast_range[0] <= self.contrast_range[1]):
            raise ValueError("brightness and contrast ranges must be positive and ordered")
        if not 0.0 <= self.dirt_fraction <= 1.0 or not 0.0 <= self.overlap_iou <= 1.0:
            raise ValueError("dirt_fraction and overlap_iou must lie in [0, 1]")
        if self.max_resample < 0:
            raise ValueError("max_resample must be >= 0")
        if not 0.0 <= self.grass_hue[0] <= self.grass_hue[1] <= 360.0:
            raise ValueError("grass_hue must be an ordered pair of degrees in [0, 360]")
        if not 0.0 <= self.grass_min_sat <= 1.0:
            raise ValueError("grass_min_sat must lie in [0, 1]")


def sample_params(rng: np.random.Generator, cfg: AugmentConfig = AugmentConfig()) -> AugmentParams:
    return AugmentParams(
        scale=float(rng.uniform(*cfg.scale_range)),
        rotation_deg=float(rng.uniform(*cfg.rotation_range)),
        brightness=float(rng.uniform(*cfg.brightness_range)),
        contrast=float(rng.uniform(*cfg.contrast_range)),
        dirt_fraction=cfg.dirt_fraction,
    )


# ---------------------------------------------------------------------------
# habitat context

def segment_context(img, hue_lo: float = 60.0, hue_hi: float = 170.0,
                    s_min: float = 0.15) -> np.ndarray:
    """Per-pixel habitat label: GRASS where hue is green enough and saturated, else DIRT."""
    hsv = rgb2hsv(as_rgb(img))
    hue = hsv[..., 0] * 360.0
    grass = (hue >= hue_lo) & (hue <= hue_hi) & (hsv[..., 1] >= s_min)
    return np.where(grass, GRASS, DIRT).astype(np.uint8)


class Placement(NamedTuple):
    x: int
    y: int
    label: int
    fell_back: bool


def sample_placement(context: np.ndarray, patch_hw: Sequence[int], dirt_fraction: float,
                     rng: np.random.Generator, margin: int = 0) -> Placement:
    """Top-left corner for a patch whose centre pixel sits on the drawn habitat.

    ``margin`` keeps the patch that many pixels away from the image border.
    """
    H, W = context.shape
    h, w = int(patch_hw[0]), int(patch_hw[1])
    if h + 2 * margin > H or w + 2 * margin > W:
        raise AugmentError(f"patch {h}x{w} does not fit in {H}x{W}")
    cy0, cx0 = h // 2, w // 2
    # centre pixels reachable by a fully contained patch
    centers = context[cy0 + margin: H - h + cy0 - margin + 1,
                      cx0 + margin: W - w + cx0 - margin + 1]
    want = DIRT if rng.random() < dirt_fraction else GRASS
    ys, xs = np.nonzero(centers == want)
    fell_back = False
    if ys.size == 0:
        other = GRASS if want == DIRT else DIRT
        log.warning("no %s anchors for a %dx%d patch; using %s",
                    LABEL_NAMES[want], h, w, LABEL_NAMES[other])
        want, fell_back = other, True
        ys, xs = np.nonzero(centers == want)
    i = int(rng.integers(ys.size))
    return Placement(int(xs[i]) + margin, int(ys[i]) + margin, want, fell_back)


# ---------------------------------------------------------------------------
# patch jitter

def _rotate(img, mask, angle):
    k, rem = divmod(angle, 90.0)
    if rem == 0.0:
        k = int(k) % 4
        return np.rot90(img, k).copy(), np.rot90(mask, k).copy()
    img = ndimage.rotate(img, angle, axes=(1, 0), reshape=True, order=1, mode="nearest")
    mask = ndimage.rotate(mask.astype(np.uint8), angle, axes=(1, 0), reshape=True,
                          order=0, mode="constant", cval=0).astype(bool)
    return img, mask


def _crop_to_mask(img, mask, pad=1):
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    r0, r1 = max(rows[0] - pad, 0), min(rows[-1] + pad + 1, mask.shape[0])
    c0, c1 = max(cols[0] - pad, 0), min(cols[-1] + pad + 1, mask.shape[1])
    return img[r0:r1, c0:c1], mask[r0:r1, c0:c1]


def adjust_illumination(img, brightness: float, contrast: float) -> np.ndarray:
    """Contrast about mid-grey then gain, both on the HSV value channel."""
    hsv = rgb2hsv(img)
    v = np.clip(contrast * (hsv[..., 2] - 0.5) + 0.5, 0.0, 1.0) * brightness
    hsv[..., 2] = np.clip(v, 0.0, 1.0)
    return np.clip(hsv2rgb(hsv), 0.0, 1.0)


def transform_patch(p: Patch, theta: AugmentParams) -> Patch:
    img, mask = p.image, p.mask
    if theta.scale != 1.0:
        new_h = max(1, int(round(img.shape[0] * theta.scale)))
        new_w = max(1, int(round(img.shape[1] * theta.scale)))
        zh, zw = new_h / img.shape[0], new_w / img.shape[1]
        img = np.clip(ndimage.zoom(img, (zh, zw, 1), order=1, mode="nearest"), 0.0, 1.0)
        mask = ndimage.zoom(mask.astype(np.uint8), (zh, zw), order=0).astype(bool)
    if theta.rotation_deg % 360.0 != 0.0:
        img, mask = _rotate(img, mask, theta.rotation_deg)
        img = np.clip(img, 0.0, 1.0)
        if theta.rotation_deg % 90.0 != 0.0 and mask.any():
            img, mask = _crop_to_mask(img, mask)
    if theta.brightness != 1.0 or theta.contrast != 1.0:
        img = adjust_illumination(img, theta.brightness, theta.contrast)
    if not mask.any():
        raise AugmentError("transform left the patch mask empty")
    return Patch(img, mask, p.source_kind, p.class_id)


# ---------------------------------------------------------------------------
# Poisson blending

@dataclass
class PoissonSystem:
    """Linear system for the masked pixels of one placement (channel-independent part)."""

    rows: np.ndarray      # background row of each unknown
    cols: np.ndarray      # background col of each unknown
    nbr: np.ndarray       # (n, 4) unknown index of each neighbour, -1 if fixed
    guidance: np.ndarray  # (n, 3) sum over neighbours of patch(p) - patch(q)
    boundary: np.ndarray  # (n, 3) sum of fixed background neighbours

    @property
    def rhs(self) -> np.ndarray:
        return self.guidance + self.boundary


_OFFSETS = ((-1, 0), (1, 0), (0, -1), (0, 1))


def build_poisson_system(background, patch: Patch, position) -> PoissonSystem:
    bg = as_rgb(background)
    H, W = bg.shape[:2]
    x, y = int(position[0]), int(position[1])
    h, w = patch.mask.shape
    if x < 0 or y < 0 or x + w > W or y + h > H:
        raise AugmentError(f"patch at ({x}, {y}) size {w}x{h} exceeds background {W}x{H}")
    pr, pc = np.nonzero(patch.mask)
    rows, cols = pr + y, pc + x
    if rows.min() == 0 or cols.min() == 0 or rows.max() == H - 1 or cols.max() == W - 1:
        raise AugmentError("patch mask touches the background border")
    index = -np.ones((H, W), dtype=np.int64)
    index[rows, cols] = np.arange(rows.size)
    # edge padding gives zero guidance across the patch rim
    src = np.pad(patch.image, ((1, 1), (1, 1), (0, 0)), mode="edge")
    centre = src[pr + 1, pc + 1]
    nbr = np.empty((rows.size, 4), dtype=np.int64)
    guidance = np.zeros((rows.size, 3))
    boundary = np.zeros((rows.size, 3))
    for k, (dr, dc) in enumerate(_OFFSETS):
        qr, qc = rows + dr, cols + dc
        nbr[:, k] = index[qr, qc]
        guidance += centre - src[pr + 1 + dr, pc + 1 + dc]
        fixed = nbr[:, k] < 0
        boundary[fixed] += bg[qr[fixed], qc[fixed]]
    return PoissonSystem(rows, cols, nbr, guidance, boundary)


@dataclass
class BlendResult:
    image: np.ndarray      # clamped composite
    raw: np.ndarray        # unclamped solution inside the mask, background elsewhere
    system: PoissonSystem
    iterations: tuple[int, ...]
    residuals: tuple[float, ...]


def poisson_solve(background, patch: Patch, position, rtol: float = 1e-6,
                  maxiter: int = 10_000) -> BlendResult:
    bg = as_rgb(background)
    system = build_poisson_system(bg, patch, position)
    raw = bg.copy()
    rhs = system.rhs
    its, res = [], []
    for ch in range(3):
        x0 = bg[system.rows, system.cols, ch]
        sol, it, rel = kernels.cg_solve(system.nbr, rhs[:, ch], x0, rtol, maxiter)
        if not rel <= rtol:
            raise ConvergenceError(f"CG stalled on channel {ch} after {it} iterations", rel)
        raw[system.rows, system.cols, ch] = sol
        its.append(it)
        res.append(rel)
    return BlendResult(np.clip(raw, 0.0, 1.0), raw, system, tuple(its), tuple(res))


def poisson_blend(background, patch: Patch, position, rtol: float = 1e-6,
                  maxiter: int = 10_000) -> np.ndarray:
    """Seamless clone of ``patch`` with its top-left corner at ``position`` (x, y)."""
    return poisson_solve(background, patch, position, rtol, maxiter).image


def pde_residual(result: BlendResult) -> np.ndarray:
    """Per-pixel residual ``A f - b`` of the returned (unclamped) solution."""
    s = result.system
    f = result.raw[s.rows, s.cols]
    return np.stack([kernels.laplace_apply(f[:, ch], s.nbr) for ch in range(3)], axis=1) - s.rhs


# ---------------------------------------------------------------------------
# compositing

class PatchRecord(NamedTuple):
    source_kind: SourceKind
    params: AugmentParams
    x: int
    y: int
    label: int
    box: BBox


class AugmentResult(NamedTuple):
    image: np.ndarray
    annotations: list
    placements: list


def _draw_pool(pools: dict, cfg: AugmentConfig, rng) -> SourceKind:
    kinds = (SourceKind.LABELED, SourceKind.FALSE_POSITIVE, SourceKind.FALSE_NEGATIVE)
    weights = np.array([m if pools.get(k) else 0.0 for k, m in zip(kinds, cfg.pool_mix)])
    if weights.sum() <= 0:
        raise AugmentError("all patch pools with non-zero weight are empty")
    return kinds[int(rng.choice(3, p=weights / weights.sum()))]


def augment_image(background, pools: dict, rng: np.random.Generator,
                  cfg: AugmentConfig = AugmentConfig(),
                  annotations: Sequence[Detection] = (), tile_id: str = "") -> AugmentResult:
    """Blend 1-3 transformed patches from ``pools`` into ``background``.

    ``pools`` maps :class:`SourceKind` to lists of patches. Labelled and
    false-negative patches add an annotation at their placed mask box;
    false-positive patches add none.
    """
    img = as_rgb(background).copy()
    pools = {SourceKind(k): list(v) for k, v in pools.items()}
    context = segment_context(img, *cfg.grass_hue, cfg.grass_min_sat)
    out_ann = list(annotations)
    taken = [d.bbox for d in annotations]
    records = []
    n = int(rng.integers(cfg.n_patches[0], cfg.n_patches[1] + 1))
    for _ in range(n):
        kind = _draw_pool(pools, cfg, rng)
        src = pools[kind][int(rng.integers(len(pools[kind])))]
        theta = sample_params(rng, cfg)
        patch = transform_patch(src, theta)
        mx0, my0, mx1, my1 = patch.mask_bbox()
        for _attempt in range(cfg.max_resample + 1):
            try:
                pl = sample_placement(context, patch.mask.shape, theta.dirt_fraction, rng, margin=1)
            except AugmentError:
                pl = None
                break
            box = BBox(pl.x + mx0, pl.y + my0, pl.x + mx1, pl.y + my1)
            if all(iou(box, t) <= cfg.overlap_iou for t in taken):
                break
            pl = None
        if pl is None:
            log.debug("no free placement for a %s patch; skipped", kind.value)
            continue
        img = poisson_blend(img, patch, (pl.x, pl.y))
        taken.append(box)
        records.append(PatchRecord(kind, theta, pl.x, pl.y, pl.label, box))
        if patch.annotated:
            out_ann.append(Detection(box, patch.class_id, 1.0, tile_id=tile_id))
    if not records:
        raise AugmentError("no valid placement found for any patch")
    return AugmentResult(img, out_ann, records)


# ---------------------------------------------------------------------------
# file I/O

def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def write_png(path, img) -> None:
    a = np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(a).save(path)


def read_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) > 0


def write_mask(path, mask) -> None:
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8)).save(path)


def load_pool(directory) -> dict:
    """Read ``manifest.json`` in ``directory`` into ``{SourceKind: [Patch, ...]}``.

    Manifest layout::

        {"patches": [{"image": "a.png", "mask": "a_mask.png",
                      "source_kind": "labeled", "class": "prairie_dog"}, ...]}
    """
    directory = Path(directory)
    with open(directory / "manifest.json") as fh:
        manifest = json.load(fh)
    pools: dict = {k: [] for k in SourceKind}
    for entry in manifest["patches"]:
        patch = Patch(read_png(directory / entry["image"]), read_mask(directory / entry["mask"]),
                      SourceKind(entry["source_kind"]), ClassId(entry["class"]))
        pools[patch.source_kind].append(patch)
    return pools


def save_pool(directory, patches: Sequence[Patch]) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, p in enumerate(patches):
        stem = f"patch_{i:04d}"
        write_png(directory / f"{stem}.png", p.image)
        write_mask(directory / f"{stem}_mask.png", p.mask)
        entries.append({"image": f"{stem}.png", "mask": f"{stem}_mask.png",
                        "source_kind": p.source_kind.value, "class": p.class_id.value})
    with open(directory / "manifest.json", "w") as fh:
        json.dump({"patches": entries}, fh, indent=1)

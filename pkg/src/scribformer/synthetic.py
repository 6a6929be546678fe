"""Synthetic phantom dataset: concentric-ellipse structures with scribble labels.

Each sample carries K-1 foreground structures on a textured background: a
bright inner disk, a mid-intensity ring around it, and an offset blob (plus
extra blobs for K > 4). The background also contains unlabeled distractor
arcs and blobs in the same intensity band as the structures, so purely local
evidence is ambiguous. Scribbles are thin curves obtained by eroding each
class region (background included) and walking its inner boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .data import UNLABELED, DatasetInfo, Sample, normalize_intensity
from .errors import ConfigError, DatasetError

# per-class base intensity bands (low, high); sampled once per sample so a
# single global threshold never separates the classes perfectly
_STRUCTURE_BANDS = ((0.85, 0.95), (0.55, 0.65), (0.70, 0.80), (0.93, 0.99), (0.42, 0.50), (0.64, 0.70))

# foreground strokes are this much denser than the background stroke,
# echoing how annotators cover small structures more thoroughly
_FG_RATE_BOOST = 2.5


@dataclass
class SyntheticSpec:
    """Parameters of one synthetic dataset."""

    num_train: int = 200
    num_val: int = 20
    num_test: int = 30
    image_size: int = 96
    num_classes: int = 4
    scribble_coverage: float = 0.10
    seed: int = 0

    def __post_init__(self):
        if min(self.num_train, self.num_val, self.num_test) <= 0:
            raise ConfigError("split counts must be positive")
        if self.num_classes < 2:
            raise ConfigError("need at least background plus one structure class")
        if not 0.0 < self.scribble_coverage < 1.0:
            raise ConfigError("scribble_coverage must lie in (0, 1)")
        if self.image_size < 32 or self.image_size % 32:
            raise ConfigError("image_size must be a positive multiple of 32")


def _ellipse(size: int, cy: float, cx: float, ry: float, rx: float, theta: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    yy -= cy
    xx -= cx
    ct, st = np.cos(theta), np.sin(theta)
    u = xx * ct + yy * st
    v = -xx * st + yy * ct
    return (u / rx) ** 2 + (v / ry) ** 2 <= 1.0


def _touches_border(mask: np.ndarray, margin: int = 2) -> bool:
    inner = np.zeros_like(mask)
    inner[margin:-margin, margin:-margin] = mask[margin:-margin, margin:-margin]
    return bool((mask & ~inner).any())


def _structures(
    size: int, k_fg: int, rng: np.random.Generator
) -> tuple[list[np.ndarray], np.ndarray] | None:
    """Disjoint foreground masks [disk, ring, blob, ...] plus a decoy mask.

    The decoy (present in roughly half the samples when the blob class
    exists) is a disk+ring cluster with the same local appearance as the
    real one but *no* adjacent blob; it belongs to the background, so only
    the long-range relation to the blob separates the two.
    """
    s = float(size)
    cy = s / 2 + rng.uniform(-s / 10, s / 10)
    cx = s / 2 + rng.uniform(-s / 10, s / 10)
    ry0 = rng.uniform(0.09, 0.12) * s
    rx0 = rng.uniform(0.09, 0.12) * s
    theta = rng.uniform(0, np.pi)
    disk = _ellipse(size, cy, cx, ry0, rx0, theta)
    masks = [disk]

    thick = max(4.0, rng.uniform(0.07, 0.09) * s)
    if k_fg >= 2:
        outer = _ellipse(size, cy, cx, ry0 + thick, rx0 + thick, theta)
        ring = outer & ~disk
        masks.append(ring)
    occupied = np.logical_or.reduce(masks)

    for j in range(max(0, k_fg - 2)):
        placed = False
        for _ in range(20):
            phi = rng.uniform(0, 2 * np.pi)
            rb_y = rng.uniform(0.05, 0.07) * s
            rb_x = rng.uniform(0.05, 0.07) * s
            dist = max(ry0, rx0) + thick + max(rb_y, rb_x) + rng.uniform(2.0, 5.0)
            by = cy + dist * np.sin(phi)
            bx = cx + dist * np.cos(phi)
            blob = _ellipse(size, by, bx, rb_y, rb_x, rng.uniform(0, np.pi))
            if blob.sum() < 12 or _touches_border(blob):
                continue
            if (ndimage.binary_dilation(blob, iterations=2) & occupied).any():
                continue
            masks.append(blob)
            occupied |= blob
            placed = True
            break
        if not placed:
            return None

    for m in masks:
        if m.sum() < 12 or _touches_border(m):
            return None

    decoy = np.zeros(disk.shape, dtype=np.uint8)  # 0 none, 1 core, 2 rim
    if k_fg >= 3 and rng.random() < 0.5:
        for _ in range(25):
            scale = rng.uniform(0.75, 0.95)
            dry = ry0 * scale
            drx = rx0 * scale
            dthick = thick * rng.uniform(0.85, 1.0)
            r_all = max(dry, drx) + dthick
            dy = rng.uniform(r_all + 2, s - r_all - 2)
            dx = rng.uniform(r_all + 2, s - r_all - 2)
            dtheta = rng.uniform(0, np.pi)
            d_disk = _ellipse(size, dy, dx, dry, drx, dtheta)
            d_outer = _ellipse(size, dy, dx, dry + dthick, drx + dthick, dtheta)
            if _touches_border(d_outer):
                continue
            if (ndimage.binary_dilation(d_outer, iterations=4) & occupied).any():
                continue
            decoy[d_disk] = 1
            decoy[d_outer & ~d_disk] = 2
            break
    return masks, decoy


def _distractors(size: int, occupied: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Unlabeled background clutter: thin arcs and small blobs near the
    structure intensity band, so purely local evidence stays ambiguous."""
    field = np.zeros((size, size), dtype=np.float64)
    forbidden = ndimage.binary_dilation(occupied, iterations=2)
    s = float(size)
    for _ in range(int(rng.integers(2, 5))):
        for _ in range(15):
            cy = rng.uniform(0.1, 0.9) * s
            cx = rng.uniform(0.1, 0.9) * s
            if rng.random() < 0.6:
                # arc fragment matching the ring's intensity and curvature;
                # only its relation to the bright disk tells it apart
                r_out = rng.uniform(0.08, 0.16) * s
                width = rng.uniform(3.0, 6.0)
                shape = _ellipse(size, cy, cx, r_out, r_out * rng.uniform(0.7, 1.0), rng.uniform(0, np.pi))
                inner = _ellipse(size, cy, cx, max(1.0, r_out - width), max(1.0, r_out * 0.7 - width), 0.0)
                shape &= ~inner
                ang = np.arctan2(np.mgrid[0:size, 0:size][0] - cy, np.mgrid[0:size, 0:size][1] - cx)
                start = rng.uniform(-np.pi, np.pi)
                span = rng.uniform(np.pi / 2, np.pi)
                shape &= ((ang - start) % (2 * np.pi)) < span
                intensity = rng.uniform(0.55, 0.65)
            else:
                # small blob below the labeled blob's intensity band
                r = rng.uniform(0.03, 0.05) * s
                shape = _ellipse(size, cy, cx, r, r * rng.uniform(0.5, 1.0), rng.uniform(0, np.pi))
                intensity = rng.uniform(0.55, 0.68)
            if shape.any() and not (shape & forbidden).any() and not _touches_border(shape, 1):
                field[shape] = intensity
                break
    return field


def _walk_arc(curve: np.ndarray, budget: int, rng: np.random.Generator) -> np.ndarray:
    """Contiguous run of up to ``budget`` curve pixels from a random start."""
    out = np.zeros_like(curve)
    pts = np.argwhere(curve).astype(np.float64)
    if len(pts) == 0 or budget <= 0:
        return out
    remaining = np.ones(len(pts), dtype=bool)
    idx = int(rng.integers(len(pts)))
    kept = []
    for _ in range(min(budget, len(pts))):
        kept.append(idx)
        remaining[idx] = False
        if not remaining.any():
            break
        d = np.abs(pts[remaining] - pts[idx]).sum(axis=1)
        # stop at gaps: a jump over 3 px would start a disconnected fragment
        j = int(np.argmin(d))
        if d[j] > 3.0:
            break
        idx = int(np.flatnonzero(remaining)[j])
    sel = pts[kept].astype(int)
    out[sel[:, 0], sel[:, 1]] = True
    return out


def _stroke(region: np.ndarray, target: int, rng: np.random.Generator) -> np.ndarray:
    """Thin scribble strokes of roughly ``target`` pixels inside ``region``.

    Each stroke is an arc of the 1 px boundary of the region eroded to a
    *random* depth, so stroke placement varies from sample to sample the way
    hand-drawn scribbles do instead of tracing one fixed locus.
    """
    out = np.zeros_like(region)
    area = int(region.sum())
    if area == 0 or target <= 0:
        return out
    dist = ndimage.distance_transform_edt(region)
    dmax = float(dist.max())
    drawn = 0
    for _ in range(10):
        if drawn >= target:
            break
        depth = 1.0 + rng.random() * max(0.0, 0.75 * dmax - 1.0)
        core = dist > depth
        if not core.any():
            core = ndimage.binary_erosion(region)
        if not core.any():
            core = region
        curve = (core & ~ndimage.binary_erosion(core)) & ~out
        if not curve.any():
            continue
        arc = _walk_arc(curve, target - drawn, rng)
        out |= arc
        drawn = int(out.sum())
    if drawn < target and drawn < area // 2:
        # thicken to 2 px when thin regions cannot host enough 1 px arc
        thick = ndimage.binary_dilation(out, structure=np.ones((2, 2), bool)) & region
        extra = np.argwhere(thick & ~out)
        rng.shuffle(extra)
        for y, x in extra[: target - drawn]:
            out[y, x] = True
    return out


def _quantize16(img: np.ndarray) -> np.ndarray:
    """Normalize then snap to the 16-bit PNG grid so save/load round-trips bit-exactly."""
    q = np.round(normalize_intensity(img).astype(np.float64) * 65535.0).astype(np.uint16)
    return normalize_intensity(q.astype(np.float32))


def _make_sample(spec: SyntheticSpec, sid: str, rng: np.random.Generator) -> Sample:
    size = spec.image_size
    k_fg = spec.num_classes - 1

    got = None
    for _ in range(100):
        got = _structures(size, k_fg, rng)
        if got is not None:
            break
    if got is None:
        raise DatasetError(f"sample {sid!r}: structures never fit in {size}x{size} after 100 attempts")
    masks, decoy = got

    dense = np.zeros((size, size), dtype=np.uint8)
    for k, m in enumerate(masks, start=1):
        dense[m] = k
    occupied = (dense > 0) | (decoy > 0)

    img = np.full((size, size), 0.25, dtype=np.float64)
    img += 0.06 * ndimage.gaussian_filter(rng.normal(0, 1, (size, size)), sigma=size / 16)
    dfield = _distractors(size, occupied, rng)
    img[dfield > 0] = dfield[dfield > 0]
    grain = 0.03 * ndimage.gaussian_filter(rng.normal(0, 1, (size, size)), sigma=4)
    # the decoy cluster wears the true disk/ring intensities
    for part, band in ((decoy == 1, _STRUCTURE_BANDS[0]), (decoy == 2, _STRUCTURE_BANDS[1])):
        if part.any():
            img[part] = rng.uniform(*band) + grain[part]
    for k, m in enumerate(masks, start=1):
        lo, hi = _STRUCTURE_BANDS[(k - 1) % len(_STRUCTURE_BANDS)]
        img[m] = rng.uniform(lo, hi) + grain[m]
    img += rng.normal(0, 0.02, (size, size))

    # allocate the total coverage budget: foreground regions get denser
    # strokes than background, total labeled fraction still ~= coverage
    area_bg = float((dense == 0).sum())
    area_fg = float(size * size) - area_bg
    rate_bg = spec.scribble_coverage * size * size / (area_bg + _FG_RATE_BOOST * area_fg)
    rate_fg = _FG_RATE_BOOST * rate_bg

    scribble = np.full((size, size), UNLABELED, dtype=np.uint8)
    for k in range(spec.num_classes):
        region = dense == k
        rate = rate_bg if k == 0 else rate_fg
        target = int(round(rate * region.sum()))
        target = max(target, 3) if region.any() else 0
        if k == 0 and decoy.any():
            # annotators scribble over confusing background areas: part of
            # the background budget lands on the decoy itself
            decoy_target = max(4, int(round(0.25 * target)))
            stroke = _stroke(region & (decoy == 0), target - decoy_target, rng)
            stroke |= _stroke(decoy > 0, decoy_target, rng)
        else:
            stroke = _stroke(region, target, rng)
        scribble[stroke] = k

    return Sample(image=_quantize16(img), scribble=scribble, dense_mask=dense, id=sid)


def generate_synthetic(
    spec: SyntheticSpec, rng: np.random.Generator | None = None
) -> dict[str, list[Sample]]:
    """Generate {train, val, test} sample lists, deterministically from spec.seed.

    Every sample gets its own generator derived from (seed, split, index), so
    the result is a pure function of the spec when ``rng`` is left as None.
    """
    root_seed = spec.seed if rng is None else int(rng.integers(2**31))
    splits = {"train": spec.num_train, "val": spec.num_val, "test": spec.num_test}
    out: dict[str, list[Sample]] = {}
    for si, (split, count) in enumerate(splits.items()):
        samples = []
        for i in range(count):
            srng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((root_seed, si, i))))
            samples.append(_make_sample(spec, f"{split}_{i:04d}", srng))
        out[split] = samples
    return out


def dataset_info(spec: SyntheticSpec) -> DatasetInfo:
    names = ["background", "disk", "ring", "blob"]
    while len(names) < spec.num_classes:
        names.append(f"blob{len(names) - 2}")
    return DatasetInfo(
        num_classes=spec.num_classes,
        image_size=spec.image_size,
        class_names=names[: spec.num_classes],
    )

"""Raster primitives and classical weak-label generators.

Rasters are 2-D ``float64`` arrays indexed ``[y, x]``; label maps are
integer arrays of the same shape with 0 for background/boundary.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy import ndimage

from .geometry import BBox, Detection, clip

Category = Literal["alive", "inhibited", "dead"]
CATEGORIES: tuple[str, ...] = ("alive", "inhibited", "dead")


def as_raster(img) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError(f"expected a non-empty 2-D raster, got shape {arr.shape}")
    return arr


# -- filtering --------------------------------------------------------------


def odd_kernel(k: int) -> int:
    """Round an even kernel size up to the next odd one."""
    return k if k % 2 == 1 else k + 1


def gaussian_sigma(k: int) -> float:
    return 0.3 * ((k - 1) * 0.5 - 1) + 0.8


def gaussian_kernel1d(k: int) -> np.ndarray:
    if k < 1 or k % 2 == 0:
        raise ValueError(f"kernel size must be odd and >= 1, got {k}")
    if k == 1:
        return np.ones(1)
    sigma = gaussian_sigma(k)
    x = np.arange(k) - (k - 1) / 2
    w = np.exp(-(x**2) / (2 * sigma**2))
    return w / w.sum()


def gaussian_blur(img, kx: int, ky: int) -> np.ndarray:
    """Separable Gaussian blur; sigma derived from the kernel size.

    Borders are half-sample symmetric (``d c b a | a b c d``), which keeps
    both constants and the image sum unchanged.
    """
    img = as_raster(img)
    wx = gaussian_kernel1d(kx)
    wy = gaussian_kernel1d(ky)
    out = ndimage.correlate1d(img, wx, axis=1, mode="reflect")
    return ndimage.correlate1d(out, wy, axis=0, mode="reflect")


def sobel_gradients(img) -> tuple[np.ndarray, np.ndarray]:
    """3x3 Sobel ``(gx, gy)``; x grows rightwards and y downwards."""
    img = as_raster(img)
    deriv = np.array([-1.0, 0.0, 1.0])
    smooth = np.array([1.0, 2.0, 1.0])
    gx = ndimage.correlate1d(ndimage.correlate1d(img, deriv, axis=1, mode="reflect"), smooth, axis=0, mode="reflect")
    gy = ndimage.correlate1d(ndimage.correlate1d(img, deriv, axis=0, mode="reflect"), smooth, axis=1, mode="reflect")
    return gx, gy


def _shift(a: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """``out[y, x] = a[y + dy, x + dx]``, zero outside."""
    h, w = a.shape
    out = np.zeros_like(a)
    ys, yd = (slice(dy, h), slice(0, h - dy)) if dy >= 0 else (slice(0, h + dy), slice(-dy, h))
    xs, xd = (slice(dx, w), slice(0, w - dx)) if dx >= 0 else (slice(0, w + dx), slice(-dx, w))
    out[yd, xd] = a[ys, xs]
    return out


def canny_edges(img, low_thr: float, high_thr: float) -> np.ndarray:
    """Sobel magnitude, 4-direction non-maximum suppression, hysteresis.

    A pixel survives suppression when it is ``>=`` its backward neighbour and
    ``>`` its forward neighbour along the gradient direction, so plateaus of
    width two (e.g. an ideal step) thin to one pixel.
    """
    if not 0 <= low_thr <= high_thr:
        raise ValueError("need 0 <= low_thr <= high_thr")
    gx, gy = sobel_gradients(img)
    mag = np.hypot(gx, gy)
    angle = np.rad2deg(np.arctan2(gy, gx)) % 180.0

    # (dy, dx) of the forward neighbour for each quantized direction
    dirs = {
        0: (0, 1),
        45: (1, 1),
        90: (1, 0),
        135: (1, -1),
    }
    q = np.select(
        [(angle < 22.5) | (angle >= 157.5), angle < 67.5, angle < 112.5],
        [0, 45, 90],
        default=135,
    )
    keep = np.zeros(mag.shape, dtype=bool)
    for d, (dy, dx) in dirs.items():
        fwd = _shift(mag, dy, dx)
        bwd = _shift(mag, -dy, -dx)
        keep |= (q == d) & (mag >= bwd) & (mag > fwd)
    thin = np.where(keep & (mag > 0), mag, 0.0)

    strong = thin >= high_thr
    weak = (thin >= low_thr) & (thin > 0)
    labels, n = ndimage.label(weak, structure=np.ones((3, 3), dtype=bool))
    if n == 0:
        return np.zeros(mag.shape, dtype=np.uint8)
    has_strong = np.zeros(n + 1, dtype=bool)
    has_strong[np.unique(labels[strong & weak])] = True
    has_strong[0] = False
    return has_strong[labels].astype(np.uint8)


# -- binarization and distances ---------------------------------------------


def otsu_threshold(img, mask=None, nbins: int = 256) -> tuple[np.ndarray, float]:
    """Otsu binarization over ``nbins`` equal bins spanning ``[min, max]``.

    Returns ``(binary, threshold)`` where ``binary = value >= threshold``
    (bin-wise). When several splits tie for the largest between-class
    variance the middle one is used. A constant image yields an empty
    foreground and ``threshold`` equal to the constant.
    """
    img = as_raster(img)
    values = img[mask.astype(bool)] if mask is not None else img.ravel()
    if values.size == 0:
        return np.zeros(img.shape, dtype=np.uint8), 0.0
    lo, hi = float(values.min()), float(values.max())
    if lo == hi:
        return np.zeros(img.shape, dtype=np.uint8), lo
    width = (hi - lo) / nbins
    bins = _bin_index(values, lo, width, nbins)
    counts = np.bincount(bins, minlength=nbins).astype(np.float64)
    sums = np.bincount(bins, weights=values, minlength=nbins)

    w0 = np.cumsum(counts)[:-1]  # class 0 = bins < k, for k = 1..nbins-1
    s0 = np.cumsum(sums)[:-1]
    w1 = counts.sum() - w0
    s1 = sums.sum() - s0
    with np.errstate(invalid="ignore", divide="ignore"):
        between = w0 * w1 * (s0 / w0 - s1 / w1) ** 2
    between = np.where((w0 > 0) & (w1 > 0), between, -1.0)
    k = _middle_argmax(between) + 1
    threshold = lo + k * width
    binary = np.zeros(img.shape, dtype=np.uint8)
    sel = _bin_index(img, lo, width, nbins) >= k
    if mask is not None:
        sel &= mask.astype(bool)
    binary[sel] = 1
    return binary, float(threshold)


def _bin_index(values: np.ndarray, lo: float, width: float, nbins: int) -> np.ndarray:
    return np.clip(np.floor((values - lo) / width), 0, nbins - 1).astype(np.int64)


def _middle_argmax(score: np.ndarray, rtol: float = 1e-12) -> int:
    best = score.max()
    ties = np.flatnonzero(score >= best - rtol * abs(best))
    return int((ties[0] + ties[-1]) // 2)


def distance_transform(binary) -> np.ndarray:
    """Exact Euclidean distance of each foreground pixel to the nearest
    background pixel, treating everything outside the image as background."""
    fg = np.asarray(binary).astype(bool)
    padded = np.pad(fg, 1, constant_values=False)
    return ndimage.distance_transform_edt(padded)[1:-1, 1:-1]


# -- segmentation -----------------------------------------------------------


def reconstruct_by_dilation(seed: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Greyscale morphological reconstruction of ``seed`` under ``mask``."""
    cur = np.minimum(seed, mask)
    footprint = np.ones((3, 3), dtype=bool)
    while True:
        nxt = np.minimum(ndimage.grey_dilation(cur, footprint=footprint, mode="nearest"), mask)
        if np.array_equal(nxt, cur):
            return cur
        cur = nxt


def h_maxima(img, h: float) -> np.ndarray:
    """Regional maxima whose dynamic (height above the saddle to any
    higher region) is at least ``h``."""
    img = as_raster(img)
    rec = reconstruct_by_dilation(img - h, img)
    return regional_maxima(rec)


def regional_maxima(img) -> np.ndarray:
    """Plateaus with no strictly higher 8-neighbour anywhere on their rim."""
    img = as_raster(img)
    eps = 1e-6 * max(1.0, float(np.abs(img).max()))
    rec = reconstruct_by_dilation(img - eps, img)
    return (img - rec) > 0.5 * eps

_N4 = ((-1, 0), (1, 0), (0, -1), (0, 1))


def watershed(img, markers, mask=None) -> np.ndarray:
    """Marker-controlled priority flood with watershed lines.

    Pixels are flooded in order of (intensity, insertion order) through
    4-neighbours. A pixel reached by two different labels becomes a
    boundary pixel (0) and does not propagate. Pixels outside ``mask`` are
    never flooded.
    """
    img = as_raster(img)
    labels = np.asarray(markers).astype(np.int64).copy()
    if labels.shape != img.shape:
        raise ValueError("markers must match the image shape")
    if not labels.any():
        raise ValueError("watershed needs at least one marker")
    h, w = img.shape
    allowed = np.ones(img.shape, dtype=bool) if mask is None else np.asarray(mask).astype(bool)
    queued = labels > 0
    heap: list[tuple[float, int, int, int]] = []
    counter = 0

    def push_neighbours(y: int, x: int) -> None:
        nonlocal counter
        for dy, dx in _N4:
            ny, nx = y + dy, x + dx
            if 0 <= ny < h and 0 <= nx < w and not queued[ny, nx] and allowed[ny, nx]:
                queued[ny, nx] = True
                heapq.heappush(heap, (img[ny, nx], counter, ny, nx))
                counter += 1

    for y, x in zip(*np.nonzero(labels)):
        push_neighbours(int(y), int(x))

    while heap:
        _, _, y, x = heapq.heappop(heap)
        seen = 0
        for dy, dx in _N4:
            ny, nx = y + dy, x + dx
            if 0 <= ny < h and 0 <= nx < w:
                lab = labels[ny, nx]
                if lab > 0:
                    if seen == 0:
                        seen = lab
                    elif lab != seen:
                        seen = -1
                        break
        if seen > 0:
            labels[y, x] = seen
            push_neighbours(y, x)
    return labels


def connected_components(binary, connectivity: int = 8) -> list[BBox]:
    """Tight continuous-coordinate boxes of each component, in label order."""
    if connectivity not in (4, 8):
        raise ValueError("connectivity must be 4 or 8")
    structure = ndimage.generate_binary_structure(2, 1 if connectivity == 4 else 2)
    labels, _ = ndimage.label(np.asarray(binary).astype(bool), structure=structure)
    return [
        BBox(float(sx.start), float(sy.start), float(sx.stop), float(sy.stop))
        for sy, sx in ndimage.find_objects(labels)
    ]


# -- circle Hough transform -------------------------------------------------


@dataclass(frozen=True)
class Circle:
    cx: float
    cy: float
    r: float
    votes: float

    def to_box(self) -> BBox:
        # (cx, cy) index a pixel whose centre is at (cx + 0.5, cy + 0.5)
        x, y = self.cx + 0.5, self.cy + 0.5
        return BBox(x - self.r, y - self.r, x + self.r, y + self.r)


def angle_samples(r: int) -> int:
    return max(64, math.ceil(2 * math.pi * r))


def circle_offsets(r: int) -> tuple[np.ndarray, np.ndarray]:
    """Rounded ``(dx, dy)`` ring offsets, one per angle sample."""
    n = angle_samples(r)
    theta = 2 * math.pi * np.arange(n) / n
    return np.rint(r * np.cos(theta)).astype(np.int64), np.rint(r * np.sin(theta)).astype(np.int64)


def hough_accumulator(edges, r_min: int, r_max: int) -> np.ndarray:
    """Votes ``acc[r - r_min, cy, cx]``: each edge pixel votes for every
    centre lying one sampled ring offset away."""
    e = np.asarray(edges).astype(bool)
    h, w = e.shape
    ys, xs = np.nonzero(e)
    acc = np.zeros((r_max - r_min + 1, h, w), dtype=np.float64)
    for i, r in enumerate(range(r_min, r_max + 1)):
        dx, dy = circle_offsets(r)
        cx = (xs[:, None] - dx[None, :]).ravel()
        cy = (ys[:, None] - dy[None, :]).ravel()
        ok = (cx >= 0) & (cx < w) & (cy >= 0) & (cy < h)
        acc[i] = np.bincount(cy[ok] * w + cx[ok], minlength=h * w).reshape(h, w)
    return acc


def circle_hough(edges, r_min: int, r_max: int, vote_frac: float = 0.5) -> list[Circle]:
    """Detect circles in a binary edge map.

    Candidates are 3x3x3 local maxima of the accumulator with at least
    ``vote_frac`` of the angle-sample count for their radius. They are
    accepted strongest-first (by vote fraction); a candidate whose centre
    is closer than ``r_min`` to an accepted circle is suppressed.
    """
    if not 1 <= r_min <= r_max:
        raise ValueError("need 1 <= r_min <= r_max")
    acc = hough_accumulator(edges, r_min, r_max)
    if not acc.any():
        return []
    radii = np.arange(r_min, r_max + 1)
    ideal = np.array([angle_samples(int(r)) for r in radii], dtype=np.float64)
    frac = acc / ideal[:, None, None]
    peaks = (frac == ndimage.maximum_filter(frac, size=3, mode="constant")) & (frac >= vote_frac) & (acc > 0)
    ri, cy, cx = np.nonzero(peaks)
    strength = frac[ri, cy, cx]
    # strongest first; ties favour the smaller radius, then raster order
    order = np.lexsort((cx, cy, ri, -strength))
    accepted: list[Circle] = []
    for k in order:
        x, y = float(cx[k]), float(cy[k])
        if any((x - c.cx) ** 2 + (y - c.cy) ** 2 < r_min**2 for c in accepted):
            continue
        accepted.append(Circle(x, y, float(radii[ri[k]]), float(acc[ri[k], cy[k], cx[k]])))
    return accepted


# -- weak-label pipelines ---------------------------------------------------


@dataclass(frozen=True)
class WeakLabelParams:
    blur_kernel: int = 5
    canny_low: float = 40.0
    canny_high: float = 100.0
    r_min: int = 5
    r_max: int = 30
    vote_frac: float = 0.45
    closing_iterations: int = 2
    marker_h: float = 1.0
    min_area: int = 16
    use_blur: bool = True
    use_closing: bool = True
    use_watershed: bool = True


def _boxes_to_detections(boxes, width: int, height: int, min_area: float = 0.0) -> list[Detection]:
    out = []
    for b in boxes:
        c = clip(b, width, height)
        if c is not None and c.area >= min_area:
            out.append(Detection(c, 1.0))
    return out


def segment_cells(img, params: WeakLabelParams = WeakLabelParams()) -> np.ndarray:
    """Edge-driven cell segmentation for alive/inhibited images.

    blur -> Canny -> closing -> hole filling -> distance transform ->
    markers (h-maxima of the distance inside its Otsu core) -> watershed.
    """
    img = as_raster(img)
    smoothed = gaussian_blur(img, params.blur_kernel, params.blur_kernel) if params.use_blur else img
    edges = canny_edges(smoothed, params.canny_low, params.canny_high).astype(bool)
    if params.use_closing and params.closing_iterations > 0:
        # pad so closing does not erode structures touching the border
        n = params.closing_iterations
        padded = np.pad(edges, n)
        edges = ndimage.binary_closing(padded, np.ones((3, 3), dtype=bool), iterations=n)[n:-n, n:-n]
    filled = ndimage.binary_fill_holes(edges)
    if not filled.any():
        return np.zeros(img.shape, dtype=np.int64)
    if not params.use_watershed:
        labels, _ = ndimage.label(filled)
        return labels.astype(np.int64)
    dist = distance_transform(filled)
    core, _ = otsu_threshold(dist, mask=filled)
    if not core.any():
        core = filled.astype(np.uint8)
    peaks = h_maxima(dist, params.marker_h) & core.astype(bool)
    markers, _ = ndimage.label(peaks, structure=np.ones((3, 3), dtype=bool))
    if not markers.any():
        markers, _ = ndimage.label(core, structure=ndimage.generate_binary_structure(2, 1))
    return watershed(-dist, markers, mask=filled)


def weak_label_pipeline(img, category: str, params: WeakLabelParams = WeakLabelParams()) -> list[Detection]:
    """Weak boxes for one image; every box gets score 1.0.

    ``dead`` images go straight through Canny and the circle Hough
    transform; ``alive`` and ``inhibited`` images use :func:`segment_cells`.
    """
    if category not in CATEGORIES:
        raise ValueError(f"unknown category {category!r}; expected one of {CATEGORIES}")
    img = as_raster(img)
    h, w = img.shape
    if category == "dead":
        edges = canny_edges(img, params.canny_low, params.canny_high)
        circles = circle_hough(edges, params.r_min, params.r_max, params.vote_frac)
        return _boxes_to_detections((c.to_box() for c in circles), w, h)
    labels = segment_cells(img, params)
    boxes = connected_components(labels > 0, connectivity=4)
    return _boxes_to_detections(boxes, w, h, params.min_area)

"""Seamless (Poisson) cloning and synthetic-image composition.

Inside the clone region the output solves ``laplacian(f) = div(v)`` with
``f`` pinned to the target on the region's outer boundary. Gradients are
forward differences and the divergence uses backward differences, so
``div(grad(g))`` is exactly the 5-point Laplacian of ``g``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .errors import SolverError
from .geometry import Detection
from .imgproc import as_raster, gaussian_blur, odd_kernel

CloneMode = Literal["normal", "mixed"]

RESIDUAL_TOL = 1e-4


@dataclass(frozen=True)
class BlurStrength:
    kind: str
    kernel: tuple[int, int]

    @classmethod
    def weak(cls) -> "BlurStrength":
        return cls("weak", (21, 21))

    @classmethod
    def strong(cls) -> "BlurStrength":
        # configured as (12, 32); even sizes are rounded up to odd
        return cls("strong", (odd_kernel(12), odd_kernel(32)))

    @classmethod
    def from_name(cls, name: str) -> "BlurStrength":
        if name == "weak":
            return cls.weak()
        if name == "strong":
            return cls.strong()
        raise ValueError(f"blur must be 'weak' or 'strong', got {name!r}")


@dataclass(frozen=True)
class CloneRequest:
    """Paste ``source[mask]`` into ``target`` with its top-left at ``offset``.

    The mask must keep a 1-pixel margin inside the source (so gradients
    across the region boundary are defined) and, once translated, a
    1-pixel margin inside the target (the Dirichlet boundary).
    """

    target: np.ndarray
    source: np.ndarray
    mask: np.ndarray
    offset: tuple[int, int] = (0, 0)
    mode: CloneMode = "mixed"

    def __post_init__(self) -> None:
        target = as_raster(self.target)
        source = as_raster(self.source)
        mask = np.asarray(self.mask).astype(bool)
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "source", source)
        object.__setattr__(self, "mask", mask)
        if self.mode not in ("normal", "mixed"):
            raise ValueError(f"unknown clone mode {self.mode!r}")
        if mask.shape != source.shape:
            raise ValueError("mask must have the source's shape")
        if mask[0].any() or mask[-1].any() or mask[:, 0].any() or mask[:, -1].any():
            raise ValueError("mask must keep a 1-pixel margin inside the source")
        dx, dy = self.offset
        h, w = source.shape
        th, tw = target.shape
        if dx < 0 or dy < 0 or dx + w > tw or dy + h > th:
            raise ValueError("translated source must lie inside the target")

    @property
    def target_patch(self) -> np.ndarray:
        dx, dy = self.offset
        h, w = self.source.shape
        return self.target[dy : dy + h, dx : dx + w]


def forward_gradient(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Forward differences; the last column/row gets 0."""
    gx = np.zeros_like(img)
    gy = np.zeros_like(img)
    gx[:, :-1] = img[:, 1:] - img[:, :-1]
    gy[:-1, :] = img[1:, :] - img[:-1, :]
    return gx, gy


def divergence(vx: np.ndarray, vy: np.ndarray) -> np.ndarray:
    """Backward-difference divergence; the first column/row uses a zero
    neighbour."""
    div = vx.copy()
    div[:, 1:] -= vx[:, :-1]
    div += vy
    div[1:, :] -= vy[:-1, :]
    return div


def laplacian(img: np.ndarray) -> np.ndarray:
    """5-point Laplacian on interior pixels (border entries are 0)."""
    out = np.zeros_like(img)
    out[1:-1, 1:-1] = (
        img[:-2, 1:-1] + img[2:, 1:-1] + img[1:-1, :-2] + img[1:-1, 2:] - 4 * img[1:-1, 1:-1]
    )
    return out


def guidance_field(req: CloneRequest) -> tuple[np.ndarray, np.ndarray]:
    """Guidance ``(vx, vy)`` on the source grid.

    ``normal`` uses the source gradient. ``mixed`` takes, per pixel, the
    target gradient when its 2-vector norm is strictly larger than the
    source's, otherwise the source gradient.
    """
    sx, sy = forward_gradient(req.source)
    if req.mode == "normal":
        return sx, sy
    tx, ty = forward_gradient(req.target_patch)
    use_target = np.hypot(tx, ty) > np.hypot(sx, sy)
    return np.where(use_target, tx, sx), np.where(use_target, ty, sy)


def _apply_operator(u: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """``-laplacian`` restricted to the region (outside values taken as 0)."""
    z = np.where(mask, u, 0.0)
    out = 4 * z
    out[1:, :] -= z[:-1, :]
    out[:-1, :] -= z[1:, :]
    out[:, 1:] -= z[:, :-1]
    out[:, :-1] -= z[:, 1:]
    return np.where(mask, out, 0.0)


def poisson_residual(f: np.ndarray, req: CloneRequest, v=None) -> float:
    """Max-norm of ``laplacian(f) - div(v)`` over the clone region.

    ``f`` is on the source grid (typically the solved patch).
    """
    vx, vy = guidance_field(req) if v is None else v
    r = laplacian(f) - divergence(vx, vy)
    return float(np.abs(r[req.mask]).max()) if req.mask.any() else 0.0


def solve_patch(req: CloneRequest, tol: float = RESIDUAL_TOL, max_iter: int | None = None) -> np.ndarray:
    """Conjugate-gradient solve; returns the patch on the source grid."""
    mask = req.mask
    patch = req.target_patch.copy()
    n = int(mask.sum())
    if n == 0:
        return patch
    vx, vy = guidance_field(req)
    div = divergence(vx, vy)
    # -lap(f) = -div(v)  =>  A x = b with boundary values moved to b
    boundary = np.where(mask, 0.0, patch)
    b = np.where(mask, laplacian(boundary) - div, 0.0)
    # laplacian() leaves the 1-px rim at 0; mask never touches the rim
    x = np.where(mask, patch, 0.0)
    r = b - _apply_operator(x, mask)
    p = r.copy()
    rs = float(np.sum(r * r))
    limit = max_iter if max_iter is not None else 10 * n
    it = 0
    while True:
        res = float(np.abs(r).max())
        if res < tol:
            # confirm with the true residual; recurrence drift can mislead
            r = b - _apply_operator(x, mask)
            res = float(np.abs(r).max())
            if res < tol:
                break
            p = r.copy()
            rs = float(np.sum(r * r))
        if it >= limit:
            raise SolverError(f"conjugate gradient did not converge in {limit} iterations", res)
        ap = _apply_operator(p, mask)
        alpha = rs / float(np.sum(p * ap))
        x += alpha * p
        r -= alpha * ap
        rs_new = float(np.sum(r * r))
        p = r + (rs_new / rs) * p
        rs = rs_new
        it += 1
    return np.where(mask, x, patch)


def poisson_solve(req: CloneRequest, tol: float = RESIDUAL_TOL, max_iter: int | None = None) -> np.ndarray:
    """Seamless clone of ``req`` onto a copy of the target.

    The result is real-valued and unclamped; callers clamp to [0, 255]
    when writing 8-bit output.
    """
    patch = solve_patch(req, tol, max_iter)
    out = req.target.copy()
    dx, dy = req.offset
    h, w = patch.shape
    out[dy : dy + h, dx : dx + w] = patch
    return out


def _pixel_rect(det: Detection, margin: int, width: int, height: int) -> tuple[int, int, int, int] | None:
    """Integer pixel rectangle ``[x0, x1) x [y0, y1)`` covering the expanded
    box, kept one pixel away from the image border."""
    b = det.box
    x0 = max(math.floor(b.x1) - margin, 1)
    y0 = max(math.floor(b.y1) - margin, 1)
    x1 = min(math.ceil(b.x2) + margin, width - 1)
    y1 = min(math.ceil(b.y2) + margin, height - 1)
    if x1 <= x0 or y1 <= y0:
        return None
    return x0, y0, x1, y1


def compose_synthetic(
    img,
    boxes: Sequence[Detection],
    blur: BlurStrength = BlurStrength.weak(),
    margin_px: int = 2,
    tol: float = RESIDUAL_TOL,
) -> np.ndarray:
    """Blur the image, then seamlessly clone every box's original content
    back onto it (mixed gradients, rectangular masks).

    Larger boxes are cloned first so smaller overlapping cells, cloned
    later, stay intact. Output is clamped to [0, 255].
    """
    img = as_raster(img)
    h, w = img.shape
    out = gaussian_blur(img, *blur.kernel)
    order = sorted(range(len(boxes)), key=lambda i: -boxes[i].box.area)
    for i in order:
        rect = _pixel_rect(boxes[i], margin_px, w, h)
        if rect is None:
            continue
        x0, y0, x1, y1 = rect
        source = img[y0 - 1 : y1 + 1, x0 - 1 : x1 + 1]
        mask = np.zeros(source.shape, dtype=bool)
        mask[1:-1, 1:-1] = True
        req = CloneRequest(out, source, mask, (x0 - 1, y0 - 1), "mixed")
        try:
            patch = solve_patch(req, tol)
        except SolverError as exc:
            raise SolverError(f"solver failed on box {i}", exc.residual) from exc
        out[y0:y1, x0:x1] = patch[1:-1, 1:-1]
    return np.clip(out, 0.0, 255.0)

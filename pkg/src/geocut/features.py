"""Edge appearance features and the potentials driving the Eikonal solvers.

Three fields are derived from an image: the raw gradient magnitude J, its
normalization g in [0, 1], and the edge indicator phi = exp(tau*g) + w.
Two potentials are built on top: a structural potential that is huge near
edges and impassable on boundary proposals (used by the adaptive cut), and
a segmentation potential 1/(phi+eps) that is cheap along edges (used by
tubular neighborhoods and connection paths).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .grid import GridError, GridMask, Polyline, ScalarField2D


@dataclass(frozen=True)
class FeatureConfig:
    sigma: float = 1.5          # Gaussian derivative scale, grid units
    tau: float = 1.0            # edge-indicator exponent weight
    w_tilde: float = 0.1        # edge-indicator offset
    epsilon: float = 0.1        # segmentation-potential regularizer

    def __post_init__(self):
        if self.sigma <= 0 or self.tau <= 0 or self.w_tilde <= 0 or self.epsilon <= 0:
            raise ValueError("feature parameters must be positive")


@dataclass(frozen=True)
class EdgeFeatures:
    """Gradient magnitude J, normalized magnitude g, edge indicator phi.

    ``grad_x``/``grad_y`` keep the aggregated smoothed gradient used for
    non-maximum suppression downstream.
    """

    J: ScalarField2D
    g: ScalarField2D
    phi: ScalarField2D
    grad_x: np.ndarray
    grad_y: np.ndarray
    config: FeatureConfig


def _gaussian_gradients(channel: np.ndarray, sigma: float):
    # truncated separable kernels, radius about 3*sigma, reflective borders
    gx = ndimage.gaussian_filter(channel, sigma, order=(0, 1), mode="reflect", truncate=3.0)
    gy = ndimage.gaussian_filter(channel, sigma, order=(1, 0), mode="reflect", truncate=3.0)
    return gx, gy


def compute_edge_features(channels: list[np.ndarray] | np.ndarray, cfg: FeatureConfig | None = None) -> EdgeFeatures:
    """Gaussian-derivative edge features of a 1- or 3-channel image.

    J(x) = sqrt(sum_k |dx G_sigma * I_k|^2 + |dy G_sigma * I_k|^2), then
    g = J / max(J) (g = 0 everywhere when the image is constant) and
    phi = exp(tau * g) + w_tilde.
    """
    cfg = cfg or FeatureConfig()
    if isinstance(channels, np.ndarray) and channels.ndim == 2:
        channels = [channels]
    channels = [np.asarray(ch, dtype=np.float64) for ch in channels]
    if len(channels) not in (1, 3):
        raise GridError("expected 1 or 3 channels")
    shape = channels[0].shape
    if any(ch.shape != shape for ch in channels):
        raise GridError("channel dimensions differ")

    j2 = np.zeros(shape)
    sum_gx = np.zeros(shape)
    sum_gy = np.zeros(shape)
    for ch in channels:
        gx, gy = _gaussian_gradients(ch, cfg.sigma)
        j2 += gx * gx + gy * gy
        sum_gx += gx
        sum_gy += gy
    J = np.sqrt(j2)
    jmax = float(J.max())
    g = J / jmax if jmax > 0 else np.zeros(shape)
    phi = np.exp(cfg.tau * g) + cfg.w_tilde
    return EdgeFeatures(
        J=ScalarField2D(J),
        g=ScalarField2D(g),
        phi=ScalarField2D(phi),
        grad_x=sum_gx,
        grad_y=sum_gy,
        config=cfg,
    )


def proposals_occupancy(proposals: list, shape: tuple[int, int]) -> np.ndarray:
    """Union of proposal occupancies as a boolean array of the given shape."""
    occ = np.zeros(shape, dtype=bool)
    for prop in proposals:
        if isinstance(prop, GridMask):
            occ |= prop.mask
        elif isinstance(prop, Polyline):
            ix = np.round(prop.points[:, 0]).astype(int)
            iy = np.round(prop.points[:, 1]).astype(int)
            keep = (ix >= 0) & (ix < shape[1]) & (iy >= 0) & (iy < shape[0])
            occ[iy[keep], ix[keep]] = True
        else:  # BoundaryProposal-like with .occupancy
            occ |= prop.occupancy.mask
    return occ


def structural_potential(feat: EdgeFeatures, proposals: list) -> ScalarField2D:
    """phi times the proposal indicator: +inf on proposal points, phi elsewhere."""
    psi = feat.phi.values.copy()
    occ = proposals_occupancy(proposals, psi.shape)
    psi[occ] = np.inf
    return ScalarField2D(psi)


def segmentation_potential(feat: EdgeFeatures, cfg: FeatureConfig | None = None) -> ScalarField2D:
    """1 / (phi + eps): cheap to traverse along edges, expensive off them."""
    eps = (cfg or feat.config).epsilon
    return ScalarField2D(1.0 / (feat.phi.values + eps))

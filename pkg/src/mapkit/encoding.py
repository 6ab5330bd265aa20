"""Graph-vector construction: sincos positional encoding of resampled map
points concatenated with one-hot road-class embeddings.

Output layout per point: [x sin/cos pairs for k = 0..K-1,
y sin/cos pairs for k = 0..K-1, one-hot class].  The layout is fixed so
pretraining checkpoints stay valid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .scene import ROAD_CLASS_COUNT, LocalView, resample_points

DEFAULT_N_POINTS = 11


@dataclass(frozen=True)
class EncodingConfig:
    K: int = 8                  # frequencies per axis
    L: float = 100.0            # base wavelength, meters
    C: int = ROAD_CLASS_COUNT   # road class count

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.L <= 0:
            raise ValueError("L must be positive")
        if self.C < 1:
            raise ValueError("C must be >= 1")

    @property
    def d_pos(self) -> int:
        return 4 * self.K

    @property
    def d_point(self) -> int:
        return 4 * self.K + self.C


@dataclass(frozen=True)
class GraphVector:
    data: np.ndarray  # (N_l, N_p, D)

    @property
    def n_lines(self) -> int:
        return self.data.shape[0]

    @property
    def n_points(self) -> int:
        return self.data.shape[1]

    @property
    def d_point(self) -> int:
        return self.data.shape[2]


def sincos_encode_points(pts: np.ndarray, cfg: EncodingConfig) -> np.ndarray:
    """Vectorized sincos encoding, (..., 2) -> (..., 4K)."""
    pts = np.asarray(pts, dtype=np.float64)
    freqs = (2.0 ** np.arange(cfg.K)) * math.pi / cfg.L  # (K,)
    phase = pts[..., :, None] * freqs  # (..., 2, K)
    enc = np.stack([np.sin(phase), np.cos(phase)], axis=-1)  # (..., 2, K, 2)
    return enc.reshape(*pts.shape[:-1], 4 * cfg.K)


def sincos_encode_point(p, cfg: EncodingConfig) -> np.ndarray:
    return sincos_encode_points(np.asarray(p, dtype=np.float64), cfg)


def onehot_class(class_id: int, c: int) -> np.ndarray:
    if not 0 <= class_id < c:
        raise ValueError(f"class_id {class_id} outside [0, {c})")
    v = np.zeros(c)
    v[class_id] = 1.0
    return v


def build_graph_vector(view: LocalView, cfg: EncodingConfig,
                       n_points: int = DEFAULT_N_POINTS) -> GraphVector:
    """Resample every view line to n_points and encode each point."""
    if n_points < 2:
        raise ValueError("n_points must be >= 2")
    n_l = len(view.lines)
    data = np.zeros((n_l, n_points, cfg.d_point))
    for i, line in enumerate(view.lines):
        pts = resample_points(line.points, n_points)
        data[i, :, :cfg.d_pos] = sincos_encode_points(pts, cfg)
        data[i, :, cfg.d_pos:] = onehot_class(line.class_id, cfg.C)
    return GraphVector(data)

"""Pluggable model backends for detection and per-frame feature extraction.

Heavy pretrained models (face detectors, 478-point landmarkers, blendshape
regressors, face-recognition embedders) are consumed through small adapter
interfaces rather than reimplemented. Every adapter declares ``name`` and
``version`` strings, which get stamped into caches so features stay
attributable, plus ``thread_safe``; adapters that are not safe for concurrent
calls are serialized by the extraction pipeline.

The built-in adapters are deterministic, dependency-light stand-ins that make
the full pipeline runnable end to end (and testable) without downloading
weights. Production deployments register real adapters under new names; see
the README for the contract.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from .errors import BackendUnavailable, DimensionMismatch
from .ingest import FaceBox

BEHAVIORAL_DIM = 52
IDENTITY_DIM = 512
LANDMARK_POINTS = 478


@runtime_checkable
class FaceDetectorAdapter(Protocol):
    name: str
    version: str
    thread_safe: bool

    def detect(self, frame: np.ndarray) -> list[FaceBox]:
        """Return candidate face boxes for one H x W x C uint8 frame."""
        ...


@runtime_checkable
class LandmarkAdapter(Protocol):
    name: str
    version: str
    thread_safe: bool
    output_points: int
    output_dims: int

    def extract(self, crop: np.ndarray) -> np.ndarray | None:
        """Return (478, 3) landmarks for a face crop, or None on failure."""
        ...


@runtime_checkable
class BehavioralAdapter(Protocol):
    name: str
    version: str
    thread_safe: bool
    output_dim: int

    def coefficients(self, crop: np.ndarray) -> np.ndarray:
        """Return 52 expression-component activations for a face crop."""
        ...


@runtime_checkable
class IdentityAdapter(Protocol):
    name: str
    version: str
    thread_safe: bool
    output_dim: int

    def embedding(self, crop: np.ndarray) -> np.ndarray:
        """Return a 512-dim face-recognition embedding for a face crop."""
        ...


@dataclass
class BackendRegistry:
    """The four adapter slots the pipeline draws from."""

    face_detector: FaceDetectorAdapter | None = None
    landmark_extractor: LandmarkAdapter | None = None
    behavioral_extractor: BehavioralAdapter | None = None
    identity_extractor: IdentityAdapter | None = None

    def require(self, slot: str):
        adapter = getattr(self, slot)
        if adapter is None:
            raise BackendUnavailable(f"no {slot} backend registered")
        return adapter

    def versions(self) -> dict[str, str]:
        out = {}
        for slot in ("face_detector", "landmark_extractor", "behavioral_extractor", "identity_extractor"):
            adapter = getattr(self, slot)
            if adapter is not None:
                out[slot] = f"{adapter.name}:{adapter.version}"
        return out

    def validate(self) -> None:
        """Check declared output dimensionalities of the registered adapters."""
        lm = self.landmark_extractor
        if lm is not None and (lm.output_points, lm.output_dims) != (LANDMARK_POINTS, 3):
            raise DimensionMismatch(
                f"landmark backend {lm.name} declares {lm.output_points}x{lm.output_dims}, "
                f"pipeline needs {LANDMARK_POINTS}x3"
            )
        b = self.behavioral_extractor
        if b is not None and b.output_dim != BEHAVIORAL_DIM:
            raise DimensionMismatch(
                f"behavioral backend {b.name} declares {b.output_dim} dims, pipeline needs {BEHAVIORAL_DIM}"
            )
        i = self.identity_extractor
        if i is not None and i.output_dim != IDENTITY_DIM:
            raise DimensionMismatch(
                f"identity backend {i.name} declares {i.output_dim} dims, pipeline needs {IDENTITY_DIM}"
            )


def _to_gray(frame: np.ndarray) -> np.ndarray:
    arr = np.asarray(frame, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr.mean(axis=2)
    return arr


def _pool(gray: np.ndarray, rows: int, cols: int) -> np.ndarray:
    """Mean-pool a 2-D array onto a rows x cols grid (uneven bins allowed)."""
    r_edges = np.linspace(0, gray.shape[0], rows + 1).astype(int)
    c_edges = np.linspace(0, gray.shape[1], cols + 1).astype(int)
    out = np.empty((rows, cols))
    for i in range(rows):
        band = gray[r_edges[i] : r_edges[i + 1]]
        for j in range(cols):
            out[i, j] = band[:, c_edges[j] : c_edges[j + 1]].mean()
    return out


class FullFrameDetector:
    """Trivial detector: the whole frame is one face box (fixture/debug use)."""

    name = "full-frame"
    version = "1"
    thread_safe = True

    def detect(self, frame: np.ndarray) -> list[FaceBox]:
        h, w = frame.shape[:2]
        return [FaceBox(x=0, y=0, width=w, height=h, confidence=1.0)]


class HaarCascadeDetector:
    """OpenCV Haar-cascade frontal face detector (OpenCV 4.x builds).

    Cascade stages give no calibrated score; the stage level weight is squashed
    through a sigmoid as a monotone confidence proxy. OpenCV 5 dropped the
    cascade API, so construction raises BackendUnavailable there.
    """

    name = "opencv-haar"
    version = "frontalface-default"
    thread_safe = False  # cv2.CascadeClassifier keeps mutable internal state

    def __init__(self):
        import cv2

        self._cv2 = cv2
        if not hasattr(cv2, "CascadeClassifier"):
            raise BackendUnavailable(
                f"this OpenCV build ({cv2.__version__}) has no CascadeClassifier; "
                "register a real face-detector adapter or use 'full-frame'"
            )
        path = cv2.data.haarcascades + "haarcascade_frontalface_default.xml"
        self._cascade = cv2.CascadeClassifier(path)
        if self._cascade.empty():
            raise BackendUnavailable(f"could not load Haar cascade from {path}")

    def detect(self, frame: np.ndarray) -> list[FaceBox]:
        gray = self._cv2.cvtColor(frame, self._cv2.COLOR_BGR2GRAY) if frame.ndim == 3 else frame
        rects, _, weights = self._cascade.detectMultiScale3(gray, outputRejectLevels=True)
        boxes = []
        for (x, y, w, h), lw in zip(rects, np.ravel(weights)):
            conf = float(1.0 / (1.0 + np.exp(-lw / 2.0)))
            boxes.append(FaceBox(x=int(x), y=int(y), width=int(w), height=int(h), confidence=conf))
        return boxes


class IntensityGridLandmarks:
    """Deterministic 478-point pseudo-landmarker.

    Points sit on a fixed 22 x 22 grid in normalized crop coordinates; each
    point is perturbed by the local mean intensity so output depends on crop
    content but is exactly reproducible. Not a face model; a stand-in adapter
    for pipelines and tests.
    """

    name = "intensity-grid"
    version = "1"
    thread_safe = True
    output_points = LANDMARK_POINTS
    output_dims = 3

    _GRID = 22  # 22*22 = 484 cells, first 478 used

    def extract(self, crop: np.ndarray) -> np.ndarray | None:
        gray = _to_gray(crop) / 255.0
        cells = _pool(gray, self._GRID, self._GRID).ravel()[:LANDMARK_POINTS]
        g = self._GRID
        ys, xs = np.divmod(np.arange(LANDMARK_POINTS), g)
        points = np.empty((LANDMARK_POINTS, 3), dtype=np.float32)
        points[:, 0] = (xs + 0.5) / g + (cells - 0.5) * 0.02
        points[:, 1] = (ys + 0.5) / g + (cells - 0.5) * 0.02
        points[:, 2] = cells * 0.1
        return points


class ConstantLandmarks:
    """Fixed-grid landmarker: identical output for every crop (test fixture)."""

    name = "constant-grid"
    version = "1"
    thread_safe = True
    output_points = LANDMARK_POINTS
    output_dims = 3

    def __init__(self):
        g = 22
        ys, xs = np.divmod(np.arange(LANDMARK_POINTS), g)
        self._points = np.stack(
            [(xs + 0.5) / g, (ys + 0.5) / g, np.zeros(LANDMARK_POINTS)], axis=1
        ).astype(np.float32)

    def extract(self, crop: np.ndarray) -> np.ndarray | None:
        return self._points.copy()


class IntensityHistogramBehavioral:
    """52-bin intensity histogram as a deterministic behavioral stand-in."""

    name = "intensity-hist"
    version = "1"
    thread_safe = True
    output_dim = BEHAVIORAL_DIM

    def coefficients(self, crop: np.ndarray) -> np.ndarray:
        gray = _to_gray(crop)
        hist, _ = np.histogram(gray, bins=BEHAVIORAL_DIM, range=(0.0, 256.0))
        return (hist / max(1, gray.size)).astype(np.float32)


class PooledPixelIdentity:
    """512-dim embedding from pooled intensities and horizontal gradients."""

    name = "pooled-pixels"
    version = "1"
    thread_safe = True
    output_dim = IDENTITY_DIM

    def embedding(self, crop: np.ndarray) -> np.ndarray:
        gray = _to_gray(crop) / 255.0
        intensity = _pool(gray, 16, 16).ravel()
        grad = _pool(np.abs(np.diff(gray, axis=1, prepend=gray[:, :1])), 16, 16).ravel()
        vec = np.concatenate([intensity, grad]).astype(np.float32)
        vec[0] += 1e-3  # never exactly the zero vector
        return vec


BUILTIN_FACTORIES = {
    "face_detector": {
        "full-frame": FullFrameDetector,
        "opencv-haar": HaarCascadeDetector,
    },
    "landmark_extractor": {
        "intensity-grid": IntensityGridLandmarks,
        "constant-grid": ConstantLandmarks,
    },
    "behavioral_extractor": {
        "intensity-hist": IntensityHistogramBehavioral,
    },
    "identity_extractor": {
        "pooled-pixels": PooledPixelIdentity,
    },
}


def registry_from_names(names: dict[str, str]) -> BackendRegistry:
    """Build a registry from {slot: builtin-name}; unknown names raise."""
    registry = BackendRegistry()
    for slot, name in names.items():
        if slot not in BUILTIN_FACTORIES:
            raise BackendUnavailable(f"unknown backend slot {slot!r}")
        factories = BUILTIN_FACTORIES[slot]
        if name not in factories:
            known = ", ".join(sorted(factories))
            raise BackendUnavailable(f"unknown {slot} backend {name!r} (built-ins: {known})")
        setattr(registry, slot, factories[name]())
    registry.validate()
    return registry


def default_registry() -> BackendRegistry:
    return registry_from_names(
        {
            "face_detector": "opencv-haar",
            "landmark_extractor": "intensity-grid",
            "behavioral_extractor": "intensity-hist",
            "identity_extractor": "pooled-pixels",
        }
    )

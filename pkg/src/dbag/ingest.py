"""Video ingestion: decode frames, find the primary face, produce 224 x 224
crops and 478-point landmark sequences.

Frames with no qualifying face (or a failing landmark backend) are dropped
rather than interpolated; downstream windowing runs on the surviving sequence
with source indices recorded. The primary face is chosen per frame
independently, by box area, without identity tracking.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from .errors import BackendUnavailable, DecodeError, DimensionMismatch, EmptyCandidates

if TYPE_CHECKING:
    from .backends import BackendRegistry

log = logging.getLogger(__name__)

CROP_SIZE = 224
MIN_FACE_DEFAULT = 120
LANDMARK_POINTS = 478

_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


@dataclass(frozen=True)
class FaceBox:
    """Axis-aligned face detection in pixel coordinates (top-left origin)."""

    x: int
    y: int
    width: int
    height: int
    confidence: float = 1.0

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"face box must have positive size, got {self.width}x{self.height}")

    @property
    def area(self) -> int:
        return self.width * self.height

    def clamped(self, frame_w: int, frame_h: int) -> "FaceBox | None":
        """Intersect with frame bounds; None when nothing is left."""
        x0, y0 = max(0, self.x), max(0, self.y)
        x1 = min(frame_w, self.x + self.width)
        y1 = min(frame_h, self.y + self.height)
        if x1 - x0 <= 0 or y1 - y0 <= 0:
            return None
        return FaceBox(x=x0, y=y0, width=x1 - x0, height=y1 - y0, confidence=self.confidence)


@dataclass
class VideoFrames:
    """Decoded frame stack (N, H, W, C) with source metadata."""

    frames: np.ndarray
    fps: float
    video_id: str

    def __post_init__(self):
        if self.frames.ndim != 4 or self.frames.shape[0] < 1:
            raise ValueError(f"frames must be a non-empty (N, H, W, C) stack, got {self.frames.shape}")

    def __len__(self) -> int:
        return int(self.frames.shape[0])


@dataclass
class FaceTrack:
    """Per-frame primary-face box, None where no detection survived."""

    boxes: list[FaceBox | None]

    @property
    def coverage(self) -> float:
        if not self.boxes:
            return 0.0
        return sum(b is not None for b in self.boxes) / len(self.boxes)


@dataclass
class FaceFrames:
    """Cropped faces, each exactly CROP_SIZE x CROP_SIZE, plus source indices."""

    crops: np.ndarray
    source_indices: list[int]

    def __post_init__(self):
        if len(self.source_indices) != self.crops.shape[0]:
            raise ValueError("source_indices must align with crops")
        if self.crops.shape[0] and self.crops.shape[1:3] != (CROP_SIZE, CROP_SIZE):
            raise ValueError(f"crops must be {CROP_SIZE}x{CROP_SIZE}, got {self.crops.shape[1:3]}")

    def __len__(self) -> int:
        return int(self.crops.shape[0])


@dataclass(frozen=True)
class LandmarkFrame:
    """478 (x, y, z) landmarks in normalized crop coordinates."""

    points: np.ndarray

    def __post_init__(self):
        pts = self.points
        if pts.shape != (LANDMARK_POINTS, 3):
            raise ValueError(f"expected ({LANDMARK_POINTS}, 3) landmarks, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("landmark coordinates must be finite")


def read_video(path: str | Path, video_id: str | None = None, fps_default: float = 30.0) -> VideoFrames:
    """Decode a video into a VideoFrames stack.

    Accepts a video file (anything OpenCV can open), a directory of image
    frames (sorted by filename), or a .npy stack of (N, H, W[, C]) uint8.
    """
    path = Path(path)
    vid = video_id or path.stem
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES)
        if not files:
            raise DecodeError(f"no image frames in directory {path}")
        import cv2

        frames = []
        for p in files:
            img = cv2.imread(str(p))
            if img is None:
                raise DecodeError(f"unreadable frame image {p}")
            frames.append(img)
        try:
            stack = np.stack(frames)
        except ValueError as exc:
            raise DecodeError(f"frames in {path} disagree on shape") from exc
        return VideoFrames(frames=stack, fps=fps_default, video_id=vid)
    if path.suffix.lower() == ".npy":
        if not path.exists():
            raise DecodeError(f"video stack not found: {path}")
        arr = np.load(path)
        if arr.ndim == 3:
            arr = arr[..., None]
        if arr.ndim != 4 or arr.shape[0] < 1:
            raise DecodeError(f"{path}: expected (N, H, W[, C]) array, got {arr.shape}")
        return VideoFrames(frames=np.ascontiguousarray(arr), fps=fps_default, video_id=vid)

    import cv2

    cap = cv2.VideoCapture(str(path))
    if not cap.isOpened():
        raise DecodeError(f"cannot open video {path}")
    fps = cap.get(cv2.CAP_PROP_FPS) or 0.0
    frames = []
    while True:
        ok, frame = cap.read()
        if not ok:
            break
        frames.append(frame)
    cap.release()
    if not frames:
        raise DecodeError(f"no decodable frames in {path}")
    return VideoFrames(frames=np.stack(frames), fps=fps if fps > 0 else fps_default, video_id=vid)


def filter_min_face(candidates: Iterable[FaceBox], min_face: int) -> list[FaceBox]:
    """Drop boxes smaller than min_face pixels in either dimension."""
    return [b for b in candidates if b.width >= min_face and b.height >= min_face]


def select_primary_face(candidates: Sequence[FaceBox]) -> FaceBox:
    """Largest box by area; ties broken by confidence, then lowest index."""
    if not candidates:
        raise EmptyCandidates("no candidate boxes to select from")
    best = candidates[0]
    best_key = (best.area, best.confidence)
    for box in candidates[1:]:
        key = (box.area, box.confidence)
        if key > best_key:
            best, best_key = box, key
    return best


def detect_faces(
    video: VideoFrames, min_face: int = MIN_FACE_DEFAULT, registry: "BackendRegistry | None" = None
) -> FaceTrack:
    """Run the detector backend per frame and keep the primary qualifying face."""
    if min_face < 1:
        raise ValueError("min_face must be >= 1")
    if registry is None or registry.face_detector is None:
        raise BackendUnavailable("no face_detector backend registered")
    detector = registry.face_detector
    h, w = video.frames.shape[1:3]
    boxes: list[FaceBox | None] = []
    for frame in video.frames:
        raw = detector.detect(frame)
        clamped = [c for b in raw if (c := b.clamped(w, h)) is not None]
        survivors = filter_min_face(clamped, min_face)
        boxes.append(select_primary_face(survivors) if survivors else None)
    return FaceTrack(boxes=boxes)


def _square_region(box: FaceBox, frame_w: int, frame_h: int) -> tuple[int, int, int, int]:
    """Pad the shorter box side symmetrically to a square, kept inside the frame.

    When the square does not fit the frame it is shifted inward, and clipped as
    a last resort (region may then be non-square; the resize normalizes it).
    """
    side = max(box.width, box.height)
    x0 = int(round(box.x + box.width / 2 - side / 2))
    y0 = int(round(box.y + box.height / 2 - side / 2))
    x0 = min(max(x0, 0), max(0, frame_w - side))
    y0 = min(max(y0, 0), max(0, frame_h - side))
    return x0, y0, min(frame_w, x0 + side), min(frame_h, y0 + side)


def crop_and_resize(video: VideoFrames, track: FaceTrack, size: int = CROP_SIZE) -> FaceFrames:
    """Extract one size x size crop per tracked frame; boxless frames are omitted."""
    if len(track.boxes) != len(video):
        raise ValueError(f"track length {len(track.boxes)} does not match video length {len(video)}")
    import cv2

    h, w = video.frames.shape[1:3]
    crops = []
    kept = []
    for idx, box in enumerate(track.boxes):
        if box is None:
            continue
        x0, y0, x1, y1 = _square_region(box, w, h)
        region = video.frames[idx, y0:y1, x0:x1]
        interp = cv2.INTER_AREA if (x1 - x0) > size else cv2.INTER_LINEAR
        resized = cv2.resize(region, (size, size), interpolation=interp)
        if resized.ndim == 2:
            resized = resized[..., None]
        crops.append(resized)
        kept.append(idx)
    if crops:
        stack = np.stack(crops)
    else:
        stack = np.empty((0, size, size, video.frames.shape[3]), dtype=video.frames.dtype)
    return FaceFrames(crops=stack, source_indices=kept)


def extract_landmarks(
    faces: FaceFrames, registry: "BackendRegistry"
) -> tuple[list[LandmarkFrame], list[int]]:
    """Landmark each crop; returns (frames, kept crop positions).

    Crops where the backend fails or emits non-finite coordinates are dropped
    (and logged) so callers can subset the aligned crop stack.
    """
    adapter = registry.require("landmark_extractor")
    results: list[LandmarkFrame] = []
    kept: list[int] = []
    for pos in range(len(faces)):
        points = adapter.extract(faces.crops[pos])
        if points is None:
            log.warning("landmark backend %s failed on crop %d", adapter.name, pos)
            continue
        points = np.asarray(points, dtype=np.float32)
        if points.shape != (LANDMARK_POINTS, 3):
            raise DimensionMismatch(
                f"landmark backend {adapter.name} emitted {points.shape}, expected ({LANDMARK_POINTS}, 3)"
            )
        if not np.all(np.isfinite(points)):
            log.warning("dropping crop %d: non-finite landmarks from %s", pos, adapter.name)
            continue
        results.append(LandmarkFrame(points=points))
        kept.append(pos)
    return results, kept

"""Synthetic continuous-sign videos: a Gaussian blob tracing one trajectory per gloss.

Each gloss id maps to a motion direction, so labels are recoverable only from
motion: horizontal-only (LEFT, RIGHT), vertical-only (UP, DOWN) and mixed
(DIAG_UR, ZIGZAG) glosses exercise both decoupled orientations.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .io import read_tensor, write_tensor

GLOSS_KINDS = ("UP", "DOWN", "LEFT", "RIGHT", "DIAG_UR", "ZIGZAG")
_S = 1.0 / np.sqrt(2.0)
# net (d_row, d_col) direction of each kind; rows grow downwards
DIRECTIONS = {
    "UP": (-1.0, 0.0),
    "DOWN": (1.0, 0.0),
    "LEFT": (0.0, -1.0),
    "RIGHT": (0.0, 1.0),
    "DIAG_UR": (-_S, _S),
    "ZIGZAG": (_S, -_S),
}
MANIFEST_NAME = "manifest.json"
FORMAT_VERSION = 1
SPLITS = ("train", "dev")


@dataclass
class SynthConfig:
    size: int = 32
    channels: int = 3
    sigma: float = 2.0
    radius: float = 4.0
    displacement: float = 6.0
    min_displacement: float = 3.0
    zigzag_amplitude: float = 1.5
    duration_range: tuple = (8, 13)
    label_length: tuple = (2, 5)
    noise_amplitude: float = 0.05
    background_level: float = 0.1
    intensity: tuple = (0.9, 0.75, 0.6)
    vocab_size: int = 6

    def __post_init__(self):
        self.duration_range = tuple(self.duration_range)
        self.label_length = tuple(self.label_length)
        self.intensity = tuple(self.intensity)
        if not 1 <= self.vocab_size <= len(GLOSS_KINDS):
            raise ValueError(f"vocab_size must be in [1, {len(GLOSS_KINDS)}]")
        if self.noise_amplitude > 0.05:
            raise ValueError("background noise amplitude is capped at 0.05")
        lo, hi = self.duration_range
        if not 1 <= lo <= hi:
            raise ValueError(f"bad duration range {self.duration_range}")
        if len(self.intensity) != self.channels:
            raise ValueError("need one blob intensity per channel")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k in ("duration_range", "label_length", "intensity"):
            d[k] = list(d[k])
        return d


@dataclass
class SyntheticSample:
    video: np.ndarray
    label: list
    seed: tuple
    centers: np.ndarray
    durations: list = field(default_factory=list)

    @property
    def kinds(self) -> list:
        return [GLOSS_KINDS[i - 1] for i in self.label]


def vocabulary(vocab_size: int = 6) -> dict:
    return {i + 1: GLOSS_KINDS[i] for i in range(vocab_size)}


def ease(s: np.ndarray) -> np.ndarray:
    """Cosine ease-in/ease-out: strictly increasing on [0, 1], flat at both ends.

    The blob slows to a near stop at every gloss boundary, which is what
    lets a model count back-to-back repeats of the same gloss.
    """
    return 0.5 * (1.0 - np.cos(np.pi * s))


def _gloss_offsets(kind: str, duration: int, magnitude: float, amplitude: float) -> np.ndarray:
    """Positions relative to the gloss start after each of its frames."""
    s = ease(np.arange(1, duration + 1) / duration)
    dr, dc = DIRECTIONS[kind]
    rows, cols = dr * magnitude * s, dc * magnitude * s
    if kind == "ZIGZAG":
        # two triangle-wave periods across the gloss, zero at both ends
        rows = rows + amplitude * (2 / np.pi) * np.arcsin(np.sin(4 * np.pi * s))
    return np.stack([rows, cols], axis=1)


def plan_trajectory(label: Sequence[int], durations: Sequence[int], cfg: SynthConfig, rng) -> np.ndarray:
    """Blob centre for every frame (``T_raw x 2``), kept inside the frame.

    All glosses of a sample share one displacement magnitude; it is shrunk
    when the whole path would not fit inside the usable area.
    """
    lo, hi = cfg.radius, cfg.size - 1 - cfg.radius
    span = hi - lo
    scale = 1.0
    for _ in range(50):
        path = _chain(label, durations, cfg.displacement * scale, cfg.zigzag_amplitude * scale)
        extent = path.max(axis=0) - path.min(axis=0)
        if extent.max() <= span:
            break
        scale *= span / extent.max() * 0.999
    else:
        raise RuntimeError("could not fit trajectory")
    if cfg.displacement * scale < cfg.min_displacement:
        raise ValueError("trajectory needs a displacement below the configured minimum")
    pmin, pmax = path.min(axis=0), path.max(axis=0)
    start = rng.uniform(lo - pmin, hi - pmax)
    return path + start


def _chain(label, durations, magnitude, amplitude) -> np.ndarray:
    pos = np.zeros(2)
    pts = [pos[None]]
    for gid, dur in zip(label, durations):
        offs = _gloss_offsets(GLOSS_KINDS[gid - 1], int(dur), magnitude, amplitude)
        pts.append(pos + offs)
        pos = pos + offs[-1]
    # the origin only anchors the chain; frames start after the first step
    return np.concatenate(pts, axis=0)[1:]


def render(centers: np.ndarray, background: np.ndarray, cfg: SynthConfig) -> np.ndarray:
    grid = np.arange(cfg.size, dtype=np.float64)
    dr = grid[None, :] - centers[:, 0:1]
    dc = grid[None, :] - centers[:, 1:2]
    g = np.exp(-(dr[:, :, None] ** 2 + dc[:, None, :] ** 2) / (2 * cfg.sigma ** 2))
    inten = np.asarray(cfg.intensity)[:, None, None, None]
    video = background[:, None] + inten * g[None]
    return np.clip(video, 0.0, 1.0).astype(np.float32)


def generate_sample(seed, cfg: SynthConfig | None = None) -> SyntheticSample:
    """Render one labelled clip; a pure function of ``(seed, cfg)``."""
    cfg = cfg or SynthConfig()
    rng = np.random.default_rng(seed)
    lo_len, hi_len = cfg.label_length
    n = int(rng.integers(lo_len, hi_len + 1))
    label = [int(v) for v in rng.integers(1, cfg.vocab_size + 1, size=n)]
    d_lo, d_hi = cfg.duration_range
    durations = [int(d) for d in rng.integers(d_lo, d_hi + 1, size=n)]
    centers = plan_trajectory(label, durations, cfg, rng)
    n_raw = centers.shape[0]
    n_t = -(-n_raw // 4) * 4
    if n_t > n_raw:
        centers = np.concatenate([centers, np.repeat(centers[-1:], n_t - n_raw, axis=0)])
    background = cfg.background_level + rng.uniform(0.0, cfg.noise_amplitude,
                                                    size=(cfg.channels, cfg.size, cfg.size))
    video = render(centers, background, cfg)
    seed_t = tuple(seed) if isinstance(seed, (list, tuple)) else (int(seed),)
    return SyntheticSample(video, label, seed_t, centers, durations)


def sample_seed(seed: int, split: str, index: int) -> tuple:
    return (int(seed), SPLITS.index(split), int(index))


def generate_dataset(seed: int, counts: dict, out_dir, cfg: SynthConfig | None = None) -> dict:
    """Write every split's clips as OLMT tensors plus a JSON manifest."""
    cfg = cfg or SynthConfig()
    out = Path(out_dir)
    try:
        (out / "tensors").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {out}: {exc}") from exc
    manifest = {
        "format_version": FORMAT_VERSION,
        "blank": 0,
        "vocabulary": {str(k): v for k, v in vocabulary(cfg.vocab_size).items()},
        "generator": {"seed": int(seed), "params": cfg.to_dict()},
        "splits": {},
    }
    for split in SPLITS:
        records = []
        for i in range(int(counts.get(split, 0))):
            s = sample_seed(seed, split, i)
            sample = generate_sample(s, cfg)
            sid = f"{split}_{i:05d}"
            rel = f"tensors/{sid}.olmt"
            try:
                write_tensor(out / rel, sample.video)
            except OSError as exc:
                raise OSError(f"cannot write {out / rel}: {exc}") from exc
            records.append({"id": sid, "path": rel, "label": sample.label, "seed": list(s),
                            "frames": int(sample.video.shape[1])})
        manifest["splits"][split] = records
    with open(out / MANIFEST_NAME, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return manifest


class DatasetError(RuntimeError):
    pass


def load_manifest(data_dir) -> dict:
    path = Path(data_dir) / MANIFEST_NAME
    try:
        with open(path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise DatasetError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise DatasetError(f"{path}: unsupported format version {manifest.get('format_version')}")
    return manifest


def load_split(data_dir, split: str) -> list:
    """``[(id, video array, label), ...]`` for one split, in manifest order."""
    manifest = load_manifest(data_dir)
    if split not in manifest["splits"]:
        raise DatasetError(f"split {split!r} not in {Path(data_dir) / MANIFEST_NAME}")
    out = []
    for rec in manifest["splits"][split]:
        path = os.path.join(data_dir, rec["path"])
        try:
            video = read_tensor(path).data
        except OSError as exc:
            raise DatasetError(f"cannot read {path}: {exc}") from exc
        out.append((rec["id"], video, list(rec["label"])))
    return out


def iter_split(data_dir, split: str) -> Iterator:
    yield from load_split(data_dir, split)

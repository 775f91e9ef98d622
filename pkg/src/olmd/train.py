"""Training, evaluation and run-configuration handling."""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .checkpoint import load_checkpoint, save_checkpoint
from .data import load_manifest, load_split
from .losses import LossConfig, ctc_min_frames, greedy_decode, total_loss
from .metrics import edit_alignment, wer
from .model import OLMD, ConfigError, ModelConfig
from .optim import AdamState, adam_step
from .tensor import Tensor, no_grad

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    pass


@dataclass
class OptimConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-3


@dataclass
class TrainConfig:
    epochs: int = 30
    milestones: tuple = (15, 24)
    factor: float = 0.3
    batch_size: int = 2
    seed: int = 0
    jitter_prob: float = 0.2
    jitter_scale: float = 0.2
    data: Optional[str] = None
    out: Optional[str] = None

    def __post_init__(self):
        self.milestones = tuple(int(m) for m in self.milestones)
        if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
            raise ConfigError(f"milestones must be strictly increasing, got {self.milestones}")
        if not 0 < self.factor <= 1:
            raise ConfigError(f"factor must lie in (0, 1], got {self.factor}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "loss": dataclasses.asdict(self.loss),
            "optim": dataclasses.asdict(self.optim),
            "train": {**dataclasses.asdict(self.train), "milestones": list(self.train.milestones)},
        }


_SECTIONS = {"model": ModelConfig, "loss": LossConfig, "optim": OptimConfig, "train": TrainConfig}


def lr_at(epoch: int, cfg: RunConfig) -> float:
    """Learning rate used during ``epoch`` (1-based) under the step schedule."""
    drops = sum(1 for m in cfg.train.milestones if epoch >= m)
    return cfg.optim.lr * cfg.train.factor ** drops


def _build(values: dict) -> RunConfig:
    parts = {}
    for section, cls in _SECTIONS.items():
        given = values.get(section, {})
        names = {f.name for f in dataclasses.fields(cls)}
        for key in given:
            if key not in names:
                raise ConfigError(f"unknown config key {section}.{key}")
        try:
            parts[section] = cls(**given)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid {section} config: {exc}") from exc
    return RunConfig(**parts)


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read a YAML run config; ``overrides`` maps ``section.key`` to values
    and wins over the file. Unknown keys are errors."""
    values: dict = {}
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        try:
            loaded = yaml.safe_load(text)
        except yaml.MarkedYAMLError as exc:
            mark = exc.problem_mark
            line = mark.line + 1 if mark is not None else "?"
            raise ConfigError(f"{path}:{line}: {exc.problem}") from exc
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        for section, body in loaded.items():
            if section not in _SECTIONS:
                raise ConfigError(f"unknown config key {section}")
            if body is None:
                body = {}
            if not isinstance(body, dict):
                raise ConfigError(f"{path}: section {section} must be a mapping")
            values[section] = dict(body)
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if section not in _SECTIONS or not key:
            raise ConfigError(f"unknown config key {dotted}")
        values.setdefault(section, {})[key] = value
    return _build(values)


def dump_config(cfg: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=True)


def temporal_jitter(video: np.ndarray, label, rng, prob: float, scale: float) -> np.ndarray:
    """With probability ``prob`` resample the clip to a length within +/-``scale``.

    The new length stays a multiple of 4 and long enough for CTC at the
    quarter frame rate; otherwise the clip is returned unchanged.
    """
    u = rng.random()
    factor = rng.uniform(1 - scale, 1 + scale)
    if u >= prob:
        return video
    n_t = video.shape[1]
    new_t = max(4, int(round(n_t * factor / 4)) * 4)
    if new_t == n_t or new_t // 4 < ctc_min_frames(label):
        return video
    idx = np.minimum((np.arange(new_t) * n_t / new_t).astype(np.int64), n_t - 1)
    return video[:, idx]


def decode_split(model: OLMD, samples) -> list:
    """``[(id, reference, hypothesis), ...]`` using the BiLSTM output."""
    out = []
    with no_grad():
        for sid, video, label in samples:
            _, _, glob = model(Tensor(video))
            out.append((sid, list(label), greedy_decode(glob)))
    return out


def _check_vocab(manifest: dict, cfg: ModelConfig, source) -> None:
    n = len(manifest["vocabulary"])
    if n != cfg.vocab_size:
        raise ConfigError(f"dataset {source} has {n} glosses but the model expects {cfg.vocab_size}")


def _fmt(x: float) -> float:
    return float(np.float64(x))


def train(cfg: RunConfig, data_dir, out_dir, echo=print) -> list:
    """Train and keep the best-dev checkpoint in ``out_dir/best``.

    Returns the per-epoch metrics records; they are also written to
    ``out_dir/metrics.jsonl`` (deterministic) while wall times go to
    ``out_dir/timing.jsonl``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "config.yaml")
    manifest = load_manifest(data_dir)
    _check_vocab(manifest, cfg.model, data_dir)
    train_set = load_split(data_dir, "train")
    dev_set = load_split(data_dir, "dev")
    if not train_set or not dev_set:
        raise ConfigError(f"dataset {data_dir} needs non-empty train and dev splits")

    seed = cfg.train.seed
    model = OLMD(cfg.model, seed=seed)
    params = model.parameters()
    state = AdamState(lr=cfg.optim.lr, beta1=cfg.optim.beta1, beta2=cfg.optim.beta2,
                      eps=cfg.optim.eps, weight_decay=cfg.optim.weight_decay)
    records = []
    best = None
    metrics_path, timing_path = out / "metrics.jsonl", out / "timing.jsonl"
    metrics_path.write_text("")
    timing_path.write_text("")
    bs = cfg.train.batch_size
    for epoch in range(1, cfg.train.epochs + 1):
        t0 = time.perf_counter()
        state.lr = lr_at(epoch, cfg)
        order = np.random.default_rng([seed, epoch]).permutation(len(train_set))
        batch_losses = []
        for b, start in enumerate(range(0, len(order), bs)):
            idx = order[start:start + bs]
            losses = []
            for i in idx:
                sid, video, label = train_set[i]
                rng = np.random.default_rng([seed, epoch, int(i)])
                clip = temporal_jitter(video, label, rng, cfg.train.jitter_prob, cfg.train.jitter_scale)
                losses.append(total_loss(model(Tensor(clip)), label, cfg.loss))
            loss = losses[0]
            for extra in losses[1:]:
                loss = loss + extra
            loss = loss * (1.0 / len(losses))
            value = float(loss.data)
            if not np.isfinite(value):
                names = [train_set[i][0] for i in idx]
                raise NumericalError(f"non-finite loss {value} at epoch {epoch} batch {b} (samples {names})")
            loss.backward()
            adam_step(params, state)
            batch_losses.append(value)

        decoded = decode_split(model, dev_set)
        dev_wer, del_rate, ins_rate = wer([(r, h) for _, r, h in decoded])
        rec = {"epoch": epoch, "lr": _fmt(state.lr), "train_loss": _fmt(np.mean(batch_losses)),
               "dev_wer": _fmt(dev_wer), "del_rate": _fmt(del_rate), "ins_rate": _fmt(ins_rate)}
        records.append(rec)
        elapsed = time.perf_counter() - t0
        with open(metrics_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
        with open(timing_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps({"epoch": epoch, "wall_time": round(elapsed, 3)}) + "\n")
        echo(f"epoch {epoch:3d}  lr {state.lr:.2e}  loss {rec['train_loss']:.4f}  "
             f"dev WER {dev_wer:.4f} (del {del_rate:.4f} / ins {ins_rate:.4f})  {elapsed:.1f}s")
        if best is None or dev_wer < best:
            best = dev_wer
            save_checkpoint(model, out / "best", meta={"epoch": epoch, "dev_wer": _fmt(dev_wer),
                                                       "seed": seed})
    save_checkpoint(model, out / "last", meta={"epoch": cfg.train.epochs, "seed": seed})
    return records


def evaluate(ckpt_dir, data_dir, split: str = "dev", out_dir=None, echo=print) -> dict:
    """Decode a split with a checkpoint and write the per-sample report."""
    model, meta = load_checkpoint(ckpt_dir)
    manifest = load_manifest(data_dir)
    _check_vocab(manifest, model.cfg, data_dir)
    decoded = decode_split(model, load_split(data_dir, split))
    lines = []
    for sid, ref, hyp in decoded:
        a = edit_alignment(ref, hyp)
        lines.append(f"{sid}\tref={' '.join(map(str, ref))}\thyp={' '.join(map(str, hyp))}\t"
                     f"sub={a.sub}\tins={a.ins}\tdel={a.dele}")
    w, d, i = wer([(r, h) for _, r, h in decoded])
    summary = {"split": split, "samples": len(decoded), "wer": _fmt(w), "del_rate": _fmt(d),
               "ins_rate": _fmt(i), "checkpoint_meta": meta}
    lines.append(f"SUMMARY\twer={w:.6f}\tdel={d:.6f}\tins={i:.6f}")
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"eval_{split}.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
        with open(out / f"eval_{split}.json", "w", encoding="utf-8") as fh:
            json.dump({"summary": summary,
                       "samples": [{"id": s, "ref": r, "hyp": h} for s, r, h in decoded]},
                      fh, indent=1, sort_keys=True)
    echo(lines[-1])
    return summary

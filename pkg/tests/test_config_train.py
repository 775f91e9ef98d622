import importlib
import json

import numpy as np
import pytest
import yaml

from olmd.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from olmd.data import SynthConfig, generate_dataset, generate_sample
from olmd.losses import total_loss
from olmd.model import OLMD, ConfigError, ModelConfig
from olmd.optim import AdamState, adam_step
from olmd.tensor import Tensor

# the package re-exports a train() function under the same name as the module
T = importlib.import_module("olmd.train")

TINY_MODEL = {"model.input_size": 16, "model.channels": [4, 4, 4, 4], "model.head_width": 8,
              "model.lstm_hidden": 8, "model.lma_reduction": 2}


@pytest.fixture(scope="module")
def tiny_data(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny")
    generate_dataset(3, {"train": 4, "dev": 2}, out, SynthConfig(size=16, sigma=1.5, radius=3,
                                                                 displacement=3, min_displacement=1.5))
    return out


def tiny_cfg(**extra):
    return T.load_config(None, {**TINY_MODEL, "train.epochs": 2, **extra})


class TestConfig:
    def test_empty_file_gives_defaults(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("")
        assert T.load_config(p) == T.RunConfig()

    def test_defaults(self):
        cfg = T.RunConfig()
        assert (cfg.optim.lr, cfg.optim.weight_decay) == (1e-3, 1e-3)
        assert (cfg.train.epochs, cfg.train.milestones, cfg.train.factor, cfg.train.batch_size) == (30, (15, 24), 0.3, 2)
        assert (cfg.loss.gamma1, cfg.loss.gamma2) == (1.0, 25.0)

    def test_override_beats_file(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("loss:\n  gamma2: 25\n")
        assert T.load_config(p, {"loss.gamma2": 10.0}).loss.gamma2 == 10.0

    def test_unknown_key_named(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("loss:\n  gama2: 3\n")
        with pytest.raises(ConfigError, match="gama2"):
            T.load_config(p)

    def test_unknown_section(self):
        with pytest.raises(ConfigError, match="sched"):
            T.load_config(None, {"sched.x": 1})

    def test_parse_error_has_line(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("train:\n  epochs: 3\n  seed: [1\n")
        with pytest.raises(ConfigError, match=r"c\.yaml:\d"):
            T.load_config(p)

    @pytest.mark.parametrize("over", [{"train.milestones": [5, 5]}, {"train.factor": 0.0},
                                      {"train.batch_size": 0}, {"model.lma_context": 4}])
    def test_invalid_values(self, over):
        with pytest.raises(ConfigError):
            T.load_config(None, over)

    def test_full_scale_schedule(self):
        cfg = T.load_config(None, {"train.milestones": [25, 40]})
        assert T.lr_at(24, cfg) == 0.001
        assert T.lr_at(25, cfg) == pytest.approx(0.0003)
        assert T.lr_at(39, cfg) == pytest.approx(0.0003)
        assert T.lr_at(40, cfg) == pytest.approx(0.00009)

    @pytest.mark.parametrize("key,value,expect", [
        ("decouple_stages", [3, 4], (3, 4)), ("lma_context", None, None), ("lma_context", 11, 11),
        ("decouple_op", "max", "max"), ("omp_mode", "non-cascaded", "non-cascaded"),
        ("stage_coupling", False, False), ("cross_stage_coupling", False, False)])
    def test_ablations_are_config_only(self, key, value, expect):
        assert getattr(T.load_config(None, {f"model.{key}": value}).model, key) == expect

    def test_dump_round_trip(self, tmp_path):
        cfg = T.load_config(None, {"model.lma_context": None, "loss.gamma2": 3.0})
        T.dump_config(cfg, tmp_path / "c.yaml")
        assert T.load_config(tmp_path / "c.yaml") == cfg


class TestJitter:
    def test_lengths(self):
        video = np.zeros((3, 40, 2, 2), dtype=np.float32)
        lengths = set()
        for s in range(300):
            out = T.temporal_jitter(video, [1, 2], np.random.default_rng(s), 0.2, 0.2)
            assert out.shape[1] % 4 == 0 and 32 <= out.shape[1] <= 48
            lengths.add(out.shape[1])
        assert 40 in lengths and len(lengths) > 1

    def test_prob_zero_is_identity(self):
        video = np.ones((3, 8, 2, 2))
        assert T.temporal_jitter(video, [1], np.random.default_rng(0), 0.0, 0.2) is video


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        cfg = ModelConfig(input_size=16, channels=(4, 4, 4, 4), head_width=8, lstm_hidden=8, lma_reduction=2)
        net = OLMD(cfg, seed=4)
        save_checkpoint(net, tmp_path, {"epoch": 1})
        back, meta = load_checkpoint(tmp_path)
        assert meta == {"epoch": 1} and back.cfg == cfg
        for (n, a), (_, b) in zip(net.named_parameters(), back.named_parameters()):
            assert a.data.tobytes() == b.data.tobytes(), n

    def test_mismatch(self, tmp_path):
        net = OLMD(ModelConfig(input_size=16, channels=(4, 4, 4, 4), head_width=8, lstm_hidden=8, lma_reduction=2))
        save_checkpoint(net, tmp_path)
        manifest = json.loads((tmp_path / "checkpoint.json").read_text())
        manifest["model_config"]["lma_context"] = None
        (tmp_path / "checkpoint.json").write_text(json.dumps(manifest))
        with pytest.raises(CheckpointError, match="mismatch"):
            load_checkpoint(tmp_path)

    def test_missing(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path)


class TestTraining:
    def test_reproducible_and_evaluable(self, tiny_data, tmp_path):
        cfg = tiny_cfg()
        a = T.train(cfg, tiny_data, tmp_path / "a", echo=lambda s: None)
        T.train(cfg, tiny_data, tmp_path / "b", echo=lambda s: None)
        assert [r["epoch"] for r in a] == [1, 2]
        assert (tmp_path / "a" / "metrics.jsonl").read_bytes() == (tmp_path / "b" / "metrics.jsonl").read_bytes()
        summary = T.evaluate(tmp_path / "a" / "best", tiny_data, "dev", tmp_path / "ev", echo=lambda s: None)
        assert summary["wer"] == min(r["dev_wer"] for r in a)
        assert (tmp_path / "ev" / "eval_dev.txt").read_text().count("\n") == 3

    def test_effective_config_logged(self, tiny_data, tmp_path):
        T.train(tiny_cfg(**{"train.epochs": 1}), tiny_data, tmp_path, echo=lambda s: None)
        logged = yaml.safe_load((tmp_path / "config.yaml").read_text())
        assert (logged["loss"]["gamma1"], logged["loss"]["gamma2"]) == (1.0, 25.0)
        assert (tmp_path / "timing.jsonl").exists()

    def test_vocab_mismatch(self, tiny_data, tmp_path):
        with pytest.raises(ConfigError, match="glosses"):
            T.train(tiny_cfg(**{"model.vocab_size": 5}), tiny_data, tmp_path, echo=lambda s: None)

    def test_non_finite_loss_names_batch(self, tiny_data, tmp_path, monkeypatch):
        monkeypatch.setattr(T, "total_loss", lambda logits, label, cfg: logits[0].sum() * float("nan"))
        with pytest.raises(T.NumericalError, match="batch 0"):
            T.train(tiny_cfg(), tiny_data, tmp_path, echo=lambda s: None)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_one_step_reduces_first_batch_loss(seed):
    cfg = T.RunConfig()
    net = OLMD(cfg.model, seed=seed)
    batch = [generate_sample((seed, 0, i)) for i in range(cfg.train.batch_size)]

    def loss():
        total = None
        for s in batch:
            term = total_loss(net(Tensor(s.video)), s.label, cfg.loss)
            total = term if total is None else total + term
        return total

    before = loss()
    before.backward()
    adam_step(net.parameters(), AdamState(lr=cfg.optim.lr, weight_decay=cfg.optim.weight_decay))
    assert float(loss().data) < float(before.data)

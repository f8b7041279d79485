"""Trainer tests: dataset validation, augmentation determinism, short
optimization runs, checkpoint determinism, and evaluation plumbing."""

import json
from dataclasses import replace

import numpy as np
import pytest
import torch

from affkit import synth, trainer
from affkit.errors import ManifestError, NonFiniteLoss, VocabularyMismatch
from affkit.model import load_checkpoint, save_checkpoint, AffordanceModel, ModelConfig


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("toyset")
    synth.write_training_dataset(d, 16, seed=3)
    return d


@pytest.fixture(scope="module")
def dataset(dataset_dir):
    return trainer.load_dataset(dataset_dir)


def short_cfg(**kw):
    base = dict(epochs=2, seed=0)
    base.update(kw)
    return trainer.toy_train_config(**base)


class TestLoadDataset:
    def test_valid(self, dataset):
        assert len(dataset) == 16
        assert dataset.vocabulary == ["cut", "grasp"]
        s = dataset.load(0)
        assert s.image.shape == (64, 64, 3)

    def test_missing_file(self, tmp_path, dataset_dir):
        import shutil
        root = tmp_path / "broken"
        shutil.copytree(dataset_dir, root)
        (root / "depths" / "00003.png").unlink()
        with pytest.raises(ManifestError, match="record 3"):
            trainer.load_dataset(root)

    def test_mask_size_mismatch(self, tmp_path, dataset_dir):
        import shutil
        from PIL import Image
        root = tmp_path / "badmask"
        shutil.copytree(dataset_dir, root)
        rec = json.loads((root / "manifest.json").read_text())[1]
        mask_rel = sorted(rec["masks"].values())[0]
        Image.new("L", (10, 10)).save(root / mask_rel)
        with pytest.raises(ManifestError, match="record 1"):
            trainer.load_dataset(root)


class TestAugment:
    def test_deterministic(self, dataset):
        cfg = short_cfg()
        a = trainer.augment(dataset.load(0), cfg, seed=42)
        b = trainer.augment(dataset.load(0), cfg, seed=42)
        assert np.array_equal(a.image, b.image)
        assert np.array_equal(a.depth, b.depth)
        for k in a.masks:
            assert np.array_equal(a.masks[k].data, b.masks[k].data)

    def test_output_size_and_consistency(self, dataset):
        cfg = short_cfg()
        out = trainer.augment(dataset.load(1), cfg, seed=7)
        assert out.image.shape == (cfg.crop, cfg.crop, 3)
        assert out.depth.shape == (cfg.crop, cfg.crop)
        # masks stay disjoint after the shared geometric transform
        masks = list(out.masks.values())
        assert (masks[0] & masks[1]).count() == 0

    def test_horizontal_flip_definition(self, dataset):
        # flip geometry on a raw array, independent of the augment RNG
        arr = np.arange(16).reshape(4, 4)
        flipped = arr[:, ::-1]
        for r in range(4):
            for c in range(4):
                assert flipped[r, 4 - 1 - c] == arr[r, c]

    def test_flip_involution(self):
        arr = np.random.default_rng(0).integers(0, 255, size=(8, 8, 3))
        assert np.array_equal(arr[:, ::-1][:, ::-1], arr)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            trainer.TrainConfig(resize=64, crop=72)
        with pytest.raises(ValueError):
            trainer.TrainConfig(batch_size=0)


class TestTomlConfig:
    def test_roundtrip(self, tmp_path):
        cfg = short_cfg()
        path = tmp_path / "train.toml"
        trainer.save_train_config(cfg, path)
        back = trainer.load_train_config(path)
        assert back == cfg


class TestTrain:
    def test_epoch_zero_is_init(self, dataset, tmp_path):
        cfg = short_cfg(epochs=0)
        best = trainer.train(dataset, cfg, tmp_path / "run0")
        model, vocab = load_checkpoint(best)
        torch.manual_seed(cfg.seed)
        fresh = AffordanceModel(
            ModelConfig(**{**cfg.model.__dict__, "num_labels": len(vocab)})
        )
        for k, v in fresh.state_dict().items():
            assert torch.equal(v, model.state_dict()[k]), k

    def test_lr_zero_no_change(self, dataset, tmp_path):
        cfg = short_cfg(epochs=1, learning_rate=0.0, weight_decay=0.0)
        best = trainer.train(dataset, cfg, tmp_path / "runlr0")
        trained, vocab = load_checkpoint(best)
        torch.manual_seed(cfg.seed)
        fresh = AffordanceModel(
            ModelConfig(**{**cfg.model.__dict__, "num_labels": len(vocab)})
        )
        for k, v in fresh.state_dict().items():
            assert torch.allclose(v, trained.state_dict()[k], atol=1e-7), k

    def test_determinism(self, dataset, tmp_path):
        cfg = short_cfg(epochs=2, seed=9)
        b1 = trainer.train(dataset, cfg, tmp_path / "r1")
        b2 = trainer.train(dataset, cfg, tmp_path / "r2")
        assert b1.read_bytes() == b2.read_bytes()
        log1 = [json.loads(l) for l in (tmp_path / "r1" / "train_log.jsonl").read_text().splitlines()]
        log2 = [json.loads(l) for l in (tmp_path / "r2" / "train_log.jsonl").read_text().splitlines()]
        assert [l["loss"] for l in log1] == [l["loss"] for l in log2]

    def test_checkpoints_and_log_written(self, dataset, tmp_path):
        out = tmp_path / "arts"
        trainer.train(dataset, short_cfg(), out)
        assert (out / "epoch_001.npz").exists()
        assert (out / "epoch_002.npz").exists()
        assert (out / "best.npz").exists()
        log = (out / "train_log.jsonl").read_text().splitlines()
        assert len(log) == 2
        rec = json.loads(log[0])
        assert set(rec) >= {"epoch", "loss", "lr", "wall_time"}

    def test_nonfinite_loss(self, dataset, tmp_path):
        cfg = short_cfg(epochs=1, learning_rate=1e6)
        with pytest.raises(NonFiniteLoss):
            # blow up the parameters so the forward pass goes non-finite
            trainer.train(dataset, cfg, tmp_path / "boom")


class TestEvaluate:
    def test_untrained_well_formed(self, dataset, tmp_path):
        best = trainer.train(dataset, short_cfg(epochs=0), tmp_path / "init")
        rep = trainer.evaluate(dataset, best)
        for key in ("miou", "f1", "acc"):
            assert 0.0 <= rep[key] <= 1.0
        assert set(rep["per_label"]) == {"cut", "grasp"}

    def test_vocabulary_mismatch(self, dataset, tmp_path):
        model = AffordanceModel(ModelConfig(input_size=64, num_labels=3))
        path = tmp_path / "wrongvocab.npz"
        save_checkpoint(model, ["a", "b", "c"], path)
        with pytest.raises(VocabularyMismatch):
            trainer.evaluate(dataset, path)

    def test_report_file(self, dataset, tmp_path):
        best = trainer.train(dataset, short_cfg(epochs=0), tmp_path / "r")
        out = tmp_path / "report.json"
        trainer.evaluate(dataset, best, out_path=out)
        assert json.loads(out.read_text())["vocabulary"] == ["cut", "grasp"]

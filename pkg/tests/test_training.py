import json
import math

import numpy as np
import pytest
import torch

from facesynth.data import generate_toy_dataset
from facesynth.errors import ConfigurationError, NumericalError, ValidationError
from facesynth.losses import LossWeights, adversarial_loss_g, classification_loss_fake
from facesynth.training import (Batch, TrainConfig, epoch_permutation, fit,
                                init_train_state, lr_schedule, metrics_record,
                                restore_train_state, scaled_config, train_step_d,
                                train_step_g)

from conftest import micro_config, random_batch


def make_state(cfg, seed=0):
    state = init_train_state(cfg, ["neutral", "happy", "sad", "surprised"])
    state.rng = np.random.default_rng([seed, 0xF17])
    return state


def flat_params(module):
    return torch.cat([p.detach().flatten().clone() for p in module.parameters()])


class TestSchedule:
    def test_paper_spot_values(self):
        cfg = scaled_config(total_epochs=200, decay_start_epoch=100)
        assert lr_schedule(0, cfg) == 1e-4
        assert lr_schedule(99, cfg) == 1e-4
        assert lr_schedule(150, cfg) == pytest.approx(5e-5)
        assert lr_schedule(200, cfg) == 0.0

    def test_linear_between_knots(self):
        cfg = scaled_config(total_epochs=200, decay_start_epoch=100)
        for epoch in range(100, 201):
            expected = 1e-4 * (200 - epoch) / 100
            assert lr_schedule(epoch, cfg) == pytest.approx(expected)

    def test_out_of_range_rejected(self):
        cfg = micro_config()
        with pytest.raises(ValidationError):
            lr_schedule(-1, cfg)
        with pytest.raises(ValidationError):
            lr_schedule(cfg.total_epochs + 1, cfg)


class TestConfig:
    def test_invariants(self):
        with pytest.raises(ConfigurationError):
            micro_config(n_critic=0)
        with pytest.raises(ConfigurationError):
            micro_config(total_epochs=5, decay_start_epoch=5)

    def test_json_roundtrip(self, tmp_path):
        cfg = micro_config(seed=17, refinement=True, heatmap_sigma=1.25)
        cfg.to_json(tmp_path / "config.json")
        assert TrainConfig.from_json(tmp_path / "config.json") == cfg

    def test_mismatched_nets_rejected(self):
        from facesynth.model import DiscriminatorConfig, GeneratorConfig
        with pytest.raises(ConfigurationError, match="num_attributes"):
            TrainConfig(
                generator=GeneratorConfig(image_size=16, base_channels=4,
                                          downsample_factor=4, num_attributes=4),
                discriminator=DiscriminatorConfig(image_size=16, base_channels=4,
                                                  num_layers=3, num_attributes=5),
            )


class TestSteps:
    def test_critic_step_leaves_generator_untouched(self, tiny_cfg):
        state = make_state(tiny_cfg)
        before_g = flat_params(state.generator)
        before_d = flat_params(state.discriminator)
        batch = Batch(*random_batch(np.random.default_rng(0), n=4))
        report = train_step_d(batch, state, tiny_cfg)
        assert torch.equal(flat_params(state.generator), before_g)
        assert not torch.equal(flat_params(state.discriminator), before_d)
        assert state.d_steps == 1 and state.g_steps == 0 and state.step == 1
        assert report.total_d is not None and report.total_g is None

    def test_generator_step_leaves_critic_untouched(self, tiny_cfg):
        state = make_state(tiny_cfg)
        before_d = flat_params(state.discriminator)
        before_g = flat_params(state.generator)
        batch = Batch(*random_batch(np.random.default_rng(1), n=4))
        report = train_step_g(batch, state, tiny_cfg)
        assert torch.equal(flat_params(state.discriminator), before_d)
        assert not torch.equal(flat_params(state.generator), before_g)
        assert state.g_steps == 1 and state.step == 1
        assert report.total_g is not None

    def test_generator_report_recombines(self, tiny_cfg):
        state = make_state(tiny_cfg)
        batch = Batch(*random_batch(np.random.default_rng(2), n=4))
        r = train_step_g(batch, state, tiny_cfg)
        w = tiny_cfg.weights
        recombined = (r.adv_g + w.bidirectional * r.bidirectional
                      + w.classification * r.cls_fake + w.identity * r.identity)
        assert abs(r.total_g - recombined) < 1e-6

    def test_zero_weights_reduce_to_adversarial_direction(self):
        cfg = micro_config(weights=LossWeights(bidirectional=0, identity=0,
                                               classification=0, gradient_penalty=0))
        state = make_state(cfg, seed=5)
        batch = Batch(*random_batch(np.random.default_rng(3), n=4))

        # reference gradient of the pure adversarial term with the same targets
        rng_copy = np.random.default_rng()
        rng_copy.bit_generator.state = state.rng.bit_generator.state
        from facesynth.data import sample_target_attributes
        targets = torch.from_numpy(sample_target_attributes(batch.labels.numpy(), rng_copy))
        fake = state.generator(batch.images, batch.sides, targets)
        out = state.discriminator(fake.image, fake.side)
        adv = adversarial_loss_g(out.src_map)
        reference = torch.autograd.grad(adv, list(state.generator.parameters()))

        train_step_g(batch, state, cfg)
        got = [p.grad for p in state.generator.parameters()]
        ref_flat = torch.cat([g.flatten() for g in reference])
        got_flat = torch.cat([g.flatten() for g in got])
        cosine = torch.dot(ref_flat, got_flat) / (ref_flat.norm() * got_flat.norm())
        assert float(cosine) > 1 - 1e-6

    def test_gradient_penalty_never_reaches_generator(self, tiny_cfg):
        results = []
        for gp_weight in (10.0, 0.0):
            cfg = micro_config(weights=LossWeights(gradient_penalty=gp_weight))
            state = make_state(cfg, seed=9)
            batch = Batch(*random_batch(np.random.default_rng(4), n=4))
            train_step_g(batch, state, cfg)
            results.append(torch.cat([p.grad.flatten() for p in state.generator.parameters()]))
        assert torch.equal(results[0], results[1])

    def test_nan_parameters_abort_with_breakdown(self, tiny_cfg):
        state = make_state(tiny_cfg)
        with torch.no_grad():
            next(state.generator.parameters()).fill_(float("nan"))
        batch = Batch(*random_batch(np.random.default_rng(5), n=4))
        with pytest.raises(NumericalError) as err:
            train_step_d(batch, state, tiny_cfg)
        assert err.value.context or "non-finite" in str(err.value)


@pytest.fixture(scope="module")
def micro_run(tmp_path_factory):
    """Tiny but complete fit: 48 samples, 16px, 2 epochs, mid-epoch checkpoints."""
    root = tmp_path_factory.mktemp("microrun")
    manifest = generate_toy_dataset(root / "data", 48, num_attributes=4,
                                    image_size=16, seed=21)
    cfg = micro_config(batch_size=8, total_epochs=2, decay_start_epoch=1,
                       seed=13, checkpoint_interval=4)
    state = fit(manifest, cfg, root / "run")
    return root, manifest, cfg, state


def read_metrics(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


class TestFit:
    def test_update_ratio_and_counters(self, micro_run):
        root, manifest, cfg, state = micro_run
        records = read_metrics(root / "run" / "metrics.jsonl")
        per_epoch = {}
        for rec in records:
            per_epoch.setdefault(rec["epoch"], {"d": 0, "g": 0})
            per_epoch[rec["epoch"]][rec["phase"]] += 1
        for counts in per_epoch.values():
            assert abs(counts["d"] - cfg.n_critic * counts["g"]) <= 1
        assert state.d_steps == sum(c["d"] for c in per_epoch.values())
        assert state.g_steps == sum(c["g"] for c in per_epoch.values())

    def test_lr_follows_schedule_exactly(self, micro_run):
        root, _, cfg, _ = micro_run
        for rec in read_metrics(root / "run" / "metrics.jsonl"):
            assert rec["lr"] == lr_schedule(rec["epoch"], cfg)

    def test_totals_recombine_in_metrics(self, micro_run):
        root, _, cfg, _ = micro_run
        w = cfg.weights
        for rec in read_metrics(root / "run" / "metrics.jsonl"):
            if rec["phase"] == "d":
                assert abs(rec["total_d"] - (rec["adv_d"] + w.classification * rec["cls_real"])) < 1e-6
            else:
                expected = (rec["adv_g"] + w.bidirectional * rec["bidirectional"]
                            + w.classification * rec["cls_fake"] + w.identity * rec["identity"])
                assert abs(rec["total_g"] - expected) < 1e-6

    def test_fixed_seed_reproduces_metrics_file(self, micro_run, tmp_path):
        root, manifest, cfg, _ = micro_run
        fit(manifest, cfg, tmp_path / "again")
        assert (tmp_path / "again" / "metrics.jsonl").read_text() == \
            (root / "run" / "metrics.jsonl").read_text()

    def test_resume_mid_epoch_matches_uninterrupted(self, micro_run, tmp_path):
        from facesynth.checkpoint import load_checkpoint
        root, manifest, cfg, _ = micro_run
        baseline = read_metrics(root / "run" / "metrics.jsonl")
        ckpt = root / "run" / "checkpoints" / "step_00000004.npz"
        cut = load_checkpoint(ckpt).counters["step"]
        assert 0 < cut < baseline[-1]["step"]   # genuinely mid-run
        fit(manifest, cfg, tmp_path / "resumed", resume_from=ckpt)
        resumed = read_metrics(tmp_path / "resumed" / "metrics.jsonl")
        tail = [rec for rec in baseline if rec["step"] > cut]
        assert len(resumed) == len(tail)
        for ours, ref in zip(resumed, tail):
            for key, val in ref.items():
                if isinstance(val, float):
                    assert ours[key] == pytest.approx(val, abs=1e-6), key
                else:
                    assert ours[key] == val, key

    def test_final_checkpoint_restores_exactly(self, micro_run):
        root, _, cfg, state = micro_run
        restored = restore_train_state(root / "run" / "checkpoints" / "final.npz", cfg)
        assert torch.equal(flat_params(restored.generator), flat_params(state.generator))
        assert torch.equal(flat_params(restored.discriminator),
                           flat_params(state.discriminator))
        assert restored.epoch == cfg.total_epochs
        assert restored.rng.bit_generator.state == state.rng.bit_generator.state

    def test_small_manifest_rejected(self, micro_run):
        _, manifest, cfg, _ = micro_run
        from facesynth.data import DatasetManifest
        tiny = DatasetManifest(manifest.entries[:3], manifest.vocabulary)
        with pytest.raises(ValidationError):
            fit(tiny, cfg, "/tmp/never")

    def test_vocabulary_mismatch_rejected(self, micro_run):
        _, manifest, cfg, _ = micro_run
        from facesynth.data import DatasetManifest
        bad = DatasetManifest(manifest.entries, manifest.vocabulary + ["extra"])
        with pytest.raises(ConfigurationError):
            fit(bad, cfg, "/tmp/never")


def test_epoch_permutation_depends_on_seed_and_epoch():
    a = epoch_permutation(1, 0, 32)
    assert np.array_equal(a, epoch_permutation(1, 0, 32))
    assert not np.array_equal(a, epoch_permutation(1, 1, 32))
    assert not np.array_equal(a, epoch_permutation(2, 0, 32))


def test_metrics_record_field_order(tiny_cfg):
    state = make_state(tiny_cfg)
    batch = Batch(*random_batch(np.random.default_rng(6), n=4))
    report = train_step_d(batch, state, tiny_cfg)
    record = json.loads(metrics_record(state, "d", 1e-4, report))
    assert list(record) == ["step", "epoch", "phase", "lr", "adv_d", "adv_g", "gp",
                            "cls_real", "cls_fake", "identity", "bidirectional",
                            "total_g", "total_d"]

import numpy as np
import pytest
import torch

from facesynth.checkpoint import (build_from_checkpoint, load_checkpoint,
                                  load_generator, save_checkpoint)
from facesynth.errors import CheckpointError
from facesynth.training import init_train_state

from conftest import micro_config, random_batch


@pytest.fixture()
def trained_state(tiny_cfg):
    from facesynth.training import Batch, train_step_d, train_step_g
    state = init_train_state(tiny_cfg, ["neutral", "happy", "sad", "surprised"])
    batch = Batch(*random_batch(np.random.default_rng(7), n=4))
    train_step_d(batch, state, tiny_cfg)
    train_step_g(batch, state, tiny_cfg)
    return state


def test_roundtrip_is_bit_exact(tmp_path, tiny_cfg, trained_state):
    state = trained_state
    meta = {"config": tiny_cfg.to_dict(), "vocabulary": state.vocabulary}
    counters = {"step": state.step, "epoch": 0, "d_steps": state.d_steps,
                "g_steps": state.g_steps, "batch_pos": 2}
    path = save_checkpoint(tmp_path / "ck.npz", state.generator, state.discriminator,
                           meta, opt_g=state.opt_g, opt_d=state.opt_d, counters=counters,
                           rng_state=state.rng.bit_generator.state)
    data = load_checkpoint(path)

    for name, param in state.generator.named_parameters():
        np.testing.assert_array_equal(data.params["generator"][name],
                                      param.detach().numpy())
    for name, param in state.discriminator.named_parameters():
        np.testing.assert_array_equal(data.params["discriminator"][name],
                                      param.detach().numpy())
    first = next(iter(data.adam["generator"].values()))
    assert set(first) == {"exp_avg", "exp_avg_sq", "step"}
    assert data.counters == counters
    assert data.meta["vocabulary"] == state.vocabulary
    assert data.rng_state == state.rng.bit_generator.state

    generator, discriminator = build_from_checkpoint(data)
    ref = state.generator(*random_batch(np.random.default_rng(8), n=2))
    got = generator(*random_batch(np.random.default_rng(8), n=2))
    assert torch.equal(ref.image, got.image)
    assert discriminator is not None


def test_load_generator_helper(tmp_path, tiny_cfg, trained_state):
    meta = {"config": tiny_cfg.to_dict(), "vocabulary": trained_state.vocabulary}
    path = save_checkpoint(tmp_path / "g.npz", trained_state.generator,
                           trained_state.discriminator, meta)
    generator, vocabulary, loaded_meta = load_generator(path)
    assert vocabulary == trained_state.vocabulary
    assert not generator.training
    assert loaded_meta["config"]["generator"]["image_size"] == tiny_cfg.image_size


def test_missing_file_and_bad_archive_raise(tmp_path):
    with pytest.raises(CheckpointError, match="not found"):
        load_checkpoint(tmp_path / "nope.npz")
    np.savez(tmp_path / "junk.npz", foo=np.zeros(3))
    with pytest.raises(CheckpointError, match="config"):
        load_checkpoint(tmp_path / "junk.npz")


def test_mismatched_parameters_rejected(tmp_path, tiny_cfg, trained_state):
    meta = {"config": micro_config(base_channels=8).to_dict(),
            "vocabulary": trained_state.vocabulary}
    path = save_checkpoint(tmp_path / "bad.npz", trained_state.generator,
                           trained_state.discriminator, meta)
    with pytest.raises(CheckpointError, match="parameters"):
        build_from_checkpoint(load_checkpoint(path))

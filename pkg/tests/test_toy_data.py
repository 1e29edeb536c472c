"""Synthetic interaction scenes: generator determinism, reaction rule, files."""

from __future__ import annotations

import numpy as np
import pytest

from motionflow.errors import ConfigError, DataFormatError
from motionflow.toy_data import (
    Dataset,
    ToyDataConfig,
    load_dataset,
    normalize,
    denormalize,
    reaction_oracle,
    save_dataset,
    split_indices,
    synthesize_dataset,
)


def tiny_config(**kw) -> ToyDataConfig:
    base = dict(n_scenes=12, n_agents=2, n_frames=32, n_classes=4, reaction_delay=4)
    base.update(kw)
    return ToyDataConfig(**base)


def test_synthesis_deterministic_and_shaped():
    cfg = tiny_config()
    a = synthesize_dataset(cfg, seed=5)
    b = synthesize_dataset(cfg, seed=5)
    c = synthesize_dataset(cfg, seed=6)
    assert a.as_array().shape == (12, 2, 32, cfg.frame_dim)
    assert np.array_equal(a.as_array(), b.as_array())
    assert not np.array_equal(a.as_array(), c.as_array())
    assert list(a.labels()) == [i % 4 for i in range(12)]


def test_scene_streams_independent_of_scene_count():
    # Scene i's bytes depend only on (seed, i): truncating the dataset
    # must not change earlier scenes.
    cfg_small = tiny_config(n_scenes=4)
    cfg_large = tiny_config(n_scenes=12)
    small = synthesize_dataset(cfg_small, seed=9).as_array()
    large = synthesize_dataset(cfg_large, seed=9).as_array()
    assert np.array_equal(small, large[:4])


def test_bone_lengths_constant_within_every_agent():
    cfg = tiny_config()
    arr = synthesize_dataset(cfg, seed=1).as_array()  # (S, A, F, D)
    joints = arr.reshape(*arr.shape[:3], cfg.n_joints, 2)
    root = joints[:, :, :, :1, :]
    dists = np.linalg.norm(joints[:, :, :, 1:, :] - root, axis=-1)  # (S, A, F, limbs)
    spread = dists.max(axis=2) - dists.min(axis=2)
    assert spread.max() < 1e-5


def test_reaction_is_delayed_mirrored_offset_copy():
    cfg = tiny_config(noise_std=0.0)
    arr = synthesize_dataset(cfg, seed=3).as_array()
    lead, follow = arr[0, 0], arr[0, 1]
    expected = reaction_oracle(lead, cfg)
    assert np.allclose(follow, expected, atol=1e-6)
    delay, (dx, dy) = cfg.reaction_delay, cfg.reaction_offset
    # Beyond the clamped head: x copies shifted lead, y mirrors it.
    assert np.allclose(follow[delay:, 0], lead[:-delay, 0] + dx, atol=1e-6)
    assert np.allclose(follow[delay:, 1], -lead[:-delay, 1] + dy, atol=1e-6)
    # Clamped head repeats frame zero of the lead.
    assert np.allclose(follow[:delay, 0], lead[0, 0] + dx, atol=1e-6)


def test_reaction_noise_is_rigid_and_small():
    cfg = tiny_config(n_scenes=64)
    arr = synthesize_dataset(cfg, seed=7).as_array()
    devs = []
    for s in range(arr.shape[0]):
        clean = reaction_oracle(arr[s, 0], cfg)
        dev = arr[s, 1] - clean  # (F, D)
        # Rigid: every joint in a frame shares one 2-d shift.
        per_joint = dev.reshape(dev.shape[0], cfg.n_joints, 2)
        assert np.abs(per_joint - per_joint[:, :1, :]).max() < 1e-5
        devs.append(dev)
    rms = float(np.sqrt(np.mean(np.square(np.stack(devs)))))
    assert rms == pytest.approx(cfg.noise_std, rel=0.1)


def test_oracle_composition_cancels_mirroring():
    cfg = tiny_config(noise_std=0.0)
    arr = synthesize_dataset(cfg, seed=11).as_array()
    lead = arr[2, 0]
    twice = reaction_oracle(reaction_oracle(lead, cfg), cfg)
    delay, (dx, dy) = cfg.reaction_delay, cfg.reaction_offset
    # Mirror twice = identity; delays add; the y-offset cancels against
    # its own mirror image while x accumulates.
    tail = slice(2 * delay, None)
    src = lead[: lead.shape[0] - 2 * delay]
    assert np.allclose(twice[tail][:, 0::2], src[:, 0::2] + 2 * dx, atol=1e-6)
    assert np.allclose(twice[tail][:, 1::2], src[:, 1::2], atol=1e-6)


def test_normalization_round_trip():
    cfg = tiny_config()
    ds = synthesize_dataset(cfg, seed=2)
    arr = ds.as_array()
    normed = normalize(arr, ds.mean, ds.std)
    back = denormalize(normed, ds.mean, ds.std)
    assert np.allclose(back, arr, atol=1e-5)
    flat = normed.reshape(-1, cfg.frame_dim)
    assert np.abs(flat.mean(axis=0)).max() < 0.2
    assert np.abs(flat.std(axis=0) - 1.0).max() < 0.3


def test_dataset_file_round_trip_bitwise(tmp_path):
    cfg = tiny_config()
    ds = synthesize_dataset(cfg, seed=4)
    path = tmp_path / "toy.umfd"
    save_dataset(ds, path)
    loaded = load_dataset(path)
    assert np.array_equal(loaded.as_array(), ds.as_array())
    assert np.array_equal(loaded.mean, ds.mean)
    assert np.array_equal(loaded.std, ds.std)
    assert loaded.config == cfg
    assert [s.label for s in loaded.scenes] == [s.label for s in ds.scenes]
    # Second write produces identical bytes.
    path2 = tmp_path / "toy2.umfd"
    save_dataset(ds, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_dataset_file_rejects_corruption(tmp_path):
    cfg = tiny_config()
    ds = synthesize_dataset(cfg, seed=4)
    path = tmp_path / "toy.umfd"
    save_dataset(ds, path)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XXXX"
    bad = tmp_path / "bad.umfd"
    bad.write_bytes(bytes(raw))
    with pytest.raises(DataFormatError):
        load_dataset(bad)
    truncated = tmp_path / "short.umfd"
    truncated.write_bytes(path.read_bytes()[:40])
    with pytest.raises(DataFormatError):
        load_dataset(truncated)


def test_split_indices_deterministic_partition():
    train, val = split_indices(100, 0.9, seed=0)
    train2, val2 = split_indices(100, 0.9, seed=0)
    assert train == train2 and val == val2
    assert sorted(train + val) == list(range(100))
    assert 75 <= len(train) <= 99
    diff_train, _ = split_indices(100, 0.9, seed=1)
    assert diff_train != train


def test_config_validation():
    with pytest.raises(ConfigError):
        ToyDataConfig(n_frames=1)
    with pytest.raises(ConfigError):
        ToyDataConfig(reaction_delay=64, n_frames=64)
    with pytest.raises(ConfigError):
        ToyDataConfig(noise_std=-0.1)
    with pytest.raises(ConfigError):
        ToyDataConfig(n_classes=9)


def test_empty_dataset_still_serializes(tmp_path):
    cfg = tiny_config(n_scenes=0)
    ds = synthesize_dataset(cfg, seed=0)
    assert ds.as_array().shape[0] == 0
    path = tmp_path / "empty.umfd"
    save_dataset(ds, path)
    loaded = load_dataset(path)
    assert loaded.as_array().shape[0] == 0

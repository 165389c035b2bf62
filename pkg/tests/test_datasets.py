import json

import numpy as np
import pytest
import torch

from fedcsi import channel as ch
from fedcsi.datasets import (load_checkpoint, load_dataset, save_checkpoint,
                             save_dataset)
from fedcsi.errors import IntegrityError
from fedcsi.swtcan import Swtcan, SwtcanConfig

TOY = SwtcanConfig(n_subcarriers=8, n_bs=16, pilot_slots=4, feedback_bits=32,
                   bits_per_element=2, embed_dim=16, window_size=4,
                   depths=(1,), n_heads=(2,), patch_size=2)


def random_samples(n=10, seed=0):
    rng = np.random.default_rng(seed)
    h = rng.standard_normal((n, 8, 16)) + 1j * rng.standard_normal((n, 8, 16))
    return [ch.ChannelSample(h_a=h[i].astype(np.complex64), scenario_label="B-like")
            for i in range(n)]


class TestDatasetRoundtrip:
    def test_roundtrip_to_float32(self, tmp_path):
        samples = random_samples()
        path = tmp_path / "set.npz"
        save_dataset(samples, path, seed=7, config_hash="abc", split="test")
        loaded, meta = load_dataset(path)
        assert len(loaded) == 10
        for a, b in zip(samples, loaded):
            np.testing.assert_allclose(b.h_a, a.h_a.astype(np.complex64))
        assert meta["seed"] == 7 and meta["split"] == "test"
        assert meta["config_hash"] == "abc"
        assert meta["scenario_label"] == "B-like"

    def test_sidecar_roundtrips_exactly(self, tmp_path):
        path = tmp_path / "set.npz"
        written = save_dataset(random_samples(3), path, seed=1, split="val")
        on_disk = json.loads((tmp_path / "set.npz.json").read_text())
        assert on_disk == written

    def test_truncated_file_raises(self, tmp_path):
        path = tmp_path / "set.npz"
        save_dataset(random_samples(5), path)
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) // 2])
        with pytest.raises(IntegrityError):
            load_dataset(path)

    def test_tampered_arrays_raise(self, tmp_path):
        path = tmp_path / "set.npz"
        save_dataset(random_samples(4), path)
        with np.load(path) as data:
            real, imag = data["H_real"].copy(), data["H_imag"]
            real[0, 0, 0] += 1.0
            np.savez(tmp_path / "evil.npz", H_real=real, H_imag=imag)
        (tmp_path / "evil.npz").replace(path)
        with pytest.raises(IntegrityError, match="hash"):
            load_dataset(path)

    def test_foreign_file_loads_as_external(self, tmp_path):
        path = tmp_path / "foreign.npz"
        rng = np.random.default_rng(3)
        np.savez(path, H_real=rng.standard_normal((2, 8, 16)).astype(np.float32),
                 H_imag=rng.standard_normal((2, 8, 16)).astype(np.float32))
        samples, meta = load_dataset(path)
        assert meta["scenario_label"] == "external"
        assert meta["split"] == "external"
        assert all(s.scenario_label == "external" for s in samples)

    def test_missing_arrays_raise(self, tmp_path):
        path = tmp_path / "bad.npz"
        np.savez(path, other=np.ones(3))
        with pytest.raises(IntegrityError):
            load_dataset(path)

    def test_empty_dataset_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            save_dataset([], tmp_path / "x.npz")


class TestCheckpointRoundtrip:
    def test_state_roundtrip(self, tmp_path):
        torch.manual_seed(0)
        model = Swtcan(TOY)
        path = tmp_path / "model.npz"
        manifest = save_checkpoint(model, path, config_hash="h", epoch=3,
                                   val_nmse_db=-7.5, partition_spec="all")
        assert manifest["epoch"] == 3
        torch.manual_seed(99)
        other = Swtcan(TOY)
        loaded_manifest = load_checkpoint(other, path)
        assert loaded_manifest["val_nmse_db"] == -7.5
        assert loaded_manifest["partition_spec"] == "all"
        for k, v in model.state_dict().items():
            torch.testing.assert_close(other.state_dict()[k], v, rtol=0, atol=0)

    def test_tampered_checkpoint_raises(self, tmp_path):
        torch.manual_seed(0)
        model = Swtcan(TOY)
        path = tmp_path / "model.npz"
        save_checkpoint(model, path)
        with np.load(path) as data:
            arrays = {k: data[k].copy() for k in data.files}
        key = sorted(arrays)[0]
        arrays[key] = arrays[key] + 1.0
        np.savez(path, **arrays)
        with pytest.raises(IntegrityError):
            load_checkpoint(Swtcan(TOY), path)

    def test_wrong_architecture_rejected(self, tmp_path):
        torch.manual_seed(0)
        model = Swtcan(TOY)
        path = tmp_path / "model.npz"
        save_checkpoint(model, path)
        import dataclasses
        bigger = dataclasses.replace(TOY, embed_dim=32, n_heads=(4,))
        with pytest.raises(RuntimeError):
            load_checkpoint(Swtcan(bigger), path)

import numpy as np
import pytest
import torch

from hdff_extractor import (
    DatasetError,
    HookResolutionError,
    HookSpec,
    TinyConvNet,
    extract,
    list_hooks,
    load_checkpoint,
)
from hdff_extractor.cli import main

# cross-component checks go through the primary package
from hdff import FeaturePack, descriptors_for_samples, fit


class TestHookSpec:
    def test_resolves_both_convs(self, toy_checkpoint):
        model = load_checkpoint(toy_checkpoint)
        resolved = HookSpec.parse("conv*").resolve(model)
        assert [(lid, name) for lid, name, _ in resolved] == [(1, "conv1"), (2, "conv2")]

    def test_spec_order_wins_over_traversal_order(self, toy_checkpoint):
        model = load_checkpoint(toy_checkpoint)
        resolved = HookSpec.parse("conv2,conv1").resolve(model)
        assert [name for _, name, _ in resolved] == ["conv2", "conv1"]

    def test_no_match_lists_available_modules(self, toy_checkpoint):
        model = load_checkpoint(toy_checkpoint)
        with pytest.raises(HookResolutionError, match="conv1"):
            HookSpec.parse("transformer*").resolve(model)

    def test_empty_spec_rejected(self):
        with pytest.raises(HookResolutionError):
            HookSpec.parse(" , ")


class TestListHooks:
    def test_lists_convs_with_channels(self, toy_checkpoint):
        lines = list_hooks(load_checkpoint(toy_checkpoint))
        joined = "\n".join(lines)
        assert "conv1: Conv2d  [4 ch]" in joined
        assert "conv2: Conv2d  [8 ch]" in joined

    def test_stable_across_loads(self, toy_checkpoint):
        a = list_hooks(load_checkpoint(toy_checkpoint))
        b = list_hooks(load_checkpoint(toy_checkpoint))
        assert a == b


class TestExtract:
    def test_pack_validates_in_primary(self, toy_checkpoint, toy_dataset, tmp_path):
        out = extract(toy_checkpoint, toy_dataset, "conv*", tmp_path / "pack")
        with FeaturePack(out) as pack:
            assert pack.num_samples == 4
            assert pack.class_labels == [0, 0, 1, 1]
            assert [l.channels for l in pack.layers] == [4, 8]
            assert [l.name for l in pack.layers] == ["conv1", "conv2"]
            for layer in pack.layers:
                assert (layer.height, layer.width) == (8, 8)

    def test_maps_match_direct_forward(self, toy_checkpoint, toy_dataset, tmp_path):
        out = extract(toy_checkpoint, toy_dataset, "conv1", tmp_path / "pack")
        model = load_checkpoint(toy_checkpoint)
        from hdff_extractor.dataset import ImageFolder

        data = ImageFolder(toy_dataset)
        # same batch geometry as the extraction run, so results are bitwise
        batch = torch.stack([data.load(i) for i in range(len(data))])
        with FeaturePack(out) as pack, torch.no_grad():
            ref = model.conv1(batch).permute(0, 2, 3, 1).numpy()
            for i in range(len(data)):
                assert np.array_equal(pack.read_map(i, 1), ref[i])

    def test_rerun_is_byte_identical(self, toy_checkpoint, toy_dataset, tmp_path):
        kwargs = dict(dataset_name="toy", split="train")
        out1 = extract(toy_checkpoint, toy_dataset, "conv*", tmp_path / "p1", **kwargs)
        out2 = extract(toy_checkpoint, toy_dataset, "conv*", tmp_path / "p2", **kwargs)
        for name in ("layer_0001.npy", "layer_0002.npy", "manifest.json"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_descriptors_identical_across_runs(self, toy_checkpoint, toy_dataset, tmp_path):
        descs = []
        for run in range(2):
            pack_dir = extract(toy_checkpoint, toy_dataset, "conv*", tmp_path / f"run{run}")
            with FeaturePack(pack_dir) as pack:
                model = fit(pack, hd_dim=128, master_seed=3)
                descs.append(
                    (model.class_descriptors.copy(), descriptors_for_samples(model, pack))
                )
        assert descs[0][0].tobytes() == descs[1][0].tobytes()
        assert descs[0][1].tobytes() == descs[1][1].tobytes()

    def test_flat_dataset_is_unlabeled(self, toy_checkpoint, flat_dataset, tmp_path):
        out = extract(toy_checkpoint, flat_dataset, "conv1", tmp_path / "pack")
        with FeaturePack(out) as pack:
            assert pack.class_labels is None
            assert pack.num_samples == 3

    def test_vector_outputs_become_1x1_maps(self, toy_checkpoint, toy_dataset, tmp_path):
        out = extract(toy_checkpoint, toy_dataset, "fc", tmp_path / "pack")
        with FeaturePack(out) as pack:
            layer = pack.layers[0]
            assert (layer.height, layer.width, layer.channels) == (1, 1, 2)

    def test_unmatched_hooks_error(self, toy_checkpoint, toy_dataset, tmp_path):
        with pytest.raises(HookResolutionError):
            extract(toy_checkpoint, toy_dataset, "nope*", tmp_path / "pack")

    def test_batching_preserves_results(self, toy_checkpoint, toy_dataset, tmp_path):
        out1 = extract(toy_checkpoint, toy_dataset, "conv*", tmp_path / "b1", batch_size=1)
        out4 = extract(toy_checkpoint, toy_dataset, "conv*", tmp_path / "b4", batch_size=4)
        with FeaturePack(out1) as p1, FeaturePack(out4) as p4:
            for i in range(4):
                for lid in (1, 2):
                    assert np.allclose(p1.read_map(i, lid), p4.read_map(i, lid), atol=1e-6)

    def test_empty_dataset_rejected(self, toy_checkpoint, tmp_path):
        (tmp_path / "empty").mkdir()
        with pytest.raises(DatasetError):
            extract(toy_checkpoint, tmp_path / "empty", "conv*", tmp_path / "pack")


class TestCli:
    def test_extract_and_list_hooks(self, toy_checkpoint, toy_dataset, tmp_path, capsys):
        rc = main(
            [
                "extract", "--checkpoint", str(toy_checkpoint), "--data", str(toy_dataset),
                "--hooks", "conv*", "--out", str(tmp_path / "pack"),
            ]
        )
        assert rc == 0
        with FeaturePack(tmp_path / "pack") as pack:
            assert pack.num_samples == 4
        assert main(["list-hooks", "--checkpoint", str(toy_checkpoint)]) == 0
        out = capsys.readouterr().out
        assert "conv1" in out and "conv2" in out

    def test_bad_hooks_exit_code(self, toy_checkpoint, toy_dataset, tmp_path, capsys):
        rc = main(
            [
                "extract", "--checkpoint", str(toy_checkpoint), "--data", str(toy_dataset),
                "--hooks", "zzz*", "--out", str(tmp_path / "pack"),
            ]
        )
        assert rc == 2

    def test_usage_error_exit_code(self, capsys):
        assert main(["extract", "--checkpoint", "x"]) == 1

    def test_bad_checkpoint_exit_code(self, tmp_path, capsys):
        (tmp_path / "junk.pt").write_bytes(b"not a checkpoint")
        assert main(["list-hooks", "--checkpoint", str(tmp_path / "junk.pt")]) == 2


class TestCheckpointLoading:
    def test_dict_wrapped_model(self, tmp_path):
        torch.manual_seed(0)
        torch.save({"model": TinyConvNet()}, tmp_path / "wrapped.pt")
        model = load_checkpoint(tmp_path / "wrapped.pt")
        assert isinstance(model, TinyConvNet)
        assert not model.training  # eval mode

    def test_non_module_rejected(self, tmp_path):
        torch.save({"weights": [1, 2, 3]}, tmp_path / "bad.pt")
        from hdff_extractor import CheckpointError

        with pytest.raises(CheckpointError, match="nn.Module"):
            load_checkpoint(tmp_path / "bad.pt")

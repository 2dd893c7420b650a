import numpy as np
import pytest
from PIL import Image

from csda import plotting
from csda.config import TrainConfig
from csda.data import SceneParams, generate
from csda.nets import ModelPair
from csda.viz import export_visualization, layout, render_panel


def test_layout_grouping():
    assert layout(1) == [(0,)]
    assert layout(2) == [(0, 1, None)]
    assert layout(3) == [(0, 1, 2)]
    assert layout(4) == [(0, 1, 2), (3, None, None)]
    assert layout(5) == [(0, 1, 2), (3, 4, None)]
    assert layout(6) == [(0, 1, 2), (3, 4, 5)]
    with pytest.raises(ValueError):
        layout(0)


@pytest.mark.parametrize("d", range(1, 13))
def test_layout_covers_each_channel_once(d):
    panels = layout(d)
    chans = [c for p in panels for c in p if c is not None]
    assert chans == list(range(d))
    # padding only at the end of the last panel
    for p in panels[:-1]:
        assert None not in p
    last = list(panels[-1])
    assert last == sorted(last, key=lambda c: c is None)


def test_render_panel():
    y = np.random.default_rng(0).random((4, 5, 4))
    np.testing.assert_array_equal(render_panel(y, (3, None, None))[..., 0], y[..., 3])
    assert not render_panel(y, (3, None, None))[..., 1:].any()
    assert render_panel(y[..., :1], (0,)).shape == (4, 5)


@pytest.fixture
def scene():
    return [generate(SceneParams(image_size=16), 3)]


def test_export_file_set_and_bilevel_mask(tmp_path, scene):
    model = ModelPair.build(4, depth=1, base_width=2)
    paths = export_visualization(model, TrainConfig(d_cs=4), scene, tmp_path)
    names = sorted(p.name for p in tmp_path.iterdir())
    assert len(paths) == len(names) == 9
    assert names == sorted(
        ["sample000_input.png", "sample000_mask.png", "sample000_pred.png"]
        + [f"sample000_panel_{k}.png" for k in range(2)]
        + [f"sample000_channel_{k}.png" for k in range(4)]
    )
    for role in ("mask", "pred"):
        values = set(np.unique(np.asarray(Image.open(tmp_path / f"sample000_{role}.png"))))
        assert values <= {0, 255}
    assert Image.open(tmp_path / "sample000_panel_1.png").mode == "RGB"
    assert Image.open(tmp_path / "sample000_channel_0.png").mode == "L"


def test_export_rerun_byte_identical(tmp_path, scene):
    model = ModelPair.build(2, depth=1, base_width=2)
    export_visualization(model, TrainConfig(d_cs=2), scene, tmp_path / "a", names=["s"])
    export_visualization(model, TrainConfig(d_cs=2), scene, tmp_path / "b", names=["s"])
    for f in (tmp_path / "a").iterdir():
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_single_channel_panel_is_grayscale(tmp_path, scene):
    model = ModelPair.build(1, depth=1, base_width=2, segmentation=False)
    export_visualization(model, TrainConfig(d_cs=1, ablation="dda_only"), scene, tmp_path)
    assert Image.open(tmp_path / "sample000_panel_0.png").mode == "L"


def test_plots_written(tmp_path):
    history = [
        {"epoch": e, "split": s, "loss": 1.0 / (e + 1), "miou": 0.5 + 0.1 * e, "lr": 1e-3}
        for e in range(3)
        for s in ("train", "val")
    ]
    plotting.training_curves(history, tmp_path / "curves.png")
    rows = [
        {"d_cs": d, "mode": m, "f1": 0.5, "miou": 0.6}
        for d in (1, 2)
        for m in ("full", "focal_only", "two_net_focal", "dda_only")
    ]
    plotting.ablation(rows, tmp_path / "ablation.png")
    per_image = [{"family_id": f, "accuracy": 0.9, "f1": 0.8, "miou": 0.7} for f in (4, 5, 4)]
    plotting.family_boxplot(per_image, tmp_path / "box.png")
    for name in ("curves.png", "ablation.png", "box.png"):
        with Image.open(tmp_path / name) as im:
            assert im.size[0] > 100

import csv
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image, ImageOps

from mhaunet.errors import ConfigError, DataError, NumericalError, ShapeError
from mhaunet.network import MHAUNet, NetworkConfig
from mhaunet.synthetic import write_dataset
from mhaunet.training import (
    LOG_FIELDS,
    LossWeights,
    TrainConfig,
    augment_pair,
    bce_dice_loss,
    evaluate_split,
    load_batch,
    lr_at,
    read_manifest,
    soft_dice,
    train,
)

from oracles import finite_difference_check


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    return write_dataset(root, {"train": 3, "val": 2, "test": 2}, size=(48, 40), seed=1)


@pytest.fixture(scope="module")
def manifest(dataset):
    return read_manifest(dataset, resize_to=(32, 32))


# -- manifest ---------------------------------------------------------------

def test_manifest_parsing(manifest):
    assert [len(manifest.split(s)) for s in ("train", "val", "test")] == [3, 2, 2]
    assert all(e.image.is_file() for e in manifest.entries)


def test_manifest_comments_and_absent_masks(tmp_path, dataset):
    img = dataset.parent / "images" / "test_000.png"
    m = tmp_path / "m.tsv"
    m.write_text(f"# header\n\n{img}\t-\ttest\n")
    man = read_manifest(m)
    assert man.entries[0].mask is None


@pytest.mark.parametrize("body,match", [
    ("a.png\t-\ttrain\n", "need a mask"),
    ("a.png\tb.png\ttrain\na.png\tb.png\ttest\n", "both"),
    ("a.png\tb.png\tholdout\n", "unknown split"),
    ("a.png\tb.png\n", "3 tab-separated"),
])
def test_manifest_errors(tmp_path, body, match):
    m = tmp_path / "m.tsv"
    m.write_text(body)
    with pytest.raises(DataError, match=match):
        read_manifest(m, check_exists=False)


def test_manifest_missing_file(tmp_path):
    m = tmp_path / "m.tsv"
    m.write_text("nope.png\tnope_mask.png\ttrain\n")
    with pytest.raises(DataError, match="missing"):
        read_manifest(m)


# -- loading ----------------------------------------------------------------

def test_load_batch_deterministic(manifest):
    a = load_batch(manifest, [0, 2])
    b = load_batch(manifest, [0, 2])
    assert torch.equal(a[0], b[0]) and torch.equal(a[1], b[1])
    assert a[0].shape == (2, 3, 32, 32) and a[1].shape == (2, 1, 32, 32)
    assert a[0].min() >= 0 and a[0].max() <= 1
    assert set(a[1].unique().tolist()) <= {0.0, 1.0}


def test_load_batch_augmented_is_seeded(manifest):
    a = load_batch(manifest, [0, 1], augment=True, rng=np.random.default_rng(5))
    b = load_batch(manifest, [0, 1], augment=True, rng=np.random.default_rng(5))
    assert torch.equal(a[0], b[0]) and torch.equal(a[1], b[1])
    assert set(a[1].unique().tolist()) <= {0.0, 1.0}


def test_white_mask_gives_ones(tmp_path):
    Image.fromarray(np.full((20, 20, 3), 90, np.uint8)).save(tmp_path / "i.png")
    Image.fromarray(np.full((20, 20), 255, np.uint8)).save(tmp_path / "m.png")
    (tmp_path / "man.tsv").write_text("i.png\tm.png\ttrain\n")
    _, masks = load_batch(read_manifest(tmp_path / "man.tsv", resize_to=(16, 16)), [0])
    assert torch.equal(masks, torch.ones(1, 1, 16, 16))


def test_size_mismatch_rejected(tmp_path):
    Image.fromarray(np.zeros((20, 20, 3), np.uint8)).save(tmp_path / "i.png")
    Image.fromarray(np.zeros((10, 20), np.uint8)).save(tmp_path / "m.png")
    (tmp_path / "man.tsv").write_text("i.png\tm.png\ttrain\n")
    with pytest.raises(ShapeError):
        load_batch(read_manifest(tmp_path / "man.tsv", resize_to=(16, 16)), [0])


def test_unreadable_image(tmp_path):
    (tmp_path / "i.png").write_text("not an image")
    (tmp_path / "m.png").write_text("not an image")
    (tmp_path / "man.tsv").write_text("i.png\tm.png\ttrain\n")
    with pytest.raises(DataError, match="i.png"):
        load_batch(read_manifest(tmp_path / "man.tsv"), [0])


class _ScriptedRng:
    def __init__(self, draws):
        self.draws = list(draws)

    def random(self):
        return self.draws.pop(0)

    def uniform(self, lo, hi):
        return 0.0


def test_horizontal_flip_keeps_pairing(dataset):
    e_img = dataset.parent / "images" / "train_000.png"
    e_mask = dataset.parent / "masks" / "train_000.png"
    img = np.asarray(Image.open(e_img).convert("RGB"), np.float32).transpose(2, 0, 1) / 255
    mask = (np.asarray(Image.open(e_mask)) >= 128).astype(np.float32)[None]
    out_img, out_mask = augment_pair(img, mask, _ScriptedRng([0.1, 0.9]), max_rotation=0)
    ref_img = np.asarray(ImageOps.mirror(Image.open(e_img).convert("RGB")), np.float32) / 255
    ref_mask = np.asarray(ImageOps.mirror(Image.open(e_mask))) >= 128
    np.testing.assert_array_equal(out_img.transpose(1, 2, 0), ref_img)
    np.testing.assert_array_equal(out_mask[0] > 0.5, ref_mask)


# -- loss -------------------------------------------------------------------

def test_loss_vanishes_for_saturated_perfect_prediction():
    target = (torch.rand(2, 1, 8, 8) > 0.5).double()
    losses = [bce_dice_loss(m * (2 * target - 1), target).item() for m in (5.0, 20.0, 60.0)]
    assert losses[0] > losses[1] > losses[2] >= 0
    assert losses[2] < 1e-12


def test_bce_term_is_ln2_at_half_probability():
    target = torch.zeros(1, 1, 4, 4)
    target[..., :2, :] = 1
    loss = bce_dice_loss(torch.zeros(1, 1, 4, 4), target, LossWeights(1.0, 0.0))
    assert loss.item() == pytest.approx(math.log(2), abs=1e-7)


def test_loss_gradient_matches_finite_differences():
    gen = torch.Generator().manual_seed(0)
    logits = torch.randn(1, 1, 4, 4, dtype=torch.float64, generator=gen, requires_grad=True)
    target = (torch.rand(1, 1, 4, 4, generator=gen) > 0.5).double()
    worst, checked = finite_difference_check([logits], lambda: bce_dice_loss(logits, target))
    assert checked == 16 and worst < 1e-4


def test_loss_shape_mismatch():
    with pytest.raises(ShapeError):
        bce_dice_loss(torch.zeros(1, 1, 4, 4), torch.zeros(1, 1, 4, 5))


@pytest.mark.parametrize("kw", [dict(bce_weight=-1), dict(bce_weight=0, dice_weight=0),
                                dict(dice_smooth=0)])
def test_loss_weights_validation(kw):
    with pytest.raises(ConfigError):
        LossWeights(**kw)


@settings(max_examples=50, deadline=None)
@given(logits=arrays(np.float64, (1, 1, 4, 4), elements=st.floats(-50, 50)),
       target=arrays(np.bool_, (1, 1, 4, 4)))
def test_loss_nonnegative_and_finite(logits, target):
    loss = bce_dice_loss(torch.from_numpy(logits), torch.from_numpy(target).double())
    assert torch.isfinite(loss) and loss.item() >= -1e-12


@settings(max_examples=50, deadline=None)
@given(a=arrays(np.bool_, (2, 1, 5, 5)), b=arrays(np.bool_, (2, 1, 5, 5)))
def test_soft_dice_symmetric_on_binary(a, b):
    a, b = torch.from_numpy(a).double(), torch.from_numpy(b).double()
    assert soft_dice(a, b).item() == soft_dice(b, a).item()


# -- schedule ---------------------------------------------------------------

def test_lr_schedule_points():
    cfg = TrainConfig()
    assert lr_at(0, cfg) == 0.001
    assert lr_at(cfg.epochs, cfg) == 0.00001
    assert abs(lr_at(125, cfg) - 0.000505) < 1e-12


def test_lr_schedule_out_of_range():
    with pytest.raises(ValueError):
        lr_at(251, TrainConfig())
    with pytest.raises(ValueError):
        lr_at(-1, TrainConfig())


@pytest.mark.parametrize("kw", [dict(epochs=0), dict(lr_min=1e-2), dict(batch_size=0)])
def test_train_config_validation(kw):
    with pytest.raises(ConfigError):
        TrainConfig(**kw)


# -- optimizer / validation invariants --------------------------------------

def _tiny_net(seed=0):
    torch.manual_seed(seed)
    return MHAUNet(NetworkConfig(input_size=(32, 32)))


def test_zero_lr_step_leaves_parameters_unchanged():
    net = _tiny_net()
    before = [p.detach().clone() for p in net.parameters()]
    opt = torch.optim.AdamW(net.parameters(), lr=0.0, weight_decay=1e-2)
    net(torch.rand(2, 3, 32, 32)).sum().backward()
    opt.step()
    assert all(torch.equal(a, b) for a, b in zip(before, net.parameters()))


def test_validation_does_not_touch_parameters(manifest):
    net = _tiny_net()
    net.train()
    before = {k: v.clone() for k, v in net.state_dict().items()}
    evaluate_split(net, manifest, "val")
    assert net.training
    assert all(torch.equal(before[k], v) for k, v in net.state_dict().items())


# -- training loop ----------------------------------------------------------

def test_train_logs_and_checkpoints(tmp_path, manifest):
    cfg = TrainConfig(epochs=2, batch_size=2, seed=3)
    result = train(_tiny_net(), manifest, cfg, tmp_path)
    assert result.best_checkpoint.is_file()
    with (tmp_path / "train_log.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert tuple(rows[0]) == LOG_FIELDS
    assert [float(r["lr"]) for r in rows] == [lr_at(e, cfg) for e in range(2)]
    assert all(0 <= float(r["val_dsc"]) <= 1 for r in rows)


def test_train_epoch_zero_loss_reproducible(tmp_path, manifest):
    cfg = TrainConfig(epochs=1, batch_size=3, seed=11)
    a = train(_tiny_net(4), manifest, cfg, tmp_path / "a").history[0]["loss"]
    b = train(_tiny_net(4), manifest, cfg, tmp_path / "b").history[0]["loss"]
    assert a == b


def test_train_rejects_empty_split(tmp_path, manifest):
    from mhaunet.training import DatasetManifest
    empty = DatasetManifest(manifest.split("test"), (32, 32))
    with pytest.raises(DataError):
        train(_tiny_net(), empty, TrainConfig(epochs=1), tmp_path)


def test_train_aborts_on_nan(tmp_path, manifest, monkeypatch):
    net = _tiny_net()
    real_forward = net.forward
    monkeypatch.setattr(net, "forward", lambda x, **kw: real_forward(x, **kw) * float("nan"))
    with pytest.raises(NumericalError, match="epoch 0"):
        train(net, manifest, TrainConfig(epochs=1), tmp_path)

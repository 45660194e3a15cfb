"""Train briefly on synthetic lesions, then export per-order heatmaps and run EICA.

Usage: python3 scripts/explain_demo.py [--size 64] [--epochs 10] [--out runs/demo]
"""
import argparse
from pathlib import Path

import torch

from mhaunet.eica import batch_classify
from mhaunet.evaluation import explain_export
from mhaunet.network import MHAUNet, NetworkConfig, predict
from mhaunet.synthetic import write_dataset
from mhaunet.training import TrainConfig, load_batch, read_manifest, train


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--out", default="runs/demo")
    args = ap.parse_args()

    out = Path(args.out)
    size = (args.size, args.size)
    manifest = read_manifest(write_dataset(out / "data", {"train": 8, "val": 2, "test": 4},
                                           size=size, seed=1), resize_to=size)
    torch.manual_seed(0)
    model = MHAUNet(NetworkConfig(input_size=size))
    train(model, manifest, TrainConfig(epochs=args.epochs, batch_size=4), out / "run",
          on_epoch=lambda row: print(f"epoch {row['epoch']}: loss {row['loss']:.4f} "
                                     f"val DSC {row['val_dsc']:.4f}", flush=True))

    for entry in manifest.split("test")[:2]:
        paths = explain_export(model, entry.image, out / "explain" / entry.image.stem)
        print("wrote", ", ".join(p.name for p in paths), "for", entry.image.name)

    bundles = []
    for i in range(len(manifest.split("test"))):
        images, _ = load_batch(manifest, [i], split="test")
        bundles.extend(predict(model, images)[2])
    result = batch_classify(bundles, "positive")
    print(f"EICA {result.metric_name}: {result.rate:.1f}% over {len(bundles)} images")


if __name__ == "__main__":
    main()

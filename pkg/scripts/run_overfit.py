"""Overfit a freshly initialized MHA-UNet on four synthetic positive samples.

Usage: python3 scripts/run_overfit.py [--size 64] [--epochs 200] [--out runs/overfit]
"""
import argparse
import time
from pathlib import Path

import torch

from mhaunet.network import MHAUNet, NetworkConfig
from mhaunet.synthetic import write_dataset
from mhaunet.training import TrainConfig, evaluate_split, read_manifest, train


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--target", type=float, default=0.95)
    ap.add_argument("--out", default="runs/overfit")
    args = ap.parse_args()

    out = Path(args.out)
    size = (args.size, args.size)
    manifest = read_manifest(write_dataset(out / "data", {"train": 4}, size=size, seed=args.seed),
                             resize_to=size)
    torch.manual_seed(args.seed)
    model = MHAUNet(NetworkConfig(input_size=size))
    cfg = TrainConfig(epochs=args.epochs, batch_size=4, seed=args.seed, augment=False,
                      early_stop_dsc=args.target)
    start = time.time()

    def report(row):
        print(f"epoch {row['epoch']:3d}  loss {row['loss']:.4f}  dsc {row['val_dsc']:.4f}  "
              f"{time.time() - start:6.0f}s", flush=True)

    result = train(model, manifest, cfg, out / "run", on_epoch=report)
    final = evaluate_split(model, manifest, "train")
    print(f"train DSC {final.dsc:.4f} after {len(result.history)} epochs, "
          f"{time.time() - start:.0f}s")


if __name__ == "__main__":
    main()

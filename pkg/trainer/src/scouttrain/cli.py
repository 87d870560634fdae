"""train.py-style entry point: scans -> sample store -> trained bundle."""

from __future__ import annotations

import argparse
import logging
import os
import tempfile

from .data import DEFAULT_RATE, build_dataset, load_store
from .model import default_trainer_descriptor, export_bundle
from .training import DEFAULT_EPOCHS, train


def main(argv=None):
    parser = argparse.ArgumentParser(
        description="Train the heightmap refinement network")
    parser.add_argument("--data", nargs="+", required=True,
                        help="directories of .las scans")
    parser.add_argument("--centers", type=int, default=7000 + 3000,
                        help="patch centers to sample (train+test pool)")
    parser.add_argument("--epochs", type=int, default=DEFAULT_EPOCHS)
    parser.add_argument("--out", required=True, help="output .lswb path")
    parser.add_argument("--store", default=None,
                        help="sample store directory (default: temp)")
    parser.add_argument("--rate", type=float, default=DEFAULT_RATE)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--batch-size", type=int, default=64)
    parser.add_argument("--width", type=int, default=1,
                        help="channel divisor for smaller models")
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(message)s")
    store = args.store or tempfile.mkdtemp(prefix="scouttrain_")
    manifest = build_dataset(args.data, args.centers, store,
                             rate=args.rate, seed=args.seed)
    logging.info("store: %d train / %d test samples in %s",
                 len(manifest["train"]), len(manifest["test"]), store)
    inputs, targets, masks = load_store(store, "train")
    result = train(inputs, targets, masks,
                   default_trainer_descriptor(width=args.width),
                   epochs=args.epochs, batch_size=args.batch_size,
                   seed=args.seed, checkpoint_path=args.out + ".ckpt")
    export_bundle(args.out, result.model)
    logging.info("loss %.6f -> %.6f; bundle written to %s",
                 result.initial_loss, result.final_loss,
                 os.path.abspath(args.out))


if __name__ == "__main__":
    main()

import math
from pathlib import Path

from advaug.datagen import read_dataset
from advaug.management.lab_command import LabCommand
from advaug.networks import DenseNet
from advaug.trainer import train_baseline
from advaug.util import make_rng, write_json


def history_path(checkpoint) -> Path:
    out = Path(checkpoint)
    return out.with_name(f"{out.stem}.history.json")


class Command(LabCommand):
    help = "Train a baseline classifier on real data with balanced batches."  # noqa: A003, E501

    positional = ("dataset",)

    def add_lab_arguments(self, parser):
        parser.add_argument("dataset", help="Dataset file (.csv points or .json)")
        parser.add_argument("--out", required=True, help="Checkpoint path (.json)")
        parser.add_argument(
            "--hidden",
            type=int,
            nargs="+",
            default=[32, 32],
            help="Hidden layer widths.",
        )
        self.add_training_arguments(parser)

    def run(self, **options):
        dataset_path = self.input(options["dataset"])
        self.stdout.write(f"📥 Reading {dataset_path}")
        dataset = read_dataset(dataset_path)
        config = self.train_config(options)

        extents = [math.prod(dataset.sample_shape), *options["hidden"], 2]
        model = DenseNet.from_extents(
            extents,
            ["relu"] * len(options["hidden"]) + ["identity"],
            make_rng(config.seed, 1),
            head=config.head,
        )

        self.stdout.write(f"🏋️ Training {extents}, up to {config.epochs} epochs")
        model, history = train_baseline(model, dataset, config)

        out = Path(options["out"])
        model.save(out)
        self.output(out)
        write_json(history_path(out), {"history": history.to_dict()})
        self.output(history_path(out))

        self.manifest.fingerprints = {"model": model.fingerprint()}
        final = history.final
        accuracy = "-" if final is None else f"{final.train_accuracy:.3f}"
        self.done(f"trained {len(history)} epochs, training accuracy {accuracy}")

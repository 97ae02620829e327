import json
from pathlib import Path

from advaug.datagen import read_dataset
from advaug.errors import ConfigError
from advaug.management.commands.train import history_path
from advaug.management.lab_command import LabCommand
from advaug.networks import DenseNet
from advaug.pools import AugmentationPool
from advaug.trainer import SamplingSchedule, finetune_augmented
from advaug.util import write_json

PRESETS = {
    "standard": SamplingSchedule.from_settings,
    "poisson": SamplingSchedule.poisson,
    "real-only": SamplingSchedule.real_only,
}


def parse_schedule(text: str) -> SamplingSchedule:
    if text in PRESETS:
        return PRESETS[text]()
    try:
        payload = json.loads(text)
    except json.JSONDecodeError:
        raise ConfigError(
            f"--schedule must be one of {sorted(PRESETS)} or a JSON object, "
            f"got {text!r}"
        )
    if not isinstance(payload, dict):
        raise ConfigError("--schedule JSON must be an object")
    return SamplingSchedule.from_dict(payload)


class Command(LabCommand):
    help = "Fine-tune a baseline with augmentation pools at the scheduled ratios."  # noqa: A003, E501

    positional = ("model", "dataset")

    def add_lab_arguments(self, parser):
        parser.add_argument("model", help="Baseline checkpoint")
        parser.add_argument("dataset", help="Real training data")
        parser.add_argument(
            "--pool",
            action="append",
            default=[],
            help="Augmentation pool file (repeatable).",
        )
        parser.add_argument(
            "--schedule",
            default="standard",
            help=f"Preset ({', '.join(sorted(PRESETS))}) or a JSON schedule.",
        )
        parser.add_argument("--out", required=True, help="Checkpoint path (.json)")
        self.add_training_arguments(parser)

    def run(self, **options):
        model = DenseNet.load(self.input(options["model"]))
        dataset = read_dataset(self.input(options["dataset"]))
        schedule = parse_schedule(options["schedule"])
        parent = model.fingerprint()

        pools, fingerprints = {}, {}
        for pool_path in options["pool"]:
            pool = AugmentationPool.load(self.input(pool_path))
            if pool.model_fingerprint != parent:
                raise ConfigError(
                    f"{pool_path} was generated against model "
                    f"{pool.model_fingerprint[:12]}, not {parent[:12]}"
                )
            if pool.kind in pools:
                raise ConfigError(f"two pools of kind {pool.kind!r}")
            pools[pool.kind] = pool.as_dataset()
            fingerprints[pool.kind] = pool.fingerprint
            self.stdout.write(f"📥 {pool.kind}: {len(pool)} records")

        config = self.train_config(options)
        self.stdout.write(f"🏋️ Fine-tuning for up to {config.epochs} epochs")
        model, history = finetune_augmented(
            model, dataset, pools, schedule, config, fingerprints
        )

        out = Path(options["out"])
        model.save(out)
        self.output(out)
        write_json(history_path(out), {"history": history.to_dict()})
        self.output(history_path(out))

        self.manifest.fingerprints = {
            "parent": parent,
            "model": model.fingerprint(),
            "pools": fingerprints,
        }
        self.done(f"fine-tuned {len(history)} epochs")

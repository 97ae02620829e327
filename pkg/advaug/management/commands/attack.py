from pathlib import Path

from django.conf import settings

from advaug.datagen import read_dataset
from advaug.errors import ConfigError
from advaug.management.lab_command import LabCommand, parse_range
from advaug.networks import DenseNet
from advaug.pools import NEEDS_SYNTHESIZER, PoolRequest, generate_pool
from advaug.synthesizer import SynthesizerBundle

# attack mode -> pool kind
MODES = {
    "latent": "synthetic-pgd",
    "patch": "perturbed-positive",
    "patch-negative": "perturbed-negative",
    "noise": "noise-negative",
    "random-syn": "synthetic-random",
    "uniform": "noise-uniform",
    "poisson": "poisson",
}

# modes drawing one record per source sample by default
PER_SOURCE = ("perturbed-positive", "perturbed-negative", "poisson")


class Command(LabCommand):
    help = "Attack a frozen classifier and write an augmentation pool."  # noqa: A003

    positional = ("model",)

    def add_lab_arguments(self, parser):
        parser.add_argument("model", help="Classifier checkpoint to attack")
        parser.add_argument("--mode", choices=sorted(MODES), required=True)
        parser.add_argument("--out", required=True, help="Pool file (.json)")
        parser.add_argument("--synthesizer", help="Synthesizer bundle (latent modes)")
        parser.add_argument(
            "--dataset", help="Source samples (patch modes, backgrounds, poisson)"
        )
        parser.add_argument(
            "--count",
            type=int,
            default=None,
            help="Records to generate (default: 100, or one per source sample).",
        )
        parser.add_argument(
            "--poisson-scale", type=float, default=settings.POISSON_SCALES[0]
        )
        parser.add_argument(
            "--no-clamp",
            action="store_true",
            help="Do not clamp perturbed samples into the value range.",
        )
        self.add_attack_arguments(parser)
        self.add_worker_argument(parser)

    def run(self, **options):
        kind = MODES[options["mode"]]
        classifier = DenseNet.load(self.input(options["model"]))

        bundle = None
        if kind in NEEDS_SYNTHESIZER:
            if not options["synthesizer"]:
                raise ConfigError(f"--mode {options['mode']} needs --synthesizer")
            bundle = SynthesizerBundle.load(self.input(options["synthesizer"]))
        dataset = None
        if options["dataset"]:
            dataset = read_dataset(self.input(options["dataset"]))

        count = options["count"]
        if count is None:
            count = 100
            if kind in PER_SOURCE and dataset is not None:
                labels = {"perturbed-positive": 1, "perturbed-negative": 0}
                label = labels.get(kind)
                count = len(dataset) if label is None else int(
                    (dataset.labels == label).sum()
                )
        if count < 1:
            raise ConfigError(f"--count must be >= 1, got {count}")

        request = PoolRequest(
            kind=kind,
            count=count,
            seed=options["seed"],
            attack=self.attack_config(options),
            value_range=parse_range(options["value_range"]),
            head=options["head"],
            poisson_scale=options["poisson_scale"],
            clamp=not options["no_clamp"],
        )
        self.stdout.write(f"⚔️ Generating {count} {kind} records")
        pool = generate_pool(request, classifier, bundle, dataset, options["workers"])

        out = Path(options["out"])
        pool.save(out)
        self.output(out)
        self.manifest.fingerprints = {
            "model": pool.model_fingerprint,
            "pool": pool.fingerprint,
        }
        self.done(f"{len(pool)} records, success rate {pool.success_rate():.2f}")

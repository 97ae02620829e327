from pathlib import Path

from django.conf import settings

from advaug import datagen, detection
from advaug.errors import ConfigError
from advaug.froc import write_ground_truths
from advaug.management.lab_command import LabCommand
from advaug.util import make_rng

KINDS = ("two-moons", "blob-patches", "blob-scans")


class Command(LabCommand):
    help = "Generate a procedural dataset: two-moons points, blob patches or blob scans."  # noqa: A003, E501

    positional = ("kind",)

    def add_lab_arguments(self, parser):
        parser.add_argument("kind", choices=KINDS, help="Dataset family")
        parser.add_argument(
            "--out",
            required=True,
            help="Output file (.csv or .json); a directory for blob-scans.",
        )
        parser.add_argument(
            "--n",
            type=int,
            default=settings.TWO_MOONS_N,
            help="Samples per class (two-moons, blob-patches).",
        )
        parser.add_argument(
            "--std",
            type=float,
            default=settings.TWO_MOONS_STD,
            help="Gaussian noise on two-moons points.",
        )
        parser.add_argument(
            "--subsample-pos",
            type=int,
            default=None,
            help="Keep only this many positives, drawn with a long-tail bias.",
        )
        parser.add_argument(
            "--longtail-rate", type=float, default=settings.LONGTAIL_RATE
        )
        parser.add_argument("--patch-size", type=int, default=settings.PATCH_SIZE)
        parser.add_argument("--scan-size", type=int, default=settings.SCAN_SIZE)
        parser.add_argument("--scans", type=int, default=20, help="Number of scans.")
        parser.add_argument("--blobs-per-scan", type=int, default=3)
        parser.add_argument("--distractors", type=int, default=2)

    def run(self, **options):
        kind = options["kind"]
        if options["n"] < 1:
            raise ConfigError(f"--n must be >= 1, got {options['n']}")
        if options["std"] < 0:
            raise ConfigError(f"--std must be >= 0, got {options['std']}")
        subsample = options["subsample_pos"]
        if subsample is not None and not 0 <= subsample <= options["n"]:
            raise ConfigError(f"--subsample-pos must be within [0, {options['n']}]")

        seed = options["seed"]
        self.stdout.write(f"🎲 Generating {kind} (seed {seed})")
        if kind == "blob-scans":
            self._scans(options, seed)
            return

        if kind == "two-moons":
            dataset = datagen.two_moons(options["n"], options["std"], make_rng(seed, 0))
        else:
            dataset = datagen.blob_patches(
                options["n"],
                options["patch_size"],
                make_rng(seed, 0),
                radius_range=settings.BLOB_RADIUS_RANGE,
                min_radius=settings.BLOB_MIN_RADIUS,
            )
            if dataset.arc is None and subsample is not None:
                raise ConfigError("--subsample-pos applies to two-moons only")

        if subsample is not None:
            dataset = datagen.subsample_positives(
                dataset, subsample, make_rng(seed, 1), options["longtail_rate"]
            )

        out = Path(options["out"])
        if kind == "blob-patches" and out.suffix == ".csv":
            raise ConfigError("--out for blob patches must be a .json file")
        datagen.write_dataset(out, dataset)
        self.output(out)
        self.done(
            f"{len(dataset)} samples, {int(dataset.labels.sum())} positive"
        )

    def _scans(self, options, seed):
        benchmark = detection.blob_benchmark(
            options["scans"],
            options["scan_size"],
            make_rng(seed, 0),
            blobs_per_scan=options["blobs_per_scan"],
            distractors_per_scan=options["distractors"],
            radius_range=settings.BLOB_RADIUS_RANGE,
            min_radius=settings.BLOB_MIN_RADIUS,
        )
        out = Path(options["out"])
        scans_path = out / "scans.json"
        truth_path = out / "groundtruth.csv"
        detection.write_scans(scans_path, benchmark.scans)
        self.output(scans_path)
        write_ground_truths(truth_path, benchmark.ground_truths)
        self.output(truth_path)
        relevant = sum(1 for gt in benchmark.ground_truths if gt.relevant)
        self.done(f"{len(benchmark.scans)} scans, {relevant} relevant findings")

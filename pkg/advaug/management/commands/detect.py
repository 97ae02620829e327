from pathlib import Path

from advaug.detection import DetectionConfig, detect, read_scans
from advaug.froc import write_candidates
from advaug.heads import HEADS
from advaug.management.lab_command import LabCommand
from advaug.networks import DenseNet


class Command(LabCommand):
    help = "Propose candidates on blob scans and re-score them with a classifier."  # noqa: A003, E501

    positional = ("model", "scans")
    stochastic = False

    def add_lab_arguments(self, parser):
        parser.add_argument("model", help="Patch classifier checkpoint")
        parser.add_argument("scans", help="Scans container (scans.json)")
        parser.add_argument("--out", required=True, help="Candidates CSV")
        parser.add_argument("--patch-size", type=int, default=None)
        parser.add_argument("--smoothing", type=float, default=None)
        parser.add_argument("--min-distance", type=float, default=None)
        parser.add_argument("--max-candidates", type=int, default=None)
        parser.add_argument("--head", choices=HEADS, default=None)

    def run(self, **options):
        model = DenseNet.load(self.input(options["model"]))
        scans = read_scans(self.input(options["scans"]))
        config = DetectionConfig.from_settings(
            patch_size=options["patch_size"],
            smoothing=options["smoothing"],
            min_distance=options["min_distance"],
            max_candidates=options["max_candidates"],
        )

        self.stdout.write(f"🔎 Scanning {len(scans)} scans")
        candidates = detect(model, scans, config, options["head"])

        out = Path(options["out"])
        write_candidates(out, candidates)
        self.output(out)
        self.manifest.fingerprints = {"model": model.fingerprint()}
        self.done(f"{len(candidates)} candidates")

from pathlib import Path

from django.conf import settings

from advaug.datagen import read_dataset
from advaug.management.lab_command import LabCommand, parse_floats, parse_range
from advaug.networks import CHECKPOINT_FORMAT, DenseNet
from advaug.stress import ATTACKING, PROTOCOLS, StressConfig, run_stress
from advaug.synthesizer import SynthesizerBundle
from advaug.util import read_json, write_json


def baseline_ancestor(model: DenseNet, model_path: Path):
    """
    The checkpoint next to `model_path` that this model was fine-tuned
    from, if it is there.
    """
    parents = [
        entry["parent"] for entry in model.lineage if entry.get("stage") == "finetune"
    ]
    if not parents:
        return None
    for candidate in sorted(model_path.parent.glob("*.json")):
        if candidate == model_path:
            continue
        try:
            payload = read_json(candidate)
        except (OSError, ValueError):
            continue
        if not isinstance(payload, dict):
            continue
        if payload.get("format") != CHECKPOINT_FORMAT:
            continue
        other = DenseNet.from_dict(payload)
        if other.fingerprint() == parents[0]:
            return candidate, other
    return None


class Command(LabCommand):
    help = "Stress-test a classifier with noised, attacked or synthetic samples."  # noqa: A003, E501

    positional = ("model",)

    def add_lab_arguments(self, parser):
        parser.add_argument("model", help="Classifier under test")
        parser.add_argument("--protocol", choices=PROTOCOLS, required=True)
        parser.add_argument("--out", required=True, help="Report path (JSON)")
        parser.add_argument("--dataset", help="Real samples (positives/negatives)")
        parser.add_argument(
            "--source-model",
            help="Model the attacks run against (default: the baseline this "
            "model was fine-tuned from, else the model itself).",
        )
        parser.add_argument("--synthesizer", help="Bundle for syn-* protocols")
        parser.add_argument("--count", type=int, default=100)
        parser.add_argument(
            "--magnitudes",
            default=",".join(f"{m:g}" for m in settings.UNIFORM_NOISE_MAGNITUDES),
        )
        parser.add_argument(
            "--scales", default=",".join(f"{s:g}" for s in settings.POISSON_SCALES)
        )
        self.add_attack_arguments(parser)
        self.add_worker_argument(parser)

    def run(self, **options):
        model_path = self.input(options["model"])
        model = DenseNet.load(model_path)
        dataset = None
        if options["dataset"]:
            dataset = read_dataset(self.input(options["dataset"]))
        bundle = None
        if options["synthesizer"]:
            bundle = SynthesizerBundle.load(self.input(options["synthesizer"]))

        protocol = options["protocol"]
        source = None
        if options["source_model"]:
            source = DenseNet.load(self.input(options["source_model"]))
        elif protocol in ATTACKING:
            found = baseline_ancestor(model, model_path)
            if found is not None:
                ancestor_path, source = found
                self.input(ancestor_path)
                self.stdout.write(f"🎯 Attacking baseline ancestor {ancestor_path}")

        config = StressConfig(
            protocol=protocol,
            seed=options["seed"],
            count=options["count"],
            magnitudes=parse_floats("magnitudes", options["magnitudes"]),
            scales=parse_floats("scales", options["scales"]),
            attack=self.attack_config(options),
            value_range=parse_range(options["value_range"]),
            head=options["head"],
            workers=options["workers"],
        )
        self.stdout.write(f"🧪 Running {protocol}")
        report = run_stress(config, model, dataset, source, bundle)

        out = Path(options["out"])
        write_json(out, report)
        self.output(out)
        for name, column in report["columns"].items():
            self.stdout.write(
                f"  {name:<16} {column['mean']:.3f} ± {column['std']:.3f} "
                f"(n={column['n']})"
            )
        self.done(protocol)

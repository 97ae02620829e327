from pathlib import Path

from django.conf import settings

from advaug.datagen import read_dataset
from advaug.errors import ConfigError
from advaug.heads import HEADS
from advaug.management.lab_command import LabCommand
from advaug.networks import DenseNet
from advaug.plotting import GridSpec, render_boundary, render_panels
from advaug.toy import ToyConfig, run_toy
from advaug.util import write_json

DEFAULT_BOX = "-1.5,2.5,-1,1.5"


class Command(LabCommand):
    help = "Draw a 2-D model's decision boundary as SVG, or the six-panel toy figure."  # noqa: A003, E501

    positional = ("model", "dataset")
    stochastic = False

    def add_lab_arguments(self, parser):
        parser.add_argument("model", nargs="?", help="2-D classifier checkpoint")
        parser.add_argument("dataset", nargs="?", help="Points to overlay")
        parser.add_argument("--out", required=True, help="SVG path")
        parser.add_argument("--box", default=DEFAULT_BOX, help="x0,x1,y0,y1")
        parser.add_argument("--resolution", type=int, default=200)
        parser.add_argument("--head", choices=HEADS, default=None)
        parser.add_argument(
            "--six-panel",
            action="store_true",
            help="Run the two-moons experiment and draw all six models.",
        )
        parser.add_argument("--seed", type=int, default=None)
        parser.add_argument("--baseline-epochs", type=int, default=None)
        parser.add_argument("--finetune-epochs", type=int, default=None)
        parser.add_argument("--synthesizer-epochs", type=int, default=None)
        parser.add_argument("--pool-size", type=int, default=None)
        self.add_worker_argument(parser)

    def run(self, **options):
        spec = GridSpec.parse(options["box"], options["resolution"])
        out = Path(options["out"])
        if options["six_panel"]:
            self._six_panel(options, spec, out)
            return

        if not options["model"]:
            raise ConfigError("a model checkpoint is required without --six-panel")
        model = DenseNet.load(self.input(options["model"]))
        dataset = None
        if options["dataset"]:
            dataset = read_dataset(self.input(options["dataset"]))

        info = render_boundary(model, spec, out, dataset, head=options["head"])
        self.output(out)
        self.manifest.fingerprints = {"model": model.fingerprint()}
        contour = "with" if info["boundary"] else "without"
        self.done(f"{spec.resolution}x{spec.resolution} grid, {contour} 0.5 contour")

    def _six_panel(self, options, spec, out):
        if options["seed"] is None:
            raise ConfigError("--seed is required with --six-panel")
        overrides = {
            "baseline_epochs": options["baseline_epochs"],
            "finetune_epochs": options["finetune_epochs"],
            "synthesizer_epochs": options["synthesizer_epochs"],
            "pool_size": options["pool_size"],
        }
        config = ToyConfig(
            seed=options["seed"],
            n_per_class=settings.TWO_MOONS_N,
            noise_std=settings.TWO_MOONS_STD,
            positives_kept=settings.LONGTAIL_K,
            longtail_rate=settings.LONGTAIL_RATE,
            grid=spec,
            **{k: v for k, v in overrides.items() if v is not None},
        )

        self.stdout.write("🏋️ Training the six toy models")
        result = run_toy(config, workers=options["workers"])
        panels = [
            (panel.title, panel.model, panel.dataset, panel.extra)
            for panel in result.panels
        ]
        render_panels(panels, spec, out, head=options["head"])
        self.output(out)

        report_path = out.with_name("toy-report.json")
        write_json(report_path, result.report())
        self.output(report_path)
        self.manifest.fingerprints = {
            panel.name: panel.model.fingerprint() for panel in result.panels
        }
        for panel in result.panels:
            self.stdout.write(
                f"  {panel.name:<11} coverage {panel.metrics['coverage']:.3f} "
                f"outside {panel.metrics['outside_positive_fraction']:.3f}"
            )
        self.done("six panels")

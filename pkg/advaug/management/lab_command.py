import time
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from advaug.adversarial import INITS, NORMS, STEPS, AttackConfig
from advaug.errors import (
    ConfigError,
    DomainError,
    FormatError,
    NonFiniteError,
    ShapeError,
)
from advaug.heads import HEADS
from advaug.manifest import RunManifest, default_manifest_path
from advaug.trainer import TrainConfig

USAGE_ERRORS = (ConfigError, ShapeError, DomainError, FormatError)

EXIT_USAGE = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

# Django's own options; never echoed into manifests
BASE_OPTIONS = {
    "verbosity",
    "settings",
    "pythonpath",
    "traceback",
    "no_color",
    "force_color",
    "skip_checks",
    "manifest",
    "stdout",
    "stderr",
}


def parse_range(text: str) -> tuple[float, float]:
    try:
        low, high = (float(v) for v in str(text).split(","))
    except ValueError:
        raise ConfigError(f"--value-range needs 'low,high', got {text!r}")
    if not low < high:
        raise ConfigError(f"--value-range is empty: {text!r}")
    return low, high


def parse_floats(flag: str, text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in str(text).split(","))
    except ValueError:
        raise ConfigError(f"--{flag} needs comma-separated numbers, got {text!r}")


class LabCommand(BaseCommand):
    """
    Shared front door for the lab's commands.

    Subclasses declare `positional` (argument names echoed, in order,
    into the manifest), set `stochastic` when the run needs --seed, and
    implement add_lab_arguments() and run(). Inputs are registered with
    self.input(), outputs with self.output() once written; a manifest
    listing both is written next to the first output unless --manifest
    is "-".
    """

    positional: tuple = ()
    stochastic = True

    def create_parser(self, prog_name, subcommand, **kwargs):
        parser = super().create_parser(prog_name, subcommand, **kwargs)
        argparse_error = parser.error

        def error(message):
            if parser.called_from_command_line:
                argparse_error(message)
            raise CommandError(f"Error: {message}", returncode=EXIT_USAGE)

        parser.error = error
        return parser

    def add_arguments(self, parser):
        self.add_lab_arguments(parser)
        if self.stochastic:
            parser.add_argument(
                "--seed", type=int, required=True, help="Master seed (required)."
            )
        parser.add_argument(
            "--manifest",
            type=str,
            default=None,
            help="Manifest path (default: next to the first output; '-' for none).",
        )

    def add_lab_arguments(self, parser):
        pass

    def add_worker_argument(self, parser):
        parser.add_argument(
            "--workers",
            type=int,
            default=settings.ADVAUG_WORKERS,
            help="Worker threads for pool generation.",
        )

    def add_training_arguments(self, parser):
        parser.add_argument("--epochs", type=int, default=100)
        parser.add_argument("--batch-size", type=int, default=settings.BATCH_SIZE)
        parser.add_argument("--head", choices=HEADS, default="ce")
        parser.add_argument(
            "--anneal",
            type=int,
            default=settings.BETA_ANNEAL_EPOCHS,
            help="Epochs over which the beta KL weight ramps up to 1.",
        )
        parser.add_argument(
            "--ce-epochs",
            type=int,
            default=0,
            help="Train this many epochs with the CE head before switching to beta.",
        )
        parser.add_argument("--lr", type=float, default=settings.ADAM_LEARNING_RATE)
        parser.add_argument(
            "--patience", type=int, default=settings.EARLY_STOP_PATIENCE
        )
        parser.add_argument(
            "--validation-fraction",
            type=float,
            default=settings.VALIDATION_FRACTION,
        )

    def train_config(self, options) -> TrainConfig:
        return TrainConfig.from_settings(
            epochs=options["epochs"],
            batch_size=options["batch_size"],
            seed=options["seed"],
            head=options["head"],
            patience=options["patience"],
            anneal_epochs=options["anneal"],
            learning_rate=options["lr"],
            validation_fraction=options["validation_fraction"],
            ce_epochs=options["ce_epochs"],
        )

    def add_attack_arguments(self, parser):
        parser.add_argument("--eps", type=float, default=settings.PGD_EPSILON)
        parser.add_argument("--alpha", type=float, default=settings.PGD_ALPHA)
        parser.add_argument("--iters", type=int, default=settings.PGD_ITERATIONS)
        parser.add_argument("--norm", choices=NORMS, default=settings.PGD_NORM)
        parser.add_argument("--init", choices=INITS, default=settings.PGD_INIT)
        parser.add_argument("--step", choices=STEPS, default=settings.PGD_STEP)
        parser.add_argument(
            "--target-label",
            type=int,
            choices=(0, 1),
            default=None,
            help="Label whose loss is ascended (default: per attack mode).",
        )
        parser.add_argument(
            "--mask-threshold",
            type=float,
            default=None,
            help="Fusion mask threshold (default: middle of the value range).",
        )
        parser.add_argument("--value-range", default="0,1", help="low,high")
        parser.add_argument("--head", choices=HEADS, default=None)

    def attack_config(self, options) -> AttackConfig:
        return AttackConfig.from_settings(
            epsilon=options["eps"],
            alpha=options["alpha"],
            iterations=options["iters"],
            norm=options["norm"],
            init=options["init"],
            step=options["step"],
            target_label=options["target_label"],
            mask_threshold=options["mask_threshold"],
        )

    # ------------------------------------------------------------------

    @property
    def command_name(self) -> str:
        return self.__module__.rsplit(".", 1)[-1]

    def input(self, path) -> Path:  # noqa: A003
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"input file does not exist: {path}")
        self.manifest.add_input(path)
        return path

    def output(self, path) -> Path:
        path = Path(path)
        self.manifest.add_output(path)
        self._outputs.append(path)
        self.stdout.write(f"💾 Wrote {path}")
        return path

    def handle(self, *args, **options):
        self.manifest = RunManifest(
            command=self.command_name,
            args=[
                None if options[name] is None else str(options[name])
                for name in self.positional
            ],
            options={k: v for k, v in options.items() if k not in BASE_OPTIONS},
            seed=options.get("seed"),
        )
        for name in self.positional:
            self.manifest.options.pop(name, None)
        self._outputs = []
        self.manifest.start_clock()
        started = time.perf_counter()

        try:
            self.run(**options)
        except USAGE_ERRORS as exc:
            self.stderr.write(self.style.ERROR(f"❌ {exc}"))
            raise CommandError(str(exc), returncode=EXIT_USAGE) from exc
        except NonFiniteError as exc:
            self.stderr.write(self.style.ERROR(f"❌ {exc}"))
            raise CommandError(str(exc), returncode=EXIT_NUMERICAL) from exc
        except OSError as exc:
            self.stderr.write(self.style.ERROR(f"❌ {exc}"))
            raise CommandError(str(exc), returncode=EXIT_IO) from exc

        self.manifest.seconds = round(time.perf_counter() - started, 3)
        self.write_manifest(options.get("manifest"))

    def write_manifest(self, target):
        if target == "-" or not self._outputs:
            return
        path = Path(target) if target else default_manifest_path(self._outputs[0])
        try:
            self.manifest.save(path)
        except OSError as exc:
            raise CommandError(str(exc), returncode=EXIT_IO) from exc
        self.stdout.write(f"🧾 Manifest {path}")

    def run(self, **options):
        raise NotImplementedError

    def done(self, message: str):
        self.stdout.write(self.style.SUCCESS(f"✅ {message}"))

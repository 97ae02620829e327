from pathlib import Path

from django.conf import settings

from advaug.datagen import read_dataset
from advaug.errors import ConfigError
from advaug.management.commands.train import history_path
from advaug.management.lab_command import LabCommand
from advaug.synthesizer import SynthesizerConfig, build_synthesizer, train_synthesizer
from advaug.util import make_rng, write_json


class Command(LabCommand):
    help = "Train the VAE + WGAN-GP synthesizer on one class of a dataset."  # noqa: A003, E501

    positional = ("dataset",)

    def add_lab_arguments(self, parser):
        parser.add_argument("dataset", help="Dataset file")
        parser.add_argument("--out", required=True, help="Synthesizer bundle (.json)")
        parser.add_argument(
            "--label", type=int, choices=(0, 1), default=1, help="Class to model."
        )
        parser.add_argument("--epochs", type=int, default=200)
        parser.add_argument("--batch-size", type=int, default=20)
        parser.add_argument("--latent-dim", type=int, default=None)
        parser.add_argument("--hidden", type=int, default=32)
        parser.add_argument("--lambda-kl", type=float, default=None)
        parser.add_argument("--lambda-adv", type=float, default=None)
        parser.add_argument("--gp-weight", type=float, default=None)
        parser.add_argument("--power-iters", type=int, default=None)
        parser.add_argument("--lr", type=float, default=settings.ADAM_LEARNING_RATE)

    def run(self, **options):
        dataset = read_dataset(self.input(options["dataset"]))
        chosen = dataset.positives() if options["label"] == 1 else dataset.negatives()
        if len(chosen) == 0:
            raise ConfigError(f"no samples with label {options['label']}")

        output_kind = "patch" if len(dataset.sample_shape) > 1 else "points"
        config = SynthesizerConfig.from_settings(
            output_kind=output_kind,
            latent_dim=options["latent_dim"],
            hidden=options["hidden"],
            lambda_kl=options["lambda_kl"],
            lambda_adv=options["lambda_adv"],
            gp_weight=options["gp_weight"],
            power_iters=options["power_iters"],
            epochs=options["epochs"],
            batch_size=options["batch_size"],
            learning_rate=options["lr"],
        )
        seed = options["seed"]
        bundle = build_synthesizer(dataset.sample_shape, config, make_rng(seed, 0))

        self.stdout.write(
            f"🏋️ Training {output_kind} synthesizer on {len(chosen)} samples"
        )
        history = train_synthesizer(bundle, chosen.x, config, make_rng(seed, 1))

        out = Path(options["out"])
        bundle.save(out)
        self.output(out)
        write_json(history_path(out), {"history": history})
        self.output(history_path(out))

        self.manifest.fingerprints = {"synthesizer": bundle.fingerprint()}
        last = history[-1] if history else {}
        self.done(
            f"{config.epochs} epochs, reconstruction "
            f"{last.get('reconstruction', float('nan')):.4f}"
        )

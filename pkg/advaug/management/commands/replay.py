from django.core.management import call_command
from django.core.management.base import CommandError

from advaug.errors import FormatError
from advaug.management.lab_command import EXIT_NUMERICAL, LabCommand
from advaug.manifest import RunManifest


class Command(LabCommand):
    help = "Re-run a command from its manifest and verify every output hash."  # noqa: A003

    positional = ("manifest_path",)
    stochastic = False

    def add_lab_arguments(self, parser):
        parser.add_argument("manifest_path", help="Manifest written by a command")

    def run(self, **options):
        manifest = RunManifest.load(self.input(options["manifest_path"]))
        if manifest.command == self.command_name:
            raise CommandError("refusing to replay a replay", returncode=2)

        args = list(manifest.args)
        # optional positionals are only ever absent at the tail
        while args and args[-1] is None:
            args.pop()
        if None in args:
            raise FormatError(f"manifest has a gap in its arguments: {manifest.args}")

        echo = " ".join([manifest.command, *args])
        self.stdout.write(f"🔁 Replaying {echo}")
        call_command(
            manifest.command,
            *args,
            **manifest.options,
            manifest="-",
            stdout=self.stdout._out,
            stderr=self.stderr._out,
        )

        mismatches = manifest.mismatches()
        if mismatches:
            for line in mismatches:
                self.stderr.write(self.style.ERROR(f"❌ {line}"))
            raise CommandError(
                f"{len(mismatches)} output(s) differ from the manifest",
                returncode=EXIT_NUMERICAL,
            )
        self.done(f"{len(manifest.outputs)} outputs reproduced bitwise")

from pathlib import Path

from django.conf import settings

from advaug.detection import read_scans
from advaug.froc import froc_report, read_candidates, read_ground_truths
from advaug.management.lab_command import LabCommand
from advaug.util import make_rng, write_json


class Command(LabCommand):
    help = "FROC analysis of detection candidates: curve, CPM and bootstrap CI."  # noqa: A003, E501

    positional = ("candidates", "groundtruth")

    def add_lab_arguments(self, parser):
        parser.add_argument("candidates", help="Candidates CSV")
        parser.add_argument("groundtruth", help="Ground-truth CSV")
        parser.add_argument("--out", required=True, help="Report path (JSON)")
        parser.add_argument(
            "--scans",
            default=None,
            help="Scans container; counts scans without findings or candidates.",
        )
        parser.add_argument(
            "--resamples", type=int, default=settings.BOOTSTRAP_RESAMPLES
        )

    def run(self, **options):
        candidates = read_candidates(self.input(options["candidates"]))
        truths = read_ground_truths(self.input(options["groundtruth"]))

        if options["scans"]:
            scan_ids = [s.scan_id for s in read_scans(self.input(options["scans"]))]
        else:
            scan_ids = sorted(
                {gt.scan_id for gt in truths} | {c.scan_id for c in candidates}
            )

        report = froc_report(
            candidates,
            truths,
            scan_ids,
            make_rng(options["seed"]),
            resamples=options["resamples"],
            rates=settings.CPM_FP_RATES,
        )

        out = Path(options["out"])
        write_json(out, report)
        self.output(out)
        low, high = report["cpm_ci95"]
        self.done(f"CPM {report['cpm']:.4f} (95% CI {low:.4f} to {high:.4f})")

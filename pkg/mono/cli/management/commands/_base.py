import json
import logging

from django.core.management.base import BaseCommand, CommandError

from vstap.exceptions import render_error

from ...services import RunConfig

logger = logging.getLogger(__name__)

EXIT_FAILURE = 2


class VstapCommand(BaseCommand):
    """
    Shared flag parsing and exit handling. Subclasses set `name` and `run`;
    the report (or the structured error object) is printed to stdout as JSON.
    """
    name: str = ""
    run = None  # staticmethod(cmd_*)

    def add_common_arguments(self, parser, *flags):
        spec = {
            "input": dict(help="input path"),
            "output": dict(help="output path"),
            "report": dict(help="report path (defaults next to the output)"),
            "order": dict(type=int, dest="order", help="maximum lag P"),
            "breakpoints": dict(type=int, help="number of equiprobable segments m"),
            "epsilon": dict(type=float, help="solver tolerance"),
            "max-iter": dict(type=int, dest="max_iter", help="solver iteration budget"),
            "length": dict(type=int, help="realization length N"),
            "seed": dict(type=int, help="base random seed"),
            "realizations": dict(type=int, help="number of realizations B"),
            "mode": dict(choices=["exact", "piecewise"], help="marginal transform mode"),
            "format": dict(choices=["csv"], help="output format"),
        }
        for flag in flags:
            parser.add_argument(f"--{flag}", **spec[flag])

    def handle(self, *args, **options):
        keys = ("input", "output", "report", "order", "breakpoints", "epsilon", "max_iter",
                "length", "seed", "realizations", "mode", "format")
        try:
            config = RunConfig.from_options(self.name, **{k: options.get(k) for k in keys})
            report = self.run(config)
        except Exception as exc:
            logger.debug("%s failed", self.name, exc_info=True)
            error = render_error(exc)
            self.stdout.write(json.dumps({"error": error}))
            raise CommandError(error["errorMessage"], returncode=EXIT_FAILURE) from exc

        self.stdout.write(json.dumps(_summary(report)))
        if report.get("error"):
            raise CommandError(report["error"]["errorMessage"], returncode=EXIT_FAILURE)


def _summary(report: dict) -> dict:
    """Report without the bulky per-cell and per-realization tensors."""
    bulky = {"cells", "realizations", "target_corr", "fisher_bands", "ensemble_band", "surrogates"}
    return {k: v for k, v in report.items() if k not in bulky}

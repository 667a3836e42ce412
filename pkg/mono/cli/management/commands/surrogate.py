from ...services import cmd_surrogate
from ._base import VstapCommand


class Command(VstapCommand):
    help = "Produce surrogates that keep every channel's values and the lagged correlations."
    name = "surrogate"
    run = staticmethod(cmd_surrogate)

    def add_arguments(self, parser):
        self.add_common_arguments(
            parser, "input", "output", "report", "order", "breakpoints", "epsilon", "max-iter",
            "seed", "realizations", "format",
        )

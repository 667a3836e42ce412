from ...services import cmd_fit
from ._base import VstapCommand


class Command(VstapCommand):
    help = "Fit a model to a multichannel CSV series and write the model file plus a JSON report."
    name = "fit"
    run = staticmethod(cmd_fit)

    def add_arguments(self, parser):
        self.add_common_arguments(parser, "input", "output", "report", "order", "breakpoints", "epsilon", "max-iter")

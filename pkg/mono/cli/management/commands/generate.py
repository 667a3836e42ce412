from ...services import cmd_generate
from ._base import VstapCommand


class Command(VstapCommand):
    help = "Generate realizations from a model file; writes one CSV per realization and a sidecar JSON."
    name = "generate"
    run = staticmethod(cmd_generate)

    def add_arguments(self, parser):
        self.add_common_arguments(parser, "input", "output", "report", "length", "seed", "realizations", "mode", "format")

from ...services import cmd_validate
from ._base import VstapCommand


class Command(VstapCommand):
    help = "Run the numerical cross-checks and emit a pass/fail JSON report."
    name = "validate"
    run = staticmethod(cmd_validate)

    def add_arguments(self, parser):
        self.add_common_arguments(parser, "output", "seed")

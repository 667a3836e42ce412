from pathlib import Path

from django.conf import settings
from django.db import models
from rest_framework import serializers

from pipeline.services import TransformMode


class Command(models.TextChoices):
    FIT = "fit", "Fit a model"
    GENERATE = "generate", "Generate realizations"
    SURROGATE = "surrogate", "Produce surrogates"
    VALIDATE = "validate", "Run the cross-checks"


class RunConfigSerializer(serializers.Serializer):
    command = serializers.ChoiceField(choices=Command.choices)
    input = serializers.CharField(allow_null=True, default=None)
    output = serializers.CharField(allow_null=True, default=None)
    report = serializers.CharField(allow_null=True, default=None)
    order = serializers.IntegerField(min_value=1, allow_null=True, default=None)
    breakpoints = serializers.IntegerField(min_value=2, default=settings.VSTAP_DEFAULT_BREAKPOINTS)
    epsilon = serializers.FloatField(default=settings.VSTAP_DEFAULT_EPSILON)
    max_iter = serializers.IntegerField(min_value=1, default=settings.VSTAP_DEFAULT_MAX_ITER)
    length = serializers.IntegerField(min_value=1, allow_null=True, default=None)
    seed = serializers.IntegerField(min_value=0, default=0)
    realizations = serializers.IntegerField(min_value=1, default=1)
    mode = serializers.ChoiceField(choices=TransformMode.choices, default=TransformMode.EXACT)
    format = serializers.ChoiceField(choices=[("csv", "CSV")], default="csv")

    REQUIRED = {
        Command.FIT: ("input", "output", "order"),
        Command.GENERATE: ("input", "output", "length"),
        Command.SURROGATE: ("input", "output", "order"),
        Command.VALIDATE: (),
    }

    def validate_epsilon(self, value):
        if not value > 0:
            raise serializers.ValidationError("must be positive")
        return value

    def validate(self, attrs):
        missing = [f for f in self.REQUIRED[attrs["command"]] if attrs.get(f) in (None, "")]
        if missing:
            raise serializers.ValidationError({f: "this option is required" for f in missing})
        paths = [Path(p).resolve() for p in (attrs.get("input"), attrs.get("output"), attrs.get("report")) if p]
        if len(set(paths)) != len(paths):
            raise serializers.ValidationError("input, output and report paths must be distinct")
        return attrs

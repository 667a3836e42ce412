from django.conf import settings
from rest_framework import serializers

from lagcorr.services import LaggedCorrelationSet
from marginal.services import EmpiricalMarginal, PiecewiseTransform
from solver.services import SolveStatus
from var.serializers import VarModelSerializer
from vstap import error_codes as EC
from vstap.exceptions import ModelFileInvalid, VstapError, _flatten_errors

from .services import CellDiagnostic, FitDiagnostics, VstapModel


def _tensor3():
    return serializers.ListField(
        child=serializers.ListField(child=serializers.ListField(child=serializers.FloatField()))
    )


class TransformSerializer(serializers.Serializer):
    intercepts = serializers.ListField(child=serializers.FloatField(), min_length=2)
    slopes = serializers.ListField(child=serializers.FloatField(), min_length=2)


class CellDiagnosticSerializer(serializers.Serializer):
    i = serializers.IntegerField(min_value=0)
    j = serializers.IntegerField(min_value=0)
    tau = serializers.IntegerField(min_value=0)
    target = serializers.FloatField()
    solution = serializers.FloatField()
    psi_at_solution = serializers.FloatField(allow_null=True)
    iterations = serializers.IntegerField(min_value=0)
    used_binary_search = serializers.BooleanField()
    residual = serializers.FloatField()
    status = serializers.ChoiceField(choices=SolveStatus.choices)
    lower = serializers.FloatField()
    upper = serializers.FloatField()


class DiagnosticsSerializer(serializers.Serializer):
    cells = CellDiagnosticSerializer(many=True)
    repair_rounds = serializers.IntegerField(min_value=0)
    frobenius_distance = serializers.FloatField()
    min_eigenvalue = serializers.FloatField()


class VstapModelSerializer(serializers.Serializer):
    """Model file: fitted marginals, transforms, correlation tensors, VAR and fit diagnostics."""
    schema_version = serializers.CharField()
    channel_names = serializers.ListField(child=serializers.CharField(), min_length=1)
    epsilon = serializers.FloatField(min_value=0.0)
    breakpoints = serializers.ListField(child=serializers.FloatField(), min_length=1)
    samples = serializers.ListField(child=serializers.ListField(child=serializers.FloatField(), min_length=2))
    transforms = TransformSerializer(many=True)
    target_corr = _tensor3()
    gaussian_corr = _tensor3()
    var = VarModelSerializer()
    diagnostics = DiagnosticsSerializer()

    def to_representation(self, model: VstapModel):
        d = model.diagnostics
        return {
            "schema_version": settings.VSTAP_MODEL_SCHEMA_VERSION,
            "channel_names": list(model.channel_names),
            "epsilon": model.epsilon,
            "breakpoints": model.transforms[0].breakpoints.tolist(),
            "samples": [mg.sample().tolist() for mg in model.marginals],
            "transforms": [{"intercepts": t.intercepts.tolist(), "slopes": t.slopes.tolist()} for t in model.transforms],
            "target_corr": model.target_corr.as_list(),
            "gaussian_corr": model.gaussian_corr.as_list(),
            "var": VarModelSerializer(model.var).data,
            "diagnostics": {
                "cells": [c.as_dict() for c in d.cells],
                "repair_rounds": d.repair_rounds,
                "frobenius_distance": d.frobenius_distance,
                "min_eigenvalue": d.min_eigenvalue,
            },
        }

    def validate_schema_version(self, value):
        if value != settings.VSTAP_MODEL_SCHEMA_VERSION:
            raise serializers.ValidationError(f"unsupported schema version {value!r}")
        return value

    def validate(self, attrs):
        K = len(attrs["channel_names"])
        if len(attrs["samples"]) != K or len(attrs["transforms"]) != K:
            raise serializers.ValidationError("samples and transforms need one entry per channel")
        if attrs["var"]["K"] != K:
            raise serializers.ValidationError({"var": "channel count does not match"})
        return attrs

    def create(self, validated_data):
        var = VarModelSerializer().create(validated_data["var"])
        d = validated_data["diagnostics"]
        return VstapModel(
            channel_names=validated_data["channel_names"],
            marginals=[EmpiricalMarginal.from_sample(s) for s in validated_data["samples"]],
            transforms=[
                PiecewiseTransform(validated_data["breakpoints"], t["intercepts"], t["slopes"])
                for t in validated_data["transforms"]
            ],
            target_corr=LaggedCorrelationSet(validated_data["target_corr"]),
            gaussian_corr=LaggedCorrelationSet(validated_data["gaussian_corr"]),
            var=var,
            diagnostics=FitDiagnostics(
                cells=[CellDiagnostic(**c) for c in d["cells"]],
                repair_rounds=d["repair_rounds"],
                frobenius_distance=d["frobenius_distance"],
                min_eigenvalue=d["min_eigenvalue"],
            ),
            epsilon=validated_data["epsilon"],
        )


def dump_model(model: VstapModel) -> dict:
    return VstapModelSerializer(model).data


def load_model(payload: dict) -> VstapModel:
    ser = VstapModelSerializer(data=payload)
    if not ser.is_valid():
        raise ModelFileInvalid(
            _flatten_errors(ser.errors) or "Invalid model file",
            code=EC.CLI_MODEL_FILE_INVALID,
        )
    try:
        return ser.save()
    except VstapError as exc:
        raise ModelFileInvalid(exc.message, code=EC.CLI_MODEL_FILE_INVALID, context=exc.context) from exc

from rest_framework import serializers

from .services import Innovation, VarModel


class VarModelSerializer(serializers.Serializer):
    K = serializers.IntegerField(min_value=1)
    P = serializers.IntegerField(min_value=0)
    A = serializers.ListField(child=serializers.ListField(child=serializers.ListField(child=serializers.FloatField())))
    sigma_e = serializers.ListField(child=serializers.ListField(child=serializers.FloatField()))
    intercept = serializers.ListField(child=serializers.FloatField())
    innovation = serializers.ChoiceField(choices=Innovation.choices, default=Innovation.RESIDUAL)
    seed = serializers.IntegerField(allow_null=True, default=None)
    spectral_radius = serializers.FloatField(read_only=True)

    def validate(self, attrs):
        K, P = attrs["K"], attrs["P"]
        if len(attrs["A"]) != P or any(len(a) != K or any(len(row) != K for row in a) for a in attrs["A"]):
            raise serializers.ValidationError({"A": f"expected {P} matrices of size {K}x{K}"})
        if len(attrs["sigma_e"]) != K or any(len(row) != K for row in attrs["sigma_e"]):
            raise serializers.ValidationError({"sigma_e": f"expected a {K}x{K} matrix"})
        if len(attrs["intercept"]) != K:
            raise serializers.ValidationError({"intercept": f"expected {K} values"})
        return attrs

    def create(self, validated_data):
        return VarModel(
            A=validated_data["A"],
            sigma_e=validated_data["sigma_e"],
            intercept=validated_data["intercept"],
            innovation=validated_data["innovation"],
            seed=validated_data.get("seed"),
        )

"""
Django REST Framework serializers.

The experiment-config serializers validate the JSON config file field by field;
the model serializers back the read-only run API.
"""
from rest_framework import serializers

from .models import MonteCarloRun, RunManifest


def positive(value):
    if value <= 0:
        raise serializers.ValidationError('Must be strictly positive.')


def non_negative(value):
    if value < 0:
        raise serializers.ValidationError('Must not be negative.')


def vector_field(size, default=None, **kwargs):
    if default is not None:
        kwargs['default'] = default
    return serializers.ListField(
        child=serializers.FloatField(), min_length=size, max_length=size, **kwargs)


class TrajectorySerializer(serializers.Serializer):
    radius = serializers.FloatField(default=3.0, validators=[positive])
    path_length = serializers.FloatField(default=120.0, validators=[positive])
    duration = serializers.FloatField(default=120.0, validators=[positive])
    angular_rate = serializers.FloatField(default=None, allow_null=True)
    vertical_amplitude = serializers.FloatField(default=0.5, validators=[non_negative])
    vertical_frequency = serializers.FloatField(default=0.1, validators=[non_negative])
    height = serializers.FloatField(default=1.5)


class ImuSerializer(serializers.Serializer):
    """Noise densities are required: there is no sensible default for a real sensor."""
    gyro_noise_density = serializers.FloatField(validators=[positive])
    accel_noise_density = serializers.FloatField(validators=[positive])
    gyro_bias_density = serializers.FloatField(validators=[positive])
    accel_bias_density = serializers.FloatField(validators=[positive])
    rate = serializers.FloatField(default=200.0, validators=[positive])
    initial_bias_sigma = serializers.FloatField(default=0.02, validators=[non_negative])
    gravity = vector_field(3, default=lambda: [0.0, 0.0, -9.81])


class CameraSerializer(serializers.Serializer):
    keyframe_rate = serializers.FloatField(default=2.5, validators=[positive])
    focal = serializers.FloatField(default=315.0, validators=[positive])
    principal_point = vector_field(2, default=lambda: [320.0, 240.0])
    image_size = serializers.ListField(
        child=serializers.IntegerField(min_value=1), min_length=2, max_length=2,
        default=lambda: [640, 480])
    pixel_sigma = serializers.FloatField(default=1.0, validators=[positive])
    max_obs_per_frame = serializers.IntegerField(default=50, min_value=1)


class LandmarkSerializer(serializers.Serializer):
    count = serializers.IntegerField(default=800, min_value=1)
    room_size = serializers.FloatField(default=10.0, validators=[positive])
    height_min = serializers.FloatField(default=0.0)
    height_max = serializers.FloatField(default=4.0)

    def validate(self, attrs):
        if attrs['height_max'] <= attrs['height_min']:
            raise serializers.ValidationError({'height_max': 'Must exceed height_min.'})
        return attrs


class SolverSerializer(serializers.Serializer):
    max_iters = serializers.IntegerField(default=50, min_value=1)
    rel_tol = serializers.FloatField(default=1e-8, validators=[positive])
    abs_tol = serializers.FloatField(default=1e-18, validators=[non_negative])
    prior_rotation_sigma = serializers.FloatField(default=0.01, validators=[positive])
    prior_position_sigma = serializers.FloatField(default=0.001, validators=[positive])
    prior_velocity_sigma = serializers.FloatField(default=0.01, validators=[positive])
    init_chunk = serializers.IntegerField(default=10, min_value=1)
    refine_iters = serializers.IntegerField(default=3, min_value=0)


class EvaluationSerializer(serializers.Serializer):
    segment_lengths = serializers.ListField(
        child=serializers.FloatField(validators=[positive]), default=lambda: [10.0, 40.0, 90.0])
    nees_tail = serializers.FloatField(default=0.025, min_value=1e-6, max_value=0.5)
    max_overconfident_fraction = serializers.FloatField(default=0.05, min_value=0.0, max_value=1.0)
    max_failed_fraction = serializers.FloatField(default=0.1, min_value=0.0, max_value=1.0)


class ExperimentConfigSerializer(serializers.Serializer):
    """Complete experiment configuration; optional sections are filled with defaults."""
    OPTIONAL_SECTIONS = ('trajectory', 'camera', 'landmarks', 'solver', 'evaluation')

    seed = serializers.IntegerField(default=0, min_value=0)
    noise_free = serializers.BooleanField(default=False)
    trajectory = TrajectorySerializer()
    imu = ImuSerializer()
    camera = CameraSerializer()
    landmarks = LandmarkSerializer()
    solver = SolverSerializer()
    evaluation = EvaluationSerializer()

    def to_internal_value(self, data):
        if isinstance(data, dict):
            data = dict(data)
            for section in self.OPTIONAL_SECTIONS:
                data.setdefault(section, {})
        return super().to_internal_value(data)

    def validate(self, attrs):
        ratio = attrs['imu']['rate'] / attrs['camera']['keyframe_rate']
        if ratio < 1 or abs(ratio - round(ratio)) > 1e-9:
            raise serializers.ValidationError(
                {'imu': {'rate': ['Must be an integer multiple of camera.keyframe_rate.']}})
        count = attrs['trajectory']['duration'] * attrs['camera']['keyframe_rate']
        if abs(count - round(count)) > 1e-9 or round(count) < 2:
            raise serializers.ValidationError(
                {'trajectory': {'duration': ['Must span an integer number (>= 2) of keyframes.']}})
        return attrs


class MonteCarloRunSerializer(serializers.ModelSerializer):
    class Meta:
        model = MonteCarloRun
        fields = ['id', 'manifest', 'seed', 'status', 'message', 'iterations',
                  'final_cost', 'output_dir', 'created_at']
        read_only_fields = fields


class RunManifestSerializer(serializers.ModelSerializer):
    runCount = serializers.SerializerMethodField()

    class Meta:
        model = RunManifest
        fields = ['id', 'command', 'config_path', 'config_snapshot', 'seeds', 'output_dir',
                  'status', 'exit_code', 'message', 'tool_version', 'started_at',
                  'finished_at', 'runCount']
        read_only_fields = fields

    def get_runCount(self, obj):
        return obj.runs.count()

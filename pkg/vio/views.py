"""
Read-only Django REST Framework views over the run bookkeeping.
"""
from rest_framework import viewsets
from rest_framework.response import Response

from .models import MonteCarloRun, RunManifest
from .serializers import MonteCarloRunSerializer, RunManifestSerializer


class RunManifestViewSet(viewsets.ReadOnlyModelViewSet):
    """Command invocations, newest first."""
    queryset = RunManifest.objects.prefetch_related('runs').all()
    serializer_class = RunManifestSerializer

    def get_queryset(self):
        queryset = super().get_queryset()
        command = self.request.query_params.get('command')
        if command:
            queryset = queryset.filter(command=command)
        status_filter = self.request.query_params.get('status')
        if status_filter:
            queryset = queryset.filter(status=status_filter)
        return queryset

    def list(self, request, *args, **kwargs):
        """Return wrapped list response."""
        serializer = self.get_serializer(self.filter_queryset(self.get_queryset()), many=True)
        return Response({'manifests': serializer.data})


class MonteCarloRunViewSet(viewsets.ReadOnlyModelViewSet):
    queryset = MonteCarloRun.objects.select_related('manifest').all()
    serializer_class = MonteCarloRunSerializer

    def get_queryset(self):
        queryset = super().get_queryset()
        manifest = self.request.query_params.get('manifest')
        if manifest:
            queryset = queryset.filter(manifest_id=manifest)
        status_filter = self.request.query_params.get('status')
        if status_filter:
            queryset = queryset.filter(status=status_filter)
        return queryset

    def list(self, request, *args, **kwargs):
        serializer = self.get_serializer(self.filter_queryset(self.get_queryset()), many=True)
        return Response({'runs': serializer.data})

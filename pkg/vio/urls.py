"""
API URL routing for run manifests and Monte-Carlo runs.
"""
from django.urls import include, path
from rest_framework.routers import DefaultRouter

from .views import MonteCarloRunViewSet, RunManifestViewSet

router = DefaultRouter(trailing_slash=False)
router.register(r'manifests', RunManifestViewSet, basename='manifest')
router.register(r'runs', MonteCarloRunViewSet, basename='run')

urlpatterns = [
    path('', include(router.urls)),
]

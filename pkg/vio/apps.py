from django.apps import AppConfig


class VioConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'vio'
    verbose_name = 'Visual-inertial odometry'

from django.apps import AppConfig


class GpConfig(AppConfig):
    name = 'gp'
    verbose_name = 'Physics-informed Gaussian process'

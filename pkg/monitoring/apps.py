from django.apps import AppConfig


class MonitoringConfig(AppConfig):
    name = 'monitoring'
    verbose_name = 'Damage monitoring studies'

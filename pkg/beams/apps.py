from django.apps import AppConfig


class BeamsConfig(AppConfig):
    name = 'beams'
    verbose_name = 'Beam oracles'

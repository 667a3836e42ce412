from django.apps import AppConfig


class LagcorrConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'lagcorr'

from django.apps import AppConfig


class BvnConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'bvn'

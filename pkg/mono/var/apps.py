from django.apps import AppConfig


class VarConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'var'

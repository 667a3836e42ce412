from django.apps import AppConfig


class MarginalConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'marginal'

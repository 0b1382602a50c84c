from django.apps import AppConfig


class VisualConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'apps.visual'

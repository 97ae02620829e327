from django.apps import AppConfig


class AdvaugConfig(AppConfig):
    name = "advaug"
    verbose_name = "Adversarial augmentation lab"

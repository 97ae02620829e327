import os
import sys
from pathlib import Path


def parse_positive_int(name: str, raw: str) -> int:
    try:
        value = int(raw)
    except ValueError:
        raise ValueError(f"{name} must be an integer, got {raw!r}")
    if value < 1:
        raise ValueError(f"{name} must be >= 1, got {value}")
    return value


# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent
SECRET_KEY = os.getenv("DJANGO_SECRET_KEY", "advaug-lab-has-no-web-surface")

# --------------------------------------------------------------------
# Environment inputs (only raw env reads here)
# --------------------------------------------------------------------

ADVAUG_ENV = os.getenv("ADVAUG_ENV", "development").lower()
DEBUG = os.getenv("DEBUG", "false").lower() == "true"

ADVAUG_DATA_DIR = os.getenv("ADVAUG_DATA_DIR")
ADVAUG_WORKERS_RAW = os.getenv("ADVAUG_WORKERS", "1")
ADVAUG_LOG_LEVEL = os.getenv("ADVAUG_LOG_LEVEL")

# --------------------------------------------------------------------
# Derived flags (no side effects / no guards)
# --------------------------------------------------------------------

IS_DEVELOPMENT = ADVAUG_ENV == "development"
IS_TEST = ADVAUG_ENV == "test" or "pytest" in sys.modules

DATA_DIR = Path(ADVAUG_DATA_DIR) if ADVAUG_DATA_DIR else BASE_DIR / "data"

if ADVAUG_LOG_LEVEL:
    LOG_LEVEL = ADVAUG_LOG_LEVEL.upper()
else:
    LOG_LEVEL = "WARNING" if IS_TEST else "INFO"

# --------------------------------------------------------------------
# Guards
# --------------------------------------------------------------------

VALID_ENVS = {"development", "test", "production"}
if ADVAUG_ENV not in VALID_ENVS:
    raise ValueError(
        f"Invalid ADVAUG_ENV={ADVAUG_ENV!r}; must be one of {sorted(VALID_ENVS)}"
    )

ADVAUG_WORKERS = parse_positive_int("ADVAUG_WORKERS", ADVAUG_WORKERS_RAW)

VALID_LOG_LEVELS = {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}
if LOG_LEVEL not in VALID_LOG_LEVELS:
    raise ValueError(
        f"Invalid ADVAUG_LOG_LEVEL={LOG_LEVEL!r}; "
        f"must be one of {sorted(VALID_LOG_LEVELS)}"
    )

# --------------------------------------------------------------------

# The lab has no database, views or static files; Django provides the
# settings layer and the management-command front door.
INSTALLED_APPS = [
    "advaug",
]

DATABASES = {}

USE_TZ = True
TIME_ZONE = "UTC"

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "lab": {"format": "{levelname:<7} {name}: {message}", "style": "{"},
    },
    "handlers": {
        "console": {"class": "logging.StreamHandler", "formatter": "lab"},
    },
    "loggers": {
        "advaug": {"handlers": ["console"], "level": LOG_LEVEL, "propagate": False},
    },
}

# --------------------------------------------------------------------
# Adversarial search (PGD). The latent ball and the patch ball share
# defaults; every command exposes them as flags.
# --------------------------------------------------------------------

PGD_EPSILON = 0.15
PGD_ALPHA = 0.05
PGD_ITERATIONS = 20
PGD_NORM = "linf"  # "linf" or "l2"
PGD_INIT = "random"  # "zero" or "random"
PGD_STEP = "sign"  # "sign" or "gradient"
ATTACK_SUCCESS_THRESHOLD = 0.5

# --------------------------------------------------------------------
# Synthesizer (VAE + WGAN-GP critic)
# --------------------------------------------------------------------

SYNTH_LAMBDA_KL = 1e-5
SYNTH_LAMBDA_ADV = 0.1
WGAN_GP_WEIGHT = 10.0
SPECTRAL_POWER_ITERS = 1
LATENT_DIM_POINTS = 2
LATENT_DIM_PATCH = 8

# --------------------------------------------------------------------
# Training
# --------------------------------------------------------------------

ADAM_LEARNING_RATE = 0.001
ADAM_BETAS = (0.9, 0.999)
ADAM_EPSILON = 1e-8
EARLY_STOP_PATIENCE = 10
VALIDATION_FRACTION = 0.1
BATCH_SIZE = 64
BETA_ANNEAL_EPOCHS = 10

# Fractions of each batch per stratum after the baseline has converged.
SAMPLING_SCHEDULE = {
    "positive_fraction": 0.5,
    "positive": {"real": 0.5, "synthetic-pgd": 0.25, "perturbed-positive": 0.25},
    "negative": {"real": 0.5, "noise-negative": 0.5},
}

# --------------------------------------------------------------------
# Data
# --------------------------------------------------------------------

TWO_MOONS_N = 500
TWO_MOONS_STD = 0.15
LONGTAIL_K = 20
LONGTAIL_RATE = 3.0

PATCH_SIZE = 16
BLOB_RADIUS_RANGE = (2.0, 4.0)
BLOB_MIN_RADIUS = 2.0
SCAN_SIZE = 48

UNIFORM_NOISE_MAGNITUDES = (0.0, 0.3, 0.6, 0.9)
POISSON_SCALES = (50.0, 1.0)  # "x50" mild, "x1" severe

# --------------------------------------------------------------------
# Evaluation
# --------------------------------------------------------------------

CPM_FP_RATES = (0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0)
BOOTSTRAP_RESAMPLES = 1000
NMS_MIN_DISTANCE = 4
NMS_MAX_CANDIDATES = 16


# Optional instance-specific overrides (uncommitted by default).
# `local_settings.py` is loaded last to allow small, non-invasive
# experiment tweaks without editing committed settings.
try:
    from .local_settings import *  # noqa: F401, F403
except ImportError:
    pass

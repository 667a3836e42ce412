"""
Django settings for vstap project.
"""
from pathlib import Path
import environ

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

env = environ.Env()
ENV_FILE = BASE_DIR / ".env"
if ENV_FILE.exists():
    environ.Env.read_env(str(ENV_FILE))

SECRET_KEY = env('SECRET_KEY', default='vstap-local-only-no-http-surface')
DEBUG = env.bool('DEBUG', default=False)

ALLOWED_HOSTS = []

# Application definition
INSTALLED_APPS = [
    'rest_framework',

    # project apps
    'marginal',
    'bvn',
    'solver',
    'lagcorr',
    'var',
    'pipeline',
    'oracle',
    'cli',
]

# No database: every model object lives in memory or in JSON/CSV files.
DATABASES = {}

CELERY_BROKER_URL = env("CELERY_BROKER_URL", default="redis://127.0.0.1:6379/2")
CELERY_RESULT_BACKEND = env("CELERY_RESULT_BACKEND", default="redis://127.0.0.1:6379/3")
CELERY_TASK_ALWAYS_EAGER = env.bool("CELERY_TASK_ALWAYS_EAGER", default=True)
CELERY_TASK_EAGER_PROPAGATES = True
CELERY_TASK_SERIALIZER = "json"
CELERY_RESULT_SERIALIZER = "json"
CELERY_TASK_TIME_LIMIT = env.int("CELERY_TASK_TIME_LIMIT", default=600)
CELERY_TASK_SOFT_TIME_LIMIT = env.int("CELERY_TASK_SOFT_TIME_LIMIT", default=570)

# local | celery
VSTAP_DISPATCH = env("VSTAP_DISPATCH", default="local")
VSTAP_LOG_LEVEL = env("VSTAP_LOG_LEVEL", default="INFO")

# Numerical defaults. Not environment driven: the CLI contract is flags only.
VSTAP_DEFAULT_BREAKPOINTS = 20
VSTAP_DEFAULT_EPSILON = 1e-5
VSTAP_DEFAULT_MAX_ITER = 200
VSTAP_MONOTONICITY_THRESHOLD = 0.9
VSTAP_MONOTONICITY_STEP = 1e-3
VSTAP_ITERATE_CLAMP = 0.99999
VSTAP_EIGEN_FLOOR = 1e-6
VSTAP_REPAIR_MAX_ROUNDS = 50
VSTAP_REPAIR_BLEND_ROUND = 10
VSTAP_MIN_BURN_IN = 1000
VSTAP_BURN_IN_PER_LAG = 50
VSTAP_FISHER_LEVEL = 0.95
VSTAP_REPORT_SCHEMA_VERSION = "1.0"
VSTAP_MODEL_SCHEMA_VERSION = "1.0"

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "verbose": {"format": "%(asctime)s %(levelname)s %(name)s: %(message)s"},
    },
    "handlers": {
        "console": {"class": "logging.StreamHandler", "formatter": "verbose"},
    },
    "root": {"handlers": ["console"], "level": "WARNING"},
    "loggers": {
        app: {"handlers": ["console"], "level": VSTAP_LOG_LEVEL, "propagate": False}
        for app in ("vstap", "marginal", "bvn", "solver", "lagcorr", "var", "pipeline", "oracle", "cli")
    },
}

# i18n
LANGUAGE_CODE = 'en-us'
TIME_ZONE = 'UTC'
USE_I18N = False
USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

"""
Django settings for the egograph engine.
"""
import os
from pathlib import Path

from dotenv import load_dotenv

BASE_DIR = Path(__file__).resolve().parent.parent

load_dotenv(BASE_DIR / '.env')

SECRET_KEY = os.getenv('DJANGO_SECRET_KEY', 'django-insecure-egograph-local-key')
DEBUG = os.getenv('DJANGO_DEBUG', 'false').lower() == 'true'
ALLOWED_HOSTS = []

INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'django.contrib.auth',
    'rest_framework',
    'apps.core',
    'apps.llm',
    'apps.graph',
    'apps.visual',
    'apps.transcripts',
    'apps.agents',
    'apps.evaluation',
]

# Store directory (set by --store through manage.py, or env)
STORE_DIR = Path(os.getenv('EGOGRAPH_STORE_DIR', BASE_DIR / 'store'))

DB_ENGINE = os.getenv('DB_ENGINE', 'sqlite')

if DB_ENGINE == 'postgresql':
    DATABASES = {
        'default': {
            'ENGINE': 'django.db.backends.postgresql',
            'NAME': os.getenv('DB_NAME', 'egograph'),
            'USER': os.getenv('DB_USER', 'postgres'),
            'PASSWORD': os.getenv('DB_PASSWORD', ''),
            'HOST': os.getenv('DB_HOST', 'localhost'),
            'PORT': os.getenv('DB_PORT', '5432'),
            'CONN_MAX_AGE': 60,
            'OPTIONS': {
                'connect_timeout': 5,
            },
        }
    }
else:
    STORE_DIR.mkdir(parents=True, exist_ok=True)
    DATABASES = {
        'default': {
            'ENGINE': 'django.db.backends.sqlite3',
            'NAME': STORE_DIR / 'egograph.sqlite3',
            'OPTIONS': {
                'timeout': 20,
            },
        }
    }

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'
USE_TZ = True
TIME_ZONE = 'UTC'

# Logging configuration
LOG_DIR = Path(os.getenv('EGOGRAPH_LOG_DIR', BASE_DIR / 'logs'))
LOG_DIR.mkdir(parents=True, exist_ok=True)

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{levelname} {asctime} {module} {process:d} {thread:d} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
        'file': {
            'class': 'logging.handlers.RotatingFileHandler',
            'filename': os.path.join(LOG_DIR, 'egograph.log'),
            'maxBytes': 1024 * 1024 * 5,  # 5 MB
            'backupCount': 5,
            'formatter': 'verbose',
        },
    },
    'loggers': {
        'django': {
            'handlers': ['console', 'file'],
            'level': os.getenv('DJANGO_LOG_LEVEL', 'INFO'),
            'propagate': True,
        },
        'apps': {
            'handlers': ['console', 'file'],
            'level': os.getenv('EGOGRAPH_LOG_LEVEL', 'WARNING'),
            'propagate': True,
        },
    },
}

# Celery Configuration
CELERY_BROKER_URL = os.getenv('CELERY_BROKER_URL', 'redis://localhost:6379/0')
CELERY_RESULT_BACKEND = os.getenv('CELERY_RESULT_BACKEND', 'redis://localhost:6379/0')
CELERY_TASK_ALWAYS_EAGER = os.getenv('CELERY_TASK_ALWAYS_EAGER', 'true').lower() == 'true'
CELERY_TASK_EAGER_PROPAGATES = True
CELERY_TASK_TIME_LIMIT = 3600
CELERY_TASK_SOFT_TIME_LIMIT = 3300
CELERY_WORKER_MAX_TASKS_PER_CHILD = 1000
CELERY_TASK_ACKS_LATE = True


def _int_list(value: str):
    return [int(v) for v in value.split(',') if v.strip()]


# Engine configuration
EGOGRAPH_CONFIG = {
    'day_length_s': int(os.getenv('EGOGRAPH_DAY_LENGTH_S', 86400)),
    'ladder_max_rows': int(os.getenv('EGOGRAPH_LADDER_MAX_ROWS', 50)),
    'k_total': int(os.getenv('EGOGRAPH_K_TOTAL', 50)),
    'frame_dim': int(os.getenv('EGOGRAPH_FRAME_DIM')) if os.getenv('EGOGRAPH_FRAME_DIM') else None,
    'tsearch': os.getenv('EGOGRAPH_TSEARCH', 'llm'),
    'bm25_k1': float(os.getenv('EGOGRAPH_BM25_K1', 1.2)),
    'bm25_b': float(os.getenv('EGOGRAPH_BM25_B', 0.75)),
    'bm25_context': int(os.getenv('EGOGRAPH_BM25_CONTEXT', 2)),
    'bm25_k': int(os.getenv('EGOGRAPH_BM25_K', 10)),
    'max_subtasks': 5,
    'image_token_rate': int(os.getenv('EGOGRAPH_IMAGE_TOKEN_RATE', 85)),
    'recall_windows': _int_list(os.getenv('EGOGRAPH_RECALL_WINDOWS', '10,30,60,120,600,3600')),
    'max_inflight_calls': int(os.getenv('EGOGRAPH_MAX_INFLIGHT_CALLS', 4)),
    'extraction_batching': os.getenv('EGOGRAPH_EXTRACTION_BATCHING', 'hour'),
    'extraction_source': os.getenv('EGOGRAPH_EXTRACTION_SOURCE', 'fused'),
    'caption_window_s': 30,
    'oracle_half_window_s': 25,
}

# Model client configuration
MODEL_CLIENT_CONFIG = {
    'mode': os.getenv('EGOGRAPH_CLIENT', 'scripted'),
    'fixtures_dir': os.getenv('EGOGRAPH_FIXTURES_DIR', ''),
    'cassette': os.getenv('EGOGRAPH_CASSETTE', ''),
    'strict': os.getenv('EGOGRAPH_CLIENT_STRICT', 'false').lower() == 'true',
    'max_retries': 3,
    'retry_delay': 1,
}

# OpenAI Configuration (live adapter)
OPENAI_API_KEY = os.getenv('OPENAI_API_KEY', '')
OPENAI_CONFIG = {
    'model': os.getenv('OPENAI_MODEL', 'gpt-4.1'),
    'embedding_model': os.getenv('OPENAI_EMBEDDING_MODEL', 'text-embedding-3-small'),
    'temperature': 0,
    'max_tokens': int(os.getenv('OPENAI_MAX_TOKENS', 2048)),
    'timeout': 60,
}

# Rest Framework Settings (serializers only, no API surface)
REST_FRAMEWORK = {
    'DEFAULT_AUTHENTICATION_CLASSES': [],
    'DEFAULT_PERMISSION_CLASSES': [],
    'UNAUTHENTICATED_USER': None,
}

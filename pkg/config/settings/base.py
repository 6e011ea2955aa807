"""
Django settings for the beam stiffness GP project.
"""
import os
from pathlib import Path
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

# Build paths inside the project
BASE_DIR = Path(__file__).resolve().parent.parent.parent

# Unused by the commands; Django requires one at startup.
SECRET_KEY = os.getenv('SECRET_KEY', 'beamgp-local-only')

DEBUG = os.getenv('DEBUG', 'False') == 'True'

# Application definition
INSTALLED_APPS = [
    # Local apps
    'core',
    'gp',
    'beams',
    'monitoring',
]

# No persistence layer: every artifact is a CSV/JSON file in the run directory.
DATABASES = {}

# Internationalization
LANGUAGE_CODE = 'en-us'
TIME_ZONE = 'UTC'
USE_I18N = False
USE_TZ = True

# Run outputs
OUTPUT_DIR = Path(os.getenv('BEAMGP_OUTPUT_DIR', str(BASE_DIR / 'runs')))
DEFAULT_SEED = int(os.getenv('BEAMGP_SEED', '20231'))
WORKER_THREADS = int(os.getenv('BEAMGP_THREADS', '1'))

# Metropolis-Hastings defaults
MH_N_STEPS = int(os.getenv('BEAMGP_MH_STEPS', '20000'))
MH_BURN_IN = int(os.getenv('BEAMGP_MH_BURN_IN', '5000'))
MH_THIN = int(os.getenv('BEAMGP_MH_THIN', '10'))
MH_PROPOSAL_SCALE = float(os.getenv('BEAMGP_PROPOSAL_SCALE', '0.05'))
MH_TARGET_ACCEPTANCE = float(os.getenv('BEAMGP_TARGET_ACCEPTANCE', '0.30'))
MH_ADAPT_WINDOW = int(os.getenv('BEAMGP_ADAPT_WINDOW', '100'))

# Covariance factorization; values are multiples of trace(K)/N
JITTER_INITIAL = float(os.getenv('BEAMGP_JITTER_INITIAL', '1e-10'))
JITTER_GROWTH = float(os.getenv('BEAMGP_JITTER_GROWTH', '10'))
JITTER_MAX = float(os.getenv('BEAMGP_JITTER_MAX', '1e-4'))

# Predictive mixture
INFERENCE_N_DRAWS = int(os.getenv('BEAMGP_N_DRAWS', '200'))

# Uniform stiffness prior as multiples of the reference stiffness
EI_PRIOR_FACTORS = (
    float(os.getenv('BEAMGP_EI_PRIOR_LOWER', '0.1')),
    float(os.getenv('BEAMGP_EI_PRIOR_UPPER', '2.0')),
)

# Logging Configuration
LOG_LEVEL = os.getenv('LOG_LEVEL', 'INFO')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{levelname} {asctime} {module} {message}',
            'style': '{',
        },
        'simple': {
            'format': '{levelname} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'level': 'DEBUG',
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
    },
    'loggers': {
        'django': {
            'handlers': ['console'],
            'level': 'INFO',
            'propagate': False,
        },
        'core': {
            'handlers': ['console'],
            'level': LOG_LEVEL,
            'propagate': False,
        },
        'gp': {
            'handlers': ['console'],
            'level': LOG_LEVEL,
            'propagate': False,
        },
        'beams': {
            'handlers': ['console'],
            'level': LOG_LEVEL,
            'propagate': False,
        },
        'monitoring': {
            'handlers': ['console'],
            'level': LOG_LEVEL,
            'propagate': False,
        },
    },
    'root': {
        'handlers': ['console'],
        'level': 'WARNING',
    },
}

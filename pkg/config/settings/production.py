from .base import *

DEBUG = False

# Batch study runs: only anomalies reach the console.
for _app in ('core', 'gp', 'beams', 'monitoring'):
    LOGGING['loggers'][_app]['level'] = os.getenv('LOG_LEVEL', 'WARNING')

WORKER_THREADS = int(os.getenv('BEAMGP_THREADS', str(os.cpu_count() or 1)))

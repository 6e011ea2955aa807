from .base import *

DEBUG = True

# Verbose project logging while developing (jitter escalation, adaptation steps)
for _app in ('core', 'gp', 'beams', 'monitoring'):
    LOGGING['loggers'][_app]['level'] = os.getenv('LOG_LEVEL', 'DEBUG')

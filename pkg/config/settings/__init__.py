from .base import *


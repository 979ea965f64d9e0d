# Landmark-based visual localization toolkit on synthetic Gaussian scenes
from gsloc.config import settings

__version__ = settings.app_version

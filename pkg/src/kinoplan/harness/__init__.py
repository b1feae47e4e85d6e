from .problems import *  # noqa: F401,F403
from .evaluation import *  # noqa: F401,F403

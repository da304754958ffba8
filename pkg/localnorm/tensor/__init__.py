from .tensor import *  # noqa: F403, F401
from .ops import *  # noqa: F403, F401
from .rng import *  # noqa: F403, F401

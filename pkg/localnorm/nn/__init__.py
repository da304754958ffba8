from .layers import *  # noqa: F403, F401
from .model import *  # noqa: F403, F401
from .optim import *  # noqa: F403, F401
from .checkpoint import *  # noqa: F403, F401
from .train import *  # noqa: F403, F401

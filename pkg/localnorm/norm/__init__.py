from .partition import *  # noqa: F403, F401
from .spec import *  # noqa: F403, F401
from .functional import *  # noqa: F403, F401

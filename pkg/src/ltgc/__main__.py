"""``python -m ltgc``."""

import sys

from .cli import main

sys.exit(main())

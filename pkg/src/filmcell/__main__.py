"""Allow `python -m filmcell <subcommand>`."""

import sys

from .cli import main

sys.exit(main())

# Allows `python -m koopid`
import sys

from .cli import main

sys.exit(main())

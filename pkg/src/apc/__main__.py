import sys

from apc.cli import main

sys.exit(main())

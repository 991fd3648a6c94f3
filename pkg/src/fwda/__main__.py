import sys

from fwda.cli import main

sys.exit(main())

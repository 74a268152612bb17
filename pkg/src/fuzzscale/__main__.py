import sys

from fuzzscale.cli import main

sys.exit(main())

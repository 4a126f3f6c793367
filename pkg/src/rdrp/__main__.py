import sys

from rdrp.cli import main

sys.exit(main())

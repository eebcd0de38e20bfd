import sys

from qvar.cli import main

sys.exit(main())

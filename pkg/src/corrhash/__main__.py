import sys

from corrhash.cli import main

sys.exit(main())

import sys

from npmatch.cli import main

sys.exit(main())

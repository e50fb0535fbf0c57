import sys

from rftpy.cli import main

sys.exit(main())

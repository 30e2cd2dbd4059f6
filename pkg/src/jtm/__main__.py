import sys

from jtm.cli import main

sys.exit(main())

import sys

from deltarec.cli import main

sys.exit(main())

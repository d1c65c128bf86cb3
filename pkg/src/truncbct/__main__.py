import sys

from truncbct.cli import main

sys.exit(main())

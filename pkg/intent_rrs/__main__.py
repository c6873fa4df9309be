import sys

from intent_rrs.cli.cli import main

sys.exit(main())

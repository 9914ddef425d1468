import sys

from sosmix.cli import main

sys.exit(main())

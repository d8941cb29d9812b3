import sys

from bimodal_explorer.cli import main

sys.exit(main())

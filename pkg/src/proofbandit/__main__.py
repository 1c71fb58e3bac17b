import sys

from proofbandit.cli import main

sys.exit(main())

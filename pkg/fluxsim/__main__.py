import sys

from fluxsim.cli import main

sys.exit(main())

import sys

from odeentoy.cli import main

sys.exit(main())

import sys

from sigma_agents.cli import main

sys.exit(main())

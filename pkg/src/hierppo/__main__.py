import sys

from hierppo.cli import main

sys.exit(main())

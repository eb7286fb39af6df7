import sys

from randbasis.cli import main

sys.exit(main())

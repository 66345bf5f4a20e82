import sys

from regmva.cli import main

sys.exit(main())

import sys

from heavytail.dsgd.cli import main

sys.exit(main())

import sys

from gsloc.main import main

sys.exit(main())

import sys

from fishergrad.main import main

sys.exit(main())

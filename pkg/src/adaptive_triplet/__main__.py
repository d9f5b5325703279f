import sys

from adaptive_triplet.cli import main

sys.exit(main())

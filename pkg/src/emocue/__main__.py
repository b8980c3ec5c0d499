import sys

from emocue.cli import main

sys.exit(main())

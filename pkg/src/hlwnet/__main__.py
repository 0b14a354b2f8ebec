import sys

from hlwnet.cli import main

sys.exit(main())

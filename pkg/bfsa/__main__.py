import sys

import bfsa.cli as cli

if __name__ == "__main__":
    sys.exit(cli.main())

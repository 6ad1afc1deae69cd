import sys

import hgdlab.cli


def cli() -> None:
    sys.exit(hgdlab.cli.main())


if __name__ == "__main__":
    cli()

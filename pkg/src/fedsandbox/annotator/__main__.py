"""``python -m fedsandbox.annotator``: serve a built-in tool (used by launchers)."""

import sys

from ..cli import main

if __name__ == "__main__":
    sys.exit(main(["serve", "annotator", *sys.argv[1:]]))

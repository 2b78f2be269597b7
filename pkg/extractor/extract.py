#!/usr/bin/env python3
"""Launcher so the tool runs straight from a checkout.

Equivalent to the installed `extract-features` console script.
"""

import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), "src"))

from feature_extract.extract import main

if __name__ == "__main__":
    sys.exit(main())

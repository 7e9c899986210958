#!/usr/bin/env python3
"""Regenerate the bundled bootstrap exchange file from the builders."""

import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from itemflow.bootstrap import write_bundled_exchange  # noqa: E402

TARGET = os.path.join(os.path.dirname(__file__), "..", "src", "itemflow", "data",
                      "bootstrap.xml")

if __name__ == "__main__":
    write_bundled_exchange(os.path.abspath(TARGET))
    print(f"wrote {os.path.abspath(TARGET)}")

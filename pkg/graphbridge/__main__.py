#!/usr/bin/env python3
"""
Entry point for the GraphBridge CLI
"""

import sys

from graphbridge.cli import main

if __name__ == "__main__":
    sys.exit(main())

"""
Entry point for python -m vcp_cosod
"""

from .cli.main import main

if __name__ == "__main__":
    main()

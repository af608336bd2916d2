import sys

from abc_embed.cli import dispatch

if __name__ == "__main__":
    sys.exit(dispatch(sys.argv[1:]))

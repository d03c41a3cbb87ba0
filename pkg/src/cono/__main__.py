"""Module entry point so ``python -m cono`` behaves like the ``cono`` script."""

from .cli import main

if __name__ == "__main__":
    main()

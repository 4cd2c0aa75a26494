"""Module execution entrypoint for ledgerfl."""

from ledgerfl.app import main

if __name__ == "__main__":
    main()

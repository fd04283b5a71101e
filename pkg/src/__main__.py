from .main import main

# Execute the CLI entry point.
main()

from eectl.cli import entrypoint

entrypoint()

from nefkit.cli import entrypoint

entrypoint()

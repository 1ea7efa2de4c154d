"""rilmine: recover baseband command payloads from lifted vendor RIL
binaries, diff them across firmware versions, and probe a simulated modem
with the recovered commands."""

__version__ = "0.1.0"

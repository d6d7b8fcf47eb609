"""CLI command groups. Each module exposes register(subparsers, parents)."""
from app.commands import evaluate, stage1, stage2, synth

COMMAND_MODULES = (synth, stage1, stage2, evaluate)

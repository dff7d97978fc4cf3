"""Helpers shared by the experiment scripts: config variants and CLI calls."""
import json
import os
import sys

from shapectl import cli


def variant(base_config, out_dir, name, **changes):
    """Write a copy of the base config with top-level changes; return its path."""
    with open(base_config) as f:
        doc = json.load(f)
    doc.update(changes)
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"{name}.json")
    with open(path, "w") as f:
        json.dump(doc, f, indent=1)
    return path


def run(*argv, skip_if=None):
    """Invoke a subcommand; skip it when ``skip_if`` already holds a finished manifest."""
    if skip_if and os.path.exists(os.path.join(skip_if, "manifest.json")):
        print(f"skip {argv[0]}: {skip_if} exists")
        return
    print("shapectl", " ".join(map(str, argv)), flush=True)
    code = cli.main([str(a) for a in argv])
    if code:
        sys.exit(code)

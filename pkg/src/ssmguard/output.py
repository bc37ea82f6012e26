"""Stamped artifact writers.

Every emitted file embeds (seed, config hash, tool version) so re-running a
command with identical inputs reproduces byte-identical bodies.  CSV files
carry the stamp as a single leading comment line; JSONL files as a leading
meta object; JSON files as a "meta" field.
"""

from __future__ import annotations

import hashlib
import json
import os

from . import __version__


def config_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()[:12]


def make_stamp(seed: int, config: dict) -> dict:
    return {"seed": seed, "config_hash": config_hash(config),
            "version": __version__}


def _stamp_line(stamp: dict) -> str:
    return (f"# seed={stamp['seed']} config_hash={stamp['config_hash']} "
            f"version={stamp['version']}")


def write_csv(path, header, rows, stamp: dict):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        fh.write(_stamp_line(stamp) + "\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_format(v) for v in row) + "\n")


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_jsonl(path, lines, stamp: dict):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        fh.write(json.dumps({"meta": stamp}) + "\n")
        for line in lines:
            fh.write((line if isinstance(line, str) else json.dumps(line)) + "\n")


def write_json(path, obj: dict, stamp: dict):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    payload = {"meta": stamp}
    payload.update(obj)
    with open(path, "w") as fh:
        fh.write(json.dumps(payload, indent=2) + "\n")


def read_jsonl(path) -> tuple[dict, list[dict]]:
    """Returns (meta, records); tolerates files without a meta line."""
    meta: dict = {}
    records: list[dict] = []
    with open(path) as fh:
        for i, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if i == 0 and isinstance(obj, dict) and set(obj) == {"meta"}:
                meta = obj["meta"]
            else:
                records.append(obj)
    return meta, records

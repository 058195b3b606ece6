"""Wire-protocol server: one JSON request per stdin line, one reply per line.

Implements the controller-side protocol (version 1): hello, snapshot,
restore, release, train, evaluate, gradients, shutdown. Every request gets
exactly one reply or error with the matching id; malformed input gets an
error reply, never a crash. Diagnostics go to stderr.
"""

from __future__ import annotations

import json
import sys
from typing import Any, TextIO

from .model import RefConfig, RefTrainer

PROTOCOL_VERSION = 1


def _handle(trainer: RefTrainer, request: dict[str, Any]) -> dict[str, Any]:
    kind = request.get("kind")
    if kind == "hello":
        if request.get("protocol") != PROTOCOL_VERSION:
            raise ValueError(f"unsupported protocol {request.get('protocol')!r}")
        return {
            "protocol": PROTOCOL_VERSION,
            "datasets": [d.id for d in trainer.config.datasets],
            "domains": [{"id": d.id, "metric": d.metric}
                        for d in trainer.config.domains],
            "gradients": True,
            "max_checkpoints": 1024,
        }
    if kind == "snapshot":
        return {"token": trainer.snapshot()}
    if kind == "restore":
        trainer.restore(str(request["token"]))
        return {"step": trainer.step_count}
    if kind == "release":
        trainer.release(str(request["token"]))
        return {}
    if kind == "train":
        step = trainer.train(
            steps=int(request["steps"]),
            dataset=request.get("dataset"),
            mixture=request.get("weights"),
            seed=int(request.get("seed", 0)),
        )
        return {"step": step}
    if kind == "evaluate":
        values = trainer.evaluate(
            request["domains"], int(request["batches"]), request.get("split", "eval"))
        return {"values": values, "step": trainer.step_count}
    if kind == "gradients":
        report = trainer.gradient_report(
            request["domains"], request["datasets"], int(request["batches"]))
        return {
            "eval_gradients": {k: v.tolist()
                               for k, v in report["eval_gradients"].items()},
            "dataset_directions": {k: v.tolist()
                                   for k, v in report["dataset_directions"].items()},
            "learning_rate": report["learning_rate"],
        }
    raise ValueError(f"unknown request kind {kind!r}")


def _error_code(exc: Exception) -> str:
    text = str(exc)
    if "domain" in text:
        return "unknown_domain"
    if "dataset" in text:
        return "unknown_dataset"
    if "token" in text:
        return "unknown_handle"
    return "invalid"


def serve(config_path: str, stdin: TextIO | None = None,
          stdout: TextIO | None = None) -> int:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    trainer = RefTrainer(RefConfig.load(config_path))

    def reply(obj: dict[str, Any]) -> None:
        stdout.write(json.dumps(obj) + "\n")
        stdout.flush()

    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            request = json.loads(line)
            request_id = request.get("id")
        except (json.JSONDecodeError, AttributeError):
            reply({"id": None, "kind": "error", "code": "protocol",
                   "error": f"malformed request line: {line[:120]!r}"})
            continue
        if request.get("kind") == "shutdown":
            reply({"id": request_id, "kind": "reply"})
            return 0
        try:
            payload = _handle(trainer, request)
        except Exception as exc:  # noqa: BLE001 - protocol servers must not crash
            print(f"request {request_id} failed: {exc}", file=sys.stderr)
            reply({"id": request_id, "kind": "error",
                   "code": _error_code(exc), "error": str(exc)})
            continue
        reply({"id": request_id, "kind": "reply", **payload})
    return 0


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 1:
        print("usage: python -m reftrainer CONFIG.json", file=sys.stderr)
        return 2
    return serve(argv[0])

"""Serve a synthetic trainer over the wire protocol on stdin/stdout.

    python -m mixctl.simserve SCENARIO.json

Reads one JSON request per line, writes one reply per line, never crashes on
malformed input. Used to exercise the bridge without an external trainer and
as the executable behind ``mixctl run --trainer exec``.
"""

from __future__ import annotations

import json
import sys
from typing import Any, TextIO

from .bridge import PROTOCOL_VERSION
from .scenario import load_scenario
from .simulator import SimTrainer
from .trainer import (
    CapabilityError,
    CheckpointCapacityError,
    CheckpointHandle,
    EvalRequest,
    InvalidPlanError,
    TrainerError,
    TrainPlan,
    UnknownDatasetError,
    UnknownDomainError,
    UnknownHandleError,
)

_CODE_OF = [
    (UnknownDatasetError, "unknown_dataset"),
    (UnknownDomainError, "unknown_domain"),
    (UnknownHandleError, "unknown_handle"),
    (CheckpointCapacityError, "capacity"),
    (CapabilityError, "unsupported"),
    (InvalidPlanError, "invalid"),
]


def _error_code(exc: Exception) -> str:
    for exc_type, code in _CODE_OF:
        if isinstance(exc, exc_type):
            return code
    return "invalid" if isinstance(exc, (ValueError, TrainerError)) else "protocol"


def _handle(trainer: SimTrainer, request: dict[str, Any]) -> dict[str, Any]:
    kind = request.get("kind")
    if kind == "hello":
        if request.get("protocol") != PROTOCOL_VERSION:
            raise ValueError(f"unsupported protocol {request.get('protocol')!r}")
        return {
            "protocol": PROTOCOL_VERSION,
            "datasets": list(trainer.dataset_ids),
            "domains": [
                {"id": d.id, "metric": d.metric} for d in trainer.scenario.eval_domains
            ],
            "gradients": trainer.supports_gradients,
            "max_checkpoints": trainer.config.max_checkpoints,
        }
    if kind == "snapshot":
        return {"token": trainer.snapshot().token}
    if kind == "restore":
        trainer.restore(CheckpointHandle(str(request["token"])))
        return {"step": trainer.current_step}
    if kind == "release":
        trainer.release(CheckpointHandle(str(request["token"])))
        return {}
    if kind == "train":
        steps = int(request["steps"])
        if "dataset" in request:
            plan = TrainPlan(dataset=str(request["dataset"]))
        else:
            plan = TrainPlan(weights=tuple(float(x) for x in request["weights"]))
        trainer.train_steps(plan, steps)
        return {"step": trainer.current_step}
    if kind == "evaluate":
        result = trainer.evaluate(EvalRequest(
            domain_ids=tuple(request["domains"]),
            batches=int(request["batches"]),
            split=request.get("split", "eval"),
        ))
        return {"values": dict(result.values), "step": result.step}
    if kind == "gradients":
        report = trainer.gradient_report(
            request["domains"], request["datasets"], int(request["batches"]))
        return {
            "eval_gradients": {k: v.tolist() for k, v in report.eval_gradients.items()},
            "dataset_directions": {k: v.tolist()
                                   for k, v in report.dataset_directions.items()},
            "learning_rate": report.learning_rate,
        }
    raise ValueError(f"unknown request kind {kind!r}")


def serve(scenario_path: str, stdin: TextIO | None = None, stdout: TextIO | None = None) -> int:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    scenario = load_scenario(scenario_path)
    trainer = SimTrainer(scenario)

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
            reply({"id": request_id, "kind": "error", "code": _error_code(exc),
                   "error": str(exc)})
            continue
        reply({"id": request_id, "kind": "reply", **payload})
    return 0


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 1:
        print("usage: python -m mixctl.simserve SCENARIO.json", file=sys.stderr)
        return 2
    return serve(argv[0])


if __name__ == "__main__":
    sys.exit(main())

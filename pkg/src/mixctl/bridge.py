"""Drive an external trainer process over a line-delimited JSON protocol.

Framing: one UTF-8 JSON object per line on the child's stdin/stdout, no
embedded newlines. Every request carries a monotonically increasing ``id``
and a ``kind``; the child answers each request, in order, with exactly one
``{"id": <same>, "kind": "reply", ...}`` or ``{"id": <same>, "kind":
"error", "code": str, "error": str}`` line.

Kinds and payloads (request -> reply):

  hello     {"protocol": 1} -> {"protocol": 1, "datasets": [id...],
            "domains": [{"id", "metric"}...], "gradients": bool,
            "max_checkpoints": int}
  snapshot  {} -> {"token": str}
  restore   {"token": str} -> {}
  release   {"token": str} -> {}
  train     {"dataset": str | "weights": [float], "steps": int, "seed": int}
            -> {"step": int}
  evaluate  {"domains": [id...], "batches": int, "split": "eval"|"test"}
            -> {"values": {id: float}, "step": int}
  gradients {"domains": [...], "datasets": [...], "batches": int}
            -> {"eval_gradients": {id: [float]}, "dataset_directions":
            {id: [float]}, "learning_rate": float}
  shutdown  {} -> {} and the child exits 0.

The bridge never pipelines mutating requests and is not shareable across
controllers. Mutating calls that fail because the child died surface the
child's stderr tail.
"""

from __future__ import annotations

import json
import subprocess
import threading
from collections import deque
from pathlib import Path
from queue import Empty, Queue
from typing import Any, Sequence

from .scenario import Scenario
from .trainer import (
    CapabilityError,
    CheckpointCapacityError,
    CheckpointHandle,
    EvalRequest,
    EvalResult,
    GradientReport,
    InvalidPlanError,
    Trainer,
    TrainerError,
    TrainPlan,
    UnknownDatasetError,
    UnknownDomainError,
    UnknownHandleError,
)

import numpy as np

PROTOCOL_VERSION = 1

_ERROR_CODES: dict[str, type[TrainerError]] = {
    "unknown_dataset": UnknownDatasetError,
    "unknown_domain": UnknownDomainError,
    "unknown_handle": UnknownHandleError,
    "capacity": CheckpointCapacityError,
    "unsupported": CapabilityError,
    "invalid": InvalidPlanError,
}


class BridgeError(TrainerError):
    """Protocol violation, timeout, or child failure."""


class BridgeTrainer(Trainer):
    """Present a child process speaking the wire protocol as a trainer."""

    def __init__(self, command: Sequence[str], scenario: Scenario,
                 timeout: float = 300.0, transcript_path: str | Path | None = None,
                 seed: int | None = None):
        self.scenario = scenario
        self.timeout = timeout
        self._seed = scenario.seed if seed is None else seed
        self._next_id = 0
        self._closed = False
        self._transcript_path = None if transcript_path is None else Path(transcript_path)
        self._transcript: list[dict] = []
        self._stderr_tail: deque[str] = deque(maxlen=40)
        self._lines: Queue = Queue()

        try:
            self._proc = subprocess.Popen(
                list(command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise BridgeError(f"failed to launch trainer process: {exc}") from exc
        self._stdout_thread = threading.Thread(target=self._read_stdout, daemon=True)
        self._stderr_thread = threading.Thread(target=self._read_stderr, daemon=True)
        self._stdout_thread.start()
        self._stderr_thread.start()

        caps = self._call("hello", {"protocol": PROTOCOL_VERSION})
        self._validate_capabilities(caps)
        self._gradients = bool(caps.get("gradients", False))
        self._step = 0

    # -- process plumbing -----------------------------------------------------

    def _read_stdout(self) -> None:
        try:
            assert self._proc.stdout is not None
            for line in self._proc.stdout:
                self._lines.put(line)
        finally:
            self._lines.put(None)  # EOF sentinel

    def _read_stderr(self) -> None:
        assert self._proc.stderr is not None
        for line in self._proc.stderr:
            self._stderr_tail.append(line.rstrip("\n"))

    def _stderr_summary(self) -> str:
        return " | ".join(self._stderr_tail) or "<no stderr>"

    def _call(self, kind: str, payload: dict[str, Any]) -> dict[str, Any]:
        if self._closed:
            raise BridgeError("bridge is closed")
        request_id = self._next_id
        self._next_id += 1
        request = {"id": request_id, "kind": kind, **payload}
        line = json.dumps(request)
        if "\n" in line:
            raise BridgeError("request must not contain embedded newlines")
        try:
            assert self._proc.stdin is not None
            self._proc.stdin.write(line + "\n")
            self._proc.stdin.flush()
        except (OSError, ValueError) as exc:
            raise BridgeError(
                f"child rejected request ({exc}); stderr: {self._stderr_summary()}"
            ) from exc
        try:
            raw = self._lines.get(timeout=self.timeout)
        except Empty:
            raise BridgeError(f"timeout after {self.timeout}s waiting for {kind} reply")
        if raw is None:
            code = self._proc.poll()
            raise BridgeError(
                f"child exited (code {code}) during {kind}; stderr: {self._stderr_summary()}"
            )
        try:
            reply = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise BridgeError(f"malformed reply line {raw[:200]!r}: {exc}") from exc
        self._transcript.append({"request": request, "reply": reply})
        if reply.get("id") != request_id:
            raise BridgeError(
                f"reply id {reply.get('id')!r} does not match request id {request_id}"
            )
        if reply.get("kind") == "error":
            exc_type = _ERROR_CODES.get(reply.get("code", ""), BridgeError)
            raise exc_type(str(reply.get("error", "unspecified error")))
        if reply.get("kind") != "reply":
            raise BridgeError(f"unexpected reply kind {reply.get('kind')!r}")
        return reply

    def _validate_capabilities(self, caps: dict[str, Any]) -> None:
        if caps.get("protocol") != PROTOCOL_VERSION:
            raise BridgeError(
                f"protocol version mismatch: want {PROTOCOL_VERSION}, "
                f"got {caps.get('protocol')!r}"
            )
        datasets = caps.get("datasets", [])
        if set(datasets) != set(self.scenario.dataset_ids):
            raise BridgeError(
                f"dataset ids {sorted(datasets)} do not match scenario "
                f"{sorted(self.scenario.dataset_ids)}"
            )
        domains = {d["id"]: d.get("metric", "loss") for d in caps.get("domains", [])}
        if set(domains) != set(self.scenario.domain_ids):
            raise BridgeError(
                f"domain ids {sorted(domains)} do not match scenario "
                f"{sorted(self.scenario.domain_ids)}"
            )
        for domain_id, metric in domains.items():
            want = self.scenario.metric_of(domain_id)
            if metric != want:
                raise BridgeError(
                    f"domain {domain_id!r} advertises metric {metric!r}, scenario says {want!r}"
                )

    # -- trainer interface ----------------------------------------------------

    @property
    def dataset_ids(self) -> tuple[str, ...]:
        return self.scenario.dataset_ids

    @property
    def domain_ids(self) -> tuple[str, ...]:
        return self.scenario.domain_ids

    @property
    def current_step(self) -> int:
        return self._step

    @property
    def supports_gradients(self) -> bool:
        return self._gradients

    def snapshot(self) -> CheckpointHandle:
        reply = self._call("snapshot", {})
        return CheckpointHandle(str(reply["token"]))

    def restore(self, handle: CheckpointHandle) -> None:
        reply = self._call("restore", {"token": handle.token})
        if "step" in reply:
            self._step = int(reply["step"])

    def release(self, handle: CheckpointHandle) -> None:
        self._call("release", {"token": handle.token})

    def train_steps(self, plan, steps: int) -> None:
        if steps < 1:
            raise ValueError("steps must be >= 1")
        plan = TrainPlan.coerce(plan)
        plan.validate(self.dataset_ids)
        payload: dict[str, Any] = {"steps": steps,
                                   "seed": (self._seed * 1_000_003 + self._next_id) % (2**31)}
        if plan.dataset is not None:
            payload["dataset"] = plan.dataset
        else:
            payload["weights"] = list(plan.weights)
        reply = self._call("train", payload)
        self._step = int(reply.get("step", self._step + steps))

    def evaluate(self, request: EvalRequest) -> EvalResult:
        reply = self._call("evaluate", {
            "domains": list(request.domain_ids),
            "batches": request.batches,
            "split": request.split,
        })
        values = {str(k): float(v) for k, v in reply["values"].items()}
        missing = set(request.domain_ids) - set(values)
        if missing:
            raise BridgeError(f"reply is missing domains {sorted(missing)}")
        return EvalResult(values=values, step=int(reply.get("step", self._step)))

    def gradient_report(self, domain_ids, dataset_ids, batches: int) -> GradientReport:
        if not self._gradients:
            raise CapabilityError("external trainer does not expose gradients")
        reply = self._call("gradients", {
            "domains": list(domain_ids),
            "datasets": list(dataset_ids),
            "batches": batches,
        })
        return GradientReport(
            eval_gradients={k: np.asarray(v, dtype=float)
                            for k, v in reply["eval_gradients"].items()},
            dataset_directions={k: np.asarray(v, dtype=float)
                                for k, v in reply["dataset_directions"].items()},
            learning_rate=float(reply["learning_rate"]),
        )

    # -- lifecycle ------------------------------------------------------------

    @property
    def transcript(self) -> list[dict]:
        return list(self._transcript)

    def save_transcript(self, path: str | Path | None = None) -> None:
        path = Path(path) if path is not None else self._transcript_path
        if path is None:
            raise ValueError("no transcript path configured")
        with open(path, "w", encoding="utf-8") as fh:
            for entry in self._transcript:
                fh.write(json.dumps(entry) + "\n")

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        try:
            if self._proc.poll() is None:
                request = {"id": self._next_id, "kind": "shutdown"}
                self._next_id += 1
                try:
                    assert self._proc.stdin is not None
                    self._proc.stdin.write(json.dumps(request) + "\n")
                    self._proc.stdin.flush()
                except (OSError, ValueError):
                    pass
            self._proc.wait(timeout=10.0)
        except subprocess.TimeoutExpired:
            self._proc.kill()
            self._proc.wait()
        finally:
            if self._transcript_path is not None:
                self.save_transcript()

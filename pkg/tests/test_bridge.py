import json
import subprocess
import sys
import textwrap

import pytest

from mixctl.bridge import BridgeError, BridgeTrainer
from mixctl.controller import ControllerConfig, run
from mixctl.scenario import Scenario, save_scenario
from mixctl.schedule import build_schedule
from mixctl.simulator import SimTrainer, generate_scenario
from mixctl.trainer import EvalRequest, UnknownDomainError


@pytest.fixture
def sim_scenario(tmp_path):
    raw = generate_scenario(2, 3, seed=4, total_steps=128, eval_every=32,
                            mode="deterministic")
    scenario = Scenario.from_dict(raw)
    path = tmp_path / "scenario.json"
    save_scenario(scenario, path)
    return scenario, path


def serve_command(path):
    return [sys.executable, "-m", "mixctl.simserve", str(path)]


def test_handshake_and_round_trip(sim_scenario):
    scenario, path = sim_scenario
    bridge = BridgeTrainer(serve_command(path), scenario, timeout=30.0)
    try:
        assert bridge.dataset_ids == scenario.dataset_ids
        assert bridge.supports_gradients
        req = EvalRequest(scenario.domain_ids, batches=8)
        handle = bridge.snapshot()
        before = bridge.evaluate(req).values
        bridge.train_steps("tgt0", 5)
        assert bridge.current_step == 5
        assert bridge.evaluate(req).values != before
        bridge.restore(handle)
        assert bridge.evaluate(req).values == before
        assert bridge.current_step == 0
        bridge.release(handle)
    finally:
        bridge.close()


def test_evaluate_unknown_domain_surfaces_error(sim_scenario):
    scenario, path = sim_scenario
    bridge = BridgeTrainer(serve_command(path), scenario, timeout=30.0)
    try:
        with pytest.raises(UnknownDomainError):
            bridge.evaluate(EvalRequest(("mystery",), batches=1))
        # the session survives the error
        bridge.evaluate(EvalRequest(scenario.domain_ids, batches=1))
    finally:
        bridge.close()


def test_gradients_over_the_wire(sim_scenario):
    scenario, path = sim_scenario
    bridge = BridgeTrainer(serve_command(path), scenario, timeout=30.0)
    try:
        report = bridge.gradient_report(scenario.domain_ids, scenario.dataset_ids, 8)
        local = SimTrainer(scenario)
        expected = local.gradient_report(scenario.domain_ids, scenario.dataset_ids, 8)
        for d in scenario.domain_ids:
            assert report.eval_gradients[d] == pytest.approx(
                expected.eval_gradients[d], abs=1e-12)
        assert report.learning_rate == expected.learning_rate
    finally:
        bridge.close()


def test_shutdown_exits_zero(sim_scenario):
    scenario, path = sim_scenario
    bridge = BridgeTrainer(serve_command(path), scenario, timeout=30.0)
    bridge.evaluate(EvalRequest(scenario.domain_ids, batches=1))
    bridge.close()
    assert bridge._proc.returncode == 0


def test_capability_mismatch_missing_domain(tmp_path, sim_scenario):
    scenario, path = sim_scenario
    # scenario expecting an extra domain the server does not advertise
    bigger = Scenario.from_dict(scenario.to_dict() | {
        "eval_domains": [{"id": d.id, "role": d.role, "metric": d.metric}
                         for d in scenario.eval_domains]
        + [{"id": "extra", "role": "constrained", "metric": "loss"}],
    })
    with pytest.raises(BridgeError, match="extra|do not match"):
        BridgeTrainer(serve_command(path), bigger, timeout=30.0)


def test_malformed_reply_is_protocol_error(tmp_path, sim_scenario):
    scenario, _ = sim_scenario
    script = tmp_path / "garbage.py"
    script.write_text("import sys\nsys.stdin.readline()\nprint('not json at all')\n"
                      "sys.stdout.flush()\nsys.stdin.read()\n")
    with pytest.raises(BridgeError, match="not json at all"):
        BridgeTrainer([sys.executable, str(script)], scenario, timeout=30.0)


def test_child_crash_reports_stderr_tail(tmp_path, sim_scenario):
    scenario, _ = sim_scenario
    script = tmp_path / "crash.py"
    script.write_text(textwrap.dedent("""
        import sys
        sys.stdin.readline()
        print("boom: synthetic failure", file=sys.stderr)
        sys.exit(3)
    """))
    with pytest.raises(BridgeError, match="synthetic failure"):
        BridgeTrainer([sys.executable, str(script)], scenario, timeout=30.0)


def test_timeout(tmp_path, sim_scenario):
    scenario, _ = sim_scenario
    script = tmp_path / "sleepy.py"
    script.write_text("import time, sys\nsys.stdin.readline()\ntime.sleep(60)\n")
    with pytest.raises(BridgeError, match="timeout"):
        BridgeTrainer([sys.executable, str(script)], scenario, timeout=1.0)


def test_controller_run_identical_local_and_bridged(sim_scenario):
    scenario, path = sim_scenario
    config = ControllerConfig(scenario=scenario,
                              schedule=build_schedule("light", scenario.total_steps))
    local_log = run(config, SimTrainer(scenario))
    bridge = BridgeTrainer(serve_command(path), scenario, timeout=60.0)
    try:
        bridged_log = run(config, bridge)
    finally:
        bridge.close()
    assert bridged_log.to_json() == local_log.to_json()


def test_transcript_replay_reproduces_run(tmp_path, sim_scenario):
    scenario, path = sim_scenario
    config = ControllerConfig(scenario=scenario,
                              schedule=build_schedule("none", scenario.total_steps))
    transcript_path = tmp_path / "transcript.jsonl"
    bridge = BridgeTrainer(serve_command(path), scenario, timeout=60.0,
                           transcript_path=transcript_path)
    try:
        original_log = run(config, bridge)
    finally:
        bridge.close()
    assert transcript_path.exists()

    # a mock endpoint that replays recorded replies while checking that the
    # requests match the recorded ones field-for-field
    replayer = tmp_path / "replay.py"
    replayer.write_text(textwrap.dedent("""
        import json, sys
        entries = [json.loads(line) for line in open(sys.argv[1])]
        for entry in entries:
            line = sys.stdin.readline()
            if not line:
                break
            request = json.loads(line)
            if request != entry["request"]:
                print(f"request mismatch: {request} vs {entry['request']}",
                      file=sys.stderr)
                sys.exit(2)
            print(json.dumps(entry["reply"]), flush=True)
        # trailing shutdown from close()
        line = sys.stdin.readline()
        if line:
            print(json.dumps({"id": json.loads(line)["id"], "kind": "reply"}),
                  flush=True)
    """))
    mock = BridgeTrainer([sys.executable, str(replayer), str(transcript_path)],
                         scenario, timeout=30.0)
    try:
        replayed_log = run(config, mock)
    finally:
        mock.close()
    assert replayed_log.to_json() == original_log.to_json()


def test_simserve_never_crashes_on_malformed_input(sim_scenario):
    _, path = sim_scenario
    proc = subprocess.Popen(serve_command(path), stdin=subprocess.PIPE,
                            stdout=subprocess.PIPE, text=True, bufsize=1)
    try:
        proc.stdin.write("this is not json\n")
        proc.stdin.flush()
        reply = json.loads(proc.stdout.readline())
        assert reply["kind"] == "error" and reply["code"] == "protocol"
        proc.stdin.write(json.dumps({"id": 7, "kind": "shutdown"}) + "\n")
        proc.stdin.flush()
        reply = json.loads(proc.stdout.readline())
        assert reply == {"id": 7, "kind": "reply"}
        assert proc.wait(timeout=10) == 0
    finally:
        if proc.poll() is None:
            proc.kill()

import json
import sys
import textwrap

import numpy as np
import pytest

from abcgbi.config import build_model, parse_config
from abcgbi.exceptions import ConfigurationError, SimulationError
from abcgbi.external import CommandSpec, make_external_model, run_batch, run_external_simulator
from abcgbi.model import ParameterBox, RngStream

ECHO_STDIN = """
import json, sys
req = json.loads(sys.stdin.readline())
print(json.dumps({"data": req["theta"]}))
"""

ECHO_ARGS = """
import json, sys
theta = [float(v) for v in sys.argv[1].split(",")]
print(json.dumps({"data": theta, "seed": int(sys.argv[2])}))
"""

NOISY = """
import json, sys, random
req = json.loads(sys.stdin.readline())
random.seed(req["seed"])
print(json.dumps({"data": [t + random.gauss(0, 1) for t in req["theta"]]}))
"""

FAILING = """
import sys
sys.stderr.write("boom: bad parameter\\n")
sys.exit(1)
"""

SLEEPY = """
import time
time.sleep(5)
"""

MALFORMED = """
print("not json")
"""

TWO_LINES = """
print('{"data": [1]}')
print('{"data": [2]}')
"""

# nondeterministic: output depends on a counter file, not on (θ, seed)
DRIFTING = """
import json, os, sys
path = sys.argv[1]
n = int(open(path).read()) if os.path.exists(path) else 0
open(path, "w").write(str(n + 1))
sys.stdin.readline()
print(json.dumps({"data": [float(n)]}))
"""


@pytest.fixture
def script(tmp_path):
    def make(body, name="sim.py"):
        path = tmp_path / name
        path.write_text(textwrap.dedent(body), encoding="utf-8")
        return str(path)
    return make


class TestProtocol:
    def test_echo_stdin(self, script):
        spec = CommandSpec([sys.executable, script(ECHO_STDIN)])
        assert run_external_simulator(spec, [1.5, -2.0], 3).tolist() == [1.5, -2.0]

    def test_echo_args(self, script):
        spec = CommandSpec([sys.executable, script(ECHO_ARGS), "{theta}", "{seed}"], mode="args")
        assert run_external_simulator(spec, [0.25], 11).tolist() == [0.25]

    def test_args_mode_needs_placeholder(self, script):
        with pytest.raises(ConfigurationError):
            CommandSpec([sys.executable, script(ECHO_ARGS)], mode="args")

    def test_exit_status_surfaces_stderr(self, script):
        spec = CommandSpec([sys.executable, script(FAILING)])
        with pytest.raises(SimulationError, match="boom: bad parameter"):
            run_external_simulator(spec, [0.0], 0)

    def test_timeout(self, script):
        spec = CommandSpec([sys.executable, script(SLEEPY)], timeout=0.5)
        with pytest.raises(SimulationError, match="timed out"):
            run_external_simulator(spec, [0.0], 0)

    @pytest.mark.parametrize("body", [MALFORMED, TWO_LINES])
    def test_malformed_output(self, script, body):
        spec = CommandSpec([sys.executable, script(body)])
        with pytest.raises(SimulationError):
            run_external_simulator(spec, [0.0], 0)

    def test_missing_executable(self, tmp_path):
        spec = CommandSpec([str(tmp_path / "no-such-simulator")])
        with pytest.raises(SimulationError):
            run_external_simulator(spec, [0.0], 0)

    def test_bad_mode(self):
        with pytest.raises(ConfigurationError):
            CommandSpec(["x"], mode="socket")


class TestDeterminism:
    def test_repeat_is_identical(self, script):
        spec = CommandSpec([sys.executable, script(NOISY)])
        a = run_external_simulator(spec, [1.0], 42)
        b = run_external_simulator(spec, [1.0], 42)
        assert np.array_equal(a, b)
        assert spec.nondeterministic_count == 0 and spec.calls == 2

    def test_violation_counted(self, script, tmp_path):
        spec = CommandSpec([sys.executable, script(DRIFTING), str(tmp_path / "counter")])
        first = run_external_simulator(spec, [1.0], 42)
        run_external_simulator(spec, [1.0], 42)
        assert spec.nondeterministic_count == 1
        assert first.tolist() == [0.0]


class TestBatchAndModel:
    def test_batch_order(self, script):
        spec = CommandSpec([sys.executable, script(ECHO_STDIN)], max_workers=4)
        thetas = np.arange(6, dtype=float)[:, None]
        out = run_batch(spec, thetas, list(range(6)))
        assert out[:, 0].tolist() == thetas[:, 0].tolist()

    def test_batch_seed_count(self, script):
        spec = CommandSpec([sys.executable, script(ECHO_STDIN)])
        with pytest.raises(ValueError):
            run_batch(spec, np.zeros((2, 1)), [1])

    def test_model_reproducible(self, script):
        spec = CommandSpec([sys.executable, script(NOISY)], max_workers=2)
        model = make_external_model(spec, [0.0], ParameterBox([-1.0], [1.0]))
        a = model.discrepancy_draws([0.5], 4, RngStream(1))
        b = model.discrepancy_draws([0.5], 4, RngStream(1))
        assert np.array_equal(a, b) and np.all(a >= 0)

    def test_from_config(self, script):
        doc = {
            "schema": 1, "name": "ext", "seed": 1, "method": "grid",
            "model": {"external": {"command": [sys.executable, script(ECHO_STDIN)], "timeout": 10},
                      "observed": [0.5], "lower": [0.0], "upper": [1.0]},
            "grid": {"lower": [0.0], "upper": [1.0], "resolution": 5},
            "posteriors": [{"label": "g", "loss": {"kind": "expected_discrepancy", "w_scale": 1.0, "n_sim": 1}}],
        }
        model, cmd = build_model(parse_config(doc).model_spec)
        assert cmd is not None and cmd.timeout == 10
        assert model.discrepancy_draws([0.2], 1, 0).tolist() == pytest.approx([0.3])

    def test_unknown_external_field(self):
        with pytest.raises(ConfigurationError, match="model.external"):
            CommandSpec.from_config({"command": ["x"], "shell": True})

    def test_json_payload(self, script, tmp_path):
        # the stdin request is a single JSON line with theta and seed
        body = """
        import json, sys
        line = sys.stdin.readline()
        req = json.loads(line)
        print(json.dumps({"data": [len(req["theta"]), req["seed"]]}))
        """
        spec = CommandSpec([sys.executable, script(body, "payload.py")])
        assert run_external_simulator(spec, [1.0, 2.0, 3.0], 9).tolist() == [3.0, 9.0]

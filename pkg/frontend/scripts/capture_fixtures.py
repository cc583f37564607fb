"""Record API fixtures for the console's contract tests.

Starts the real allocation service in a subprocess, drives the scenarios
the console cares about, and writes every request/response pair verbatim
into tests/fixtures/*.json. Rerun after any service change:

    python3 scripts/capture_fixtures.py
"""

import json
import random
import subprocess
import sys
import tempfile
import time
import urllib.error
import urllib.request
from pathlib import Path

PORT = 8917
BASE = f"http://127.0.0.1:{PORT}"
OUT = Path(__file__).resolve().parent.parent / "tests" / "fixtures"


class Recorder:
    def __init__(self):
        self.exchanges = []

    def call(self, name, method, path, body=None):
        url = BASE + path
        data = None if body is None else json.dumps(body).encode()
        req = urllib.request.Request(url, data=data, method=method)
        if data is not None:
            req.add_header("Content-Type", "application/json")
        try:
            with urllib.request.urlopen(req) as resp:
                status = resp.status
                raw = resp.read().decode()
                ctype = resp.headers.get("content-type", "")
        except urllib.error.HTTPError as err:
            status = err.code
            raw = err.read().decode()
            ctype = err.headers.get("content-type", "")
        is_json = "application/json" in ctype
        entry = {
            "name": name,
            "method": method,
            "path": path,
            "request": body,
            "status": status,
            "response": json.loads(raw) if is_json else None,
            "response_text": None if is_json else raw,
        }
        self.exchanges.append(entry)
        return entry

    def dump(self, filename):
        OUT.mkdir(parents=True, exist_ok=True)
        path = OUT / filename
        path.write_text(json.dumps({"exchanges": self.exchanges}, indent=1) + "\n")
        print(f"wrote {path} ({len(self.exchanges)} exchanges)")
        self.exchanges = []


def wait_for_service(proc):
    for _ in range(100):
        if proc.poll() is not None:
            raise RuntimeError("service exited early")
        try:
            with urllib.request.urlopen(BASE + "/health") as resp:
                if resp.status == 200:
                    return
        except OSError:
            time.sleep(0.1)
    raise RuntimeError("service did not come up")


def capture_wizard(rec):
    valid = {
        "name": "wizard-demo",
        "seed": 11,
        "rho": "2/3",
        "feature_map": {"kind": "identity", "dim": 3},
        "policy": {"kind": "shift_free", "p": 0.2, "warmup": 5},
    }
    rec.call("create_valid", "POST", "/trials", valid)
    rec.call("create_duplicate_name", "POST", "/trials", valid)

    p_too_large = json.loads(json.dumps(valid))
    p_too_large["name"] = "wizard-bad-p"
    p_too_large["policy"]["p"] = 0.5
    rec.call("create_p_too_large", "POST", "/trials", p_too_large)

    bad_rho = json.loads(json.dumps(valid))
    bad_rho["name"] = "wizard-bad-rho"
    bad_rho["rho"] = 1.2
    rec.call("create_rho_out_of_range", "POST", "/trials", bad_rho)

    bad_rho1 = {
        "name": "wizard-bad-rho1",
        "seed": 3,
        "rho": "2/3",
        "feature_map": {"kind": "identity", "dim": 3},
        "policy": {"kind": "minimization", "rho1": 0.6},
    }
    rec.call("create_rho1_too_small", "POST", "/trials", bad_rho1)
    rec.dump("wizard.json")


def capture_continuous(rec):
    config = {
        "name": "live-demo",
        "seed": 2024,
        "rho": "2/3",
        "feature_map": {"kind": "identity", "dim": 3},
        "policy": {"kind": "shift_free", "p": 0.2, "warmup": 3},
    }
    created = rec.call("create", "POST", "/trials", config)
    tid = created["response"]["trial_id"]
    rec.call("fresh_detail", "GET", f"/trials/{tid}")
    rec.call("fresh_events", "GET", f"/trials/{tid}/events?from=0&limit=100")

    rng = random.Random(42)
    preview_units = {1, 2, 7, 15}
    for unit in range(1, 25):
        x = [round(rng.gauss(0.0, 1.0), 4) for _ in range(3)]
        if unit in preview_units:
            rec.call(f"whatif_before_{unit}", "POST", f"/trials/{tid}/whatif", {"x": x})
        rec.call(
            f"enroll_{unit}",
            "POST",
            f"/trials/{tid}/units",
            {"x": x, "expected_unit_index": unit},
        )

    rec.call("whatif_uncommitted", "POST", f"/trials/{tid}/whatif", {"x": [0.5, -0.5, 1.5]})
    rec.call("detail_after_whatif", "GET", f"/trials/{tid}")
    rec.call("final_detail", "GET", f"/trials/{tid}")
    for start in range(0, 30, 10):
        rec.call(f"events_page_{start}", "GET", f"/trials/{tid}/events?from={start}&limit=10")
    rec.call("events_all", "GET", f"/trials/{tid}/events?from=0&limit=1000")
    rec.call("listing", "GET", "/trials")
    rec.dump("continuous.json")


def capture_discrete(rec):
    config = {
        "name": "margins-demo",
        "seed": 5,
        "rho": "2/3",
        "feature_map": {"kind": "pocock_simon", "levels": [2, 3]},
        "policy": {"kind": "pocock_simon", "rho1": 0.99, "weights": [1, 2]},
    }
    created = rec.call("create", "POST", "/trials", config)
    tid = created["response"]["trial_id"]

    rng = random.Random(7)
    for unit in range(1, 31):
        x = [rng.randint(1, 2), rng.randint(1, 3)]
        rec.call(
            f"enroll_{unit}",
            "POST",
            f"/trials/{tid}/units",
            {"x": [float(v) for v in x], "expected_unit_index": unit},
        )

    rec.call("final_detail", "GET", f"/trials/{tid}")
    rec.call("events_all", "GET", f"/trials/{tid}/events?from=0&limit=1000")
    rec.dump("discrete.json")


def main():
    with tempfile.TemporaryDirectory() as data_dir:
        proc = subprocess.Popen(
            [
                sys.executable, "-m", "carlab.cli", "serve",
                "--host", "127.0.0.1", "--port", str(PORT), "--data-dir", data_dir,
            ],
            stdout=subprocess.DEVNULL,
            stderr=subprocess.DEVNULL,
        )
        try:
            wait_for_service(proc)
            rec = Recorder()
            rec.call("health", "GET", "/health")
            rec.dump("health.json")
            capture_wizard(rec)
            capture_continuous(rec)
            capture_discrete(rec)
        finally:
            proc.terminate()
            proc.wait(timeout=10)


if __name__ == "__main__":
    main()

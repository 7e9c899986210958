#!/usr/bin/env python3
"""Kill-the-server crash recovery harness.

Runs a workload stream against a file-backed server subprocess, SIGKILLs
it at random points, restarts it, and verifies after every restart that
the store contains every acknowledged write and that every touched item
replays cleanly (loading an item IS a replay server-side). In-flight
unacknowledged requests may or may not have landed; both are legal.

    python3 scripts/crash_recovery.py --store /tmp/cr --cycles 20
"""

from __future__ import annotations

import argparse
import json
import os
import random
import re
import signal
import subprocess
import sys
import threading
import time

from itemflow.wireclient import Client, WireError
from itemflow.errors import KernelError

SERVE_LINE = re.compile(r"serving .* on http://[^:]+:(\d+)")

DOMAIN = """<description-exchange>
  <description kind="schema" name="CrMeasurement">
    <version n="0">&lt;?xml version="1.0"?&gt;
&lt;xs:schema xmlns:xs="http://www.w3.org/2001/XMLSchema"&gt;
  &lt;xs:element name="measurement"&gt;
    &lt;xs:complexType&gt;
      &lt;xs:sequence&gt;&lt;xs:element name="value" type="xs:decimal"/&gt;&lt;/xs:sequence&gt;
    &lt;/xs:complexType&gt;
  &lt;/xs:element&gt;
&lt;/xs:schema&gt;
</version>
  </description>
  <description kind="elementary" name="CrMeasure">
    <version n="0">&lt;elementary-activity-def name="CrMeasure"&gt;&lt;outcome-schema name="CrMeasurement" version="last"/&gt;&lt;/elementary-activity-def&gt;</version>
  </description>
  <description kind="composite" name="CrLife">
    <version n="0">&lt;composite-activity-def name="CrLife"&gt;&lt;vertex kind="start" name="start"/&gt;&lt;vertex kind="activity" name="Measure" ref="CrMeasure" version="last"/&gt;&lt;vertex kind="terminal" name="end"/&gt;&lt;edge from="start" to="Measure"/&gt;&lt;edge from="Measure" to="end"/&gt;&lt;/composite-activity-def&gt;</version>
  </description>
  <description kind="item-type" name="CrUnit">
    <version n="0">&lt;item-description type-name="CrUnit"&gt;&lt;property-template default="new" mutable="true" name="Status"/&gt;&lt;workflow ref="CrLife" version="last"/&gt;&lt;/item-description&gt;</version>
  </description>
</description-exchange>
"""


class ServerProcess:
    def __init__(self, store_dir: str, bootstrap: bool):
        args = [sys.executable, "-m", "itemflow.cli", "serve",
                "--store", store_dir, "--port", "0"]
        if bootstrap:
            args.append("--bootstrap")
        env = dict(os.environ)
        src = os.path.join(os.path.dirname(__file__), "..", "src")
        env["PYTHONPATH"] = os.path.abspath(src) + os.pathsep + env.get("PYTHONPATH", "")
        self.proc = subprocess.Popen(args, stderr=subprocess.PIPE, text=True, env=env)
        self.url = self._wait_for_url()

    def _wait_for_url(self) -> str:
        deadline = time.monotonic() + 30
        assert self.proc.stderr is not None
        while time.monotonic() < deadline:
            line = self.proc.stderr.readline()
            if not line:
                raise RuntimeError("server exited before binding")
            match = SERVE_LINE.search(line)
            if match:
                return f"http://127.0.0.1:{match.group(1)}"
        raise RuntimeError("server did not report its port in time")

    def kill(self) -> None:
        self.proc.send_signal(signal.SIGKILL)
        self.proc.wait()
        if self.proc.stderr is not None:
            self.proc.stderr.close()


def run_crash_cycles(store_dir: str, cycles: int = 20, workers: int = 4,
                     seed: int = 11, log=print) -> dict:
    rng = random.Random(seed)
    acked_items: dict[str, str] = {}          # name -> item id
    acked_events: dict[str, list[tuple[int, str, str]]] = {}  # id -> (eid, path, transition)
    counter = [0]
    ack_lock = threading.Lock()

    server = ServerProcess(store_dir, bootstrap=True)
    admin = Client(server.url)
    admin.login("root", "root")
    admin.import_descriptions(DOMAIN.encode())
    from itemflow.bootstrap import hash_credential
    admin.instantiate("Agent", "/agents/crasher", properties={
        "Roles": "maintainer", "CredentialHash": hash_credential("go")})

    def stream(base_url: str, stop: threading.Event) -> None:
        client = Client(base_url)
        try:
            client.login("crasher", "go")
        except (WireError, KernelError):
            return
        while not stop.is_set():
            with ack_lock:
                counter[0] += 1
                serial = counter[0]
            name = f"/cr/unit-{serial:05d}"
            try:
                created = client.instantiate("CrUnit", name,
                                             request_id=client.request_id())
                item_id = created["item_id"]
                with ack_lock:
                    acked_items[name] = item_id
                    acked_events.setdefault(item_id, [])
                first = client.execute(item_id, "Measure", "Start",
                                       request_id=client.request_id())
                with ack_lock:
                    acked_events[item_id].append(
                        (first["event"]["id"], "Measure", "Start"))
                second = client.execute(
                    item_id, "Measure", "Complete",
                    outcome=f"<measurement><value>{serial}</value></measurement>",
                    request_id=client.request_id())
                with ack_lock:
                    acked_events[item_id].append(
                        (second["event"]["id"], "Measure", "Complete"))
            except (WireError, KernelError):
                return  # server went away mid-request; nothing was acknowledged

    def verify(base_url: str) -> None:
        client = Client(base_url)
        client.login("root", "root")
        for name, item_id in acked_items.items():
            assert client.lookup(name) == item_id, f"lost registration {name}"
        for item_id, events in acked_events.items():
            # Fetching history forces a replay server-side; a torn event
            # would surface as CorruptHistory here.
            history = client.history(item_id)
            ids = [event["id"] for event in history]
            assert ids == list(range(len(ids))), f"gap in history of {item_id}"
            recorded = {(e["id"], e["activity"], e["transition"]) for e in history}
            for needed in events:
                assert needed in recorded, f"lost acknowledged event {needed} on {item_id}"

    kills = 0
    try:
        for cycle in range(cycles):
            stop = threading.Event()
            threads = [threading.Thread(target=stream, args=(server.url, stop))
                       for _ in range(workers)]
            for t in threads:
                t.start()
            time.sleep(rng.uniform(0.25, 1.0))
            server.kill()
            kills += 1
            stop.set()
            for t in threads:
                t.join()
            server = ServerProcess(store_dir, bootstrap=False)
            verify(server.url)
            log(f"  cycle {cycle + 1}/{cycles}: verified "
                f"{len(acked_items)} items, "
                f"{sum(len(v) for v in acked_events.values())} acked events")
    finally:
        server.kill()
    return {"kills": kills, "items_acked": len(acked_items),
            "events_acked": sum(len(v) for v in acked_events.values())}


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--store", required=True)
    parser.add_argument("--cycles", type=int, default=20)
    parser.add_argument("--workers", type=int, default=4)
    parser.add_argument("--seed", type=int, default=11)
    args = parser.parse_args()
    report = run_crash_cycles(args.store, args.cycles, args.workers, args.seed)
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())

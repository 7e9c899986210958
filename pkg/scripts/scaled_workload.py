#!/usr/bin/env python3
"""Scaled assembly workload: a five-level containment tree of four types.

Builds /assembly/sm-*/mod-*/sub-*/crystal-* over the wire API: every item
is instantiated from a description, runs its measurement workflow to the
terminal with a validated outcome, and is mounted into its parent's typed
slot. Defaults land just over 10,000 items.

Runnable standalone against any server, or driven in-process by the
acceptance suite.

    python3 scripts/scaled_workload.py --server http://127.0.0.1:8137 \
        --secret root [--supermodules 10 --modules 10 --subs 10 --crystals 9]
"""

from __future__ import annotations

import argparse
import json
import random
import sys
import threading
import time

from itemflow import xmlio
from itemflow.wireclient import Client

TYPES = ("Supermodule", "Module", "Submodule", "CrystalUnit")

MEASURE_SCHEMA = """<?xml version="1.0" encoding="UTF-8"?>
<xs:schema xmlns:xs="http://www.w3.org/2001/XMLSchema">
  <xs:element name="measurement">
    <xs:complexType>
      <xs:sequence>
        <xs:element name="value">
          <xs:simpleType>
            <xs:restriction base="xs:decimal">
              <xs:minInclusive value="0"/>
              <xs:maxInclusive value="1000"/>
            </xs:restriction>
          </xs:simpleType>
        </xs:element>
      </xs:sequence>
    </xs:complexType>
  </xs:element>
</xs:schema>
"""


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def domain_exchange(counts: dict[str, int]) -> bytes:
    """The four-type assembly domain as an exchange file."""
    root = xmlio.elem("description-exchange")

    def add(kind: str, name: str, documents: list[str]) -> None:
        node = xmlio.sub(root, "description", {"kind": kind, "name": name})
        for n, doc in enumerate(documents):
            xmlio.sub(node, "version", {"n": str(n)}, text=doc)

    add("schema", "AsmMeasurement", [MEASURE_SCHEMA])
    add("elementary", "AsmMeasure", [
        '<elementary-activity-def name="AsmMeasure">'
        '<outcome-schema name="AsmMeasurement" version="last"/>'
        '<role>builder</role>'
        '</elementary-activity-def>'])
    add("composite", "AsmLife", [
        '<composite-activity-def name="AsmLife">'
        '<vertex kind="start" name="start"/>'
        '<vertex kind="activity" name="Measure" ref="AsmMeasure" version="last"/>'
        '<vertex kind="terminal" name="end"/>'
        '<edge from="start" to="Measure"/>'
        '<edge from="Measure" to="end"/>'
        '</composite-activity-def>'])
    # Child collections: each parent type holds slots typed to its child.
    child_of = {"Supermodule": ("Module", counts["modules"]),
                "Module": ("Submodule", counts["subs"]),
                "Submodule": ("CrystalUnit", counts["crystals"])}
    for parent, (child, slots) in child_of.items():
        add("collection", f"{parent}Children", [
            f'<collection-layout name="Children">'
            + f'<slot type-ref="{child}" version="last"/>' * slots
            + '</collection-layout>'])
    for type_name in reversed(TYPES):  # leaf first so slot refs resolve
        collection = ""
        if type_name in child_of:
            collection = (f'<collection-ref layout="{type_name}Children" '
                          f'name="Children" version="last"/>')
        add("item-type", type_name, [
            f'<item-description type-name="{type_name}">'
            '<property-template default="new" mutable="true" name="Status"/>'
            f'<workflow ref="AsmLife" version="last"/>{collection}'
            '</item-description>'])
    return xmlio.canonical_bytes(root)


def measurement(value: float) -> str:
    return f"<measurement><value>{value}</value></measurement>"


def run_item(client: Client, type_name: str, name: str, rng: random.Random) -> str:
    created = client.instantiate(type_name, name,
                                 request_id=client.request_id())
    item_id = created["item_id"]
    client.execute(item_id, "Measure", "Start", request_id=client.request_id())
    client.execute(item_id, "Measure", "Complete",
                   outcome=measurement(round(rng.uniform(0, 1000), 3)),
                   request_id=client.request_id())
    return item_id


def mount(client: Client, parent_id: str, slot: int, child_id: str) -> None:
    payload = (f"<add-member><collection>Children</collection>"
               f"<slot>{slot}</slot><target>{child_id}</target></add-member>")
    client.step(parent_id, "AddMemberToCollection", payload,
                request_id=client.request_id())


def run_workload(base_url: str, secret: str = "root",
                 supermodules: int = 10, modules: int = 10, subs: int = 10,
                 crystals: int = 9, workers: int = 8,
                 progress=None) -> dict:
    counts = {"modules": modules, "subs": subs, "crystals": crystals}
    admin = Client(base_url)
    admin.login("root", secret)
    admin.import_descriptions(domain_exchange(counts))
    # One builder+maintainer agent shared by the workers.
    from itemflow.bootstrap import hash_credential
    try:
        admin.instantiate("Agent", "/agents/builder", properties={
            "Roles": "builder maintainer",
            "CredentialHash": hash_credential("build")})
    except Exception:
        pass  # already present on a resumed store

    work: list[tuple[str, str, str | None, int]] = []  # (type, name, parent name, slot)
    for sm in range(supermodules):
        sm_name = f"/assembly/sm-{sm:02d}"
        work.append(("Supermodule", sm_name, None, 0))
        for mod in range(modules):
            mod_name = f"{sm_name}/mod-{mod:02d}"
            work.append(("Module", mod_name, sm_name, mod))
            for sub in range(subs):
                sub_name = f"{mod_name}/sub-{sub:02d}"
                work.append(("Submodule", sub_name, mod_name, sub))
                for cr in range(crystals):
                    work.append(("CrystalUnit", f"{sub_name}/crystal-{cr:02d}",
                                 sub_name, cr))

    started = time.monotonic()
    ids: dict[str, str] = {}
    ids_lock = threading.Lock()
    errors: list[str] = []
    done = [0]

    # Parents must exist before children mount into them; the work list is
    # ordered parent-first, so hand out work in order but let executions and
    # mounts overlap across workers.
    index = [0]
    index_lock = threading.Lock()

    def worker():
        client = Client(base_url)
        client.login("builder", "build")
        rng = random.Random(threading.get_ident())
        while True:
            with index_lock:
                if index[0] >= len(work) or errors:
                    return
                job = work[index[0]]
                index[0] += 1
            type_name, name, parent, slot = job
            try:
                item_id = run_item(client, type_name, name, rng)
                with ids_lock:
                    ids[name] = item_id
                if parent is not None:
                    deadline = time.monotonic() + 60
                    while True:
                        with ids_lock:
                            parent_id = ids.get(parent)
                        if parent_id is not None:
                            break
                        if time.monotonic() > deadline:
                            raise RuntimeError(f"parent {parent} never appeared")
                        time.sleep(0.005)
                    mount(client, parent_id, slot, item_id)
                with ids_lock:
                    done[0] += 1
                    if progress and done[0] % 1000 == 0:
                        progress(done[0], len(work))
            except Exception as exc:  # noqa: BLE001 - reported to the caller
                errors.append(f"{name}: {exc}")
                return

    threads = [threading.Thread(target=worker) for _ in range(workers)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    elapsed = time.monotonic() - started
    if errors:
        raise RuntimeError(f"workload failed: {errors[:3]}")
    return {"items": len(work), "ids": ids, "elapsed_seconds": elapsed,
            "base_url": base_url}


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--server", required=True)
    parser.add_argument("--secret", default="root")
    parser.add_argument("--supermodules", type=int, default=10)
    parser.add_argument("--modules", type=int, default=10)
    parser.add_argument("--subs", type=int, default=10)
    parser.add_argument("--crystals", type=int, default=9)
    parser.add_argument("--workers", type=int, default=8)
    args = parser.parse_args()

    def progress(done, total):
        print(f"  {done}/{total} items", file=sys.stderr)

    report = run_workload(args.server, args.secret, args.supermodules,
                          args.modules, args.subs, args.crystals,
                          args.workers, progress)
    report.pop("ids")
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Administrator and maintainer command line.

Remote subcommands are pure wire-API clients (server address and token
come from --server/--token or ITEMFLOW_SERVER / ITEMFLOW_TOKEN); only
`serve` and `bootstrap` touch a store directly and import the kernel
lazily. `--json` switches every subcommand to stable machine-parseable
output (one JSON document, sorted keys).

Exit codes: 0 success, 1 remote kernel error, 2 usage error,
3 transport error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Any

from .errors import KernelError
from .wireclient import Client, WireError

EXIT_OK = 0
EXIT_REMOTE = 1
EXIT_USAGE = 2
EXIT_TRANSPORT = 3


def _client(args: argparse.Namespace) -> Client:
    server = args.server or os.environ.get("ITEMFLOW_SERVER", "http://127.0.0.1:8137")
    token = args.token or os.environ.get("ITEMFLOW_TOKEN")
    return Client(server, token=token)


def _emit(args: argparse.Namespace, machine: Any, human: str) -> None:
    if args.json:
        print(json.dumps(machine, sort_keys=True, indent=2))
    else:
        print(human)


def _split_type_version(ref: str) -> tuple[str, str]:
    if "@" in ref:
        name, _, version = ref.partition("@")
        return name, version
    return ref, "last"


# --- local subcommands ---------------------------------------------------------

def cmd_serve(args: argparse.Namespace) -> int:
    from .execution import Kernel
    from .server import serve
    from .storage import FileStore

    store = FileStore(args.store, fsync=not args.no_fsync)
    kernel = Kernel(store)
    if args.bootstrap:
        from .bootstrap import bootstrap
        report = bootstrap(store, root_secret=args.root_secret, kernel=kernel)
        print(f"bootstrap: {report['status']} ({report['items']} items)",
              file=sys.stderr)
    httpd = serve(kernel, host=args.host, port=args.port, verbose=args.verbose)
    print(f"serving {args.store} on http://{args.host}:{httpd.server_address[1]}",
          file=sys.stderr, flush=True)
    try:
        httpd.serve_forever()
    except KeyboardInterrupt:
        pass
    return EXIT_OK


def cmd_bootstrap(args: argparse.Namespace) -> int:
    from .bootstrap import bootstrap
    from .storage import FileStore

    store = FileStore(args.store, fsync=not args.no_fsync)
    try:
        report = bootstrap(store, root_secret=args.root_secret)
    except KernelError as exc:
        print(f"error: {exc.code}: {exc.message}", file=sys.stderr)
        return EXIT_REMOTE
    _emit(args, report,
          f"{report['status']}: {report['items']} bootstrap items, "
          f"{report['versions_added']} versions written")
    return EXIT_OK


# --- remote subcommands -----------------------------------------------------------

def cmd_login(args: argparse.Namespace) -> int:
    client = _client(args)
    payload = client.login(args.agent, args.secret)
    _emit(args, {"token": payload["token"], "agent_id": payload["agent_id"]},
          payload["token"])
    return EXIT_OK


def cmd_import(args: argparse.Namespace) -> int:
    client = _client(args)
    with open(args.file, "rb") as fh:
        report = client.import_descriptions(fh.read())
    human = "\n".join(
        f"{e['kind']:<10} {e['name']:<30} "
        f"{'created' if e['created'] else 'present'} +{e['versions_added']}"
        for e in report)
    _emit(args, report, human or "nothing to import")
    return EXIT_OK


def cmd_export(args: argparse.Namespace) -> int:
    client = _client(args)
    type_name, version = _split_type_version(args.type)
    data = client.export_descriptions(type_name, version)
    with open(args.file, "wb") as fh:
        fh.write(data)
    _emit(args, {"file": args.file, "bytes": len(data)},
          f"wrote {len(data)} bytes to {args.file}")
    return EXIT_OK


def cmd_new_item(args: argparse.Namespace) -> int:
    client = _client(args)
    type_name, version = _split_type_version(args.type)
    properties = {}
    for assignment in args.set or []:
        key, _, value = assignment.partition("=")
        properties[key] = value
    payload = client.instantiate(type_name, args.name, version, properties,
                                 request_id=client.request_id())
    _emit(args, {"id": payload["item_id"], "name": payload["name"]},
          f"{payload['name']} ({payload['item_id']})")
    return EXIT_OK


def cmd_jobs(args: argparse.Namespace) -> int:
    client = _client(args)
    jobs = client.jobs(item=args.item, prefix=args.prefix)
    human = "\n".join(
        f"{j['item_name']:<40} {j['activity']:<25} {j['transition']:<10}"
        f"{(j['outcome_schema'] or [''])[0]}"
        for j in jobs)
    _emit(args, jobs, human or "no jobs")
    return EXIT_OK


def cmd_exec(args: argparse.Namespace) -> int:
    client = _client(args)
    outcome = None
    if args.outcome:
        with open(args.outcome, "r", encoding="utf-8") as fh:
            outcome = fh.read()
    payload = client.execute(args.item, args.activity, args.transition,
                             outcome=outcome, view=args.view,
                             request_id=client.request_id())
    event = payload["event"]
    _emit(args, event,
          f"event {event['id']}: {event['activity']} {event['transition']}")
    return EXIT_OK


def cmd_step(args: argparse.Namespace) -> int:
    client = _client(args)
    with open(args.payload, "r", encoding="utf-8") as fh:
        payload_doc = fh.read()
    payload = client.step(args.item, args.predefined, payload_doc,
                          request_id=client.request_id())
    event = payload["event"]
    extra = f" created={payload['created_id']}" if "created_id" in payload else ""
    _emit(args, payload, f"event {event['id']}: {event['activity']}{extra}")
    return EXIT_OK


def cmd_history(args: argparse.Namespace) -> int:
    client = _client(args)
    events = client.history(args.item)
    lines = []
    for event in events:
        line = (f"{event['id']:>4}  {event['timestamp']}  {event['agent'][:8]:<8}  "
                f"{event['activity']:<30} {event['transition']}")
        if "outcome" in event:
            ref = event["outcome"]
            line += f"  -> {ref['schema']} v{ref['version']}"
        lines.append(line)
    _emit(args, events, "\n".join(lines) or "no events")
    return EXIT_OK


def cmd_apply(args: argparse.Namespace) -> int:
    client = _client(args)
    script, version = _split_type_version(args.script)
    report = client.apply(script, args.selector, script_version=version,
                          request_id=client.request_id())
    ok = sum(1 for entry in report if entry["status"] == "ok")
    human = "\n".join(
        f"{e['item']:<36} {e['status']}"
        + (f" {e.get('code', '')}: {e.get('message', '')}" if e["status"] != "ok" else "")
        for e in report)
    _emit(args, report, f"{human}\napplied to {ok}/{len(report)} items"
          if report else "empty selection")
    return EXIT_OK


def cmd_items(args: argparse.Namespace) -> int:
    client = _client(args)
    entries = client.list_items(prefix=args.prefix, limit=args.limit)
    human = "\n".join(f"{e['name']:<50} {e['type']:<28} {e['id']}" for e in entries)
    _emit(args, entries, human or "no items")
    return EXIT_OK


def cmd_show(args: argparse.Namespace) -> int:
    client = _client(args)
    summary = client.summary(args.item)
    if args.json:
        _emit(args, summary, "")
        return EXIT_OK
    lines = [f"{summary['name']} ({summary['type']})  id={summary['id']}",
             f"history: {summary['history_length']} events", "properties:"]
    for prop in summary["properties"]:
        flag = "" if prop["mutable"] else " [fixed]"
        lines.append(f"  {prop['name']} = {prop['value']}{flag}")
    workflow = summary.get("workflow")
    if workflow:
        lines.append(f"workflow (terminal={workflow['terminal']}):")
        for path, state in sorted(workflow["states"].items()):
            marker = " *" if path in workflow["enabled"] else ""
            lines.append(f"  {path}: {state}{marker}")
    for collection in summary["collections"]:
        lines.append(f"collection {collection['name']} v{collection['version']}:")
        for slot in collection["slots"]:
            constraint = " ".join("=".join(pair) for pair in slot["constraints"])
            lines.append(f"  slot {slot['id']} [{constraint}] -> {slot['member'] or '-'}")
    print("\n".join(lines))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="itemflow",
        description="Event-sourced, description-driven workflow kernel")
    parser.add_argument("--server", help="server URL (or ITEMFLOW_SERVER)")
    parser.add_argument("--token", help="session token (or ITEMFLOW_TOKEN)")
    parser.add_argument("--json", action="store_true",
                        help="machine-parseable output")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the server on a local store")
    p.add_argument("--store", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8137)
    p.add_argument("--bootstrap", action="store_true",
                   help="bootstrap the store before serving")
    p.add_argument("--root-secret", default="root")
    p.add_argument("--no-fsync", action="store_true")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("bootstrap", help="install the meta descriptions locally")
    p.add_argument("--store", required=True)
    p.add_argument("--root-secret", default="root")
    p.add_argument("--no-fsync", action="store_true")
    p.set_defaults(fn=cmd_bootstrap)

    p = sub.add_parser("login", help="open a session, print the token")
    p.add_argument("agent")
    p.add_argument("--secret", required=True)
    p.set_defaults(fn=cmd_login)

    p = sub.add_parser("import", help="import a description exchange file")
    p.add_argument("file")
    p.set_defaults(fn=cmd_import)

    p = sub.add_parser("export", help="export a type (and closure) to a file")
    p.add_argument("type", help="TypeName or TypeName@version")
    p.add_argument("file")
    p.set_defaults(fn=cmd_export)

    p = sub.add_parser("new-item", help="instantiate an item from a type")
    p.add_argument("type", help="TypeName or TypeName@version")
    p.add_argument("name")
    p.add_argument("--set", action="append", metavar="PROP=VALUE")
    p.set_defaults(fn=cmd_new_item)

    p = sub.add_parser("jobs", help="list executable jobs for this session")
    p.add_argument("--item")
    p.add_argument("--prefix")
    p.set_defaults(fn=cmd_jobs)

    p = sub.add_parser("exec", help="execute a workflow transition")
    p.add_argument("item")
    p.add_argument("activity")
    p.add_argument("transition")
    p.add_argument("--outcome", help="XML outcome document file")
    p.add_argument("--view", help="additional view name for the outcome")
    p.set_defaults(fn=cmd_exec)

    p = sub.add_parser("step", help="execute a predefined step")
    p.add_argument("item")
    p.add_argument("predefined", help="WriteProperty | AddMemberToCollection | "
                                      "RemoveMemberFromCollection | "
                                      "CreateItemFromDescription | WriteViewpoint")
    p.add_argument("payload", help="XML payload file")
    p.set_defaults(fn=cmd_step)

    p = sub.add_parser("history", help="chronological event/outcome listing")
    p.add_argument("item")
    p.set_defaults(fn=cmd_history)

    p = sub.add_parser("apply", help="run a script over a selection of items")
    p.add_argument("script", help="ScriptName or ScriptName@version")
    p.add_argument("selector", help="/name/prefix[?Prop=value&...]")
    p.set_defaults(fn=cmd_apply)

    p = sub.add_parser("items", help="browse the directory")
    p.add_argument("--prefix", default="/")
    p.add_argument("--limit", type=int, default=0)
    p.set_defaults(fn=cmd_items)

    p = sub.add_parser("show", help="item summary")
    p.add_argument("item")
    p.set_defaults(fn=cmd_show)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.fn(args)
    except KernelError as exc:
        print(f"error: {exc.code}: {exc.message}", file=sys.stderr)
        return EXIT_REMOTE
    except WireError as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

"""Headless operator CLI: one verb per control-plane endpoint.

    edgeorc deploy   --manifest job.json --archive job.tgz [--placement a1,a2]
    edgeorc ps       [--agent A] [--state S] [--name N]
    edgeorc kill     TASK_ID
    edgeorc restart  TASK_ID
    edgeorc logs     TASK_ID
    edgeorc agents
    edgeorc attrs    [--filter os=android ...]

Global flags: --master-addr (control-plane URL), --token, and
--output table|machine-readable (the latter prints one JSON document).
"""

from __future__ import annotations

import argparse
import json
import sys
import urllib.error
import urllib.request
import uuid

from .control_plane import encode_multipart


class CliError(Exception):
    pass


def _request(args, method: str, path: str, body: bytes = b"", content_type=None,
             request_id: "str | None" = None):
    url = args.master_addr.rstrip("/") + path
    req = urllib.request.Request(url, data=body if method == "POST" else None, method=method)
    if content_type:
        req.add_header("Content-Type", content_type)
    if args.token:
        req.add_header("Authorization", f"Bearer {args.token}")
    if request_id:
        req.add_header("X-Request-Id", request_id)
    try:
        with urllib.request.urlopen(req, timeout=30) as resp:
            payload = resp.read()
            kind = resp.headers.get("Content-Type", "")
    except urllib.error.HTTPError as exc:
        detail = exc.read().decode(errors="replace")
        try:
            detail = json.loads(detail).get("detail", detail)
        except json.JSONDecodeError:
            pass
        raise CliError(f"{exc.code}: {detail}") from exc
    except urllib.error.URLError as exc:
        raise CliError(f"cannot reach {url}: {exc.reason}") from exc
    if kind.startswith("application/json"):
        return json.loads(payload.decode())
    return payload.decode()


def _emit(args, payload, table_fn):
    if args.output == "machine-readable":
        if isinstance(payload, str):
            sys.stdout.write(payload)
        else:
            print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        table_fn(payload)


def _print_table(rows: list[dict], columns: list[str]):
    if not rows:
        print("(none)")
        return
    widths = {c: max(len(c), *(len(str(r.get(c, ""))) for r in rows)) for c in columns}
    print("  ".join(c.upper().ljust(widths[c]) for c in columns))
    for row in rows:
        print("  ".join(str(row.get(c, "") if row.get(c) is not None else "-").ljust(widths[c])
                        for c in columns))


def cmd_deploy(args):
    manifest = open(args.manifest, "rb").read()
    archive = open(args.archive, "rb").read() if args.archive else b""
    fields = {"manifest": manifest, "archive": archive}
    if args.placement:
        fields["placement"] = args.placement.encode()
    content_type, body = encode_multipart(fields)
    response = _request(
        args, "POST", "/tasks", body, content_type, request_id=args.request_id or str(uuid.uuid4())
    )
    _emit(args, response, lambda p: print("deployed:", " ".join(p["task_ids"])))


def cmd_ps(args):
    query = []
    for key in ("agent", "state", "name"):
        value = getattr(args, key)
        if value:
            query.append(f"{key}={value}")
    path = "/tasks" + ("?" + "&".join(query) if query else "")
    response = _request(args, "GET", path)
    _emit(
        args,
        response,
        lambda p: _print_table(
            p["tasks"], ["name", "task_id", "runtime", "status", "started", "stopped", "agent"]
        ),
    )


def _action(args, action: str):
    response = _request(
        args,
        "POST",
        f"/tasks/{args.task_id}/actions",
        json.dumps({"action": action}).encode(),
        "application/json",
        request_id=args.request_id or str(uuid.uuid4()),
    )
    _emit(args, response, lambda p: print(f"{action} accepted for {p['task_id']}"))


def cmd_kill(args):
    _action(args, "kill")


def cmd_restart(args):
    _action(args, "restart")


def cmd_logs(args):
    response = _request(args, "GET", f"/tasks/{args.task_id}/logs")
    sys.stdout.write(response if isinstance(response, str) else str(response))


def cmd_agents(args):
    response = _request(args, "GET", "/agents")
    _emit(
        args,
        response,
        lambda p: _print_table(
            p["agents"],
            ["agent_id", "gateway_id", "liveness", "cpus", "mem_mb", "allocated_cpus"],
        ),
    )


def cmd_attrs(args):
    query = "&".join(f.replace("=", "=", 1) for f in (args.filter or []))
    path = "/attributes" + ("?" + query if query else "")
    response = _request(args, "GET", path)

    def table(p):
        for name, values in p["attributes"].items():
            print(f"{name}: {', '.join(str(v) for v in values)}")

    _emit(args, response, table)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="edgeorc", description=__doc__.splitlines()[0])
    parser.add_argument("--master-addr", default="http://127.0.0.1:8700",
                        help="control-plane base URL")
    parser.add_argument("--token", default=None, help="bearer token for mutations")
    parser.add_argument("--output", choices=["table", "machine-readable"], default="table")
    parser.add_argument("--request-id", default=None, help="idempotency key for mutations")
    sub = parser.add_subparsers(dest="command", required=True)

    deploy = sub.add_parser("deploy", help="submit a manifest + archive")
    deploy.add_argument("--manifest", required=True)
    deploy.add_argument("--archive", default=None)
    deploy.add_argument("--placement", default=None, help="comma-separated agent ids")
    deploy.set_defaults(fn=cmd_deploy)

    ps = sub.add_parser("ps", help="list tasks")
    ps.add_argument("--agent", default=None)
    ps.add_argument("--state", default=None)
    ps.add_argument("--name", default=None)
    ps.set_defaults(fn=cmd_ps)

    for verb, fn in (("kill", cmd_kill), ("restart", cmd_restart), ("logs", cmd_logs)):
        p = sub.add_parser(verb, help=f"{verb} a task")
        p.add_argument("task_id")
        p.set_defaults(fn=fn)

    agents = sub.add_parser("agents", help="list registered agents")
    agents.set_defaults(fn=cmd_agents)

    attrs = sub.add_parser("attrs", help="list device attributes")
    attrs.add_argument("--filter", action="append", default=None, metavar="NAME=VALUE")
    attrs.set_defaults(fn=cmd_attrs)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

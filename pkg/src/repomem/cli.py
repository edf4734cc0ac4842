"""Command-line surface: a thin client of the HTTP service.

Without ``--server`` the service app is mounted in-process, so every command
works offline; with ``--server URL`` the same requests go over the wire.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import httpx

from .config import ABLATION_FLAGS, apply_overrides, load_config


class ServiceClient:
    """HTTP client for the service, remote or mounted in-process."""

    def __init__(self, server: str | None):
        if server:
            self._client = httpx.Client(base_url=server, timeout=600.0)
        else:
            import warnings

            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DeprecationWarning)
                from fastapi.testclient import TestClient

            from .service import create_app

            self._client = TestClient(create_app())

    def request(self, method: str, path: str, **kwargs) -> dict:
        response = self._client.request(method, path, **kwargs)
        if response.status_code >= 400:
            try:
                detail = response.json().get("detail", response.text)
            except ValueError:
                detail = response.text
            raise SystemExit(f"error ({response.status_code}): {detail}")
        return response.json()

    def post(self, route: str, payload: dict) -> dict:
        return self.request("POST", route, json=payload)

    def get(self, route: str, **params) -> dict:
        return self.request("GET", route, params=params)


def _config_payload(args) -> dict:
    """Resolve config file plus CLI overrides into a service config payload."""
    config = load_config(args.config)
    config = apply_overrides(config, ablate=args.ablate or (), mock_script=args.mock_script)
    return config.to_dict()


def cmd_index(client: ServiceClient, args) -> int:
    result = client.post("/index", {"root": str(Path(args.root).resolve()), "include_globs": args.glob})
    for block in result["blocks"]:
        print(json.dumps(block, ensure_ascii=False, sort_keys=True))
    for skipped in result["skipped"]:
        print(f"# skipped {skipped['path']}: {skipped['reason']}", file=sys.stderr)
    return 0


def cmd_replay(client: ServiceClient, args) -> int:
    payload = {
        "bench": args.bench,
        "data": str(Path(args.data).resolve()),
        "out": str(Path(args.out).resolve()),
        "repo_base": str(Path(args.repo_base).resolve()) if args.repo_base else None,
        "copy_repos": not args.in_place,
        "config": _config_payload(args),
    }
    result = client.post("/replay", payload)
    print(result["table"])
    print(f"\ntranscripts and report written to {args.out}")
    return 0


def cmd_eval(client: ServiceClient, args) -> int:
    result = client.post("/eval", {"transcripts": str(Path(args.transcripts).resolve())})
    print(result["table"])
    return 0


def cmd_inspect(client: ServiceClient, args) -> int:
    result = client.get("/stores/inspect", path=str(Path(args.store).resolve()))
    print(result["text"])
    return 0


def cmd_chat(client: ServiceClient, args) -> int:
    session = client.post(
        "/sessions",
        {
            "repo_root": str(Path(args.repo).resolve()),
            "target": args.target,
            "config": _config_payload(args),
        },
    )
    session_id = session["session_id"]
    print(f"session {session_id} over {session['repo_root']} "
          f"({len(session['memory_namespaces'])} blocks in memory)")
    print("enter instructions; :save <path> to snapshot, :quit to exit")
    while True:
        try:
            line = input("> ").strip()
        except EOFError:
            break
        if not line:
            continue
        if line in (":quit", ":q"):
            break
        if line.startswith(":save"):
            _, _, path = line.partition(" ")
            client.post(f"/sessions/{session_id}/save", {"path": str(Path(path.strip()).resolve())})
            print(f"saved to {path.strip()}")
            continue
        record = client.post(f"/sessions/{session_id}/rounds", {"instruction": line})
        print(f"\n--- round {record['round']} "
              f"(decision: {record['decision']['mode']}) ---")
        print(record["final_code"])
        if record["conflicts"]:
            print("\nconflicts detected and regenerated:")
            for conflict in record["conflicts"]:
                for node in conflict["nodes"]:
                    print(f"  block {conflict['block_id']}: [{node['type']}] {node['block']}")
        print(f"\nretained context: {', '.join(record['retained']) or '(none)'}\n")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="repomem", description=__doc__)
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument(
        "--ablate",
        action="append",
        choices=ABLATION_FLAGS,
        help="disable a memory component (repeatable)",
    )
    parser.add_argument("--mock-script", help="scripted gateway responses (JSON file)")
    parser.add_argument("--server", help="service base URL; default runs in-process")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index", help="index a repository and print its block manifest")
    p.add_argument("root")
    p.add_argument("--glob", action="append", default=None, help="include glob (repeatable)")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("replay", help="replay a benchmark file and report metrics")
    p.add_argument("--bench", required=True, choices=["codeif", "codereval"])
    p.add_argument("--data", required=True, help="line-delimited JSON records")
    p.add_argument("--out", required=True, help="output directory for transcripts")
    p.add_argument("--repo-base", help="directory containing task repositories")
    p.add_argument("--in-place", action="store_true", help="run against task repos without copying")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("chat", help="interactive session over a repository")
    p.add_argument("--repo", required=True)
    p.add_argument("--target", help="target function namespace")
    p.set_defaults(func=cmd_chat)

    p = sub.add_parser("eval", help="recompute metrics from stored transcripts")
    p.add_argument("--transcripts", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="pretty-print a memory store")
    p.add_argument("--store", required=True)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8642)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        return cmd_serve(args)
    if args.command == "index" and args.glob is None:
        args.glob = ["**/*.py"]
    client = ServiceClient(args.server)
    return args.func(client, args)


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``dsrauth <command> ...``.

Exit codes: 0 success, 1 failed assertion or declined check, 2 usage or
configuration error, 3 corrupt actor state.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

from . import __version__
from .actors.config import EXIT_CONFIG, EXIT_CORRUPT, ConfigError, build_service, load_config, read_key, serve, write_key
from .actors.http import ActorServer, BindFailure
from .actors.persist import CorruptState
from .actors.services import IssuerService, WalletService
from .actors.transport import HttpTransport, TransportError
from .credentials import CredentialError, IssuerKey
from .datastore import DataStore, Scope, StoreError, read_csv
from .encoding import b64e, canonical_json
from .harness.runner import AssertionFailure, report_from_transcript, run_scenario
from .harness.scenario import FixtureMissing, Scenario, ScenarioError, bundled, bundled_dir
from .policy import PolicyError, load_policy
from .protocol import machines as m
from .protocol.messages import DsrResult, IssueRequest, IssueResponse, RevokeRequest, decode, encode

log = logging.getLogger("dsrauth")

EXIT_FAIL = 1


class UsageError(Exception):
    pass


def _emit(args: argparse.Namespace, data: Any, text: str) -> None:
    if args.json:
        print(json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False))
    else:
        print(text)


def parse_scope(text: str) -> Scope:
    """``all``, ``datasets:a,b`` or ``records:ds/00001,ds/00002``."""
    kind, _, rest = text.partition(":")
    ids = tuple(x for x in rest.split(",") if x)
    if kind == "all" and not ids:
        return Scope.all()
    if kind in ("datasets", "records") and ids:
        return Scope(kind, ids)
    raise UsageError(f"bad scope {text!r}; use all, datasets:a,b or records:id1,id2")


# -- keys and credentials -----------------------------------------------------


def cmd_keygen(args: argparse.Namespace) -> int:
    out = Path(args.out)
    if out.exists() and not args.force:
        raise UsageError(f"{out} exists; pass --force to overwrite")
    key = IssuerKey.generate(args.issuer_id)
    write_key(out, key)
    pub = b64e(key.public_key)
    _emit(args, {"issuer_id": args.issuer_id, "public_key": pub, "private_key": str(out)},
          f"wrote {out}\nissuer.{args.issuer_id} = {pub}")
    return 0


def cmd_issue(args: argparse.Namespace) -> int:
    if bool(args.config) == bool(args.url):
        raise UsageError("give exactly one of --config (local issuer) or --url (running issuer)")
    selection: Optional[list[str]] = args.attrs.split(",") if args.attrs else None
    if args.url:
        if selection is None:
            raise UsageError("--attrs is required with --url")
        t = HttpTransport({"issuer": args.url})
        resp = t.call("cli", "issuer", "POST", "/issue", IssueRequest(args.person, tuple(selection)))
    else:
        svc = build_service(load_config(args.config))
        if not isinstance(svc, IssuerService):
            svc = next((p for p in getattr(svc, "parts", []) if isinstance(p, IssuerService)), None)
            if svc is None:
                raise ConfigError("config does not describe an issuer")
        if selection is None:
            selection = sorted(svc.state.registry.get(args.person, {}))
            if not selection:
                raise CredentialError(f"unknown person {args.person!r}")
        raw = svc.handle("POST", "/issue", encode(IssueRequest(args.person, tuple(selection))))
        svc.close()
        status, body = raw
        resp = decode(body)
        if status != 200:
            raise CredentialError(f"{resp.error}: {resp.detail}")
    assert isinstance(resp, IssueResponse)
    wire = resp.bundle.to_wire()
    if args.out:
        Path(args.out).write_bytes(canonical_json(wire) + b"\n")
    _emit(args, wire, f"issued bundle {wire['bundle_id']} for {args.person}"
          + (f" -> {args.out}" if args.out else ""))
    return 0


def cmd_revoke(args: argparse.Namespace) -> int:
    t = HttpTransport({"issuer": args.url})
    t.call("cli", "issuer", "POST", "/revoke", RevokeRequest(args.bundle_id))
    _emit(args, {"revoked": args.bundle_id}, f"revoked {args.bundle_id}")
    return 0


# -- actors -------------------------------------------------------------------


def cmd_serve(args: argparse.Namespace) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    return serve(cfg)


def _wallet(args: argparse.Namespace) -> tuple[WalletService, ActorServer]:
    cfg = load_config(args.config)
    if cfg.kind != "wallet":
        raise ConfigError("request needs a wallet config")
    svc = build_service(cfg)
    assert isinstance(svc, WalletService)
    if svc.bundle is None:
        raise ConfigError("the wallet holds no bundle; run `dsrauth issue` and set [wallet] bundle")
    # the SP calls back into the wallet while the request is open
    server = ActorServer(svc, *cfg.listen).start()
    return svc, server


def cmd_request(args: argparse.Namespace) -> int:
    scope = parse_scope(args.scope)
    svc, server = _wallet(args)
    try:
        if args.flow == "fim" and args.via_idp:
            out = svc.initiate_via_idp(args.via_idp, args.sp, args.dsr, scope)
        else:
            out = svc.request_dsr(args.sp, args.dsr, scope, args.flow)
    finally:
        server.stop()
    if not isinstance(out, DsrResult):
        raise TransportError(f"unexpected reply {out!r}")
    wire = out.to_wire()
    text = f"{out.request_id}: {out.status}"
    if out.payload:
        text += "\n" + json.dumps(out.payload, indent=2, sort_keys=True, ensure_ascii=False)
    if svc.last_error:
        text += f"\n(wallet did not present: {svc.last_error})"
    _emit(args, wire, text)
    return 0 if out.status == "fulfilled" else EXIT_FAIL


def cmd_register(args: argparse.Namespace) -> int:
    svc, server = _wallet(args)
    try:
        svc.register_at(args.idp, args.handle)
    finally:
        server.stop()
    _emit(args, {"registered": args.handle, "idp": args.idp}, f"registered handle {args.handle} at {args.idp}")
    return 0


# -- scenarios ----------------------------------------------------------------


def _load_scenario(ref: str) -> Scenario:
    """A scenario file path, or the name of a bundled scenario (``baseline`` or ``baseline.json``)."""
    p = Path(ref)
    if p.exists() or p.parent != Path("."):
        return Scenario.load(p)
    return bundled(p.stem if p.suffix == ".json" else ref)


def cmd_scenario_run(args: argparse.Namespace) -> int:
    s = _load_scenario(args.file)
    out = Path(args.out) if args.out else Path("runs") / s.name
    try:
        report = run_scenario(s, out, transport=args.transport)
        failed = False
    except AssertionFailure as exc:
        report, failed = exc.report, True
    data = report.to_json()
    text = report.summary() + f"\nwrote {out}"
    if args.parity:
        other = "http" if args.transport == "inprocess" else "inprocess"
        twin = run_scenario(s, transport=other, strict=False)
        same = twin.transcript == report.transcript
        data["parity"] = {"transport": other, "identical": same, "sha256": twin.transcript_sha256}
        text += f"\nparity with {other}: {'identical' if same else 'DIFFERENT'}"
        failed = failed or not same
    _emit(args, data, text)
    return EXIT_FAIL if failed else 0


def cmd_scenario_report(args: argparse.Namespace) -> int:
    path = Path(args.transcript)
    if path.is_dir():
        path = path / "transcript.jsonl"
    if not path.is_file():
        raise FixtureMissing(f"no such file: {path}")
    rep = report_from_transcript(path)
    lines = [f"{path}: {rep['events']} events, sha256 {rep['sha256']}",
             "results: " + (", ".join(f"{k} {v}" for k, v in rep["results"].items()) or "none"),
             f"notifications {rep['notifications']}, distinct decline bodies {rep['distinct_decline_bodies']}"]
    lines += [f"  [{'ok' if ok else 'FAIL'}] {name}" for name, ok in rep["assertions"].items()]
    _emit(args, rep, "\n".join(lines))
    return 0 if rep["ok"] else EXIT_FAIL


def cmd_scenario_list(args: argparse.Namespace) -> int:
    items = []
    for p in sorted(bundled_dir().glob("*.json")):
        d = json.loads(p.read_text("utf-8"))
        items.append({"name": p.stem, "description": d.get("description", "")})
    _emit(args, items, "\n".join(f"{i['name']:<30} {i['description']}" for i in items))
    return 0


# -- store and policy --------------------------------------------------------


def cmd_store_ingest(args: argparse.Namespace) -> int:
    root = Path(args.store)
    store = DataStore.load(root) if (root / "datasets").is_dir() else DataStore(root)
    try:
        mapping = json.loads(Path(args.mapping).read_text("utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"mapping {args.mapping}: {exc}") from exc
    if not isinstance(mapping, dict):
        raise UsageError("mapping must map column names to attribute ids or null")
    try:
        rows = read_csv(args.csv)
    except OSError as exc:
        raise UsageError(f"cannot read {args.csv}: {exc}") from exc
    ds_id = store.ingest(rows, mapping, {"dataset_id": args.dataset_id, "description": args.description})
    store.save()
    ds = store.datasets[ds_id]
    bad = [q.to_json() for q in store.quarantine.get(ds_id, [])]
    _emit(args, {"dataset_id": ds_id, "records": len(ds.records), "quarantined": bad,
                 "sensitivity": ds.sensitivity.value},
          f"{ds_id}: {len(ds.records)} records, {len(bad)} quarantined, {ds.sensitivity.value}"
          + "".join(f"\n  row {q['row_index']} column {q['column']}: {q['reason']}" for q in bad))
    return 0


def cmd_policy_check(args: argparse.Namespace) -> int:
    policy = load_policy(args.file)
    data = policy.to_json()
    _emit(args, data, f"{args.file}: ok\n" + json.dumps(data, indent=2, sort_keys=True))
    return 0


def cmd_key_show(args: argparse.Namespace) -> int:
    key = read_key(Path(args.file), args.issuer_id)
    pub = b64e(key.public_key)
    _emit(args, {"issuer_id": args.issuer_id, "public_key": pub}, f"issuer.{args.issuer_id} = {pub}")
    return 0


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dsrauth", description="eID-authenticated data subject rights requests")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    k = sub.add_parser("keygen", help="create an issuer signing key")
    k.add_argument("--issuer-id", required=True)
    k.add_argument("--out", required=True)
    k.add_argument("--force", action="store_true")
    k.set_defaults(fn=cmd_keygen)

    ks = sub.add_parser("pubkey", help="print the public key for an issuer key file")
    ks.add_argument("file")
    ks.add_argument("--issuer-id", required=True)
    ks.set_defaults(fn=cmd_key_show)

    i = sub.add_parser("issue", help="issue a credential bundle")
    i.add_argument("--config", help="issuer config; issues locally and saves issuer state")
    i.add_argument("--url", help="base URL of a running issuer")
    i.add_argument("--person", required=True)
    i.add_argument("--attrs", help="comma-separated attribute ids (default: every registry attribute)")
    i.add_argument("--out", help="write the bundle here")
    i.set_defaults(fn=cmd_issue)

    r = sub.add_parser("revoke", help="revoke a bundle at a running issuer")
    r.add_argument("--url", required=True)
    r.add_argument("--bundle-id", required=True)
    r.set_defaults(fn=cmd_revoke)

    s = sub.add_parser("serve", help="run one actor from its config file")
    s.add_argument("config")
    s.set_defaults(fn=cmd_serve)

    q = sub.add_parser("request", help="send a DSR from a wallet config and print the result")
    q.add_argument("--config", required=True, help="wallet config")
    q.add_argument("--sp", required=True, help="SP actor id (must be in [peers])")
    q.add_argument("--flow", choices=("ssi", "fim"), default="ssi")
    q.add_argument("--dsr", choices=("access", "erasure"), default="access")
    q.add_argument("--scope", default="all")
    q.add_argument("--via-idp", help="FIM: initiate through this IdP")
    q.set_defaults(fn=cmd_request)

    g = sub.add_parser("register", help="register the wallet's bundle under a handle at an IdP")
    g.add_argument("--config", required=True)
    g.add_argument("--idp", required=True)
    g.add_argument("--handle", required=True)
    g.set_defaults(fn=cmd_register)

    sc = sub.add_parser("scenario", help="run or inspect harness scenarios")
    scs = sc.add_subparsers(dest="scenario_command", required=True)
    run = scs.add_parser("run", help="run a scenario file or a bundled scenario name")
    run.add_argument("file")
    run.add_argument("--out", help="output directory (default runs/<name>)")
    run.add_argument("--transport", choices=("inprocess", "http"), default="inprocess")
    run.add_argument("--parity", action="store_true", help="also run on the other transport and compare")
    run.set_defaults(fn=cmd_scenario_run)
    rep = scs.add_parser("report", help="summarize a written transcript")
    rep.add_argument("transcript")
    rep.set_defaults(fn=cmd_scenario_report)
    ls = scs.add_parser("list", help="list bundled scenarios")
    ls.set_defaults(fn=cmd_scenario_list)

    st = sub.add_parser("store", help="manage an SP data store")
    sts = st.add_subparsers(dest="store_command", required=True)
    ing = sts.add_parser("ingest", help="ingest a CSV file as a data set")
    ing.add_argument("--store", required=True)
    ing.add_argument("--csv", required=True)
    ing.add_argument("--mapping", required=True, help="JSON: column -> attribute id or null")
    ing.add_argument("--dataset-id", required=True)
    ing.add_argument("--description", default="")
    ing.set_defaults(fn=cmd_store_ingest)

    pol = sub.add_parser("policy", help="policy files")
    pols = pol.add_subparsers(dest="policy_command", required=True)
    chk = pols.add_parser("check", help="validate a policy file")
    chk.add_argument("file")
    chk.set_defaults(fn=cmd_policy_check)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (UsageError, ConfigError, PolicyError, ScenarioError, FixtureMissing, BindFailure) as exc:
        print(f"dsrauth: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CorruptState as exc:
        print(f"dsrauth: corrupt state: {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    except (TransportError, CredentialError, StoreError, m.ProtocolError, ValueError) as exc:
        print(f"dsrauth: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())

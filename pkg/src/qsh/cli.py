"""Operator command line.

Subcommands: ``keygen``, ``cert issue``, ``serve``, ``connect``, ``bench``,
``stats``, ``inspect``.  Exit codes: 0 success, 1 usage error, 2 crypto or
protocol failure, 3 transport failure, 4 authentication rejected; every
failure prints a one-line reason to stderr.

Each subcommand accepts ``--config <path>`` pointing at a ``key=value``
text file supplying defaults for that subcommand's long flags; values given
on the command line win.  The environment variable ``QSH_SEED`` (hex) makes
the RNG deterministic; a ``--seed`` flag overrides it where offered.
"""

from __future__ import annotations

import argparse
import sys
import time

from . import bench as bench_lib
from . import report as report_lib
from . import userstore as userstore_lib
from .capture import SessionCapture, render_dump
from .certs import (
    CertChain,
    CertificateBody,
    ValidationPolicy,
    issue,
    load_chain,
    save_chain,
)
from .channels import connect_tcp
from .errors import AuthRejected, CryptoError, ProtocolError, QshError, TransportError
from .handshake import (
    ClientSession,
    Credential,
    Mode,
    ServerConfig,
    SigningKey,
    default_sig_prefs,
    make_offer,
)
from .kem import DEFAULT_KEM, get_kem, kem_names
from .keyfiles import (
    PUBLIC_SUFFIX,
    SECRET_SUFFIX,
    read_sig_public,
    read_sig_secret,
    write_key,
    write_sig_secret,
)
from .primitives import Rng, SeededRng, SystemRng
from .server import QshServer, client_authenticate
from .sig import get_sig, sig_names

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CRYPTO = 2
EXIT_TRANSPORT = 3
EXIT_AUTH = 4

_SERIAL_LEN = 8
_SECONDS_PER_DAY = 86400


class UsageError(Exception):
    """Bad flag or config value; reported before any side effect."""


# ---------------------------------------------------------------------------
# Value parsing shared by flags and config files


def _as_int(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise UsageError(f"expected an integer, got {text!r}") from None


def _as_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"expected a boolean, got {text!r}")


def _as_list(text: str) -> list[str]:
    items = [item.strip() for item in text.split(",") if item.strip()]
    if not items:
        raise UsageError("expected a comma-separated list")
    return items


def _choice(*allowed: str):
    def convert(text: str) -> str:
        if text not in allowed:
            raise UsageError(f"expected one of {', '.join(allowed)}; got {text!r}")
        return text

    return convert


# Per-subcommand overlay tables: dest -> (converter, default, required).
# Only these keys may appear in a --config file.
_OPTION_TABLES: dict[str, dict] = {
    "keygen": {
        "alg": (str, None, True),
        "out": (str, None, True),
        "seed": (str, None, False),
    },
    "cert-issue": {
        "subject": (str, None, True),
        "issuer_chain": (str, None, False),
        "self_signed": (_as_bool, False, False),
        "classical_key": (str, None, True),
        "pq_key": (str, None, False),
        "issuer_classical_key": (str, None, False),
        "issuer_pq_key": (str, None, False),
        "ca": (_as_bool, False, False),
        "days": (_as_int, 365, False),
        "out": (str, None, True),
    },
    "serve": {
        "listen": (str, None, True),
        "chain": (str, None, True),
        "classical_key": (str, None, True),
        "pq_key": (str, None, False),
        "users": (str, None, True),
        "allow": (_as_list, None, False),
        "insecure_no_sign": (_as_bool, False, False),
        "capture": (str, None, False),
    },
    "connect": {
        "addr": (str, None, True),
        "user": (str, None, True),
        "password_file": (str, None, True),
        "root": (str, None, True),
        "policy": (_choice("classical", "pq", "hybrid"), "hybrid", False),
        "mode": (_choice("dh", "kem"), "kem", False),
        "kem": (str, None, False),
    },
    "bench": {
        "addr": (str, None, True),
        "alg": (_as_list, None, True),
        "iterations": (_as_int, None, True),
        "warmup": (_as_int, 10, False),
        "csv": (str, None, True),
        "report": (str, None, True),
        "user": (str, None, True),
        "password_file": (str, None, True),
        "root": (str, None, True),
        "policy": (_choice("classical", "pq", "hybrid"), "hybrid", False),
        "fresh_process": (_as_bool, False, False),
    },
    "stats": {
        "csv": (str, None, True),
        "sided": (_choice("one", "two"), "two", False),
    },
    "inspect": {
        "capture": (str, None, True),
    },
}


def _load_config(path: str) -> dict[str, str]:
    overlay: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep or not key.strip():
                raise UsageError(f"{path}:{line_no}: expected key=value")
            overlay[key.strip().replace("-", "_")] = value.strip()
    return overlay


def _resolve_options(args: argparse.Namespace) -> None:
    """Fill unset flags from the config file, then defaults, then enforce
    required options."""
    table = _OPTION_TABLES[args.table_key]
    overlay = _load_config(args.config) if getattr(args, "config", None) else {}
    unknown = sorted(set(overlay) - set(table))
    if unknown:
        raise UsageError(f"unknown config key(s): {', '.join(unknown)}")
    for dest, (convert, default, required) in table.items():
        value = getattr(args, dest, None)
        if value in (None, False) and dest in overlay:
            value = convert(overlay[dest])
        if value is None and default is not None:
            value = default
        if required and (value is None or value == []):
            raise UsageError(f"missing required option --{dest.replace('_', '-')}")
        setattr(args, dest, value)


# ---------------------------------------------------------------------------
# Small helpers


def _make_rng(seed_hex: str | None) -> Rng:
    import os

    seed_hex = seed_hex or os.environ.get("QSH_SEED")
    if seed_hex:
        try:
            seed = bytes.fromhex(seed_hex)
        except ValueError:
            raise UsageError(f"seed must be hex, got {seed_hex!r}") from None
        if not seed:
            raise UsageError("seed must be non-empty hex")
        return SeededRng(seed)
    return SystemRng()


def _parse_hostport(text: str) -> tuple[str, int]:
    host, sep, port_text = text.rpartition(":")
    if not sep or not host:
        raise UsageError(f"expected host:port, got {text!r}")
    try:
        port = int(port_text)
    except ValueError:
        raise UsageError(f"nonnumeric port in {text!r}") from None
    if not 0 <= port <= 65535:
        raise UsageError(f"port out of range in {text!r}")
    return host, port


def _read_password(path: str) -> str:
    with open(path, "rb") as fh:
        text = fh.read().decode("utf-8").rstrip("\r\n")
    if not text:
        raise UsageError(f"{path}: password file is empty")
    return text


def _check_kem_name(name: str) -> str:
    if name not in kem_names():
        raise UsageError(f"unknown KEM {name!r}; registered: {', '.join(kem_names())}")
    return name


def _file_signer(basename: str) -> SigningKey:
    path = basename + SECRET_SUFFIX
    secret = read_sig_secret(path)
    # persists advanced one-time-key indices across restarts
    return SigningKey(secret, on_update=lambda advanced: write_sig_secret(path, advanced))


# ---------------------------------------------------------------------------
# Subcommand bodies


def cmd_keygen(args) -> int:
    rng = _make_rng(args.seed)
    name = args.alg
    if name in kem_names():
        alg = get_kem(name)
        pair = alg.keypair(rng)
        write_key(args.out + PUBLIC_SUFFIX, alg.code, pair.public_key)
        write_key(args.out + SECRET_SUFFIX, alg.code, pair.secret_key)
    elif name in sig_names():
        alg = get_sig(name)
        pair = alg.keypair(rng)
        write_key(args.out + PUBLIC_SUFFIX, alg.code, pair.public_key)
        write_sig_secret(args.out + SECRET_SUFFIX, pair.secret)
    else:
        known = ", ".join(kem_names() + sig_names())
        raise UsageError(f"unknown algorithm {name!r}; registered: {known}")
    print(f"wrote {args.out}{PUBLIC_SUFFIX} and {args.out}{SECRET_SUFFIX} ({name})")
    return EXIT_OK


def cmd_cert_issue(args) -> int:
    if bool(args.self_signed) == bool(args.issuer_chain):
        raise UsageError("exactly one of --self-signed or --issuer-chain is required")
    rng = _make_rng(None)
    classical_alg, classical_pub = read_sig_public(args.classical_key + PUBLIC_SUFFIX)
    pq_alg = pq_pub = None
    if args.pq_key:
        pq_alg, pq_pub = read_sig_public(args.pq_key + PUBLIC_SUFFIX)

    if args.self_signed:
        issuer_name = args.subject
        issuer_certs: tuple = ()
        classical_sk_path = args.classical_key + SECRET_SUFFIX
        pq_sk_path = args.pq_key + SECRET_SUFFIX if args.pq_key else None
    else:
        if not args.issuer_classical_key:
            raise UsageError("--issuer-chain requires --issuer-classical-key")
        if pq_alg is not None and not args.issuer_pq_key:
            raise UsageError("subject carries a pq key; --issuer-pq-key is required")
        issuer_chain = load_chain(args.issuer_chain)
        issuer_name = issuer_chain.leaf.body.subject
        issuer_certs = issuer_chain.certs
        classical_sk_path = args.issuer_classical_key + SECRET_SUFFIX
        pq_sk_path = args.issuer_pq_key + SECRET_SUFFIX if args.issuer_pq_key else None

    classical_secret = read_sig_secret(classical_sk_path)
    pq_secret = read_sig_secret(pq_sk_path) if pq_sk_path and pq_alg else None

    now = int(time.time())
    body = CertificateBody(
        subject=args.subject,
        issuer=issuer_name,
        serial=rng.bytes(_SERIAL_LEN),
        not_before=now,
        not_after=now + args.days * _SECONDS_PER_DAY,
        classical_alg=classical_alg,
        classical_pub=classical_pub,
        is_ca=args.ca,
        pq_alg=pq_alg,
        pq_pub=pq_pub,
    )
    result = issue(body, classical_secret, pq_secret)
    # one-time signing keys advance; persist before publishing the cert
    write_sig_secret(classical_sk_path, result.classical_secret)
    if result.pq_secret is not None:
        write_sig_secret(pq_sk_path, result.pq_secret)
    chain = CertChain((result.cert, *issuer_certs))
    save_chain(chain, args.out)
    print(f"issued certificate for {args.subject} (chain length {len(chain.certs)}) -> {args.out}")
    return EXIT_OK


def cmd_serve(args) -> int:
    rng = _make_rng(None)
    host, port = _parse_hostport(args.listen)
    chain = load_chain(args.chain)
    store = userstore_lib.load(args.users)
    allowed = tuple(args.allow) if args.allow else tuple(kem_names())
    for name in allowed:
        _check_kem_name(name)
    config = ServerConfig(
        chain=chain,
        userstore=store,
        classical_signer=_file_signer(args.classical_key),
        pq_signer=_file_signer(args.pq_key) if args.pq_key else None,
        allowed_kems=allowed,
        sign_transcript=not args.insecure_no_sign,
    )
    if args.insecure_no_sign:
        print(
            "warning: transcript signing disabled; an active interceptor "
            "can substitute key shares and read credentials",
            file=sys.stderr,
        )
    elif not config.signable_names():
        raise UsageError("signing keys do not match the leaf certificate")
    with QshServer(host, port, config, rng, capture_path=args.capture) as server:
        print(f"listening on {host}:{server.port}", flush=True)
        try:
            while True:
                time.sleep(1)
        except KeyboardInterrupt:
            pass
    return EXIT_OK


def cmd_connect(args) -> int:
    rng = _make_rng(None)
    host, port = _parse_hostport(args.addr)
    mode = Mode(args.mode)
    kem_name = args.kem or (DEFAULT_KEM if mode is Mode.KEM else "dh-2048")
    _check_kem_name(kem_name)
    trust_root = load_chain(args.root).root
    credential = Credential(args.user, _read_password(args.password_file))
    session = ClientSession(
        offer=make_offer((kem_name,), default_sig_prefs(), {mode}, rng),
        mode=mode,
        rng=rng,
        trust_root=trust_root,
        policy=ValidationPolicy(args.policy),
    )
    channel = connect_tcp(host, port)
    try:
        result = client_authenticate(channel, session, credential)
    finally:
        channel.close()
    print(f"mode: {mode.value}")
    print(f"kem: {session.chosen_kem}")
    print(f"signature: {session.chosen_sig or 'none'}")
    print("chain: ok")
    print(f"auth: {'success' if result.success else 'failure'}")
    if not result.success:
        print("error: authentication rejected by server", file=sys.stderr)
        return EXIT_AUTH
    return EXIT_OK


def cmd_bench(args) -> int:
    rng = _make_rng(None)
    host, port = _parse_hostport(args.addr)
    algorithms = tuple(args.alg)
    for name in algorithms:
        _check_kem_name(name)
    trust_root = load_chain(args.root).root
    credential = Credential(args.user, _read_password(args.password_file))
    connect_argv: tuple[str, ...] = ()
    if args.fresh_process:
        connect_argv = (
            "connect",
            "--addr", args.addr,
            "--user", args.user,
            "--password-file", args.password_file,
            "--root", args.root,
            "--policy", args.policy,
        )
    config = bench_lib.BenchConfig(
        host=host,
        port=port,
        algorithms=algorithms,
        iterations=args.iterations,
        warmup=args.warmup,
        trust_root=trust_root,
        policy=ValidationPolicy(args.policy),
        credential=credential,
        sig_prefs=default_sig_prefs(),
        rng=rng,
        fresh_process=args.fresh_process,
        connect_argv=connect_argv,
    )
    samples = bench_lib.run_benchmark(config)
    bench_lib.export_csv(samples, args.csv)
    print(f"samples: {len(samples)} -> {args.csv}")
    bench_report = report_lib.build_report(samples, algorithms)
    for path in report_lib.export_report(bench_report, args.report, figures=True):
        print(f"wrote {path}")
    return EXIT_OK


def cmd_stats(args) -> int:
    samples = bench_lib.load_csv(args.csv)
    bench_report = report_lib.build_report(samples)
    sys.stdout.write(report_lib.render_report(bench_report))
    for pair in bench_report.pairs:
        p = pair.p_one_sided if args.sided == "one" else pair.p_two_sided
        print(f"selected {pair.alg_a} vs {pair.alg_b} {args.sided}-sided p {p:.17g}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    capture = SessionCapture.load(args.capture)
    sys.stdout.write(render_dump(capture))
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser


def _add_config_flag(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--config",
        metavar="<path>",
        help="key=value file supplying defaults for this subcommand's flags",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qsh",
        description="Crypto-agile authentication framework: classical and "
        "post-quantum key establishment side by side.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="<command>")

    p = sub.add_parser("keygen", help="generate a key pair, writing .pk and .sk files")
    p.add_argument("--alg", metavar="<id>", help="KEM or signature algorithm name")
    p.add_argument("--out", metavar="<path>", help="output basename for the key files")
    p.add_argument("--seed", metavar="<hex>", help="deterministic RNG seed")
    _add_config_flag(p)
    p.set_defaults(func=cmd_keygen, table_key="keygen")

    cert = sub.add_parser("cert", help="certificate operations")
    cert_sub = cert.add_subparsers(dest="cert_command", required=True, metavar="<operation>")
    p = cert_sub.add_parser("issue", help="issue a certificate, self-signed or under an issuer chain")
    p.add_argument("--subject", metavar="<s>", help="subject name")
    p.add_argument("--issuer-chain", metavar="<path>", help="armored chain of the issuing authority")
    p.add_argument("--self-signed", action="store_true", default=None, help="sign with the subject's own keys")
    p.add_argument("--classical-key", metavar="<p>", help="subject classical key basename")
    p.add_argument("--pq-key", metavar="<p>", help="subject post-quantum key basename")
    p.add_argument("--issuer-classical-key", metavar="<p>", help="issuer classical secret basename (with --issuer-chain)")
    p.add_argument("--issuer-pq-key", metavar="<p>", help="issuer post-quantum secret basename (with --issuer-chain)")
    p.add_argument("--ca", action="store_true", default=None, help="mark the certificate as a certification authority")
    p.add_argument("--days", metavar="<n>", type=int, help="validity window in days (default 365)")
    p.add_argument("--out", metavar="<p>", help="output path for the armored chain")
    _add_config_flag(p)
    p.set_defaults(func=cmd_cert_issue, table_key="cert-issue")

    p = sub.add_parser("serve", help="run the authentication server")
    p.add_argument("--listen", metavar="<host:port>", help="bind address")
    p.add_argument("--chain", metavar="<p>", help="armored certificate chain to present")
    p.add_argument("--classical-key", metavar="<p>", help="classical signing key basename")
    p.add_argument("--pq-key", metavar="<p>", help="post-quantum signing key basename")
    p.add_argument("--users", metavar="<p>", help="user store file")
    p.add_argument("--allow", metavar="<alg,...>", help="KEM algorithms to accept (default: all registered)")
    p.add_argument("--insecure-no-sign", action="store_true", default=None, help="disable transcript signing (vulnerable mode)")
    p.add_argument("--capture", metavar="<p>", help="record the latest session's frames to this file")
    _add_config_flag(p)
    p.set_defaults(func=cmd_serve, table_key="serve")

    p = sub.add_parser("connect", help="authenticate against a server once and report")
    p.add_argument("--addr", metavar="<host:port>", help="server address")
    p.add_argument("--user", metavar="<u>", help="user id")
    p.add_argument("--password-file", metavar="<p>", help="file holding the password")
    p.add_argument("--root", metavar="<p>", help="trust anchor file (last certificate of the armored chain)")
    p.add_argument("--policy", choices=("classical", "pq", "hybrid"), help="chain validation policy (default hybrid)")
    p.add_argument("--mode", choices=("dh", "kem"), help="key establishment flow (default kem)")
    p.add_argument("--kem", metavar="<alg>", help="KEM algorithm to offer")
    _add_config_flag(p)
    p.set_defaults(func=cmd_connect, table_key="connect")

    p = sub.add_parser("bench", help="timed handshake benchmark with statistics")
    p.add_argument("--addr", metavar="<host:port>", help="server address")
    p.add_argument("--alg", metavar="<id>", action="append", help="KEM algorithm to benchmark (repeatable)")
    p.add_argument("--iterations", metavar="<n>", type=int, help="timed handshakes per algorithm")
    p.add_argument("--warmup", metavar="<n>", type=int, help="untimed warmup handshakes (default 10)")
    p.add_argument("--csv", metavar="<p>", help="raw sample output path")
    p.add_argument("--report", metavar="<p>", help="statistics report output path")
    p.add_argument("--user", metavar="<u>", help="user id")
    p.add_argument("--password-file", metavar="<p>", help="file holding the password")
    p.add_argument("--root", metavar="<p>", help="trust anchor file")
    p.add_argument("--policy", choices=("classical", "pq", "hybrid"), help="chain validation policy (default hybrid)")
    p.add_argument("--fresh-process", action="store_true", default=None, help="spawn a new client process per handshake")
    _add_config_flag(p)
    p.set_defaults(func=cmd_bench, table_key="bench")

    p = sub.add_parser("stats", help="recompute statistics from a benchmark CSV")
    p.add_argument("--csv", metavar="<p>", help="benchmark CSV path")
    p.add_argument("--sided", choices=("one", "two"), help="which p-value to select (default two)")
    _add_config_flag(p)
    p.set_defaults(func=cmd_stats, table_key="stats")

    p = sub.add_parser("inspect", help="render a recorded session capture")
    p.add_argument("--capture", metavar="<p>", help="capture file written by serve --capture")
    _add_config_flag(p)
    p.set_defaults(func=cmd_inspect, table_key="inspect")

    return parser


def main(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        _resolve_options(args)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except AuthRejected as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_AUTH
    except TransportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except (CryptoError, ProtocolError, QshError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CRYPTO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        return EXIT_OK


def entrypoint() -> None:
    sys.exit(main(sys.argv[1:]))

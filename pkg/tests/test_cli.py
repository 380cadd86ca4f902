"""Command line: argument handling, config overlays, and the full
keygen -> issue -> serve -> connect -> bench -> inspect workflow."""

import re
import subprocess
import sys
import time

import pytest

from qsh.bench import BenchSample, export_csv, load_csv, wilcoxon_rank_sum
from qsh.certs import CertChain, save_chain
from qsh.cli import (
    EXIT_AUTH,
    EXIT_CRYPTO,
    EXIT_OK,
    EXIT_TRANSPORT,
    EXIT_USAGE,
    UsageError,
    _as_bool,
    _as_int,
    _as_list,
    _choice,
    _load_config,
    _make_rng,
    _parse_hostport,
    _read_password,
    main,
)
from qsh.keyfiles import read_key, read_sig_secret
from qsh.primitives import SeededRng
from qsh.userstore import UserStore, save as save_users

from fixtures_common import PASSWORD, USER_ID, get_identity


# ---------------------------------------------------------------------------
# pure helpers


def test_parse_hostport():
    assert _parse_hostport("127.0.0.1:8000") == ("127.0.0.1", 8000)
    assert _parse_hostport("example.test:0") == ("example.test", 0)
    for bad in ("nocolon", ":5", "host:", "host:abc", "host:70000", "host:-1"):
        with pytest.raises(UsageError):
            _parse_hostport(bad)


def test_read_password(tmp_path):
    path = tmp_path / "pw"
    path.write_bytes(b"secret phrase\n")
    assert _read_password(path) == "secret phrase"
    path.write_bytes(b"crlf secret\r\n")
    assert _read_password(path) == "crlf secret"
    path.write_bytes(b"\n")
    with pytest.raises(UsageError):
        _read_password(path)


def test_make_rng(monkeypatch):
    monkeypatch.delenv("QSH_SEED", raising=False)
    assert _make_rng(None).__class__.__name__ == "SystemRng"
    assert _make_rng("aabb").bytes(8) == SeededRng(b"\xaa\xbb").bytes(8)
    monkeypatch.setenv("QSH_SEED", "ccdd")
    assert _make_rng(None).bytes(8) == SeededRng(b"\xcc\xdd").bytes(8)
    # an explicit seed wins over the environment
    assert _make_rng("aabb").bytes(8) == SeededRng(b"\xaa\xbb").bytes(8)
    with pytest.raises(UsageError):
        _make_rng("not-hex")
    monkeypatch.setenv("QSH_SEED", "")
    assert _make_rng(None).__class__.__name__ == "SystemRng"


def test_value_converters():
    assert _as_int("42") == 42
    with pytest.raises(UsageError):
        _as_int("4.2")
    assert _as_bool("Yes") and _as_bool("1") and _as_bool("on")
    assert not (_as_bool("No") or _as_bool("0") or _as_bool("off"))
    with pytest.raises(UsageError):
        _as_bool("maybe")
    assert _as_list("a, b ,c") == ["a", "b", "c"]
    with pytest.raises(UsageError):
        _as_list(" , ")
    pick = _choice("one", "two")
    assert pick("one") == "one"
    with pytest.raises(UsageError):
        pick("three")


def test_load_config(tmp_path):
    path = tmp_path / "opts.conf"
    path.write_text("# comment\n\nalg = lwe-512\npassword-file= pw.txt \n")
    assert _load_config(path) == {"alg": "lwe-512", "password_file": "pw.txt"}
    path.write_text("broken line\n")
    with pytest.raises(UsageError):
        _load_config(path)


# ---------------------------------------------------------------------------
# argparse surface


def test_help_lists_subcommands(capsys):
    assert main(["--help"]) == EXIT_OK
    out = capsys.readouterr().out
    for name in ("keygen", "cert", "serve", "connect", "bench", "stats", "inspect"):
        assert name in out


def test_usage_errors_exit_one(capsys):
    assert main([]) == EXIT_USAGE
    assert main(["no-such-command"]) == EXIT_USAGE
    assert main(["connect", "--bogus-flag", "x"]) == EXIT_USAGE
    capsys.readouterr()
    assert main(["keygen"]) == EXIT_USAGE  # missing required options
    assert "missing required option --alg" in capsys.readouterr().err


def test_unknown_config_key_rejected(tmp_path, capsys):
    config = tmp_path / "bad.conf"
    config.write_text("alg=lwe-512\nout=somewhere\nwhatever=1\n")
    assert main(["keygen", "--config", str(config)]) == EXIT_USAGE
    assert "unknown config key(s): whatever" in capsys.readouterr().err


def test_keygen_config_overlay_and_flag_precedence(tmp_path, capsys):
    config = tmp_path / "keygen.conf"
    config.write_text(f"alg=lwe-512\nout={tmp_path}/from-config\nseed=0102\n")
    assert main(["keygen", "--config", str(config)]) == EXIT_OK
    assert (tmp_path / "from-config.pk").exists()
    assert (tmp_path / "from-config.sk").exists()

    # the command line wins over the config file
    assert main(
        ["keygen", "--config", str(config), "--out", str(tmp_path / "flag-wins")]
    ) == EXIT_OK
    assert (tmp_path / "flag-wins.pk").exists()
    capsys.readouterr()

    # same seed, same algorithm: byte-identical key material
    assert read_key(str(tmp_path / "from-config.pk")) == read_key(
        str(tmp_path / "flag-wins.pk")
    )


def test_keygen_env_seed_determinism(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("QSH_SEED", "deadbeef")
    assert main(["keygen", "--alg", "lwe-768", "--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(["keygen", "--alg", "lwe-768", "--out", str(tmp_path / "b")]) == EXIT_OK
    assert (tmp_path / "a.pk").read_bytes() == (tmp_path / "b.pk").read_bytes()
    assert (tmp_path / "a.sk").read_bytes() == (tmp_path / "b.sk").read_bytes()

    # --seed overrides the environment
    assert main(
        ["keygen", "--alg", "lwe-768", "--out", str(tmp_path / "c"), "--seed", "0b0b"]
    ) == EXIT_OK
    assert (tmp_path / "c.pk").read_bytes() != (tmp_path / "a.pk").read_bytes()
    capsys.readouterr()


def test_keygen_unknown_algorithm(tmp_path, capsys):
    assert main(["keygen", "--alg", "rot13", "--out", str(tmp_path / "x")]) == EXIT_USAGE
    assert "unknown algorithm" in capsys.readouterr().err


def test_cert_issue_usage_errors(tmp_path, capsys):
    base = ["cert", "issue", "--subject", "s", "--classical-key", "k", "--out", "o"]
    assert main(base) == EXIT_USAGE  # neither self-signed nor issuer chain
    assert main(base + ["--self-signed", "--issuer-chain", "c"]) == EXIT_USAGE
    assert main(base + ["--issuer-chain", "c"]) == EXIT_USAGE  # no issuer key
    capsys.readouterr()


def test_stats_command(tmp_path, capsys):
    samples = [BenchSample("alg-a", i, 1_000_000 + i * 1000) for i in range(20)]
    samples += [BenchSample("alg-b", i, 2_000_000 + i * 1000) for i in range(20)]
    csv_path = tmp_path / "timings.csv"
    export_csv(samples, csv_path)

    assert main(["stats", "--csv", str(csv_path)]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.startswith("handshake timing report\n")
    expected = wilcoxon_rank_sum(
        [s.duration_ns / 1e6 for s in samples[:20]],
        [s.duration_ns / 1e6 for s in samples[20:]],
    )
    assert f"selected alg-a vs alg-b two-sided p {expected.p_two_sided:.17g}" in out

    assert main(["stats", "--csv", str(csv_path), "--sided", "one"]) == EXIT_OK
    out = capsys.readouterr().out
    assert f"selected alg-a vs alg-b one-sided p {expected.p_one_sided:.17g}" in out

    assert main(["stats", "--csv", str(tmp_path / "absent.csv")]) == EXIT_USAGE


def test_inspect_missing_and_malformed(tmp_path, capsys):
    assert main(["inspect", "--capture", str(tmp_path / "absent")]) == EXIT_USAGE
    bad = tmp_path / "bad.capture"
    bad.write_text("c2s zz\n")
    assert main(["inspect", "--capture", str(bad)]) == EXIT_CRYPTO
    capsys.readouterr()


# ---------------------------------------------------------------------------
# full workflow over a live TCP server


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Keys, certificates, user store, and password files created through
    the CLI itself (plus the library for the user store)."""
    tmp = tmp_path_factory.mktemp("cli")
    runs = [
        ["keygen", "--alg", "rsa-2048-fdh", "--out", str(tmp / "root-rsa"), "--seed", "01"],
        ["keygen", "--alg", "merkle-lamport-sha256", "--out", str(tmp / "root-ml"), "--seed", "02"],
        ["keygen", "--alg", "rsa-2048-fdh", "--out", str(tmp / "leaf-rsa"), "--seed", "03"],
        ["keygen", "--alg", "merkle-lamport-sha256", "--out", str(tmp / "leaf-ml"), "--seed", "04"],
        [
            "cert", "issue", "--subject", "workflow-root", "--self-signed", "--ca",
            "--classical-key", str(tmp / "root-rsa"), "--pq-key", str(tmp / "root-ml"),
            "--out", str(tmp / "root-chain.crt"),
        ],
        [
            "cert", "issue", "--subject", "workflow-server",
            "--issuer-chain", str(tmp / "root-chain.crt"),
            "--classical-key", str(tmp / "leaf-rsa"), "--pq-key", str(tmp / "leaf-ml"),
            "--issuer-classical-key", str(tmp / "root-rsa"),
            "--issuer-pq-key", str(tmp / "root-ml"),
            "--out", str(tmp / "server-chain.crt"),
        ],
    ]
    for argv in runs:
        assert main(argv) == EXIT_OK, argv

    store = UserStore()
    store.add_user(USER_ID, PASSWORD, iterations=1000)
    save_users(store, tmp / "users.txt")
    (tmp / "pw.txt").write_text(PASSWORD + "\n")
    (tmp / "wrong-pw.txt").write_text("not the password\n")

    # an unrelated trust anchor for the rejection test
    identity = get_identity()
    save_chain(CertChain((identity.root_cert,)), tmp / "other-root.crt")
    return tmp


@pytest.fixture(scope="module")
def served(workspace):
    argv = [
        sys.executable, "-m", "qsh", "serve",
        "--listen", "127.0.0.1:0",
        "--chain", str(workspace / "server-chain.crt"),
        "--classical-key", str(workspace / "leaf-rsa"),
        "--pq-key", str(workspace / "leaf-ml"),
        "--users", str(workspace / "users.txt"),
        "--capture", str(workspace / "latest.capture"),
    ]
    proc = subprocess.Popen(
        argv, stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True
    )
    line = proc.stdout.readline()
    if not line:
        raise RuntimeError(f"server failed to start: {proc.stderr.read()}")
    match = re.search(r"listening on 127\.0\.0\.1:(\d+)", line)
    assert match, line
    try:
        yield workspace, int(match.group(1))
    finally:
        proc.terminate()
        proc.wait(timeout=10)


def _connect_argv(workspace, port, **overrides):
    options = {
        "addr": f"127.0.0.1:{port}",
        "user": USER_ID,
        "password-file": str(workspace / "pw.txt"),
        "root": str(workspace / "root-chain.crt"),
    }
    options.update(overrides)
    argv = ["connect"]
    for key, value in options.items():
        argv += [f"--{key}", value]
    return argv


def test_connect_wrong_password_exits_auth(served, capsys):
    workspace, port = served
    code = main(
        _connect_argv(workspace, port, **{"password-file": str(workspace / "wrong-pw.txt")})
    )
    captured = capsys.readouterr()
    assert code == EXIT_AUTH
    assert "auth: failure" in captured.out
    assert "authentication rejected by server" in captured.err


def test_connect_untrusted_root_exits_crypto(served, capsys):
    workspace, port = served
    code = main(_connect_argv(workspace, port, root=str(workspace / "other-root.crt")))
    captured = capsys.readouterr()
    assert code == EXIT_CRYPTO
    assert "error:" in captured.err


def test_connect_unknown_kem_exits_usage(served, capsys):
    workspace, port = served
    assert main(_connect_argv(workspace, port, kem="rot13")) == EXIT_USAGE
    assert "unknown KEM" in capsys.readouterr().err


def test_connect_unreachable_exits_transport(workspace, capsys):
    code = main(_connect_argv(workspace, 9))  # discard port: nothing listens
    assert code == EXIT_TRANSPORT
    assert "error:" in capsys.readouterr().err


def test_connect_exchange_mode(served, capsys):
    workspace, port = served
    code = main(_connect_argv(workspace, port, mode="dh"))
    captured = capsys.readouterr()
    assert code == EXIT_OK
    assert "mode: dh" in captured.out
    assert "kem: dh-2048" in captured.out


def test_connect_success_and_capture(served, capsys):
    workspace, port = served
    code = main(_connect_argv(workspace, port))
    captured = capsys.readouterr()
    assert code == EXIT_OK
    assert "mode: kem" in captured.out
    assert "kem: lwe-768" in captured.out  # the default offer
    assert "signature: rsa-2048-fdh" in captured.out
    assert "chain: ok" in captured.out
    assert "auth: success" in captured.out

    # the server wrote the latest session; render it through the CLI
    deadline = time.monotonic() + 5.0
    capture_path = workspace / "latest.capture"
    while time.monotonic() < deadline:
        if capture_path.exists() and "auth: success" in capture_path.read_text():
            break
        time.sleep(0.05)
    assert main(["inspect", "--capture", str(capture_path)]) == EXIT_OK
    dump = capsys.readouterr().out
    assert "frame 1 c2s CLIENT_HELLO" in dump
    assert "auth: success" in dump


def test_bench_command_small_run(served, capsys, tmp_path):
    workspace, port = served
    csv_path = tmp_path / "bench.csv"
    report_path = tmp_path / "bench-report.txt"
    code = main(
        [
            "bench",
            "--addr", f"127.0.0.1:{port}",
            "--alg", "lwe-512",
            "--alg", "dh-2048",
            "--iterations", "3",
            "--warmup", "1",
            "--csv", str(csv_path),
            "--report", str(report_path),
            "--user", USER_ID,
            "--password-file", str(workspace / "pw.txt"),
            "--root", str(workspace / "root-chain.crt"),
        ]
    )
    captured = capsys.readouterr()
    assert code == EXIT_OK
    assert "samples: 6" in captured.out

    samples = load_csv(csv_path)
    assert [s.algorithm for s in samples] == ["lwe-512"] * 3 + ["dh-2048"] * 3
    report_text = report_path.read_text()
    assert "algorithm lwe-512 count 3" in report_text
    assert "pair lwe-512 vs dh-2048" in report_text
    assert (tmp_path / "qq-lwe-512-vs-dh-2048.txt").exists()
    assert (tmp_path / "bench-report-hist.png").exists()
    assert (tmp_path / "bench-report-qq-lwe-512-vs-dh-2048.png").exists()


def test_serve_rejects_mismatched_signing_keys(workspace, capsys):
    # the only signing key on offer uses an algorithm the leaf certificate
    # does not carry, so no handshake could ever be signed: refuse to start
    code = main(
        [
            "serve",
            "--listen", "127.0.0.1:0",
            "--chain", str(workspace / "server-chain.crt"),
            "--classical-key", str(workspace / "root-ml"),
            "--users", str(workspace / "users.txt"),
        ]
    )
    assert code == EXIT_USAGE
    assert "signing keys do not match" in capsys.readouterr().err


def test_serve_unknown_allow_list(workspace, capsys):
    code = main(
        [
            "serve",
            "--listen", "127.0.0.1:0",
            "--chain", str(workspace / "server-chain.crt"),
            "--classical-key", str(workspace / "leaf-rsa"),
            "--users", str(workspace / "users.txt"),
            "--allow", "lwe-768,rot13",
        ]
    )
    assert code == EXIT_USAGE
    assert "unknown KEM" in capsys.readouterr().err


def test_cert_issue_advances_stateful_issuer_key(workspace):
    # issuing consumed one-time leaves: the stored root index moved past 0
    secret = read_sig_secret(str(workspace / "root-ml.sk"))
    assert secret.index == 2  # self-signed root + one leaf issued

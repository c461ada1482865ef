from __future__ import annotations

import re
import subprocess
import sys
from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import AGENT, install_builder, loopback_connector
from remote_build.cli import ENV_HOST, USAGE, main, parse_args, to_argv, usage
from remote_build.hostkeys import VerifyResult
from remote_build.transport import Endpoint, HostKeyFailure, ProxySpec

ENV = {ENV_HOST: "build1"}

# the option lines as printed in the original usage block
OPTION_LINES = """\
    -B DIR       base directory for remote Isabelle installations (default:
                 $REMOTE_BUILD_REMOTE_BASE, or if former not set ~)
    -d DIR       include session directory
    -r HOST      remote host name (default: $REMOTE_BUILD_REMOTE_HOST)
    -o OPTION    add option for remote isabelle call, e.g., -o -d -o '$ISAFOR'
    -i           incremental: only synchronize heap images that are newly
                 built on the remote host (default: synchronize all session
                 heaps together with their ancestors)
    -P PROXY     connect to remote host via proxy jump; PROXY may either be a
                 HOST or a specification HOST:PORT (default PORT: 2222)
    -v           be verbose
""".splitlines()


def squash(s: str) -> str:
    return re.sub(r"\s+", " ", s).strip()


def test_office_invocation() -> None:
    inv = parse_args(["-d", "$ISAFOR", "-o-d$ISAFOR", "CeTA"], ENV)
    assert inv.mode == "build"
    r = inv.request
    assert r.sessions == ["CeTA"]
    assert r.session_dirs == ["$ISAFOR"]
    assert r.remote_opts == ["-d$ISAFOR"]
    assert r.remote.host == "build1"
    assert r.remote_base == "~"
    assert r.proxy is None and not r.incremental and not r.verbose


def test_home_invocation_with_proxy() -> None:
    inv = parse_args(["-P", "proxy.uibk.ac.at", "-d", "$ISAFOR", "-o-d$ISAFOR", "CeTA"], ENV)
    assert inv.request.proxy == ProxySpec("proxy.uibk.ac.at", 2222)
    assert inv.request.proxy.forward_port == 2222
    assert inv.request.sessions == ["CeTA"]


def test_juxtaposed_dir_flag() -> None:
    # what the shell hands over for -d'$ISAFOR'
    assert parse_args(["-d$ISAFOR", "CeTA"], ENV).request.session_dirs == ["$ISAFOR"]


def test_split_remote_options() -> None:
    r = parse_args(["-o", "-d", "-o", "$ISAFOR", "CeTA"], ENV).request
    assert r.remote_opts == ["-d", "$ISAFOR"]


def test_usage_lines_present() -> None:
    text = usage()
    for line in OPTION_LINES:
        assert line in text, line
    assert "REMOTE_BUILD_REMOTE_HOST" in text and "REMOTE_BUILD_REMOTE_BASE" in text
    assert "default PORT: 2222" in text
    assert "incremental: only synchronize heap images" in squash(text)
    assert text.startswith("Usage: remote_build [OPTIONS] SESSIONS ...")
    assert "agent" not in text


@pytest.mark.parametrize(
    "argv,env",
    [
        ([], ENV),
        (["CeTA"], {}),
        (["-r", "h"], {}),
        (["-P", "p:x", "CeTA"], ENV),
        (["-P", "p:", "CeTA"], ENV),
        (["-x", "CeTA"], ENV),
        (["--block-size", "8", "CeTA"], ENV),
        (["--poll-interval", "zero", "CeTA"], ENV),
        (["agent"], {}),
    ],
)
def test_usage_errors(argv, env, capsys) -> None:
    assert parse_args(argv, env).mode == "usage"
    assert main(argv, env) == 2
    assert "-P PROXY" in capsys.readouterr().err


def test_empty_argv_exits_2_with_usage(capsys) -> None:
    assert main([], {}) == 2
    err = capsys.readouterr().err
    assert squash(OPTION_LINES[0]) in squash(err)


def test_help(capsys) -> None:
    assert main(["--help"], {}) == 0
    assert "--poll-interval" in capsys.readouterr().out


def test_agent_mode() -> None:
    inv = parse_args(["agent", "~/heaps"], {})
    assert inv.mode == "agent" and inv.agent_root == "~/heaps"


def test_flag_beats_env() -> None:
    env = {ENV_HOST: "envhost", "REMOTE_BUILD_REMOTE_BASE": "/env/base"}
    r = parse_args(["-r", "flaghost", "-B", "/flag", "A"], env).request
    assert (r.remote.host, r.remote_base) == ("flaghost", "/flag")
    r = parse_args(["A"], env).request
    assert (r.remote.host, r.remote_base) == ("envhost", "/env/base")


def test_settings_file(tmp_path) -> None:
    f = tmp_path / "settings"
    f.write_text('# mine\nREMOTE_BUILD_REMOTE_HOST="sethost"\nexport REMOTE_BUILD_REMOTE_BASE="/s b"\nISABELLE_HOME_USER=/u\n')
    r = parse_args(["--settings", str(f), "A"], {}).request
    inv = parse_args(["--settings", str(f), "A"], {})
    assert (r.remote.host, r.remote_base) == ("sethost", "/s b")
    assert inv.config.local_root == Path("/u/heaps")
    assert parse_args(["--settings", str(f), "A"], ENV).request.remote.host == "build1"


def test_long_options(tmp_path) -> None:
    inv = parse_args(
        ["--poll-interval", "0.5", "--block-size", "4096", "--local-root", str(tmp_path), "--identity", "k1",
         "--identity", "k2", "--agent-command", "python3 -m remote_build agent", "--sync-concurrency", "3", "A"],
        ENV,
    )
    c = inv.config
    assert (c.poll_interval, c.block_size, c.local_root, c.sync_concurrency) == (0.5, 4096, tmp_path, 3)
    assert c.identity_files == ["k1", "k2"]
    assert c.agent_command == ("python3", "-m", "remote_build", "agent")


def test_local_root_default_from_env() -> None:
    inv = parse_args(["A"], {**ENV, "ISABELLE_HOME_USER": "/home/me/.isabelle/Isabelle2017"})
    assert inv.config.local_root == Path("/home/me/.isabelle/Isabelle2017/heaps")


names = st.from_regex(r"[A-Za-z][A-Za-z0-9_]{0,8}", fullmatch=True)
words = st.text(st.characters(blacklist_categories=("Cs",), blacklist_characters="\0"), min_size=1, max_size=10)


@given(
    st.lists(names, min_size=1, max_size=3),
    st.lists(words, max_size=3),
    st.lists(words, max_size=3),
    st.booleans(),
    st.booleans(),
    st.one_of(st.none(), st.builds(ProxySpec, names, st.integers(1, 65535))),
    words,
)
def test_round_trip(sessions, dirs, opts, incremental, verbose, proxy, base) -> None:
    from remote_build.orchestrator import BuildRequest

    req = BuildRequest(sessions, Endpoint("h", user="u"), dirs, base, opts, incremental, proxy, verbose)
    again = parse_args(to_argv(req), {}).request
    assert again == req


@given(st.lists(st.text(max_size=8), max_size=6), st.dictionaries(st.sampled_from([ENV_HOST, "REMOTE_BUILD_REMOTE_BASE"]), st.text(max_size=8)))
def test_parse_is_total(argv, env) -> None:
    assert parse_args(argv, env).mode in ("build", "agent", "usage")


# exit codes


def test_main_ok_and_build_failure(remote_home, local_root) -> None:
    common = ["-r", "tester@build1", "--local-root", str(local_root), "--poll-interval", "0.2",
              "--agent-command", " ".join(AGENT)]
    install_builder(remote_home, [{"op": "write", "name": "A", "size": 1000}])
    assert main([*common, "A"], {}, connector=loopback_connector(remote_home)) == 0
    assert (local_root / "A").exists()
    install_builder(remote_home, [{"op": "exit", "code": 1}])
    assert main([*common, "A"], {}, connector=loopback_connector(remote_home)) == 1


def test_main_sync_failure(remote_home, local_root) -> None:
    install_builder(remote_home, [])
    argv = ["-r", "build1", "--local-root", str(local_root), "--poll-interval", "0.2", "Nothing"]
    assert main(argv, {}, connector=loopback_connector(remote_home)) == 4


def test_main_host_key_failure(capsys) -> None:
    def refuse(req, config):
        raise HostKeyFailure(VerifyResult.UNKNOWN_HOST, "build1", 22)

    assert main(["-r", "build1", "A"], {}, connector=refuse) == 3
    assert "ssh-keyscan -t rsa build1" in capsys.readouterr().err


def test_main_unexpected_error_is_mapped() -> None:
    def boom(req, config):
        raise RuntimeError("boom")

    assert main(["-r", "build1", "A"], {}, connector=boom) == 4


def test_main_missing_catalog(tmp_path) -> None:
    assert main(["-r", "build1", "-d", str(tmp_path / "none"), "A"], {}) == 2


def test_console_entry_point() -> None:
    out = subprocess.run([sys.executable, "-m", "remote_build"], capture_output=True, text=True)
    assert out.returncode == 2
    assert "Usage: remote_build" in out.stderr

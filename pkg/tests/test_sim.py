"""Modem simulator: behavior rows, crash latches, and the Nv file sandbox."""

import os

import pytest

from rilmine.sim import (
    BehaviorRow,
    IN_SERVICE,
    NvRequest,
    OUT_OF_SERVICE,
    RSP_OK,
    RSP_UNKNOWN,
    SimConfig,
    SimConfigError,
    SimWorld,
    load_sim_config,
    nv_handle,
    parse_sim_config,
)


def row(matcher, effect, prefix=False, args=()):
    return BehaviorRow(tuple(matcher), prefix, effect, args)


def world(*rows, **kw):
    return SimWorld(SimConfig(rows=list(rows), **kw))


# ---------------------------------------------------------------------------
# Row matching

def test_exact_matcher_requires_equal_length():
    r = row([1, 2, 3], "ok")
    assert r.matches(bytes([1, 2, 3]))
    assert not r.matches(bytes([1, 2]))
    assert not r.matches(bytes([1, 2, 3, 4]))


def test_prefix_matcher_accepts_longer_payloads():
    r = row([1, 2], "ok", prefix=True)
    assert r.matches(bytes([1, 2]))
    assert r.matches(bytes([1, 2, 0xFF]))
    assert not r.matches(bytes([1]))
    assert not r.matches(bytes([1, 3, 4]))


def test_wildcard_byte_matches_anything():
    r = row([1, None, 3], "ok")
    assert r.matches(bytes([1, 0x55, 3]))
    assert not r.matches(bytes([1, 0x55, 4]))


def test_first_matching_row_wins():
    w = world(row([8], "recoverable_crash", prefix=True),
              row([8, 1], "ok"))
    assert w.inject(bytes([8, 1])).state == OUT_OF_SERVICE


# ---------------------------------------------------------------------------
# Injection and latches

def test_unmatched_payload_gets_unknown_code():
    w = world(row([1], "ok"))
    r = w.inject(bytes([9]))
    assert (r.code, r.state) == (RSP_UNKNOWN, IN_SERVICE)


def test_ok_row_returns_valid_code():
    w = world(row([1], "ok"), row([2], "ok", args=(0x44,)))
    assert w.inject(bytes([1])).code == RSP_OK
    assert w.inject(bytes([2])).code == 0x44


def test_crash_rows_silence_the_modem():
    for effect in ("temporary_crash", "recoverable_crash", "permanent_crash"):
        w = world(row([7], effect))
        r = w.inject(bytes([7]))
        assert r.code is None and r.state == OUT_OF_SERVICE
        assert not r.responded


def test_out_of_service_swallows_further_commands():
    w = world(row([7], "permanent_crash"), row([1], "ok"))
    w.inject(bytes([7]))
    r = w.inject(bytes([1]))
    assert r.code is None and r.state == OUT_OF_SERVICE
    assert w.exec_count == 2


def test_latch_dominance_orders_severity():
    w = world()
    w._temporaries.append(w.tick + 100)
    assert w.active_latch() == "temporary"
    w._recoverable = True
    assert w.active_latch() == "recoverable"
    w._permanent = True
    assert w.active_latch() == "permanent"
    w.reboot()  # drops the recoverable latch only
    w._permanent = False
    assert w.active_latch() == "temporary"


def test_temporary_crash_expires_on_its_own():
    w = world(row([7], "temporary_crash"), default_recover_after=3)
    w.inject(bytes([7]))
    assert w.query_state() == OUT_OF_SERVICE
    w.advance(2)
    assert w.query_state() == OUT_OF_SERVICE
    w.advance(1)
    assert w.query_state() == IN_SERVICE


def test_temporary_duration_argument_overrides_default():
    w = world(row([7], "temporary_crash", args=(1,)), default_recover_after=50)
    w.inject(bytes([7]))
    w.advance(1)
    assert w.query_state() == IN_SERVICE


def test_reboot_clears_recoverable_but_not_permanent():
    w = world(row([1], "recoverable_crash"), row([2], "permanent_crash"))
    w.inject(bytes([1]))
    w.reboot()
    assert w.query_state() == IN_SERVICE
    w.inject(bytes([2]))
    w.reboot()
    assert w.query_state() == OUT_OF_SERVICE


def test_reboot_takes_time_so_short_temporaries_expire():
    w = world(row([7], "temporary_crash"), default_recover_after=3, reboot_ticks=6)
    w.inject(bytes([7]))
    t0 = w.tick
    w.reboot()
    assert w.tick == t0 + 6
    assert w.query_state() == IN_SERVICE


def test_reflash_clears_everything():
    w = world(row([1], "temporary_crash", args=(999,)), row([2], "permanent_crash"))
    w.inject(bytes([1]))
    w.reflash()
    assert w.query_state() == IN_SERVICE
    w.inject(bytes([2]))
    w.reflash()
    assert w.query_state() == IN_SERVICE


# ---------------------------------------------------------------------------
# Config text format

def test_config_text_round_trip():
    cfg = SimConfig(
        rows=[row([8, None, 2], "temporary_crash", args=(4,)),
              row([8], "ok", prefix=True)],
        channel="/dev/umts_ipc1", valid_codes=frozenset({0x01, 0x44}),
        default_recover_after=5, reboot_ticks=9,
        sandbox_root="/tmp/nv", dotdot_check=False, symlink_check=True,
    )
    again = parse_sim_config(cfg.to_text())
    assert again == cfg
    assert again.to_text() == cfg.to_text()


def test_config_file_loader(tmp_path):
    cfg = SimConfig(rows=[row([1], "ok")])
    path = tmp_path / "modem.simcfg"
    path.write_text(cfg.to_text())
    assert load_sim_config(str(path)) == cfg


def test_parse_rows_and_comments():
    cfg = parse_sim_config(
        "# comment\n"
        "recover_after = 7\n"
        "\n"
        "07 .. 02 * -> temporary_crash(4)\n"
        "08 -> ok(68)\n"
    )
    assert cfg.default_recover_after == 7
    assert cfg.rows == [
        BehaviorRow((0x07, None, 0x02), True, "temporary_crash", (4,)),
        BehaviorRow((0x08,), False, "ok", (68,)),
    ]


@pytest.mark.parametrize("text,msg", [
    ("zz -> ok", "bad byte"),
    ("1ff -> ok", "out of range"),
    ("* -> ok", "empty matcher"),
    ("07 -> explode", "unknown effect"),
    ("07 -> ok(3", "unclosed args"),
    ("just words", "expected key"),
    ("warp = 9", "unknown key"),
])
def test_parse_rejects_malformed_lines(text, msg):
    with pytest.raises(SimConfigError, match=msg):
        parse_sim_config(text)


# ---------------------------------------------------------------------------
# Nv file sandbox

@pytest.fixture
def sandbox(tmp_path):
    root = tmp_path / "nv"
    root.mkdir()
    (root / "imei").mkdir()
    (root / "imei" / "serial").write_bytes(b"0042")
    outside = tmp_path / "outside"
    outside.mkdir()
    (outside / "secret").write_bytes(b"keymaterial")
    os.symlink(outside, root / "esc")
    return root, outside


def _cfg(root, **kw):
    return SimConfig(sandbox_root=str(root), **kw)


def test_nv_read_and_write_inside_root(sandbox):
    root, _ = sandbox
    cfg = _cfg(root)
    assert nv_handle(cfg, NvRequest("read", "imei/serial")).data == b"0042"
    assert nv_handle(cfg, NvRequest("read", "missing")).status == "not-found"
    assert nv_handle(cfg, NvRequest("write", "imei/new", data=b"x")).status == "ok"
    assert (root / "imei" / "new").read_bytes() == b"x"


def test_nv_dotdot_is_rejected_as_substring(sandbox):
    root, _ = sandbox
    cfg = _cfg(root)
    for path in ("../secret", "a/../../secret", "weird..name"):
        res = nv_handle(cfg, NvRequest("read", path))
        assert (res.status, res.reason) == ("rejected", "dotdot")


def test_nv_default_config_follows_symlinks_out(sandbox):
    root, outside = sandbox
    cfg = _cfg(root)  # symlink_check defaults to False
    res = nv_handle(cfg, NvRequest("read", "esc/secret"))
    assert res.status == "ok" and res.data == b"keymaterial"
    assert nv_handle(cfg, NvRequest("write", "esc/leak", data=b"oops")).status == "ok"
    assert (outside / "leak").read_bytes() == b"oops"


def test_nv_symlink_check_blocks_escape(sandbox):
    root, outside = sandbox
    cfg = _cfg(root, symlink_check=True)
    res = nv_handle(cfg, NvRequest("read", "esc/secret"))
    assert (res.status, res.reason) == ("rejected", "symlink-escape")
    assert nv_handle(cfg, NvRequest("write", "esc/leak2", data=b"x")).status == "rejected"
    assert not (outside / "leak2").exists()
    # in-root traffic still works
    assert nv_handle(cfg, NvRequest("read", "imei/serial")).status == "ok"


def test_nv_error_paths(sandbox):
    root, _ = sandbox
    assert nv_handle(SimConfig(), NvRequest("read", "x")).reason == "no-sandbox-root"
    assert nv_handle(_cfg(root), NvRequest("chmod", "x")).reason == "bad-op:chmod"
    assert nv_handle(_cfg(root), NvRequest("write", "x")).reason == "write-without-data"

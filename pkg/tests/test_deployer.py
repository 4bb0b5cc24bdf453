import json
import subprocess
import sys
import zipfile

import pytest

import sample_tasks
from skyfork import deployer
from skyfork.cli import main as cli_main
from skyfork.wireformat import wrap_base64_json


def manifest_names(build):
    doc = json.loads((build / "cppless-manifest.json").read_text())
    from skyfork.codegen import cloud_name_for

    return {cloud_name_for(e["user_meta"]["identifier"]) for e in doc["entry_points"]}


def test_deploy_list_fixpoint_and_idempotence(make_emulator, serverless_build):
    emu = make_emulator(deploy=False)
    manifest, package = serverless_build / "cppless-manifest.json", serverless_build / "cppless-worker"
    first = deployer.deploy(manifest, package, emu.url)
    expected = manifest_names(serverless_build)
    assert first.created == len(expected) and first.exit_code == 0
    listed = {f["name"] for f in deployer.list_functions(emu.url)}
    assert listed == expected
    before = deployer.list_functions(emu.url)
    again = deployer.deploy(manifest, package, emu.url)
    assert (again.created, again.updated, again.unchanged) == (0, 0, len(expected))
    assert deployer.list_functions(emu.url) == before


def test_redeploy_with_new_memory_counts_update(make_emulator, serverless_build, tmp_path):
    emu = make_emulator()
    doc = json.loads((serverless_build / "cppless-manifest.json").read_text())
    for e in doc["entry_points"]:
        if e["original_function_name"] == "sample_tasks:echo":
            e["user_meta"]["memory"] = 2048
    changed = tmp_path / "m.json"
    changed.write_text(json.dumps(doc))
    summary = deployer.deploy(changed, serverless_build / "cppless-worker", emu.url)
    assert summary.updated == 1 and summary.created == 0


def test_deploy_input_errors(tmp_path, serverless_build):
    with pytest.raises(deployer.DeployError) as info:
        deployer.deploy(serverless_build / "cppless-manifest.json", tmp_path / "none", "http://127.0.0.1:1")
    assert info.value.exit_code == 2
    broken = tmp_path / "bad.json"
    broken.write_text('{"entry_points": [{"filename": 1}]}')
    with pytest.raises(deployer.DeployError) as info:
        deployer.deploy(broken, serverless_build / "cppless-worker", "http://127.0.0.1:1")
    assert info.value.exit_code == 2 and "$.entry_points[0]" in str(info.value)


def test_unreachable_backend_exit_3(serverless_build):
    code = cli_main(["deploy", "--manifest", str(serverless_build / "cppless-manifest.json"),
                     "--package", str(serverless_build / "cppless-worker"), "--backend", "http://127.0.0.1:9"])
    assert code == 3
    assert cli_main(["list", "--backend", "http://127.0.0.1:9"]) == 3


def test_partial_failure(tmp_path, serverless_build, make_emulator):
    emu = make_emulator(deploy=False)
    # a package that exists but is not executable is refused by the backend
    package = tmp_path / "worker"
    package.write_text("not a program")
    summary = deployer.deploy(serverless_build / "cppless-manifest.json", package, emu.url)
    assert summary.failed and summary.exit_code == 1


def test_package_is_deterministic(tmp_path, serverless_build):
    a = deployer.package(serverless_build / "cppless-worker", tmp_path / "a.zip")
    b = deployer.package(serverless_build / "cppless-worker", tmp_path / "b.zip")
    assert a.read_bytes() == b.read_bytes()
    with zipfile.ZipFile(a) as zf:
        names = zf.namelist()
        assert names == ["cppless-worker", "cppless-launch.json"]
        assert json.loads(zf.read("cppless-launch.json"))["binary"] == "cppless-worker"
        assert all(i.date_time == (1980, 1, 1, 0, 0, 0) for i in zf.infolist())
        assert zf.read("cppless-worker") == (serverless_build / "cppless-worker").read_bytes()


def test_package_errors(tmp_path):
    with pytest.raises(deployer.DeployError):
        deployer.package("", tmp_path / "x.zip")
    with pytest.raises(deployer.DeployError):
        deployer.package(tmp_path / "missing", tmp_path / "x.zip")
    assert cli_main(["package", "--in", str(tmp_path / "missing"), "--out", str(tmp_path / "x.zip")]) == 2


def test_invoke_debug(make_emulator, tmp_path, capsys):
    emu = make_emulator()
    payload = tmp_path / "p.json"
    payload.write_text(wrap_base64_json(sample_tasks.echo.bind(3).encode_request()))
    code = cli_main(["invoke", "--backend", emu.url, "--name", sample_tasks.echo.cloud_name,
                     "--payload", str(payload)])
    out = capsys.readouterr().out
    assert code == 0 and "X-Cpls-Cold: 1" in out and "envelope: ok" in out
    assert cli_main(["invoke", "--backend", emu.url, "--name", "cppless-unknown", "--payload", str(payload)]) == 4

    failing = tmp_path / "f.json"
    failing.write_text(wrap_base64_json(sample_tasks.explode.bind("bang").encode_request()))
    assert cli_main(["invoke", "--backend", emu.url, "--name", sample_tasks.explode.cloud_name,
                     "--payload", str(failing)]) == 0
    assert "message: " in capsys.readouterr().out


def test_invoke_malformed_payload_before_network(tmp_path):
    payload = tmp_path / "p.json"
    payload.write_text('{"data": 1}')
    # port 9 is never contacted: the payload check fails first
    assert cli_main(["invoke", "--backend", "http://127.0.0.1:9", "--name", "x", "--payload", str(payload)]) == 2
    assert cli_main(["invoke", "--backend", "http://127.0.0.1:9", "--name", "x",
                     "--payload", str(tmp_path / "absent")]) == 2


def test_exit_codes_for_status():
    assert [deployer.exit_code_for_status(s) for s in (200, 404, 429, 500, 503, 400)] == [0, 4, 5, 6, 6, 2]


def test_throttled_invoke_exit_5(tmp_path):
    from fakes import FakeBackend

    payload = tmp_path / "p.json"
    payload.write_text(wrap_base64_json(sample_tasks.echo.bind(3).encode_request()))
    with FakeBackend(responder=lambda name, attempt: 429) as backend:
        assert cli_main(["invoke", "--backend", backend.url, "--name", "x", "--payload", str(payload)]) == 5
    with FakeBackend(responder=lambda name, attempt: 500) as backend:
        assert cli_main(["invoke", "--backend", backend.url, "--name", "x", "--payload", str(payload)]) == 6


def test_module_entry_point_help():
    proc = subprocess.run([sys.executable, "-m", "skyfork", "--help"], capture_output=True, text=True, timeout=60)
    assert proc.returncode == 0
    for cmd in ("build", "deploy", "list", "package", "invoke", "emulator", "bench"):
        assert cmd in proc.stdout

# tests/test_config.py
import pytest
import yaml

from src.android_components import DEFAULT_COMPONENT_BASES, ComponentKind, detect_component_kind, parse_component_bases
from src.errors import ConfigError, HookError
from src.smali_parser import parse_class
from src.tool_hooks import HOOKS_ENV_VAR, ToolHooks, load_hooks, parse_hooks, render_command, repackage, run_hook
from src.utils.config_schema import DEFAULT_SCHEMA_PATH, load_schema, schema_defaults, validate_config
from src.utils.load_config import CONFIG_ENV_VAR, load_config, resolve_config_path
from src.utils.pipeline_helpers import merge_configs, normalize_prefix, read_prefix_file
from tests.conftest import LIB_APP


def test_missing_config_is_generated_with_schema_defaults(tmp_path):
    path = tmp_path / "config.yaml"
    config = load_config(path)
    assert path.is_file()
    assert config == schema_defaults(load_schema(DEFAULT_SCHEMA_PATH))
    assert config["log_identifier"] == "ANDROLOG"
    text = path.read_text(encoding="utf-8")
    assert "# Options: text | machine" in text
    assert yaml.safe_load(text)["granularities"] == []


def test_existing_config_gains_missing_keys_and_keeps_values(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text("log_identifier: MYTAG\nworkers: 2\n", encoding="utf-8")
    config = load_config(path)
    assert config["log_identifier"] == "MYTAG"
    assert config["workers"] == 2
    on_disk = yaml.safe_load(path.read_text(encoding="utf-8"))
    assert on_disk["report_format"] == "text"
    assert on_disk["log_identifier"] == "MYTAG"


@pytest.mark.parametrize("content, message", [
    ("workers: many\n", "'workers' should be of type integer"),
    ("report_format: html\n", "'report_format' must be one of"),
    ("- just\n- a list\n", "does not contain a mapping"),
    ("key: [unclosed\n", "Invalid YAML"),
])
def test_invalid_config(tmp_path, content, message):
    path = tmp_path / "config.yaml"
    path.write_text(content, encoding="utf-8")
    with pytest.raises(ConfigError, match=message):
        load_config(path)


def test_validate_config_ignores_unknown_and_null_keys():
    schema = {"workers": {"type": "integer"}, "flag": {"type": "bool"}}
    assert validate_config({"workers": None, "other": "x"}, schema) == []
    assert validate_config({"workers": True}, schema) == ["'workers' should be of type integer, got bool"]


def test_config_path_resolution(monkeypatch, tmp_path):
    monkeypatch.delenv(CONFIG_ENV_VAR, raising=False)
    assert resolve_config_path(None).name == "config.yaml"
    monkeypatch.setenv(CONFIG_ENV_VAR, str(tmp_path / "env.yaml"))
    assert resolve_config_path(None) == tmp_path / "env.yaml"
    assert resolve_config_path(tmp_path / "cli.yaml") == tmp_path / "cli.yaml"


def test_merge_configs():
    base = {"a": 1, "nested": {"x": 1, "y": 2}, "keep": "yes"}
    merged = merge_configs(base, {"a": 2, "nested": {"y": 3}, "keep": None})
    assert merged == {"a": 2, "nested": {"x": 1, "y": 3}, "keep": "yes"}
    assert base["nested"]["y"] == 2


@pytest.mark.parametrize("entry, prefix", [
    ("com.google.android", "Lcom/google/android/"),
    ("okhttp3", "Lokhttp3/"),
    ("Lcom/google/", "Lcom/google/"),
    ("Lcom/google/gson/Gson;", "Lcom/google/gson/Gson;"),
    ("  kotlin.  ", "Lkotlin/"),
])
def test_normalize_prefix(entry, prefix):
    assert normalize_prefix(entry) == prefix


def test_prefix_file_skips_comments():
    assert read_prefix_file(LIB_APP / "libs.txt") == ["Lokhttp3/", "Lcom/google/gson/"]


def test_component_bases_from_config():
    bases = parse_component_bases({"Lcom/acme/BaseScreen;": "activity", "Lcom/acme/Sync;": "content_provider"})
    assert bases["Lcom/acme/BaseScreen;"] is ComponentKind.ACTIVITY
    assert bases["Lcom/acme/Sync;"] is ComponentKind.CONTENT_PROVIDER
    assert len(bases) == len(DEFAULT_COMPONENT_BASES) + 2
    assert parse_component_bases({}) == DEFAULT_COMPONENT_BASES
    assert parse_component_bases(None) == DEFAULT_COMPONENT_BASES
    with pytest.raises(ConfigError):
        parse_component_bases({"not a descriptor": "Activity"})
    with pytest.raises(ConfigError):
        parse_component_bases({"Lcom/acme/X;": "Fragment"})


def test_extra_component_base_keeps_framework_detection():
    bases = parse_component_bases({"Lcom/acme/BaseScreen;": "Activity"})
    plain = parse_class(".class public Lcom/acme/Plain;\n.super Landroid/app/Activity;\n")
    custom = parse_class(".class public Lcom/acme/Custom;\n.super Lcom/acme/BaseScreen;\n")
    table = {c.descriptor: c for c in (plain, custom)}
    assert detect_component_kind(plain, table, bases) is ComponentKind.ACTIVITY
    assert detect_component_kind(custom, table, bases) is ComponentKind.ACTIVITY


def test_parse_hooks():
    hooks = parse_hooks("# tools\n"
                        "disassemble_cmd=apktool d -f -o {out} {in}\n"
                        "assemble_cmd = apktool b -o {out} {in}\n")
    assert hooks.supports_apk
    assert hooks.configured() == {"disassemble_cmd": "apktool d -f -o {out} {in}",
                                  "assemble_cmd": "apktool b -o {out} {in}"}
    assert not ToolHooks(disassemble_cmd="x {in} {out}").supports_apk


@pytest.mark.parametrize("text, message", [
    ("unpack_cmd=apktool d {in} {out}\n", "expected one of"),
    ("sign_cmd=apksigner sign {in}\n", "placeholders"),
    ("just a line\n", "expected one of"),
])
def test_invalid_hooks(text, message):
    with pytest.raises(ConfigError, match=message):
        parse_hooks(text)


def test_load_hooks_from_environment(monkeypatch, tmp_path):
    monkeypatch.delenv(HOOKS_ENV_VAR, raising=False)
    assert load_hooks(None) == ToolHooks()
    assert load_hooks(tmp_path / "missing.conf") == ToolHooks()
    monkeypatch.setenv(HOOKS_ENV_VAR, str(tmp_path / "missing.conf"))
    with pytest.raises(ConfigError):
        load_hooks(None)
    conf = tmp_path / "hooks.conf"
    conf.write_text("align_cmd=zipalign -f 4 {in} {out}\n", encoding="utf-8")
    monkeypatch.setenv(HOOKS_ENV_VAR, str(conf))
    assert load_hooks(None).align_cmd == "zipalign -f 4 {in} {out}"


def test_render_command_keeps_paths_with_spaces(tmp_path):
    source = tmp_path / "my app.apk"
    assert render_command("apktool d -o {out} {in}", source, tmp_path / "out") == \
        ["apktool", "d", "-o", str(tmp_path / "out"), str(source)]


def test_failing_hook_carries_stderr(tmp_path):
    with pytest.raises(HookError) as excinfo:
        run_hook("assemble_cmd", "sh -c 'echo boom >&2; exit 3' {in} {out}", tmp_path, tmp_path / "x.apk")
    assert excinfo.value.returncode == 3
    assert "boom" in excinfo.value.stderr


def test_missing_hook_program(tmp_path):
    with pytest.raises(HookError) as excinfo:
        run_hook("sign_cmd", "definitely-not-a-real-tool-4242 {in} {out}", tmp_path, tmp_path / "x.apk")
    assert excinfo.value.returncode is None


def test_repackage_chains_assemble_align_sign(tmp_path):
    hooks = ToolHooks(
        assemble_cmd="cp -r {in} {out}",
        align_cmd="cp -r {in} {out}",
        sign_cmd="cp -r {in} {out}",
    )
    tree = tmp_path / "tree"
    tree.mkdir()
    (tree / "classes.txt").write_text("x", encoding="utf-8")
    result = repackage(hooks, tree, tmp_path / "app-instrumented.apk")
    assert result == tmp_path / "app-instrumented.apk"
    assert (result / "classes.txt").is_file()
    assert (tmp_path / "app-instrumented.unsigned.apk").exists()
    assert (tmp_path / "app-instrumented.aligned.apk").exists()

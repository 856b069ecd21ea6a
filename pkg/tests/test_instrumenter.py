# tests/test_instrumenter.py
from dataclasses import replace

import pytest

from src.android_components import DEFAULT_COMPONENT_BASES, ComponentKind, detect_component_kind
from src.errors import AlreadyInstrumentedError, ComponentDetectionError, ConfigError, InstrumentationError
from src.instrumenter import (
    DEFAULT_LOGCHECKER_DESCRIPTOR, Granularity, InstrumentationConfig, allocate_probe_registers, find_logchecker,
    find_probes, injected_payloads, insert_probe, instrument_app, instrument_class, is_logchecker,
    probe_eligibility, register_limit, synthesize_logchecker,
)
from src.coverage_core import summarize_app
from src.smali_ir import BodyItem, BodyItemKind, Probe, ProbeKind, RegistersSpec, SmaliMethod
from src.smali_parser import load_app, parse_class, print_class
from src.utils.pipeline_helpers import read_prefix_file
from src.verifier import check_method, verify_app
from tests.conftest import LIB_APP, all_config

LOG_CALL = f"invoke-static/range {{v1 .. v1}}, {DEFAULT_LOGCHECKER_DESCRIPTOR}->log(Ljava/lang/String;)V"


def _only(*granularities: Granularity, **kwargs) -> InstrumentationConfig:
    return InstrumentationConfig(granularities=frozenset(granularities), **kwargs)


def _opcodes(method):
    return [i.opcode for i in method.instructions]


def test_method_probe_is_the_first_executed_statement(fixture_app):
    instrumented, report = instrument_app(fixture_app, _only(Granularity.METHODS))
    on_create = instrumented.get("Lcom/example/fixture/MainActivity;").method("onCreate(Landroid/os/Bundle;)V")
    first, second = on_create.instructions[:2]
    assert first.text == ('const-string v1, '
                          '"METHOD=Lcom/example/fixture/MainActivity;->onCreate(Landroid/os/Bundle;)V"')
    assert second.text == LOG_CALL
    assert on_create.registers.count == 2
    assert report.probes_inserted[ProbeKind.METHOD] == 6


def test_statement_probe_placement(fixture_app):
    instrumented, _ = instrument_app(fixture_app, _only(Granularity.STATEMENTS))
    foo = instrumented.get("Lcom/example/fixture/Helper;").method("foo(I)I")
    probe = ["const-string", "invoke-static/range"]
    assert _opcodes(foo) == (
        probe + ["if-lez"]
        + ["add-int/lit8"] + probe
        + probe + ["return"]
        + ["const/4"] + probe
        + probe + ["return"]
    )
    # the branch target label still precedes the code of the else-branch
    labels = [i for i, item in enumerate(foo.body) if item.kind is BodyItemKind.LABEL]
    assert foo.body[labels[0] + 1].text == "const/4 v0, 0x0"


def test_statement_probe_after_invoke_waits_for_move_result(fixture_app):
    instrumented, _ = instrument_app(fixture_app, _only(Granularity.STATEMENTS))
    on_create = instrumented.get("Lcom/example/fixture/MainActivity;").method("onCreate(Landroid/os/Bundle;)V")
    opcodes = _opcodes(on_create)
    invoke = opcodes.index("invoke-static")
    assert opcodes[invoke + 1] == "move-result"
    assert opcodes[invoke + 2:invoke + 6] == ["const-string", "invoke-static/range"] * 2


def test_move_result_across_try_boundary(edge_app):
    instrumented, _ = instrument_app(edge_app, _only(Granularity.STATEMENTS))
    parse = instrumented.get("Lcom/example/edge/Calculator;").method("parse(Ljava/lang/String;)I")
    body = parse.body
    invoke = next(i for i, item in enumerate(body) if item.opcode == "invoke-static"
                  and "parseInt" in item.text)
    following = [item for item in body[invoke + 1:] if item.is_instruction]
    assert following[0].opcode == "move-result"
    assert [i.text for i in body[invoke + 1:invoke + 3]] == [
        ":try_end_0", ".catch Ljava/lang/NumberFormatException; {:try_start_0 .. :try_end_0} :catch_0"]


def test_parameter_registers_shift_and_payload_keeps_original_text(edge_app):
    cfg = _only(Granularity.STATEMENTS)
    instrumented, _ = instrument_app(edge_app, cfg)
    add = instrumented.get("Lcom/example/edge/Calculator;").method("add(II)I")
    assert add.registers.count == 5
    texts = [i.text for i in add.instructions]
    assert "add-int v0, v3, v4" in texts
    assert "invoke-static {v3, v4}, Ljava/lang/Math;->max(II)I" in texts
    payloads = {site.payload for site in find_probes(add, DEFAULT_LOGCHECKER_DESCRIPTOR)}
    assert "STATEMENT=Lcom/example/edge/Calculator;->add(II)I|add-int v0, v2, v3|0" in payloads
    # .local stays on v0; it is a local below the probe register
    assert any(item.text.startswith('.local v0, "sum":I') for item in add.body)


def test_raw_parameter_reference_in_debug_directive_is_shifted():
    item = BodyItem(BodyItemKind.DIRECTIVE, '.local v3, "x":I')
    method = SmaliMethod("f", "(I)V", ("static",), RegistersSpec("registers", 4),
                         (item, BodyItem(BodyItemKind.INSTRUCTION, "return-void", 0)))
    allocated = allocate_probe_registers(method)
    assert allocated.probe_register == 3
    assert allocated.body[0].text == '.local v4, "x":I'


@pytest.mark.parametrize("signature, reason", [
    ("nibbleBound()I", "cannot encode v16"),
    ("hugeFrame()V", "exceeds const-string operand width"),
    ("straddle()V", "straddles locals and parameters"),
])
def test_ineligible_methods_are_skipped_and_reported(edge_app, signature, reason):
    cls = edge_app.get("Lcom/example/edge/WideFrame;")
    method = cls.method(signature)
    assert reason in probe_eligibility(method)
    instrumented, report = instrument_app(edge_app, _only(Granularity.METHODS))
    assert instrumented.get(cls.descriptor).method(signature).body == method.body
    skipped = {s.element: s.reason for s in report.classes_skipped}
    assert reason in skipped[f"{cls.descriptor}->{signature}"]


def test_from16_first_operand_stays_eligible(edge_app):
    roomy = edge_app.get("Lcom/example/edge/WideFrame;").method("roomy(I)I")
    assert probe_eligibility(roomy) is None


@pytest.mark.parametrize("opcode, position, limit", [
    ("move", 0, 15),
    ("move/from16", 0, 255),
    ("move/from16", 1, 65535),
    ("move/16", 0, 65535),
    ("invoke-virtual", 0, 15),
    ("invoke-virtual/range", 0, 65535),
    ("iget-object", 1, 15),
    ("sget-object", 0, 255),
    ("add-int/2addr", 1, 15),
    ("add-int", 2, 255),
    ("const-string", 0, 255),
    ("if-eqz", 0, 255),
    ("if-eq", 1, 15),
])
def test_register_limit(opcode, position, limit):
    assert register_limit(opcode, position) == limit


def test_class_probes_in_every_constructor(edge_app):
    instrumented, report = instrument_app(edge_app, _only(Granularity.CLASSES))
    strings = instrumented.get("Lcom/example/edge/Strings;")
    clinit = strings.method("<clinit>()V")
    assert find_probes(clinit, DEFAULT_LOGCHECKER_DESCRIPTOR)[0].payload == "CLASS=Lcom/example/edge/Strings;"
    assert report.probes_inserted[ProbeKind.CLASS] == 8


def test_component_probes_follow_the_superclass_chain(components_app):
    instrumented, report = instrument_app(components_app, _only(Granularity.COMPONENTS))
    home = instrumented.get("Lcom/example/comp/HomeActivity;")
    for signature in ("onPause()V", "onStart()V"):
        sites = find_probes(home.method(signature), DEFAULT_LOGCHECKER_DESCRIPTOR)
        assert [s.payload for s in sites] == ["ACTIVITY=Lcom/example/comp/HomeActivity;"]
    # static methods are not lifecycle callbacks
    assert find_probes(home.method("onStop()V"), DEFAULT_LOGCHECKER_DESCRIPTOR) == []
    assert find_probes(home.method("onEvent(Ljava/lang/String;)V"), DEFAULT_LOGCHECKER_DESCRIPTOR) == []

    sync = instrumented.get("Lcom/example/comp/SyncService;")
    assert all(find_probes(sync.method(s), DEFAULT_LOGCHECKER_DESCRIPTOR)
               for s in ("onCreate()V", "onStartCommand(Landroid/content/Intent;II)I", "onDestroy()V"))
    assert report.probes_inserted[ProbeKind.RECEIVER] == 1
    assert report.probes_inserted[ProbeKind.PROVIDER] == 5
    assert report.probes_inserted[ProbeKind.ACTIVITY] == 3


def test_component_probe_uses_the_detected_kind(components_app):
    cls = components_app.get("Lcom/example/comp/PushReceiver;")
    instrumented, report = instrument_class(cls, ComponentKind.BROADCAST_RECEIVER, _only(Granularity.COMPONENTS))
    sites = find_probes(instrumented.method("onReceive(Landroid/content/Context;Landroid/content/Intent;)V"),
                        DEFAULT_LOGCHECKER_DESCRIPTOR)
    assert [s.payload for s in sites] == ["BROADCASTRECEIVER=Lcom/example/comp/PushReceiver;"]
    assert report.probes[ProbeKind.RECEIVER] == 1


def test_cyclic_superclass_chain_is_an_error():
    first = parse_class(".class public Lcom/loop/A;\n.super Lcom/loop/B;\n")
    second = parse_class(".class public Lcom/loop/B;\n.super Lcom/loop/A;\n")
    table = {c.descriptor: c for c in (first, second)}
    with pytest.raises(ComponentDetectionError, match="Cyclic superclass chain"):
        detect_component_kind(first, table, DEFAULT_COMPONENT_BASES)


@pytest.mark.parametrize("app_fixture", ["fixture_app", "components_app", "edge_app", "lib_app"])
def test_summary_ids_are_exactly_the_injected_payloads(request, app_fixture):
    app = request.getfixturevalue(app_fixture)
    cfg = all_config()
    summary = summarize_app(app, cfg)
    instrumented, report = instrument_app(app, cfg)
    injected = injected_payloads(instrumented, report.logchecker_descriptor)
    for kind in summary.kinds:
        assert set(summary.element_ids[kind]) == injected.get(kind, set()), kind
    assert verify_app(instrumented, report.logchecker_descriptor) == []


def test_instrumented_output_reparses_to_the_same_probes(tmp_path, edge_app):
    instrumented, report = instrument_app(edge_app, all_config())
    for cls in instrumented.classes:
        (tmp_path / f"{abs(hash(cls.descriptor))}.smali").write_text(print_class(cls), encoding="utf-8")
    reloaded = load_app(tmp_path)
    assert injected_payloads(reloaded, report.logchecker_descriptor) == \
        injected_payloads(instrumented, report.logchecker_descriptor)


def test_instrumenting_twice_is_refused(fixture_app):
    instrumented, _ = instrument_app(fixture_app, all_config())
    assert find_logchecker(instrumented) == DEFAULT_LOGCHECKER_DESCRIPTOR
    with pytest.raises(AlreadyInstrumentedError) as excinfo:
        instrument_app(instrumented, all_config())
    assert excinfo.value.descriptor == DEFAULT_LOGCHECKER_DESCRIPTOR
    with pytest.raises(AlreadyInstrumentedError):
        summarize_app(instrumented, all_config())


def test_log_checker_name_collision_is_renamed(edge_app, captured):
    instrumented, report = instrument_app(edge_app, _only(Granularity.METHODS))
    assert report.logchecker_descriptor == "Lcom/androlog/LogChecker1;"
    assert is_logchecker(instrumented.get("Lcom/androlog/LogChecker1;"))
    assert not is_logchecker(instrumented.get(DEFAULT_LOGCHECKER_DESCRIPTOR))
    assert "renamed to Lcom/androlog/LogChecker1;" in captured.text
    check = instrumented.get("Lcom/example/edge/Strings;").method("fake()V")
    assert find_probes(check, "Lcom/androlog/LogChecker1;")


def test_identifier_inside_app_strings_is_escaped(edge_app):
    instrumented, report = instrument_app(edge_app, _only(Granularity.STATEMENTS))
    fake = instrumented.get("Lcom/example/edge/Strings;").method("fake()V")
    payloads = [s.payload for s in find_probes(fake, report.logchecker_descriptor)]
    assert len(payloads) == 4
    assert all("ANDROLOG" not in p for p in payloads)
    assert any("\\u0041NDROLOG" in p for p in payloads)


def test_library_classes_are_left_untouched(lib_app):
    cfg = _only(Granularity.METHODS, library_prefixes=tuple(read_prefix_file(LIB_APP / "libs.txt")),
                exclude_libraries=True)
    instrumented, report = instrument_app(lib_app, cfg)
    for descriptor in ("Lokhttp3/OkHttpClient;", "Lcom/google/gson/Gson;"):
        assert instrumented.get(descriptor) == lib_app.get(descriptor)
        assert any(s.element == descriptor and s.reason == "library class excluded" for s in report.classes_skipped)
    assert report.probes_inserted[ProbeKind.METHOD] == 2


def test_without_exclusion_libraries_are_instrumented(lib_app):
    cfg = _only(Granularity.METHODS, library_prefixes=("Lokhttp3/",))
    _, report = instrument_app(lib_app, cfg)
    assert report.probes_inserted[ProbeKind.METHOD] == 6


def test_instrumentation_is_deterministic(components_app):
    cfg = all_config(workers=1)
    one, _ = instrument_app(components_app, cfg)
    many, _ = instrument_app(components_app, replace(cfg, workers=8))
    assert [print_class(c) for c in one.classes] == [print_class(c) for c in many.classes]


def test_per_class_instrumentation_time(edge_app):
    _, report = instrument_app(edge_app, all_config())
    assert max(report.class_timings_ms.values()) < 100.0
    assert report.to_dict()["max_class_ms"] < 100.0


def test_logchecker_shape():
    checker = synthesize_logchecker("MYTAG")
    assert checker.descriptor == DEFAULT_LOGCHECKER_DESCRIPTOR
    assert {m.signature for m in checker.methods} == {
        "<clinit>()V", "<init>()V", "log(Ljava/lang/String;)V", "log(Ljava/lang/String;Ljava/lang/String;)V"}
    text = print_class(checker)
    assert 'const-string v0, "MYTAG"' in text
    assert "Landroid/util/Log;->i(Ljava/lang/String;Ljava/lang/String;)I" in text
    assert is_logchecker(checker)


@pytest.mark.parametrize("identifier", ["", "TWO WORDS", "A:B", "LINE\nBREAK", "cafe"])
def test_invalid_identifiers(identifier):
    with pytest.raises(ConfigError):
        InstrumentationConfig(identifier=identifier).validate()


def test_no_granularity_is_a_config_error():
    with pytest.raises(ConfigError):
        InstrumentationConfig(granularities=frozenset()).validate()


def test_insert_probe_requires_allocation(fixture_app):
    method = fixture_app.get("Lcom/example/fixture/Helper;").method("foo(I)I")
    probe = Probe(ProbeKind.METHOD, "METHOD=x")
    with pytest.raises(InstrumentationError):
        insert_probe(method, 0, probe)
    with pytest.raises(InstrumentationError):
        insert_probe(allocate_probe_registers(method), 999, probe)


def test_verifier_flags_a_probe_between_invoke_and_move_result(fixture_app):
    method = allocate_probe_registers(
        fixture_app.get("Lcom/example/fixture/MainActivity;").method("onCreate(Landroid/os/Bundle;)V"))
    move_result = next(i for i, item in enumerate(method.body) if item.opcode == "move-result")
    broken = insert_probe(method, move_result, Probe(ProbeKind.METHOD, "METHOD=x"))
    violations = check_method(broken, DEFAULT_LOGCHECKER_DESCRIPTOR)
    assert any("does not follow an invoke" in v for v in violations)


def test_verifier_flags_probe_register_reuse(fixture_app):
    method = allocate_probe_registers(fixture_app.get("Lcom/example/fixture/Helper;").method("foo(I)I"))
    method = insert_probe(method, 1, Probe(ProbeKind.METHOD, "METHOD=x"))
    clobber = BodyItem(BodyItemKind.INSTRUCTION, f"const/4 v{method.probe_register}, 0x0", 99)
    broken = replace(method, body=method.body + (clobber,))
    assert any("uses probe register" in v for v in check_method(broken, DEFAULT_LOGCHECKER_DESCRIPTOR))


def _static_method(descriptor: str, locals_count: int, *lines: str) -> SmaliMethod:
    body = tuple(BodyItem(BodyItemKind.INSTRUCTION, text, index) for index, text in enumerate(lines))
    return SmaliMethod("f", descriptor, ("public", "static"), RegistersSpec("locals", locals_count), body)


def test_wide_pair_across_the_last_local_is_ineligible():
    method = _static_method("(I)V", 1,
                            "const-wide/16 v0, 0x1",
                            "invoke-static {v0, v1}, Lcom/p/S;->g(J)V",
                            "return-void")
    assert "wide register pair" in probe_eligibility(method)
    assert allocate_probe_registers(method).probe_register is None


def test_wide_pair_below_the_last_local_stays_eligible():
    method = _static_method("(I)V", 2,
                            "const-wide/16 v0, 0x1",
                            "invoke-static {v0, v1}, Lcom/p/S;->g(J)V",
                            "return-void")
    assert probe_eligibility(method) is None
    allocated = insert_probe(allocate_probe_registers(method), 1, Probe(ProbeKind.STATEMENT, "STATEMENT=x"))
    assert allocated.probe_register == 2
    assert check_method(allocated, DEFAULT_LOGCHECKER_DESCRIPTOR) == []


def test_verifier_flags_a_wide_pair_over_the_probe_register():
    # What the shift would produce if the straddling pair were instrumented anyway.
    method = _static_method("(I)V", 2,
                            "const-wide/16 v0, 0x1",
                            "invoke-static {v0, v2}, Lcom/p/S;->g(J)V",
                            "return-void")
    method = replace(method, probe_register=1)
    method = insert_probe(method, 1, Probe(ProbeKind.STATEMENT, "STATEMENT=x"))
    violations = check_method(method, DEFAULT_LOGCHECKER_DESCRIPTOR)
    assert any("wide pair whose high half is probe register v1" in v for v in violations)


def test_report_anchors_every_probe_at_its_final_position(edge_app):
    instrumented, report = instrument_app(edge_app, all_config())
    assert len(report.placed) == sum(report.probes_inserted.values())
    methods = instrumented.method_table()
    for probe in report.placed:
        descriptor, mid, position = probe.anchor
        cls, method = methods[mid]
        assert cls.descriptor == descriptor
        assert method.body[position].text.startswith(f"const-string v{method.probe_register}, ")
        sites = find_probes(method, report.logchecker_descriptor)
        assert any(s.position == position and s.payload == probe.payload for s in sites)
    skipped = {s.element for s in report.classes_skipped}
    assert not any(probe.anchor[1] in skipped for probe in report.placed)

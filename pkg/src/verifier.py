# src/verifier.py
"""Structural checks an instrumented app must pass before it is written out."""

from typing import List

from src.instrumenter import MAX_PROBE_REGISTER, find_probes, is_result_producer, probe_positions, register_limit
from src.smali_ir import (
    App, SmaliMethod, instruction_registers, parse_register_list, register_index,
    register_operand_count, split_instruction, wide_register_pairs,
)


def check_method(method: SmaliMethod, logchecker: str) -> List[str]:
    """
    Violations in one method:
      - a move-result* not directly after an invoke/filled-new-array
      - a register operand the opcode cannot encode
      - a probe register above v255, or reused by a non-probe instruction
        (including as the high half of a long/double pair)
    """
    violations: List[str] = []
    locals_count = method.locals_count
    if locals_count is None or not method.has_body:
        return violations

    sites = find_probes(method, logchecker)
    probes = probe_positions(method, logchecker)
    probe_registers = {site.register for site in sites}
    for register in probe_registers:
        if register > MAX_PROBE_REGISTER:
            violations.append(f"probe register v{register} exceeds v{MAX_PROBE_REGISTER}")

    previous_opcode = None
    for position, item in enumerate(method.body):
        if not item.is_instruction:
            continue
        opcode, operands = split_instruction(item.text)
        if opcode.startswith("move-result") and not (previous_opcode and is_result_producer(previous_opcode)):
            violations.append(f"'{item.text}' at {position} does not follow an invoke "
                              f"(previous: {previous_opcode or 'none'})")
        previous_opcode = "log-checker call" if position in probes else opcode

        for slot, operand in enumerate(operands[:register_operand_count(operands)]):
            regs, _ = parse_register_list(operand)
            for reg in regs:
                index = register_index(reg, locals_count)
                if index > register_limit(opcode, slot):
                    violations.append(f"'{item.text}' at {position} names v{index}, "
                                      f"beyond v{register_limit(opcode, slot)}")

        if position not in probes and probe_registers:
            shared = probe_registers.intersection(instruction_registers(item.text, locals_count))
            if shared:
                violations.append(f"'{item.text}' at {position} uses probe register v{min(shared)}")
            high_halves = {start + 1 for start in wide_register_pairs(item.text, locals_count)}
            split_pairs = probe_registers.intersection(high_halves)
            if split_pairs:
                violations.append(f"'{item.text}' at {position} names a wide pair whose high half is "
                                  f"probe register v{min(split_pairs)}")
    return violations


def verify_app(app: App, logchecker: str) -> List[str]:
    """Every violation in the app, prefixed with its method id. The log checker itself is exempt from probe checks."""
    found: List[str] = []
    for cls, method in app.iter_methods():
        if cls.descriptor == logchecker:
            continue
        for violation in check_method(method, logchecker):
            found.append(f"{cls.descriptor}->{method.signature}: {violation}")
    return found

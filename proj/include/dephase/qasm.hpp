#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dephase/qubit_sim.hpp"
#include "dephase/sequences.hpp"

namespace dephase {

class QasmError : public std::runtime_error {
public:
    QasmError(int line, const std::string& msg)
        : std::runtime_error("line " + std::to_string(line) + ": " + msg), line_(line) {}
    int line() const { return line_; }

private:
    int line_;
};

/// OpenQASM 2.0 text for one shot of `seq` with the given per-slot phases:
/// R_x(pi/2) preparation, u1(phase) before each slot's id or +-pi pulse,
/// the closing R_x(+-pi/2) for `target`, and a measurement.
std::string emit_circuit(const PulseSequence& seq, std::span<const double> slot_phases,
                         TargetState target = TargetState::one);

struct QasmGate {
    std::string name;
    std::vector<double> params;
    int line = 0;
};

struct QasmProgram {
    int qubits = 0;
    int clbits = 0;
    std::vector<QasmGate> gates;  // single-qubit gates in program order
    int measurements = 0;
};

/// Parses the single-qubit OpenQASM 2.0 subset used by emit_circuit, with
/// arithmetic angle expressions over numbers and pi.
QasmProgram parse_qasm(const std::string& text);

struct CircuitSummary {
    int x_type_gates = 0;   // pi rotations about x
    int phase_gates = 0;    // u1
    int identity_gates = 0;
    int half_rotations = 0; // preparation and closing
    int measurements = 0;
    std::vector<double> slot_phases;  // u1 angles summed within each slot
    std::vector<int> pulse_slots;     // 1-based
    std::vector<int> pulse_signs;
};

/// Slot structure of an emitted circuit: each id or pi pulse closes a slot.
CircuitSummary summarize_circuit(const QasmProgram& program);

}  // namespace dephase

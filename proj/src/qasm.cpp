#include "dephase/qasm.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <numbers>
#include <sstream>

namespace dephase {

namespace {

constexpr double pi = std::numbers::pi;

std::string angle(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

class Parser {
public:
    explicit Parser(const std::string& text) : s_(text) {}

    QasmProgram run() {
        QasmProgram prog;
        skip();
        expect_word("OPENQASM");
        const double version = number();
        if (version != 2.0) fail("unsupported OPENQASM version");
        expect(';');
        while (skip(), pos_ < s_.size()) {
            const int line = line_;
            const std::string word = identifier();
            if (word == "include") {
                skip();
                if (peek() != '"') fail("expected file name after include");
                ++pos_;
                while (pos_ < s_.size() && s_[pos_] != '"') advance();
                if (pos_ >= s_.size()) fail("unterminated include string");
                ++pos_;
                expect(';');
            } else if (word == "qreg" || word == "creg") {
                identifier();
                expect('[');
                const int n = static_cast<int>(number());
                expect(']');
                expect(';');
                (word == "qreg" ? prog.qubits : prog.clbits) += n;
            } else if (word == "measure") {
                operand();
                skip();
                if (s_.compare(pos_, 2, "->") != 0) fail("expected '->' in measure");
                pos_ += 2;
                operand();
                expect(';');
                ++prog.measurements;
            } else if (word == "barrier") {
                operand();
                expect(';');
            } else {
                QasmGate g;
                g.name = word;
                g.line = line;
                skip();
                if (peek() == '(') {
                    ++pos_;
                    g.params.push_back(expr());
                    while (skip(), peek() == ',') {
                        ++pos_;
                        g.params.push_back(expr());
                    }
                    expect(')');
                }
                operand();
                expect(';');
                prog.gates.push_back(std::move(g));
            }
        }
        if (prog.qubits < 1) throw QasmError(line_, "no quantum register declared");
        return prog;
    }

private:
    const std::string& s_;
    std::size_t pos_ = 0;
    int line_ = 1;

    [[noreturn]] void fail(const std::string& msg) const { throw QasmError(line_, msg); }
    char peek() const { return pos_ < s_.size() ? s_[pos_] : '\0'; }
    void advance() {
        if (s_[pos_] == '\n') ++line_;
        ++pos_;
    }

    void skip() {
        for (;;) {
            while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) advance();
            if (s_.compare(pos_, 2, "//") == 0) {
                while (pos_ < s_.size() && s_[pos_] != '\n') ++pos_;
                continue;
            }
            return;
        }
    }

    void expect(char c) {
        skip();
        if (peek() != c) fail(std::string("expected '") + c + "'");
        ++pos_;
    }

    std::string identifier() {
        skip();
        const std::size_t start = pos_;
        while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_')) ++pos_;
        if (start == pos_) fail("expected identifier");
        return s_.substr(start, pos_ - start);
    }

    void expect_word(const std::string& w) {
        if (identifier() != w) fail("expected '" + w + "'");
    }

    void operand() {
        identifier();
        skip();
        if (peek() == '[') {
            ++pos_;
            number();
            expect(']');
        }
    }

    double number() {
        skip();
        const char* begin = s_.c_str() + pos_;
        char* end = nullptr;
        const double v = std::strtod(begin, &end);
        if (end == begin) fail("expected number");
        pos_ += static_cast<std::size_t>(end - begin);
        return v;
    }

    // expr := term (('+'|'-') term)*
    double expr() {
        double v = term();
        for (;;) {
            skip();
            if (peek() == '+') {
                ++pos_;
                v += term();
            } else if (peek() == '-') {
                ++pos_;
                v -= term();
            } else {
                return v;
            }
        }
    }

    // term := unary (('*'|'/') unary)*
    double term() {
        double v = unary();
        for (;;) {
            skip();
            if (peek() == '*') {
                ++pos_;
                v *= unary();
            } else if (peek() == '/') {
                ++pos_;
                v /= unary();
            } else {
                return v;
            }
        }
    }

    double unary() {
        skip();
        if (peek() == '-') {
            ++pos_;
            return -unary();
        }
        if (peek() == '+') {
            ++pos_;
            return unary();
        }
        if (peek() == '(') {
            ++pos_;
            const double v = expr();
            expect(')');
            return v;
        }
        if (std::isalpha(static_cast<unsigned char>(peek()))) {
            if (identifier() != "pi") fail("unknown symbol in expression");
            return pi;
        }
        return number();
    }
};

bool near(double a, double b) { return std::abs(a - b) <= 1e-12; }

}  // namespace

std::string emit_circuit(const PulseSequence& seq, std::span<const double> slot_phases, TargetState target) {
    seq.validate();
    if (slot_phases.size() < static_cast<std::size_t>(seq.n_slots)) {
        throw std::invalid_argument("emit_circuit: fewer phases than slots");
    }
    std::ostringstream out;
    out << "OPENQASM 2.0;\ninclude \"qelib1.inc\";\nqreg q[1];\ncreg c[1];\n";
    out << "// sequence " << seq.label << ", " << seq.n_pulses() << " pulses, " << seq.n_slots << " slots\n";
    out << "u3(pi/2,-pi/2,pi/2) q[0];\n";
    std::size_t next = 0;
    for (int j = 1; j <= seq.n_slots; ++j) {
        out << "u1(" << angle(slot_phases[static_cast<std::size_t>(j - 1)]) << ") q[0];\n";
        if (next < seq.pulse_slots.size() && seq.pulse_slots[next] == j) {
            out << (seq.pulse_signs[next] > 0 ? "u3(pi,-pi/2,pi/2) q[0];\n" : "u3(pi,pi/2,-pi/2) q[0];\n");
            ++next;
        } else {
            out << "id q[0];\n";
        }
    }
    const bool odd = seq.n_pulses() % 2 != 0;
    const bool plus = odd != (target == TargetState::one);
    out << (plus ? "u3(pi/2,-pi/2,pi/2) q[0];\n" : "u3(pi/2,pi/2,-pi/2) q[0];\n");
    out << "measure q[0] -> c[0];\n";
    return out.str();
}

QasmProgram parse_qasm(const std::string& text) { return Parser(text).run(); }

CircuitSummary summarize_circuit(const QasmProgram& program) {
    CircuitSummary out;
    out.measurements = program.measurements;
    double acc = 0.0;
    int slot = 0;
    auto close_slot = [&] {
        out.slot_phases.push_back(acc);
        acc = 0.0;
        ++slot;
    };
    for (const auto& g : program.gates) {
        if (g.name == "u1" || g.name == "rz" || g.name == "p") {
            if (g.params.size() != 1) throw QasmError(g.line, g.name + " takes one angle");
            acc += g.params[0];
            ++out.phase_gates;
        } else if (g.name == "id") {
            ++out.identity_gates;
            close_slot();
        } else if (g.name == "x") {
            ++out.x_type_gates;
            close_slot();
            out.pulse_slots.push_back(slot);
            out.pulse_signs.push_back(1);
        } else if (g.name == "u3" || g.name == "u") {
            if (g.params.size() != 3) throw QasmError(g.line, g.name + " takes three angles");
            const double theta = g.params[0];
            const double phi = g.params[1];
            const double lam = g.params[2];
            int sign = 0;
            if (near(phi, -pi / 2) && near(lam, pi / 2)) sign = 1;
            if (near(phi, pi / 2) && near(lam, -pi / 2)) sign = -1;
            if (sign == 0) throw QasmError(g.line, "u3 is not a rotation about x");
            if (near(std::abs(theta), pi)) {
                ++out.x_type_gates;
                close_slot();
                out.pulse_slots.push_back(slot);
                out.pulse_signs.push_back(theta > 0 ? sign : -sign);
            } else if (near(std::abs(theta), pi / 2)) {
                ++out.half_rotations;
            } else {
                throw QasmError(g.line, "unexpected rotation angle");
            }
        } else {
            throw QasmError(g.line, "unsupported gate '" + g.name + "'");
        }
    }
    if (acc != 0.0) throw std::runtime_error("summarize_circuit: phase gates after the last slot");
    return out;
}

}  // namespace dephase

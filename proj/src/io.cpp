#include "dephase/io.hpp"

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace dephase {

std::string format_double(double v) {
    if (v == 0.0) return "0";
    char buf[40];
    for (int prec = 15; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream ss(line);
    while (std::getline(ss, cur, ',')) out.push_back(trim(cur));
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

const Json& require_key(const Json& j, const char* key, const std::string& where) {
    if (!j.is_object() || !j.contains(key)) throw ConfigError(where + ": missing key '" + key + "'");
    return j.at(key);
}

double require_number(const Json& j, const char* key, const std::string& where) {
    const Json& v = require_key(j, key, where);
    if (!v.is_number()) throw ConfigError(where + ": key '" + key + "' must be a number");
    return v.get<double>();
}

std::vector<double> number_array(const Json& j, const char* key, const std::string& where) {
    const Json& v = require_key(j, key, where);
    if (!v.is_array()) throw ConfigError(where + ": key '" + key + "' must be an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!v[i].is_number()) {
            throw ConfigError(where + ": key '" + key + "[" + std::to_string(i) + "]' must be a number");
        }
        out.push_back(v[i].get<double>());
    }
    return out;
}

}  // namespace

int CsvTable::column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == name) return static_cast<int>(i);
    }
    return -1;
}

int CsvTable::require_column(const std::string& name) const {
    const int c = column(name);
    if (c < 0) throw ConfigError(source + ": missing column '" + name + "'");
    return c;
}

void CsvTable::fail(std::size_t row, const std::string& msg) const {
    throw ConfigError(source + ": row " + std::to_string(row + 1) + " (line " + std::to_string(lines[row]) +
                      "): " + msg);
}

double CsvTable::number(std::size_t row, int col) const {
    const std::string& cell = rows[row][static_cast<std::size_t>(col)];
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(cell.c_str(), &end);
    if (cell.empty() || *end != '\0' || errno == ERANGE || !std::isfinite(v)) {
        fail(row, "column '" + header[static_cast<std::size_t>(col)] + "' is not a finite number: '" + cell + "'");
    }
    return v;
}

long CsvTable::integer(std::size_t row, int col) const {
    const std::string& cell = rows[row][static_cast<std::size_t>(col)];
    long v = 0;
    const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (cell.empty() || res.ec != std::errc() || res.ptr != cell.data() + cell.size()) {
        fail(row, "column '" + header[static_cast<std::size_t>(col)] + "' is not an integer: '" + cell + "'");
    }
    return v;
}

CsvTable read_csv(std::istream& in, const std::string& source) {
    CsvTable t;
    t.source = source;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty() || line[0] == '#') continue;
        auto cells = split(line);
        if (t.header.empty()) {
            t.header = std::move(cells);
            continue;
        }
        if (cells.size() != t.header.size()) {
            throw ConfigError(source + ": line " + std::to_string(lineno) + ": expected " +
                              std::to_string(t.header.size()) + " fields, found " + std::to_string(cells.size()));
        }
        t.rows.push_back(std::move(cells));
        t.lines.push_back(lineno);
    }
    if (t.header.empty()) throw ConfigError(source + ": empty file, expected a header row");
    return t;
}

CsvTable read_csv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path + ": cannot open file");
    return read_csv(in, path);
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(path + ": cannot open file");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Json load_json_file(const std::string& path) {
    const std::string text = read_text_file(path);
    try {
        return Json::parse(text);
    } catch (const Json::parse_error& e) {
        // Translate the byte offset into a line number for the diagnostic.
        const std::size_t upto = std::min<std::size_t>(e.byte, text.size());
        const long line = 1 + std::count(text.begin(), text.begin() + static_cast<long>(upto), '\n');
        throw ConfigError(path + ": line " + std::to_string(line) + ": invalid JSON (" + e.what() + ")");
    }
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError(path + ": cannot open for writing");
    out << text;
    if (!out) throw ConfigError(path + ": write failed");
}

Json model_to_json(const ArmaModel& model) {
    Json j;
    j["ar"] = model.ar;
    j["ma"] = model.ma;
    j["drive_std"] = model.drive_std;
    j["sample_period_s"] = model.sample_period;
    return j;
}

ArmaModel model_from_json(const Json& j, const std::string& where) {
    ArmaModel m;
    m.ar = j.contains("ar") ? number_array(j, "ar", where) : std::vector<double>{};
    m.ma = number_array(j, "ma", where);
    m.drive_std = require_number(j, "drive_std", where);
    m.sample_period = require_number(j, "sample_period_s", where);
    try {
        m.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(where + ": " + e.what());
    }
    return m;
}

Json sequence_to_json(const PulseSequence& seq) {
    Json j;
    j["label"] = seq.label;
    j["n_slots"] = seq.n_slots;
    j["gate_period_s"] = seq.gate_period;
    Json pulses = Json::array();
    for (std::size_t i = 0; i < seq.pulse_slots.size(); ++i) {
        pulses.push_back({{"slot", seq.pulse_slots[i]}, {"sign", seq.pulse_signs[i]}});
    }
    j["pulses"] = pulses;
    return j;
}

PulseSequence sequence_from_json(const Json& j, const std::string& where) {
    PulseSequence seq;
    seq.label = static_cast<int>(require_number(j, "label", where));
    seq.n_slots = static_cast<int>(require_number(j, "n_slots", where));
    seq.gate_period = require_number(j, "gate_period_s", where);
    const Json& pulses = require_key(j, "pulses", where);
    if (!pulses.is_array()) throw ConfigError(where + ": key 'pulses' must be an array");
    for (std::size_t i = 0; i < pulses.size(); ++i) {
        const std::string at = where + ".pulses[" + std::to_string(i) + "]";
        seq.pulse_slots.push_back(static_cast<int>(require_number(pulses[i], "slot", at)));
        seq.pulse_signs.push_back(static_cast<int>(require_number(pulses[i], "sign", at)));
    }
    try {
        seq.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(where + ": " + e.what());
    }
    return seq;
}

Json sequences_to_json(std::span<const PulseSequence> seqs) {
    Json arr = Json::array();
    for (const auto& s : seqs) arr.push_back(sequence_to_json(s));
    return Json{{"sequences", arr}};
}

std::vector<PulseSequence> sequences_from_json(const Json& j, const std::string& where) {
    const Json& arr = require_key(j, "sequences", where);
    if (!arr.is_array()) throw ConfigError(where + ": key 'sequences' must be an array");
    std::vector<PulseSequence> out;
    for (std::size_t i = 0; i < arr.size(); ++i) {
        out.push_back(sequence_from_json(arr[i], where + ".sequences[" + std::to_string(i) + "]"));
    }
    return out;
}

void write_spectrum_csv(std::ostream& out, const Spectrum& s, std::span<const double> ci_lo,
                        std::span<const double> ci_hi) {
    const bool band = !ci_lo.empty();
    if (band && (ci_lo.size() != s.size() || ci_hi.size() != s.size())) {
        throw std::invalid_argument("write_spectrum_csv: confidence band length mismatch");
    }
    out << "freq_hz,psd_rad2_per_hz" << (band ? ",ci_lo,ci_hi" : "") << '\n';
    for (std::size_t i = 0; i < s.size(); ++i) {
        out << format_double(s.freqs[i]) << ',' << format_double(s.values[i]);
        if (band) out << ',' << format_double(ci_lo[i]) << ',' << format_double(ci_hi[i]);
        out << '\n';
    }
}

Spectrum read_spectrum_csv(const std::string& path, double sample_period) {
    const CsvTable t = read_csv_file(path);
    const int cf = t.require_column("freq_hz");
    const int cv = t.require_column("psd_rad2_per_hz");
    Spectrum s;
    s.sample_period = sample_period;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        s.freqs.push_back(t.number(r, cf));
        s.values.push_back(t.number(r, cv));
        if (s.values.back() < 0.0) t.fail(r, "negative PSD value");
        if (r > 0 && !(s.freqs[r] > s.freqs[r - 1])) t.fail(r, "frequencies must be strictly ascending");
    }
    return s;
}

void write_filter_csv(std::ostream& out, const FilterFunction& f) {
    out << "freq_hz,weight\n";
    for (std::size_t i = 0; i < f.freqs.size(); ++i) {
        out << format_double(f.freqs[i]) << ',' << format_double(f.weights[i]) << '\n';
    }
}

void write_records_csv(std::ostream& out, std::span<const ExperimentRecord> records) {
    out << "seq_index,n_pulses,survival_mean,survival_stderr,shots,trajectories,seed\n";
    for (const auto& r : records) {
        out << r.seq_index << ',' << r.n_pulses << ',' << format_double(r.survival_mean) << ','
            << format_double(r.survival_stderr) << ',' << r.shots << ',' << r.trajectories << ',' << r.seed << '\n';
    }
}

std::vector<ExperimentRecord> read_records_csv(const CsvTable& t, const RecordReadOptions& options) {
    const int c_idx = t.require_column("seq_index");
    const int c_mean = t.require_column("survival_mean");
    const int c_shots = t.require_column("shots");
    const int c_n = options.require_n_pulses ? t.require_column("n_pulses") : t.column("n_pulses");
    const int c_se = options.impute_stderr ? t.column("survival_stderr") : t.require_column("survival_stderr");
    const int c_traj = t.column("trajectories");
    const int c_seed = t.column("seed");
    std::vector<ExperimentRecord> out;
    std::map<int, std::size_t> seen;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        ExperimentRecord rec;
        rec.seq_index = static_cast<int>(t.integer(r, c_idx));
        if (!seen.emplace(rec.seq_index, r).second) t.fail(r, "duplicate seq_index " + std::to_string(rec.seq_index));
        if (c_n >= 0 && !t.rows[r][static_cast<std::size_t>(c_n)].empty()) {
            rec.n_pulses = static_cast<int>(t.integer(r, c_n));
            if (rec.n_pulses < 0) t.fail(r, "n_pulses must be >= 0");
        }
        rec.survival_mean = t.number(r, c_mean);
        if (rec.survival_mean < 0.0 || rec.survival_mean > 1.0) t.fail(r, "survival_mean must lie in [0, 1]");
        rec.shots = t.integer(r, c_shots);
        if (rec.shots < 1) t.fail(r, "shots must be >= 1");
        const bool has_se = c_se >= 0 && !t.rows[r][static_cast<std::size_t>(c_se)].empty();
        if (has_se) {
            rec.survival_stderr = t.number(r, c_se);
            if (rec.survival_stderr < 0.0) t.fail(r, "survival_stderr must be >= 0");
        } else if (options.impute_stderr) {
            const double p = rec.survival_mean;
            rec.survival_stderr = std::sqrt(p * (1.0 - p) / static_cast<double>(rec.shots));
        } else {
            t.fail(r, "survival_stderr is empty");
        }
        rec.trajectories = c_traj >= 0 && !t.rows[r][static_cast<std::size_t>(c_traj)].empty() ? t.integer(r, c_traj) : 1;
        if (rec.trajectories < 1) t.fail(r, "trajectories must be >= 1");
        if (c_seed >= 0 && !t.rows[r][static_cast<std::size_t>(c_seed)].empty()) {
            const std::string& cell = t.rows[r][static_cast<std::size_t>(c_seed)];
            std::uint64_t seed = 0;
            const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), seed);
            if (res.ec != std::errc() || res.ptr != cell.data() + cell.size()) t.fail(r, "seed is not an unsigned integer");
            rec.seed = seed;
        }
        out.push_back(rec);
    }
    return out;
}

void write_raw_csv(std::ostream& out, std::span<const SequenceOutcomes> raw) {
    out << "seq_index,trajectory,successes,shots\n";
    for (const auto& s : raw) {
        for (std::size_t i = 0; i < s.outcomes.size(); ++i) {
            out << s.seq_index << ',' << i << ',' << s.outcomes[i].successes << ',' << s.outcomes[i].shots << '\n';
        }
    }
}

std::vector<SequenceOutcomes> read_raw_csv(const CsvTable& t) {
    const int c_idx = t.require_column("seq_index");
    const int c_succ = t.require_column("successes");
    const int c_shots = t.require_column("shots");
    std::vector<SequenceOutcomes> out;
    std::map<int, std::size_t> pos;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const int idx = static_cast<int>(t.integer(r, c_idx));
        const long succ = t.integer(r, c_succ);
        const long shots = t.integer(r, c_shots);
        if (shots < 1) t.fail(r, "shots must be >= 1");
        if (succ < 0 || succ > shots) t.fail(r, "successes must lie in [0, shots]");
        auto it = pos.find(idx);
        if (it == pos.end()) {
            it = pos.emplace(idx, out.size()).first;
            out.push_back(SequenceOutcomes{idx, 0, {}});
        }
        out[it->second].outcomes.push_back({static_cast<int>(succ), static_cast<int>(shots)});
    }
    return out;
}

Json fit_report_json(const FitResult& result) {
    Json j;
    const auto& p = result.params;
    j["model_kind"] = p.kind == ModelKind::white_only ? "white_only" : "lorentzian_plus_white";
    j["params"] = {{"A", p.amplitude}, {"omega_c", p.omega_c}, {"sigma2", p.sigma2}, {"c1", p.c1}, {"c2", p.c2}};
    j["mask"] = p.mask;
    Json free = Json::array();
    for (std::size_t i = 0; i < result.names.size(); ++i) {
        const double var = result.covariance(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i));
        free.push_back({{"name", result.names[i]},
                        {"value", result.values[i]},
                        {"stderr", var > 0.0 ? std::sqrt(var) : 0.0},
                        {"at_bound", static_cast<bool>(result.at_bound[i])}});
    }
    j["free_parameters"] = free;
    Json cov = Json::array();
    for (Eigen::Index r = 0; r < result.covariance.rows(); ++r) {
        Json row = Json::array();
        for (Eigen::Index c = 0; c < result.covariance.cols(); ++c) row.push_back(result.covariance(r, c));
        cov.push_back(row);
    }
    j["covariance"] = cov;
    j["loss"] = result.loss;
    j["rms_residual"] = result.rms_residual();
    j["converged"] = result.converged;
    j["iterations"] = result.iterations;
    j["best_start"] = result.best_start;
    j["jacobian_check_error"] = result.jacobian_check_error;
    j["diagnostic"] = result.diagnostic;
    j["warnings"] = result.warnings;
    return j;
}

void write_fit_residuals_csv(std::ostream& out, const FitResult& result) {
    out << "seq_index,n_pulses,measured,predicted,residual,masked\n";
    for (std::size_t k = 0; k < result.labels.size(); ++k) {
        out << result.labels[k] << ',' << result.n_pulses[k] << ',' << format_double(result.measured[k]) << ','
            << format_double(result.predicted[k]) << ',' << format_double(result.residuals[k]) << ','
            << (result.masked[k] ? 1 : 0) << '\n';
    }
}

}  // namespace dephase

#pragma once

#include <iosfwd>
#include <json.hpp>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dephase/noise_models.hpp"
#include "dephase/predictor.hpp"
#include "dephase/qubit_sim.hpp"
#include "dephase/sequences.hpp"

namespace dephase {

using Json = nlohmann::json;

/// Malformed configuration or input document; `where` names the file, line
/// or key at fault.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Shortest text that parses back to the same double.
std::string format_double(double v);

struct CsvTable {
    std::string source;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<int> lines;  // 1-based file line of each row

    int column(const std::string& name) const;  // -1 when absent
    int require_column(const std::string& name) const;
    double number(std::size_t row, int col) const;
    long integer(std::size_t row, int col) const;
    [[noreturn]] void fail(std::size_t row, const std::string& msg) const;
};

CsvTable read_csv(std::istream& in, const std::string& source);
CsvTable read_csv_file(const std::string& path);

Json load_json_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

Json model_to_json(const ArmaModel& model);
ArmaModel model_from_json(const Json& j, const std::string& where);

Json sequence_to_json(const PulseSequence& seq);
PulseSequence sequence_from_json(const Json& j, const std::string& where);
Json sequences_to_json(std::span<const PulseSequence> seqs);
std::vector<PulseSequence> sequences_from_json(const Json& j, const std::string& where);

void write_spectrum_csv(std::ostream& out, const Spectrum& s, std::span<const double> ci_lo = {},
                        std::span<const double> ci_hi = {});
Spectrum read_spectrum_csv(const std::string& path, double sample_period);

void write_filter_csv(std::ostream& out, const FilterFunction& f);

void write_records_csv(std::ostream& out, std::span<const ExperimentRecord> records);

struct RecordReadOptions {
    bool impute_stderr = false;     // empty or missing stderr -> sqrt(p (1 - p) / shots)
    bool require_n_pulses = true;
};
std::vector<ExperimentRecord> read_records_csv(const CsvTable& table, const RecordReadOptions& options = {});

void write_raw_csv(std::ostream& out, std::span<const SequenceOutcomes> raw);
/// n_pulses is left 0; callers attach it from sequence metadata.
std::vector<SequenceOutcomes> read_raw_csv(const CsvTable& table);

Json fit_report_json(const FitResult& result);
void write_fit_residuals_csv(std::ostream& out, const FitResult& result);

}  // namespace dephase

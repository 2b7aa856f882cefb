#include "dephase/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>

#include "dephase/io.hpp"
#include "dephase/metrics.hpp"
#include "dephase/noise_models.hpp"
#include "dephase/predictor.hpp"
#include "dephase/qasm.hpp"
#include "dephase/qns_recon.hpp"
#include "dephase/qubit_sim.hpp"
#include "dephase/sequences.hpp"

namespace fs = std::filesystem;

namespace dephase {

namespace {

constexpr const char* schema_tag = "dephase/v1";
constexpr std::size_t default_grid_size = 4097;

class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Globals {
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    std::string config_path;
    bool emit_plot_data = false;
};

/// Typed access to a JSON config with key-level diagnostics; every key read
/// is recorded so unknown keys can be rejected at the end.
class Config {
public:
    Config(std::string path, std::set<std::string> allowed) : path_(std::move(path)), allowed_(std::move(allowed)) {
        text_ = read_text_file(path_);
        j_ = load_json_file(path_);
        if (!j_.is_object()) throw ConfigError(path_ + ": top level must be an object");
        allowed_.insert({"schema", "seed", "out_dir", "name", "emit_plot_data"});
        for (const auto& [key, value] : j_.items()) {
            if (!allowed_.count(key)) fail(key, "unknown key");
        }
        const std::string schema = str("schema", "");
        if (schema != schema_tag) fail("schema", std::string("expected \"") + schema_tag + "\"");
    }

    [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
        throw ConfigError(path_ + ":" + std::to_string(line_of(key)) + ": key '" + key + "': " + msg);
    }

    bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }

    double num(const std::string& key, std::optional<double> def = std::nullopt) const {
        if (!has(key)) {
            if (def) return *def;
            fail(key, "required");
        }
        const Json& v = j_.at(key);
        if (!v.is_number()) fail(key, "must be a number");
        const double d = v.get<double>();
        if (!std::isfinite(d)) fail(key, "must be finite");
        return d;
    }

    double positive(const std::string& key, std::optional<double> def = std::nullopt) const {
        const double v = num(key, def);
        if (!(v > 0.0)) fail(key, "must be > 0");
        return v;
    }

    double nonneg(const std::string& key, std::optional<double> def = std::nullopt) const {
        const double v = num(key, def);
        if (!(v >= 0.0)) fail(key, "must be >= 0");
        return v;
    }

    long integer(const std::string& key, std::optional<long> def, long min_value) const {
        if (!has(key)) {
            if (def) return *def;
            fail(key, "required");
        }
        const Json& v = j_.at(key);
        if (!v.is_number_integer()) fail(key, "must be an integer");
        const long i = v.get<long>();
        if (i < min_value) fail(key, "must be >= " + std::to_string(min_value));
        return i;
    }

    bool flag(const std::string& key, bool def) const {
        if (!has(key)) return def;
        if (!j_.at(key).is_boolean()) fail(key, "must be true or false");
        return j_.at(key).get<bool>();
    }

    std::string str(const std::string& key, std::optional<std::string> def,
                    std::initializer_list<const char*> choices = {}) const {
        if (!has(key)) {
            if (def) return *def;
            fail(key, "required");
        }
        if (!j_.at(key).is_string()) fail(key, "must be a string");
        const std::string s = j_.at(key).get<std::string>();
        if (choices.size() > 0 && std::find_if(choices.begin(), choices.end(), [&](const char* c) { return s == c; }) ==
                                      choices.end()) {
            std::string all;
            for (const char* c : choices) all += (all.empty() ? "" : ", ") + std::string(c);
            fail(key, "must be one of {" + all + "}, got \"" + s + "\"");
        }
        return s;
    }

    /// Input path, relative paths resolved against the config directory.
    std::string input(const std::string& key, bool required = true) const {
        if (!has(key)) {
            if (required) fail(key, "required");
            return "";
        }
        const fs::path p(str(key, std::nullopt));
        if (p.is_absolute()) return p.string();
        return (fs::path(path_).parent_path() / p).string();
    }

    std::vector<int> int_list(const std::string& key) const {
        std::vector<int> out;
        if (!has(key)) return out;
        const Json& v = j_.at(key);
        if (!v.is_array()) fail(key, "must be an array of integers");
        for (const auto& e : v) {
            if (!e.is_number_integer()) fail(key, "must be an array of integers");
            out.push_back(e.get<int>());
        }
        return out;
    }

    const Json& raw(const std::string& key) const { return j_.at(key); }
    const std::string& path() const { return path_; }

private:
    std::string path_;
    std::string text_;
    Json j_;
    std::set<std::string> allowed_;

    int line_of(const std::string& key) const {
        const auto pos = text_.find("\"" + key + "\"");
        if (pos == std::string::npos) return 1;
        return 1 + static_cast<int>(std::count(text_.begin(), text_.begin() + static_cast<long>(pos), '\n'));
    }
};

struct Output {
    fs::path dir;
    std::string name;

    std::string file(const std::string& suffix) const { return (dir / (name + suffix)).string(); }
};

Output make_output(const Config& cfg, const Globals& g, const std::string& default_name) {
    Output o;
    o.dir = !g.out_dir.empty() ? fs::path(g.out_dir) : fs::path(cfg.str("out_dir", "."));
    o.name = cfg.str("name", default_name);
    std::error_code ec;
    fs::create_directories(o.dir, ec);
    if (ec) throw ConfigError(o.dir.string() + ": cannot create output directory (" + ec.message() + ")");
    return o;
}

std::uint64_t resolve_seed(const Config& cfg, const Globals& g) {
    if (g.seed) return *g.seed;
    return static_cast<std::uint64_t>(cfg.integer("seed", 0, 0));
}

bool plot_data(const Config& cfg, const Globals& g) { return g.emit_plot_data || cfg.flag("emit_plot_data", false); }

template <typename Fn>
void write_file(const std::string& path, Fn&& fn) {
    std::ostringstream ss;
    fn(ss);
    write_text_file(path, ss.str());
}

std::size_t grid_size_of(const Config& cfg) {
    return static_cast<std::size_t>(cfg.integer("grid_size", static_cast<long>(default_grid_size), 2));
}

ArmaModel load_model(const std::string& path) { return model_from_json(load_json_file(path), path); }

std::vector<PulseSequence> sequences_from_config(const Config& cfg) {
    if (cfg.has("sequences")) {
        const std::string p = cfg.input("sequences");
        return sequences_from_json(load_json_file(p), p);
    }
    const std::string family = cfg.str("family", "fttps", {"fttps", "rfttps"});
    const int k = static_cast<int>(cfg.integer("K", 64, 1));
    const int n = static_cast<int>(cfg.integer("N", 128, 1));
    const double t_g = cfg.positive("t_G", 100e-9);
    if (k > n + 1) cfg.fail("K", "must not exceed N + 1");
    return make_sequences(family == "fttps" ? SequenceFamily::fttps : SequenceFamily::rfttps, k, n, t_g);
}

TargetState target_of(const Config& cfg) {
    return cfg.str("target", "one", {"zero", "one"}) == "one" ? TargetState::one : TargetState::zero;
}

void check_numeric(double v, const char* what) {
    if (!std::isfinite(v)) throw NumericalError(std::string(what) + " is not finite");
}

// design ---------------------------------------------------------------------

int cmd_design(const Globals& g, std::ostream& out) {
    Config cfg(g.config_path, {"kind", "t_s", "taps", "power", "center_hz", "bandwidth_hz", "bands", "alpha",
                               "f_lo_hz", "f_hi_hz", "anchor_hz", "anchor_psd", "amplitude", "omega_c",
                               "white_floor", "grid_size"});
    const std::string kind = cfg.str("kind", std::nullopt, {"bandpass", "multiband", "power_law", "lorentzian"});
    const double t_s = cfg.positive("t_s");
    const long taps_raw = cfg.integer("taps", default_taps, 1);
    if (taps_raw % 2 == 0) cfg.fail("taps", "must be odd");
    const int taps = static_cast<int>(taps_raw);
    const double nyq = 0.5 / t_s;

    ArmaModel model;
    if (kind == "bandpass") {
        const double fc = cfg.positive("center_hz");
        const double bw = cfg.positive("bandwidth_hz");
        if (fc + 0.5 * bw > nyq || fc - 0.5 * bw < 0.0) cfg.fail("center_hz", "band must lie within [0, Nyquist]");
        model = design_bandpass(fc, bw, cfg.nonneg("power"), t_s, taps);
    } else if (kind == "multiband") {
        if (!cfg.has("bands") || !cfg.raw("bands").is_array()) cfg.fail("bands", "must be an array of bands");
        std::vector<Band> bands;
        for (std::size_t i = 0; i < cfg.raw("bands").size(); ++i) {
            const Json& b = cfg.raw("bands")[i];
            const std::string key = "bands[" + std::to_string(i) + "]";
            for (const char* field : {"center_hz", "width_hz", "power"}) {
                if (!b.is_object() || !b.contains(field) || !b.at(field).is_number()) {
                    cfg.fail("bands", key + "." + field + " must be a number");
                }
            }
            Band band{b.at("center_hz").get<double>(), b.at("width_hz").get<double>(), b.at("power").get<double>()};
            if (!(band.width_hz > 0.0) || !(band.power >= 0.0) || band.center_hz - 0.5 * band.width_hz < 0.0 ||
                band.center_hz + 0.5 * band.width_hz > nyq) {
                cfg.fail("bands", key + " must have width > 0, power >= 0 and lie within [0, Nyquist]");
            }
            bands.push_back(band);
        }
        model = design_multiband(bands, t_s, taps);
    } else if (kind == "power_law") {
        const double alpha = cfg.num("alpha");
        const double f_lo = cfg.positive("f_lo_hz", 1e5);
        const double f_hi = cfg.positive("f_hi_hz", 2e6);
        if (!(f_hi > f_lo) || f_hi > nyq) cfg.fail("f_hi_hz", "must satisfy f_lo_hz < f_hi_hz <= Nyquist");
        const double anchor = cfg.positive("anchor_hz", f_lo);
        if (cfg.has("power") == cfg.has("anchor_psd")) cfg.fail("power", "give exactly one of 'power' or 'anchor_psd'");
        if (cfg.has("anchor_psd")) {
            model = design_power_law(alpha, anchor, cfg.nonneg("anchor_psd"), f_lo, f_hi, t_s, taps);
        } else {
            const double power = cfg.nonneg("power");
            model = design_power_law(alpha, anchor, 1.0, f_lo, f_hi, t_s, taps);
            const double r0 = autocovariance(model, 0)[0];
            model.drive_std *= std::sqrt(power / r0);
        }
    } else {
        model = design_lorentzian(cfg.nonneg("amplitude"), cfg.nonneg("omega_c"), cfg.nonneg("white_floor", 0.0), t_s,
                                  taps);
    }

    const Output o = make_output(cfg, g, "model");
    const Spectrum s = psd(model, grid_size_of(cfg));
    const double r0 = autocovariance(model, 0)[0];
    check_numeric(r0, "process variance");
    write_text_file(o.file(".model.json"), model_to_json(model).dump(2) + "\n");
    write_file(o.file(".psd.csv"), [&](std::ostream& f) { write_spectrum_csv(f, s); });
    if (plot_data(cfg, g)) {
        write_file(o.file(".plot.csv"), [&](std::ostream& f) {
            f << "series,x,y\n";
            for (std::size_t i = 0; i < s.size(); ++i) f << "psd," << format_double(s.freqs[i]) << ',' << format_double(s.values[i]) << '\n';
        });
    }
    out << "design: " << kind << ", " << model.ma.size() << " taps, r(0) = " << format_double(r0) << " rad^2 -> "
        << o.file(".model.json") << '\n';
    return exit_ok;
}

// simulate -------------------------------------------------------------------

int cmd_simulate(const Globals& g, std::ostream& out) {
    Config cfg(g.config_path, {"family", "K", "N", "t_G", "sequences", "mode", "trajectories", "shots_per_trajectory",
                               "shots", "phase_update_period_s", "random_time_offset", "model", "native_model",
                               "over_rotation", "jitter_std", "target", "workers"});
    const auto seqs = sequences_from_config(cfg);
    const ArmaModel model = load_model(cfg.input("model"));
    std::optional<ArmaModel> native;
    if (cfg.has("native_model")) native = load_model(cfg.input("native_model"));
    PulseErrorModel perr{cfg.num("over_rotation", 0.0), cfg.nonneg("jitter_std", 0.0)};

    InjectionMode mode;
    if (cfg.str("mode", "gate", {"gate", "sdr"}) == "gate") {
        mode = GateMode{static_cast<int>(cfg.integer("trajectories", 50, 1)),
                        static_cast<int>(cfg.integer("shots_per_trajectory", 1000, 1))};
        if (std::abs(model.sample_period - seqs.front().gate_period) > 1e-9 * seqs.front().gate_period) {
            cfg.fail("model", "gate mode needs the model sample period to equal t_G");
        }
    } else {
        mode = SdrMode{static_cast<int>(cfg.integer("shots", 10000, 1)),
                       cfg.positive("phase_update_period_s", model.sample_period), cfg.flag("random_time_offset", false)};
        if (std::abs(std::get<SdrMode>(mode).phase_update_period - model.sample_period) > 1e-9 * model.sample_period) {
            cfg.fail("phase_update_period_s", "must equal the model sample period");
        }
    }
    ExperimentOptions opts;
    opts.target = target_of(cfg);
    opts.workers = static_cast<unsigned>(cfg.integer("workers", 0, 0));
    const std::uint64_t seed = resolve_seed(cfg, g);
    const Output o = make_output(cfg, g, "run");

    const ExperimentResult res = run_experiment(seqs, model, native, perr, mode, seed, opts);
    write_file(o.file(".records.csv"), [&](std::ostream& f) { write_records_csv(f, res.records); });
    write_file(o.file(".raw.csv"), [&](std::ostream& f) { write_raw_csv(f, res.raw); });
    write_text_file(o.file(".sequences.json"), sequences_to_json(seqs).dump(2) + "\n");
    if (plot_data(cfg, g)) {
        write_file(o.file(".plot.csv"), [&](std::ostream& f) {
            f << "series,x,y\n";
            for (const auto& r : res.records) f << "survival," << r.n_pulses << ',' << format_double(r.survival_mean) << '\n';
        });
    }
    out << "simulate: " << seqs.size() << " sequences, seed " << seed << " -> " << o.file(".records.csv") << '\n';
    return exit_ok;
}

// reconstruct ----------------------------------------------------------------

std::vector<ExperimentRecord> load_records(const std::string& path, const std::vector<PulseSequence>& seqs) {
    auto recs = read_records_csv(read_csv_file(path));
    std::set<int> labels;
    for (const auto& s : seqs) labels.insert(s.label);
    for (const auto& r : recs) {
        if (!labels.count(r.seq_index)) {
            throw ConfigError(path + ": sequence " + std::to_string(r.seq_index) + " is not in the sequence document");
        }
    }
    return recs;
}

std::vector<SequenceOutcomes> load_raw(const std::string& path, const std::vector<PulseSequence>& seqs) {
    auto raw = read_raw_csv(read_csv_file(path));
    std::map<int, int> pulses;
    for (const auto& s : seqs) pulses[s.label] = s.n_pulses();
    for (auto& r : raw) {
        const auto it = pulses.find(r.seq_index);
        if (it == pulses.end()) {
            throw ConfigError(path + ": sequence " + std::to_string(r.seq_index) + " is not in the sequence document");
        }
        r.n_pulses = it->second;
    }
    return raw;
}

int cmd_reconstruct(const Globals& g, std::ostream& out) {
    Config cfg(g.config_path, {"records", "raw", "sequences", "bins", "ridge", "saturation_floor", "grid_size",
                               "bootstrap_resamples", "bootstrap_q_lo", "bootstrap_q_hi", "native_records",
                               "native_raw", "weighting", "workers"});
    const std::string seq_path = cfg.input("sequences");
    const auto seqs = sequences_from_json(load_json_file(seq_path), seq_path);
    const auto filters = filter_functions(seqs, grid_size_of(cfg));
    ReconstructionOptions ropt;
    if (cfg.has("bins")) ropt.bins = static_cast<std::size_t>(cfg.integer("bins", std::nullopt, 1));
    ropt.ridge = cfg.nonneg("ridge", 0.0);
    ropt.saturation_floor = cfg.positive("saturation_floor", default_saturation_floor);
    if (ropt.saturation_floor >= 0.5) cfg.fail("saturation_floor", "must be < 0.5");
    const std::string weighting = cfg.str("weighting", std::string("propagated"), {"propagated", "uniform"});
    ropt.weighting = weighting == "uniform" ? ChiWeighting::uniform : ChiWeighting::propagated;
    const long resamples = cfg.integer("bootstrap_resamples", 0, 0);
    BootstrapOptions bopt;
    bopt.resamples = static_cast<int>(resamples);
    bopt.q_lo = cfg.num("bootstrap_q_lo", 0.025);
    bopt.q_hi = cfg.num("bootstrap_q_hi", 0.975);
    if (!(bopt.q_lo >= 0.0 && bopt.q_lo < bopt.q_hi && bopt.q_hi <= 1.0)) {
        cfg.fail("bootstrap_q_lo", "quantiles must satisfy 0 <= lo < hi <= 1");
    }
    bopt.seed = resolve_seed(cfg, g);
    bopt.workers = static_cast<unsigned>(cfg.integer("workers", 0, 0));
    const Output o = make_output(cfg, g, "recon");

    auto run = [&](const std::string& rec_key, const std::string& raw_key, const std::optional<BinLayout>& layout,
                   const std::vector<int>& labels) {
        ReconstructionOptions opt = ropt;
        if (layout) {
            opt.layout = layout;
            opt.fixed_labels = labels;
        }
        BootstrapResult br;
        if (resamples > 0) {
            if (!cfg.has(raw_key)) cfg.fail(raw_key, "required when bootstrap_resamples > 0");
            br = bootstrap_spectrum(load_raw(cfg.input(raw_key), seqs), filters, opt, bopt);
        } else {
            const auto recs = load_records(cfg.input(rec_key), seqs);
            br.point = reconstruct_spectrum(recs, filters, opt);
            // Without a bootstrap the band is the Gauss-Newton 95% interval.
            for (std::size_t m = 0; m < br.point.layout.size(); ++m) {
                const double v = br.point.spectrum.values[m];
                const double u = 1.959963984540054 * br.point.uncertainty[m];
                br.median.push_back(v);
                br.ci_lo.push_back(std::max(0.0, v - u));
                br.ci_hi.push_back(v + u);
            }
        }
        for (double v : br.point.spectrum.values) check_numeric(v, "reconstructed PSD");
        return br;
    };

    const BootstrapResult inj = run("records", "raw", std::nullopt, {});
    Spectrum central = inj.point.spectrum;
    if (resamples > 1) central.values = inj.median;
    write_file(o.file(".spectrum.csv"), [&](std::ostream& f) { write_spectrum_csv(f, central, inj.ci_lo, inj.ci_hi); });

    Json meta;
    meta["ridge"] = ropt.ridge;
    meta["saturation_floor"] = ropt.saturation_floor;
    meta["weighting"] = weighting;
    meta["bins"] = inj.point.layout.size();
    meta["bin_lower_hz"] = inj.point.layout.lower;
    meta["bin_upper_hz"] = inj.point.layout.upper;
    meta["used_sequences"] = inj.point.used_labels;
    meta["excluded_sequences"] = inj.point.excluded_labels;
    meta["integrated_power"] = inj.point.integrated_power();
    meta["seed"] = bopt.seed;
    meta["bootstrap_resamples"] = resamples;
    meta["bootstrap_failed_resamples"] = inj.failed_resamples;
    meta["band"] = resamples > 0 ? "bootstrap" : "gauss_newton";

    if (cfg.has("native_records") || cfg.has("native_raw")) {
        const BootstrapResult nat = run("native_records", "native_raw", inj.point.layout, inj.point.used_labels);
        Spectrum nat_central = nat.point.spectrum;
        if (resamples > 1) nat_central.values = nat.median;
        const NativeSubtraction d = subtract_native(central, nat_central);
        write_file(o.file(".native.csv"), [&](std::ostream& f) { write_spectrum_csv(f, nat_central, nat.ci_lo, nat.ci_hi); });
        write_file(o.file(".delta.csv"), [&](std::ostream& f) { write_spectrum_csv(f, d.delta); });
        meta["native_subtraction"] = {{"clipped", d.clipped}, {"clipped_power", d.clipped_power},
                                      {"clipped_bins", d.clipped_bins}};
    }
    write_text_file(o.file(".meta.json"), meta.dump(2) + "\n");
    if (plot_data(cfg, g)) {
        write_file(o.file(".plot.csv"), [&](std::ostream& f) {
            f << "series,x,y\n";
            for (std::size_t m = 0; m < central.size(); ++m) {
                f << "psd," << format_double(central.freqs[m]) << ',' << format_double(central.values[m]) << '\n';
                f << "ci_lo," << format_double(central.freqs[m]) << ',' << format_double(inj.ci_lo[m]) << '\n';
                f << "ci_hi," << format_double(central.freqs[m]) << ',' << format_double(inj.ci_hi[m]) << '\n';
            }
        });
    }
    out << "reconstruct: " << inj.point.layout.size() << " bins, " << inj.point.excluded_labels.size()
        << " saturated sequences excluded -> " << o.file(".spectrum.csv") << '\n';
    return exit_ok;
}

// fit ------------------------------------------------------------------------

int cmd_fit(const Globals& g, std::ostream& out) {
    Config cfg(g.config_path, {"records", "sequences", "injected_model", "grid_size", "kind", "mask", "starts",
                               "max_iterations", "init", "workers"});
    const std::string seq_path = cfg.input("sequences");
    const auto seqs = sequences_from_json(load_json_file(seq_path), seq_path);
    const std::size_t grid = grid_size_of(cfg);
    const auto filters = filter_functions(seqs, grid);
    const auto recs = load_records(cfg.input("records"), seqs);
    Spectrum injected;
    if (cfg.has("injected_model")) {
        const ArmaModel inj = load_model(cfg.input("injected_model"));
        if (std::abs(inj.sample_period - seqs.front().gate_period) > 1e-9 * seqs.front().gate_period) {
            cfg.fail("injected_model", "sample period must equal t_G");
        }
        injected = psd(inj, grid);
    } else {
        injected = Spectrum{filters.front().freqs, std::vector<double>(grid, 0.0), seqs.front().gate_period};
    }
    const ModelKind kind = cfg.str("kind", "lorentzian_plus_white", {"lorentzian_plus_white", "white_only"}) ==
                                   "white_only"
                               ? ModelKind::white_only
                               : ModelKind::lorentzian_plus_white;
    FitOptions fo;
    fo.starts = static_cast<int>(cfg.integer("starts", 8, 1));
    fo.max_iterations = static_cast<int>(cfg.integer("max_iterations", 400, 1));
    fo.workers = static_cast<unsigned>(cfg.integer("workers", 0, 0));
    if (cfg.has("init")) {
        const Json& j = cfg.raw("init");
        FitParams p;
        const std::pair<const char*, double*> fields[] = {
            {"A", &p.amplitude}, {"omega_c", &p.omega_c}, {"sigma2", &p.sigma2}, {"c1", &p.c1}, {"c2", &p.c2}};
        for (const auto& [name, dst] : fields) {
            if (!j.is_object() || !j.contains(name) || !j.at(name).is_number() || j.at(name).get<double>() < 0.0) {
                cfg.fail("init", std::string(name) + " must be a number >= 0");
            }
            *dst = j.at(name).get<double>();
        }
        fo.init = p;
    }
    const Output o = make_output(cfg, g, "fit");
    const FitResult res = fit(recs, filters, injected, kind, cfg.int_list("mask"), fo);
    check_numeric(res.loss, "fit loss");
    write_text_file(o.file(".report.json"), fit_report_json(res).dump(2) + "\n");
    write_file(o.file(".residuals.csv"), [&](std::ostream& f) { write_fit_residuals_csv(f, res); });
    if (plot_data(cfg, g)) {
        write_file(o.file(".plot.csv"), [&](std::ostream& f) {
            f << "series,x,y\n";
            for (std::size_t k = 0; k < res.labels.size(); ++k) {
                f << "measured," << res.n_pulses[k] << ',' << format_double(res.measured[k]) << '\n';
                f << "predicted," << res.n_pulses[k] << ',' << format_double(res.predicted[k]) << '\n';
            }
        });
    }
    out << "fit: loss " << format_double(res.loss) << (res.converged ? "" : " (not converged)") << " -> "
        << o.file(".report.json") << '\n';
    for (const auto& w : res.warnings) out << "warning: " << w << '\n';
    if (!res.diagnostic.empty()) out << "warning: " << res.diagnostic << '\n';
    return exit_ok;
}

// export-circuits ------------------------------------------------------------

int cmd_export(const Globals& g, std::ostream& out) {
    Config cfg(g.config_path, {"family", "K", "N", "t_G", "sequences", "trajectories", "model", "target"});
    const auto seqs = sequences_from_config(cfg);
    const ArmaModel model = load_model(cfg.input("model"));
    if (std::abs(model.sample_period - seqs.front().gate_period) > 1e-9 * seqs.front().gate_period) {
        cfg.fail("model", "gate-mode export needs the model sample period to equal t_G");
    }
    const int r_count = static_cast<int>(cfg.integer("trajectories", 50, 1));
    const TargetState target = target_of(cfg);
    const std::uint64_t seed = resolve_seed(cfg, g);
    const Output o = make_output(cfg, g, "circuits");
    const fs::path dir = o.dir / o.name;
    fs::create_directories(dir);

    // Same seed lineage as gate-mode simulation, so circuit r of sequence k
    // carries the trajectory that simulation used.
    const SeedLineage root(seed);
    std::ostringstream phases;
    phases << "seq_index,trajectory,slot,phase_rad\n";
    int written = 0;
    for (const auto& seq : seqs) {
        const SeedLineage node = root.child(static_cast<std::uint64_t>(seq.label));
        for (int r = 0; r < r_count; ++r) {
            const auto traj = generate_trajectory(model, static_cast<std::size_t>(seq.n_slots),
                                                  node.child(static_cast<std::uint64_t>(r)).child(stream::injected));
            const std::string text = emit_circuit(seq, traj.phases, target);
            const CircuitSummary sum = summarize_circuit(parse_qasm(text));
            bool ok = sum.x_type_gates == seq.n_pulses() && sum.phase_gates == seq.n_slots &&
                      sum.slot_phases.size() == static_cast<std::size_t>(seq.n_slots) &&
                      sum.pulse_slots == seq.pulse_slots && sum.pulse_signs == seq.pulse_signs;
            for (std::size_t j = 0; ok && j < sum.slot_phases.size(); ++j) ok = sum.slot_phases[j] == traj.phases[j];
            if (!ok) {
                throw NumericalError("export-circuits: re-parse of sequence " + std::to_string(seq.label) +
                                     " trajectory " + std::to_string(r) + " does not match the emitted circuit");
            }
            char name[64];
            std::snprintf(name, sizeof name, "seq%03d_traj%04d.qasm", seq.label, r);
            write_text_file((dir / name).string(), text);
            for (std::size_t j = 0; j < traj.phases.size(); ++j) {
                phases << seq.label << ',' << r << ',' << j + 1 << ',' << format_double(traj.phases[j]) << '\n';
            }
            ++written;
        }
    }
    write_text_file(o.file(".phases.csv"), phases.str());
    write_text_file(o.file(".sequences.json"), sequences_to_json(seqs).dump(2) + "\n");
    out << "export-circuits: " << written << " circuits verified -> " << dir.string() << '\n';
    return exit_ok;
}

// ingest ---------------------------------------------------------------------

int cmd_ingest(const Globals& g, std::ostream& out) {
    Config cfg(g.config_path, {"input", "sequences", "saturation_floor"});
    const std::string in_path = cfg.input("input");
    const double floor = cfg.positive("saturation_floor", default_saturation_floor);
    if (floor >= 0.5) cfg.fail("saturation_floor", "must be < 0.5");
    std::vector<PulseSequence> seqs;
    if (cfg.has("sequences")) {
        const std::string p = cfg.input("sequences");
        seqs = sequences_from_json(load_json_file(p), p);
    }
    const CsvTable table = read_csv_file(in_path);
    RecordReadOptions ro;
    ro.impute_stderr = true;
    ro.require_n_pulses = seqs.empty();
    auto recs = read_records_csv(table, ro);
    const int c_n = table.column("n_pulses");
    if (!seqs.empty()) {
        std::map<int, int> pulses;
        for (const auto& s : seqs) pulses[s.label] = s.n_pulses();
        for (std::size_t r = 0; r < recs.size(); ++r) {
            const auto it = pulses.find(recs[r].seq_index);
            if (it == pulses.end()) table.fail(r, "seq_index " + std::to_string(recs[r].seq_index) + " not in sequences");
            const bool given = c_n >= 0 && !table.rows[r][static_cast<std::size_t>(c_n)].empty();
            if (given && recs[r].n_pulses != it->second) {
                table.fail(r, "n_pulses " + std::to_string(recs[r].n_pulses) + " disagrees with the sequence (" +
                                  std::to_string(it->second) + ")");
            }
            recs[r].n_pulses = it->second;
        }
    }
    std::vector<int> saturated;
    for (const auto& r : recs) {
        if (decay_from_survival(r.survival_mean, floor).saturated) saturated.push_back(r.seq_index);
    }
    const Output o = make_output(cfg, g, "ingested");
    write_file(o.file(".records.csv"), [&](std::ostream& f) { write_records_csv(f, recs); });
    Json meta{{"source", in_path}, {"rows", recs.size()}, {"saturation_floor", floor}, {"saturated_sequences", saturated}};
    write_text_file(o.file(".meta.json"), meta.dump(2) + "\n");
    out << "ingest: " << recs.size() << " rows, " << saturated.size() << " saturated -> " << o.file(".records.csv")
        << '\n';
    return exit_ok;
}

// report ---------------------------------------------------------------------

int cmd_report(const Globals& g, std::ostream& out) {
    Config cfg(g.config_path, {"records", "spectrum", "fit_report", "saturation_floor"});
    const double floor = cfg.positive("saturation_floor", default_saturation_floor);
    std::ostringstream rep;
    rep << "# Run report\n";
    if (cfg.has("records")) {
        const auto recs = read_records_csv(read_csv_file(cfg.input("records")));
        int sat = 0;
        double pmin = 1.0;
        double pmax = 0.0;
        for (const auto& r : recs) {
            sat += decay_from_survival(r.survival_mean, floor).saturated ? 1 : 0;
            pmin = std::min(pmin, r.survival_mean);
            pmax = std::max(pmax, r.survival_mean);
        }
        rep << "\n## Records\n\nsequences: " << recs.size() << "\nsaturated: " << sat
            << "\nsurvival range: " << format_double(pmin) << " .. " << format_double(pmax) << '\n';
    }
    if (cfg.has("spectrum")) {
        const Spectrum s = read_spectrum_csv(cfg.input("spectrum"), 1.0);
        if (s.size() == 0) cfg.fail("spectrum", "spectrum file has no rows");
        const std::size_t peak = argmax(s.values);
        rep << "\n## Spectrum\n\nbins: " << s.size() << "\npeak: " << format_double(s.values[peak]) << " rad^2/Hz at "
            << format_double(s.freqs[peak]) << " Hz\n";
        if (s.size() > 1) rep << "trapezoidal power: " << format_double(s.integrated_power()) << " rad^2\n";
    }
    if (cfg.has("fit_report")) {
        const Json j = load_json_file(cfg.input("fit_report"));
        rep << "\n## Fit\n\nmodel: " << j.value("model_kind", "?") << "\nloss: " << j.value("loss", 0.0)
            << "\nconverged: " << (j.value("converged", false) ? "yes" : "no") << '\n';
        if (j.contains("params")) {
            for (const auto& [k, v] : j.at("params").items()) rep << k << ": " << v.dump() << '\n';
        }
        if (j.contains("warnings")) {
            for (const auto& w : j.at("warnings")) rep << "warning: " << w.get<std::string>() << '\n';
        }
    }
    const Output o = make_output(cfg, g, "report");
    write_text_file(o.file(".md"), rep.str());
    out << "report -> " << o.file(".md") << '\n';
    return exit_ok;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Dephasing-noise injection, spectroscopy and prediction toolkit", "dephase"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    std::uint64_t seed = 0;
    auto* seed_opt = app.add_option("--seed", seed, "Master seed (overrides the config)");
    app.add_option("--out-dir", g.out_dir, "Output directory (overrides the config)");
    app.add_option("--config", g.config_path, "JSON config file")->required();
    app.add_flag("--emit-plot-data", g.emit_plot_data, "Also write long-format plot CSV");

    using Handler = int (*)(const Globals&, std::ostream&);
    const std::pair<const char*, Handler> commands[] = {
        {"design", cmd_design},   {"simulate", cmd_simulate},       {"reconstruct", cmd_reconstruct},
        {"fit", cmd_fit},         {"export-circuits", cmd_export},  {"ingest", cmd_ingest},
        {"report", cmd_report},
    };
    const char* help[] = {"Design a noise model and its PSD",
                          "Simulate probe sequences under injected noise",
                          "Reconstruct the noise spectrum from survival records",
                          "Fit native-noise and pulse-error parameters",
                          "Write OpenQASM 2.0 circuits for gate-mode injection",
                          "Validate and normalize hardware survival records",
                          "Summarize run artifacts"};
    std::vector<CLI::App*> subs;
    for (std::size_t i = 0; i < std::size(commands); ++i) subs.push_back(app.add_subcommand(commands[i].first, help[i]));

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return exit_ok;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        return exit_config;
    }
    if (*seed_opt) g.seed = seed;

    try {
        for (std::size_t i = 0; i < subs.size(); ++i) {
            if (subs[i]->parsed()) return commands[i].second(g, out);
        }
        return exit_config;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return exit_config;
    } catch (const std::invalid_argument& e) {
        err << "config error: " << e.what() << '\n';
        return exit_config;
    } catch (const std::exception& e) {
        err << "numerical failure: " << e.what() << '\n';
        return exit_numerical;
    }
}

}  // namespace dephase

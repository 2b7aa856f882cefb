#include "dephase/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <stdexcept>
#include <string>

#include "dephase/parallel.hpp"
#include "dephase/qns_recon.hpp"

namespace dephase {

namespace {

constexpr double two_pi = 2.0 * std::numbers::pi;

bool full_model(ModelKind kind) { return kind == ModelKind::lorentzian_plus_white; }

struct Row {
    const FilterFunction* filter;
    double gsum = 0.0;
    double chi_inj = 0.0;
    double n = 0.0;
    double measured = 0.0;
};

/// Free-parameter vector: [A, W = omega_c^2, sigma2, c1, c2] or [sigma2, c1, c2].
Eigen::VectorXd pack(const FitParams& p) {
    if (full_model(p.kind)) {
        Eigen::VectorXd x(5);
        x << p.amplitude, p.omega_c * p.omega_c, p.sigma2, p.c1, p.c2;
        return x;
    }
    Eigen::VectorXd x(3);
    x << p.sigma2, p.c1, p.c2;
    return x;
}

FitParams unpack(const Eigen::VectorXd& x, ModelKind kind, const std::vector<int>& mask) {
    FitParams p;
    p.kind = kind;
    p.mask = mask;
    if (full_model(kind)) {
        p.amplitude = x(0);
        p.omega_c = std::sqrt(std::max(0.0, x(1)));
        p.sigma2 = x(2);
        p.c1 = x(3);
        p.c2 = x(4);
    } else {
        p.sigma2 = x(0);
        p.c1 = x(1);
        p.c2 = x(2);
    }
    return p;
}

double lorentz_sum(const FilterFunction& f, double w, double* d_dw) {
    double s = 0.0;
    double ds = 0.0;
    if (w > 0.0) {
        for (std::size_t i = 0; i < f.freqs.size(); ++i) {
            const double om = two_pi * f.freqs[i];
            const double den = w + om * om;
            s += f.weights[i] * w / den;
            ds += f.weights[i] * om * om / (den * den);
        }
    }
    if (d_dw) *d_dw = ds;
    return s;
}

struct Problem {
    std::vector<Row> rows;
    ModelKind kind;
    std::vector<int> mask;
    Eigen::VectorXd lower;
    Eigen::VectorXd scale;

    Eigen::Index size() const { return full_model(kind) ? 5 : 3; }

    double exponent(const Row& r, const Eigen::VectorXd& x, Eigen::VectorXd* grad) const {
        const Eigen::Index o = full_model(kind) ? 2 : 0;
        double e = r.chi_inj + x(o) * r.gsum + x(o + 1) * r.n + x(o + 2) * r.n * r.n;
        if (grad) {
            grad->resize(size());
            (*grad)(o) = r.gsum;
            (*grad)(o + 1) = r.n;
            (*grad)(o + 2) = r.n * r.n;
        }
        if (full_model(kind)) {
            double dw = 0.0;
            const double ls = lorentz_sum(*r.filter, x(1), grad ? &dw : nullptr);
            e += x(0) * ls;
            if (grad) {
                (*grad)(0) = ls;
                (*grad)(1) = x(0) * dw;
            }
        }
        return e;
    }

    Eigen::VectorXd model(const Eigen::VectorXd& x, Eigen::MatrixXd* jac) const {
        Eigen::VectorXd p(static_cast<Eigen::Index>(rows.size()));
        if (jac) jac->resize(p.size(), size());
        Eigen::VectorXd grad;
        for (std::size_t k = 0; k < rows.size(); ++k) {
            const double e = exponent(rows[k], x, jac ? &grad : nullptr);
            const double decay = std::exp(-e);
            p(static_cast<Eigen::Index>(k)) = 0.5 + 0.5 * decay;
            if (jac) jac->row(static_cast<Eigen::Index>(k)) = (-0.5 * decay) * grad.transpose();
        }
        return p;
    }

    Eigen::VectorXd residual(const Eigen::VectorXd& x, Eigen::MatrixXd* jac) const {
        Eigen::VectorXd r = model(x, jac);
        for (std::size_t k = 0; k < rows.size(); ++k) r(static_cast<Eigen::Index>(k)) -= rows[k].measured;
        return r;
    }
};

struct LmOutcome {
    Eigen::VectorXd x;
    double loss = 0.0;
    int iterations = 0;
    bool converged = false;
    std::string diagnostic;
};

LmOutcome levenberg_marquardt(const Problem& prob, Eigen::VectorXd x, int max_iterations) {
    const Eigen::Index np = prob.size();
    x = x.cwiseMax(prob.lower);
    const Eigen::VectorXd& s = prob.scale;
    Eigen::MatrixXd jac;
    Eigen::VectorXd r = prob.residual(x, &jac);
    double loss = r.squaredNorm();
    double mu = 1e-3;
    LmOutcome out;
    for (int it = 0; it < max_iterations; ++it) {
        out.iterations = it + 1;
        const Eigen::MatrixXd js = jac * s.asDiagonal();
        const Eigen::VectorXd g = js.transpose() * r;
        const Eigen::MatrixXd h = js.transpose() * js;
        // Variables pinned at a bound with the gradient pushing outward stay fixed.
        std::vector<Eigen::Index> free;
        for (Eigen::Index i = 0; i < np; ++i) {
            const bool pinned = x(i) <= prob.lower(i) && g(i) > 0.0;
            if (!pinned) free.push_back(i);
        }
        double gnorm = 0.0;
        for (Eigen::Index i : free) gnorm = std::max(gnorm, std::abs(g(i)));
        if (free.empty() || gnorm <= 1e-15 * std::max(std::sqrt(loss), 1e-300) || loss == 0.0) {
            out.converged = true;
            break;
        }
        const auto nf = static_cast<Eigen::Index>(free.size());
        Eigen::MatrixXd hf(nf, nf);
        Eigen::VectorXd gf(nf);
        for (Eigen::Index a = 0; a < nf; ++a) {
            gf(a) = g(free[a]);
            for (Eigen::Index b = 0; b < nf; ++b) hf(a, b) = h(free[a], free[b]);
        }
        const double dmax = std::max(hf.diagonal().maxCoeff(), 1e-300);
        bool accepted = false;
        while (mu < 1e20) {
            Eigen::MatrixXd damped = hf;
            for (Eigen::Index a = 0; a < nf; ++a) damped(a, a) += mu * std::max(hf(a, a), 1e-12 * dmax);
            const Eigen::VectorXd step = damped.ldlt().solve(-gf);
            Eigen::VectorXd trial = x;
            for (Eigen::Index a = 0; a < nf; ++a) trial(free[a]) += s(free[a]) * step(a);
            trial = trial.cwiseMax(prob.lower);
            Eigen::MatrixXd tjac;
            const Eigen::VectorXd tr = prob.residual(trial, &tjac);
            const double tloss = tr.squaredNorm();
            if (std::isfinite(tloss) && tloss < loss) {
                const double rel_step = ((trial - x).cwiseQuotient(s)).norm() / std::max(1.0, x.cwiseQuotient(s).norm());
                const double rel_loss = (loss - tloss) / std::max(loss, 1e-300);
                x = trial;
                r = tr;
                jac = tjac;
                loss = tloss;
                mu = std::max(mu / 3.0, 1e-15);
                accepted = true;
                if (rel_step < 1e-13 || (rel_loss < 1e-15 && rel_step < 1e-9)) out.converged = true;
                break;
            }
            mu *= 4.0;
        }
        if (out.converged) break;
        if (!accepted) {
            // No descent at any damping: stationary up to rounding.
            out.converged = true;
            break;
        }
    }
    if (!out.converged) {
        out.diagnostic = "no convergence after " + std::to_string(max_iterations) + " iterations; returning best iterate";
    }
    out.x = x;
    out.loss = loss;
    return out;
}

Problem build_problem(std::span<const ExperimentRecord> records, std::span<const FilterFunction> filters,
                      const Spectrum& injected, ModelKind kind, const std::vector<int>& mask, bool keep_masked) {
    std::map<int, const FilterFunction*> by_label;
    for (const auto& f : filters) by_label[f.label] = &f;
    Problem prob;
    prob.kind = kind;
    prob.mask = mask;
    for (const auto& rec : records) {
        const bool is_masked = std::find(mask.begin(), mask.end(), rec.seq_index) != mask.end();
        if (is_masked && !keep_masked) continue;
        const auto it = by_label.find(rec.seq_index);
        if (it == by_label.end()) {
            throw std::invalid_argument("fit: no filter for sequence " + std::to_string(rec.seq_index));
        }
        const FilterFunction& f = *it->second;
        if (f.weights.size() != injected.values.size()) {
            throw std::invalid_argument("fit: injected spectrum and filter grids differ in size");
        }
        Row row;
        row.filter = &f;
        for (std::size_t i = 0; i < f.weights.size(); ++i) {
            row.gsum += f.weights[i];
            row.chi_inj += f.weights[i] * injected.values[i];
        }
        row.n = rec.n_pulses;
        row.measured = rec.survival_mean;
        prob.rows.push_back(row);
    }
    return prob;
}

void set_bounds_and_scale(Problem& prob) {
    const Eigen::Index np = prob.size();
    prob.lower = Eigen::VectorXd::Zero(np);
    prob.scale = Eigen::VectorXd::Ones(np);
    double g_mean = 0.0;
    double n_mean = 0.0;
    double n2_mean = 0.0;
    for (const auto& r : prob.rows) {
        g_mean += r.gsum;
        n_mean += r.n;
        n2_mean += r.n * r.n;
    }
    const auto count = static_cast<double>(std::max<std::size_t>(prob.rows.size(), 1));
    g_mean = std::max(g_mean / count, 1e-300);
    n_mean = std::max(n_mean / count, 1.0);
    n2_mean = std::max(n2_mean / count, 1.0);
    const Eigen::Index o = full_model(prob.kind) ? 2 : 0;
    prob.scale(o) = 1.0 / g_mean;
    prob.scale(o + 1) = 1.0 / n_mean;
    prob.scale(o + 2) = 1.0 / n2_mean;
    if (full_model(prob.kind)) {
        const double nyq = 0.5 / prob.rows.front().filter->sample_period;
        const double wn = two_pi * nyq * two_pi * nyq;
        prob.scale(0) = 1.0 / g_mean;
        prob.scale(1) = wn;
        prob.lower(1) = 1e-12 * wn;
    }
}

FitParams default_init(const Problem& prob) {
    FitParams p;
    p.kind = prob.kind;
    p.mask = prob.mask;
    p.c1 = 1e-4;
    p.c2 = 1e-4;
    struct Ex {
        double n;
        double excess;
        const Row* row;
    };
    std::vector<Ex> ex;
    for (const auto& r : prob.rows) {
        const auto d = decay_from_survival(std::clamp(r.measured, 0.0, 1.0));
        if (d.saturated) continue;
        ex.push_back({r.n, d.chi - r.chi_inj - p.c1 * r.n - p.c2 * r.n * r.n, &r});
    }
    std::sort(ex.begin(), ex.end(), [](const Ex& a, const Ex& b) { return a.n < b.n; });
    if (!ex.empty()) {
        const std::size_t q = std::max<std::size_t>(1, ex.size() / 4);
        double acc = 0.0;
        for (std::size_t i = ex.size() - q; i < ex.size(); ++i) acc += std::max(0.0, ex[i].excess) / ex[i].row->gsum;
        p.sigma2 = acc / static_cast<double>(q);
    }
    if (full_model(prob.kind)) {
        const double nyq = 0.5 / prob.rows.front().filter->sample_period;
        // Cutoff near the lowest nonzero probe frequency; amplitude from the
        // lowest-k excess over the white floor.
        double f1 = nyq / 64.0;
        for (const auto& e : ex) {
            if (e.n > 0) {
                f1 = e.row->filter->nominal_peak();
                break;
            }
        }
        const double w0 = two_pi * f1 * two_pi * f1;
        p.omega_c = std::sqrt(w0);
        p.amplitude = p.sigma2;
        if (!ex.empty()) {
            const double ls = lorentz_sum(*ex.front().row->filter, w0, nullptr);
            const double left = ex.front().excess - p.sigma2 * ex.front().row->gsum;
            if (ls > 0.0 && left > 0.0) p.amplitude = left / ls;
        }
    }
    return p;
}

std::vector<std::string> param_names(ModelKind kind) {
    if (full_model(kind)) return {"A", "omega_c2", "sigma2", "c1", "c2"};
    return {"sigma2", "c1", "c2"};
}

Eigen::MatrixXd numeric_jacobian(const Problem& prob, const Eigen::VectorXd& x) {
    const Eigen::Index np = prob.size();
    Eigen::MatrixXd num(static_cast<Eigen::Index>(prob.rows.size()), np);
    for (Eigen::Index i = 0; i < np; ++i) {
        const double h = 1e-6 * std::max(std::abs(x(i)), 1e-3 * prob.scale(i));
        Eigen::VectorXd xp = x;
        Eigen::VectorXd xm = x;
        xp(i) += h;
        xm(i) -= h;
        if (xm(i) < prob.lower(i)) {
            // One-sided second-order difference at a bound.
            Eigen::VectorXd x2 = x;
            x2(i) += 2.0 * h;
            num.col(i) = (-3.0 * prob.model(x, nullptr) + 4.0 * prob.model(xp, nullptr) - prob.model(x2, nullptr)) / (2.0 * h);
        } else {
            num.col(i) = (prob.model(xp, nullptr) - prob.model(xm, nullptr)) / (2.0 * h);
        }
    }
    return num;
}

double column_relative_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < a.cols(); ++i) {
        const double ref = std::max(a.col(i).norm(), b.col(i).norm());
        if (ref <= 1e-300) continue;
        worst = std::max(worst, (a.col(i) - b.col(i)).norm() / ref);
    }
    return worst;
}

Eigen::VectorXd start_point(const Eigen::VectorXd& base, const Problem& prob, int index) {
    // Deterministic spread of multiplicative perturbations around the base.
    static constexpr double factors[8][5] = {
        {1, 1, 1, 1, 1},        {0.1, 1, 1, 0.1, 0.1},  {10, 0.25, 1, 10, 1}, {1, 4, 0.5, 1, 10},
        {0.3, 0.1, 2, 0.3, 3},  {3, 10, 0.3, 3, 0.3},   {0.01, 1, 1, 1, 0.01}, {1, 0.5, 0.1, 0.01, 1},
    };
    Eigen::VectorXd x = base;
    const int row = index % 8;
    const Eigen::Index o = full_model(prob.kind) ? 0 : 2;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double f = factors[row][i + o];
        double v = x(i) * f;
        if (v <= prob.lower(i)) v = std::max(prob.lower(i), 1e-3 * prob.scale(i) * f);
        x(i) = v;
    }
    return x;
}

}  // namespace

void FitParams::validate() const {
    const double vals[] = {amplitude, omega_c, sigma2, c1, c2};
    for (double v : vals) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("FitParams: parameters must be finite and >= 0");
    }
}

bool FitParams::masked(int label) const { return std::find(mask.begin(), mask.end(), label) != mask.end(); }

double native_psd(const FitParams& params, double freq_hz) {
    double s = params.sigma2;
    if (full_model(params.kind) && params.omega_c > 0.0) {
        const double x = two_pi * freq_hz / params.omega_c;
        s += params.amplitude / (1.0 + x * x);
    }
    return s;
}

double predict_survival(const FitParams& params, const FilterFunction& filter, int n_pulses, const Spectrum& injected) {
    if (filter.weights.size() != injected.values.size()) {
        throw std::invalid_argument("predict_survival: filter and injected spectrum grids differ in size");
    }
    double e = params.c1 * n_pulses + params.c2 * static_cast<double>(n_pulses) * n_pulses;
    for (std::size_t i = 0; i < filter.weights.size(); ++i) {
        e += filter.weights[i] * (native_psd(params, filter.freqs[i]) + injected.values[i]);
    }
    return 0.5 + 0.5 * std::exp(-e);
}

double FitResult::rms_residual() const {
    double ss = 0.0;
    int count = 0;
    for (std::size_t k = 0; k < residuals.size(); ++k) {
        if (masked[k]) continue;
        ss += residuals[k] * residuals[k];
        ++count;
    }
    return count ? std::sqrt(ss / count) : 0.0;
}

JacobianCheck check_jacobian(const FitParams& params, std::span<const FilterFunction> filters,
                             std::span<const int> n_pulses, const Spectrum& injected) {
    if (filters.size() != n_pulses.size()) throw std::invalid_argument("check_jacobian: filters and n_pulses differ");
    std::vector<ExperimentRecord> recs;
    for (std::size_t k = 0; k < filters.size(); ++k) {
        ExperimentRecord r;
        r.seq_index = filters[k].label;
        r.n_pulses = n_pulses[k];
        r.survival_mean = 0.5;
        recs.push_back(r);
    }
    Problem prob = build_problem(recs, filters, injected, params.kind, {}, false);
    set_bounds_and_scale(prob);
    const Eigen::VectorXd x = pack(params);
    JacobianCheck out;
    prob.model(x, &out.analytic);
    out.numeric = numeric_jacobian(prob, x);
    out.max_relative_error = column_relative_error(out.analytic, out.numeric);
    return out;
}

FitResult fit(std::span<const ExperimentRecord> records, std::span<const FilterFunction> filters,
              const Spectrum& injected, ModelKind kind, const std::vector<int>& mask, const FitOptions& options) {
    if (options.starts < 1) throw std::invalid_argument("fit: starts must be >= 1");
    if (options.max_iterations < 1) throw std::invalid_argument("fit: max_iterations must be >= 1");
    Problem prob = build_problem(records, filters, injected, kind, mask, false);
    const std::size_t needed = full_model(kind) ? 6 : 4;
    if (prob.rows.size() < needed) {
        throw std::invalid_argument("fit: need at least " + std::to_string(needed) + " unmasked records, have " +
                                    std::to_string(prob.rows.size()));
    }
    set_bounds_and_scale(prob);

    FitParams init = options.init ? *options.init : default_init(prob);
    init.kind = kind;
    init.mask = mask;
    init.validate();
    const Eigen::VectorXd base = pack(init).cwiseMax(prob.lower);

    std::vector<Eigen::VectorXd> starts;
    for (int s = 0; s < options.starts; ++s) starts.push_back(s == 0 ? base : start_point(base, prob, s));
    if (full_model(kind)) {
        // Seeding from the nested white-only optimum guarantees the richer
        // model never ends with a larger loss.
        FitOptions white_opts = options;
        white_opts.init.reset();
        const FitResult white = fit(records, filters, injected, ModelKind::white_only, mask, white_opts);
        Eigen::VectorXd x(5);
        x << 0.0, base(1), white.params.sigma2, white.params.c1, white.params.c2;
        starts.push_back(x.cwiseMax(prob.lower));
    }

    std::vector<LmOutcome> outcomes(starts.size());
    parallel_for(starts.size(), options.workers,
                 [&](std::size_t i) { outcomes[i] = levenberg_marquardt(prob, starts[i], options.max_iterations); });
    std::size_t best = 0;
    for (std::size_t i = 1; i < outcomes.size(); ++i) {
        if (outcomes[i].loss < outcomes[best].loss) best = i;
    }
    const LmOutcome& lm = outcomes[best];

    FitResult out;
    out.params = unpack(lm.x, kind, mask);
    out.loss = lm.loss;
    out.converged = lm.converged;
    out.iterations = lm.iterations;
    out.best_start = static_cast<int>(best);
    out.diagnostic = lm.diagnostic;
    out.names = param_names(kind);
    out.values.assign(lm.x.data(), lm.x.data() + lm.x.size());

    Eigen::MatrixXd jac;
    const Eigen::VectorXd r = prob.residual(lm.x, &jac);
    const Eigen::MatrixXd num = numeric_jacobian(prob, lm.x);
    out.jacobian_check_error = column_relative_error(jac, num);
    if (out.jacobian_check_error > 1e-4) {
        char buf[128];
        std::snprintf(buf, sizeof buf, "analytic Jacobian disagrees with finite differences (rel. err %.3g)",
                      out.jacobian_check_error);
        out.warnings.emplace_back(buf);
    }
    const Eigen::VectorXd g = jac.transpose() * r;
    for (Eigen::Index i = 0; i < lm.x.size(); ++i) {
        const bool bound = lm.x(i) <= prob.lower(i) * (1.0 + 1e-12);
        out.at_bound.push_back(bound);
        if (!bound) out.gradient_norm = std::hypot(out.gradient_norm, g(i));
    }

    // Gauss-Newton covariance in scaled coordinates.
    const Eigen::Index np = prob.size();
    const auto dof = static_cast<double>(std::max<Eigen::Index>(static_cast<Eigen::Index>(prob.rows.size()) - np, 1));
    const Eigen::MatrixXd js = jac * prob.scale.asDiagonal();
    const Eigen::MatrixXd h = js.transpose() * js;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(h);
    const double emax = std::max(eig.eigenvalues().maxCoeff(), 1e-300);
    Eigen::MatrixXd inv = Eigen::MatrixXd::Zero(np, np);
    for (Eigen::Index i = 0; i < np; ++i) {
        const double ev = eig.eigenvalues()(i);
        const Eigen::VectorXd v = eig.eigenvectors().col(i);
        if (ev > 1e-12 * emax) {
            inv += v * v.transpose() / ev;
            continue;
        }
        std::string flat;
        for (Eigen::Index j = 0; j < np; ++j) {
            if (std::abs(v(j)) > 0.3) flat += (flat.empty() ? "" : ", ") + out.names[static_cast<std::size_t>(j)];
        }
        out.warnings.push_back("parameters not identifiable from these data (flat direction along " + flat + ")");
    }
    out.covariance = (lm.loss / dof) * (prob.scale.asDiagonal() * inv * prob.scale.asDiagonal());

    Problem all = build_problem(records, filters, injected, kind, mask, true);
    all.lower = prob.lower;
    all.scale = prob.scale;
    const Eigen::VectorXd pred = all.model(lm.x, nullptr);
    for (std::size_t k = 0; k < records.size(); ++k) {
        const auto& rec = records[k];
        out.labels.push_back(rec.seq_index);
        out.n_pulses.push_back(rec.n_pulses);
        out.measured.push_back(rec.survival_mean);
        out.predicted.push_back(pred(static_cast<Eigen::Index>(k)));
        out.residuals.push_back(rec.survival_mean - pred(static_cast<Eigen::Index>(k)));
        out.masked.push_back(std::find(mask.begin(), mask.end(), rec.seq_index) != mask.end());
    }
    return out;
}

}  // namespace dephase

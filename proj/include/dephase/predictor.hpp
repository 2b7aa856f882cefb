#pragma once

#include <Eigen/Dense>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dephase/noise_models.hpp"
#include "dephase/qubit_sim.hpp"
#include "dephase/sequences.hpp"

namespace dephase {

enum class ModelKind { lorentzian_plus_white, white_only };

/// Native background S_nat(omega) = A / (1 + omega^2 / omega_c^2) + sigma2 and
/// per-pulse error rates. mask lists sequence labels left out of the fit.
struct FitParams {
    double amplitude = 0.0;  // A, rad^2/Hz
    double omega_c = 0.0;    // rad/s
    double sigma2 = 0.0;     // rad^2/Hz
    double c1 = 0.0;
    double c2 = 0.0;
    ModelKind kind = ModelKind::lorentzian_plus_white;
    std::vector<int> mask;

    void validate() const;
    bool masked(int label) const;
};

double native_psd(const FitParams& params, double freq_hz);

/// 1/2 + 1/2 exp(-sum g (S_nat + S_inj) - c1 n - c2 n^2).
double predict_survival(const FitParams& params, const FilterFunction& filter, int n_pulses, const Spectrum& injected);

struct FitOptions {
    std::optional<FitParams> init;  // default: data-driven
    int starts = 8;
    int max_iterations = 400;
    unsigned workers = 0;
};

struct FitResult {
    FitParams params;
    double loss = 0.0;
    bool converged = false;
    int iterations = 0;
    int best_start = 0;
    std::string diagnostic;
    std::vector<std::string> warnings;

    std::vector<std::string> names;      // free parameters, in covariance order
    std::vector<double> values;          // free parameters (omega_c^2 for the cutoff)
    std::vector<bool> at_bound;
    Eigen::MatrixXd covariance;
    double jacobian_check_error = 0.0;   // max column relative error vs finite differences
    double gradient_norm = 0.0;          // |J^T r| over parameters off their bounds

    std::vector<int> labels;
    std::vector<int> n_pulses;
    std::vector<double> measured;
    std::vector<double> predicted;
    std::vector<double> residuals;       // measured - predicted
    std::vector<bool> masked;

    /// sqrt(mean residual^2) over unmasked sequences.
    double rms_residual() const;
};

/// Bounded nonlinear least squares on survival probabilities. The injected
/// spectrum is held fixed; only the native and pulse-error terms are free.
FitResult fit(std::span<const ExperimentRecord> records, std::span<const FilterFunction> filters,
              const Spectrum& injected, ModelKind kind, const std::vector<int>& mask, const FitOptions& options = {});

/// Analytic Jacobian of the model survivals with respect to the free
/// parameters at `params`, and the matching central-difference estimate.
struct JacobianCheck {
    Eigen::MatrixXd analytic;
    Eigen::MatrixXd numeric;
    double max_relative_error = 0.0;
};

JacobianCheck check_jacobian(const FitParams& params, std::span<const FilterFunction> filters,
                             std::span<const int> n_pulses, const Spectrum& injected);

}  // namespace dephase

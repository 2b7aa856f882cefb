#include "dephase/nnls.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>
#include <vector>

namespace dephase {

namespace {

Eigen::VectorXd solve_passive(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, const std::vector<bool>& passive) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
        if (passive[static_cast<std::size_t>(j)]) idx.push_back(j);
    }
    Eigen::MatrixXd sub(a.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t c = 0; c < idx.size(); ++c) sub.col(static_cast<Eigen::Index>(c)) = a.col(idx[c]);
    const Eigen::VectorXd zs = sub.colPivHouseholderQr().solve(b);
    Eigen::VectorXd z = Eigen::VectorXd::Zero(a.cols());
    for (std::size_t c = 0; c < idx.size(); ++c) z(idx[c]) = zs(static_cast<Eigen::Index>(c));
    return z;
}

}  // namespace

NnlsResult nnls(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, int max_iterations) {
    if (a.rows() != b.size()) throw std::invalid_argument("nnls: row count of A does not match b");
    const Eigen::Index n = a.cols();
    if (max_iterations <= 0) max_iterations = static_cast<int>(3 * std::max<Eigen::Index>(n, 1));

    NnlsResult res;
    res.x = Eigen::VectorXd::Zero(n);
    if (n == 0) {
        res.residual_norm = b.norm();
        res.converged = true;
        return res;
    }
    const double tol = 10.0 * std::numeric_limits<double>::epsilon() * a.cwiseAbs().maxCoeff() *
                       static_cast<double>(std::max(a.rows(), n)) * std::max(1.0, b.cwiseAbs().maxCoeff());

    std::vector<bool> passive(static_cast<std::size_t>(n), false);
    Eigen::VectorXd& x = res.x;
    Eigen::VectorXd w = a.transpose() * (b - a * x);

    for (;;) {
        Eigen::Index best = -1;
        double best_w = tol;
        for (Eigen::Index j = 0; j < n; ++j) {
            if (!passive[static_cast<std::size_t>(j)] && w(j) > best_w) {
                best_w = w(j);
                best = j;
            }
        }
        if (best < 0) {
            res.converged = true;
            break;
        }
        if (res.iterations >= max_iterations) break;
        ++res.iterations;
        passive[static_cast<std::size_t>(best)] = true;

        for (;;) {
            Eigen::VectorXd z = solve_passive(a, b, passive);
            bool feasible = true;
            for (Eigen::Index j = 0; j < n; ++j) {
                if (passive[static_cast<std::size_t>(j)] && z(j) <= 0.0) feasible = false;
            }
            if (feasible) {
                x = z;
                break;
            }
            double alpha = 1.0;
            for (Eigen::Index j = 0; j < n; ++j) {
                if (passive[static_cast<std::size_t>(j)] && z(j) <= 0.0) {
                    alpha = std::min(alpha, x(j) / (x(j) - z(j)));
                }
            }
            x += alpha * (z - x);
            bool moved = false;
            for (Eigen::Index j = 0; j < n; ++j) {
                if (passive[static_cast<std::size_t>(j)] && x(j) <= tol) {
                    passive[static_cast<std::size_t>(j)] = false;
                    x(j) = 0.0;
                    moved = true;
                }
            }
            // Guard against cycling when alpha lands on a rounding boundary.
            if (!moved) {
                passive[static_cast<std::size_t>(best)] = false;
                x(best) = 0.0;
                break;
            }
        }
        w = a.transpose() * (b - a * x);
        // A variable just dropped by the guard would be re-selected forever.
        if (!passive[static_cast<std::size_t>(best)]) w(best) = 0.0;
    }
    for (Eigen::Index j = 0; j < n; ++j) x(j) = std::max(0.0, x(j));
    res.residual_norm = (a * x - b).norm();
    return res;
}

}  // namespace dephase

#pragma once

// Per-equation least squares and one-step seemingly-unrelated-regressions
// FGLS for a system of equations observed on the same dates.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "impact/core_data.hpp"
#include "impact/design.hpp"
#include "impact/error.hpp"

namespace impact {

struct OlsFit {
    Eigen::VectorXd coefficients;
    Eigen::VectorXd residuals;
    double ssr = 0.0;
    std::optional<double> r_squared;
    Eigen::MatrixXd xtx_inverse;  // (X'X)^-1, assembled from the QR factor
};

/// 1 - SSR/SST, clamped to [0, 1]. Missing when the target has no variance.
inline std::optional<double> r_squared(const Eigen::Ref<const Eigen::VectorXd>& target,
                                       const Eigen::Ref<const Eigen::VectorXd>& residuals) {
    const double mean = target.mean();
    const double sst = (target.array() - mean).square().sum();
    if (!(sst > 1e-300) || sst <= 1e-24 * static_cast<double>(target.size()) * (1.0 + mean * mean)) return std::nullopt;
    return std::clamp(1.0 - residuals.squaredNorm() / sst, 0.0, 1.0);
}

/// Least squares via column-pivoted Householder QR. Throws
/// RankDeficientError when X lacks full column rank.
inline OlsFit fit_ols(const Eigen::Ref<const Eigen::MatrixXd>& X, const Eigen::Ref<const Eigen::VectorXd>& y,
                      const std::vector<std::string>& labels = {}, bool want_covariance = true) {
    if (X.rows() != y.size()) throw ArgumentError("fit_ols: row count mismatch", "estimator");
    if (X.rows() < X.cols())
        throw RankDeficientError("fit_ols: fewer rows than columns", {});
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    qr.setThreshold(1e-10);
    if (qr.rank() < X.cols()) {
        std::vector<std::string> bad;
        const auto& perm = qr.colsPermutation().indices();
        for (Eigen::Index i = qr.rank(); i < X.cols(); ++i) {
            const auto c = static_cast<std::size_t>(perm[i]);
            bad.push_back(c < labels.size() ? labels[c] : "column_" + std::to_string(c));
        }
        throw RankDeficientError("fit_ols: rank " + std::to_string(qr.rank()) + " < " + std::to_string(X.cols()),
                                 std::move(bad));
    }
    OlsFit fit;
    fit.coefficients = qr.solve(y);
    fit.residuals = y - X * fit.coefficients;
    fit.ssr = fit.residuals.squaredNorm();
    fit.r_squared = r_squared(y, fit.residuals);
    if (want_covariance) {
        const Eigen::Index p = X.cols();
        Eigen::MatrixXd R = qr.matrixR().topLeftCorner(p, p).template triangularView<Eigen::Upper>();
        Eigen::MatrixXd Rinv =
            R.template triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(p, p));
        Eigen::MatrixXd inner = Rinv * Rinv.transpose();
        const auto& P = qr.colsPermutation();
        fit.xtx_inverse = P * inner * P.transpose();
    }
    return fit;
}

inline OlsFit fit_ols(const DesignMatrix& d) { return fit_ols(d.rows, d.target, d.labels); }

/// Joint fit of J equations. Coefficients of equation j occupy
/// `stacked()[offsets[j] .. offsets[j] + coefficients[j].size())`.
struct SurFit {
    std::vector<Eigen::VectorXd> coefficients;
    std::vector<std::vector<std::string>> labels;
    std::vector<Eigen::Index> offsets;
    Eigen::MatrixXd residuals;        // usable days x J, from the final (GLS) coefficients
    Eigen::MatrixXd sigma;            // J x J, from first-stage residuals, divisor = usable days
    Eigen::MatrixXd coef_covariance;  // stacked coefficient covariance
    std::vector<std::optional<double>> r_squared;
    bool ols_fallback = false;
    std::string warning;

    // Model metadata, set by fit_model.
    ModelSpec spec;
    CalendarBasis basis;
    double offset = kDefaultLogOffset;
    std::vector<std::string> series_names;
    Date first_date;
    Date last_date;

    [[nodiscard]] Eigen::Index equations() const { return static_cast<Eigen::Index>(coefficients.size()); }
    [[nodiscard]] Eigen::Index usable_days() const { return residuals.rows(); }
    [[nodiscard]] Eigen::Index stacked_size() const {
        return coefficients.empty() ? 0 : offsets.back() + coefficients.back().size();
    }

    [[nodiscard]] Eigen::VectorXd stacked() const {
        Eigen::VectorXd out(stacked_size());
        for (std::size_t j = 0; j < coefficients.size(); ++j)
            out.segment(offsets[j], coefficients[j].size()) = coefficients[j];
        return out;
    }

    [[nodiscard]] Eigen::VectorXd standard_errors(Eigen::Index j) const {
        const auto n = coefficients[static_cast<std::size_t>(j)].size();
        return coef_covariance.diagonal().segment(offsets[static_cast<std::size_t>(j)], n).cwiseMax(0.0).cwiseSqrt();
    }
};

struct SurOptions {
    /// Replaces the estimated residual covariance in the GLS step. With the
    /// identity this reproduces per-equation least squares.
    std::optional<Eigen::MatrixXd> fixed_sigma;
    /// Smallest acceptable eigenvalue ratio of the residual covariance
    /// before falling back to per-equation least squares.
    double min_sigma_condition = 1e-12;
};

namespace detail {

inline void check_system(const std::vector<DesignMatrix>& designs) {
    if (designs.empty()) throw ArgumentError("fit_sur: no equations", "estimator");
    const auto n = designs.front().usable_days();
    for (const auto& d : designs) {
        if (d.usable_days() != n || d.first_date != designs.front().first_date)
            throw ArgumentError("fit_sur: equations must share the same usable date range", "estimator");
        if (d.target.size() != n) throw ArgumentError("fit_sur: target length mismatch", "estimator");
    }
}

inline bool sigma_usable(const Eigen::MatrixXd& sigma, double min_condition) {
    if (!sigma.allFinite()) return false;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sigma, Eigen::EigenvaluesOnly);
    const double hi = es.eigenvalues().maxCoeff();
    const double lo = es.eigenvalues().minCoeff();
    return hi > 1e-300 && lo > min_condition * hi;
}

}  // namespace detail

/// One-step FGLS: per-equation least squares, Sigma = E'E / n from those
/// residuals, then GLS on the stacked system with weight Sigma^-1 (x) I.
/// The GLS step whitens each date's J-vector by the inverse Cholesky factor
/// of Sigma and solves the whitened stack by Householder QR.
inline SurFit fit_sur(const std::vector<DesignMatrix>& designs, const SurOptions& opt = {}) {
    detail::check_system(designs);
    const auto J = static_cast<Eigen::Index>(designs.size());
    const Eigen::Index n = designs.front().usable_days();

    SurFit fit;
    fit.labels.reserve(designs.size());
    Eigen::Index total = 0;
    for (const auto& d : designs) {
        fit.offsets.push_back(total);
        fit.labels.push_back(d.labels);
        total += d.width();
    }

    std::vector<OlsFit> stage1;
    stage1.reserve(designs.size());
    Eigen::MatrixXd E(n, J);
    for (Eigen::Index j = 0; j < J; ++j) {
        stage1.push_back(fit_ols(designs[static_cast<std::size_t>(j)]));
        E.col(j) = stage1.back().residuals;
    }
    fit.sigma = (E.transpose() * E) / static_cast<double>(n);

    const Eigen::MatrixXd weight_sigma = opt.fixed_sigma.value_or(fit.sigma);
    if (weight_sigma.rows() != J || weight_sigma.cols() != J)
        throw ArgumentError("fit_sur: fixed sigma has wrong shape", "estimator");

    auto ols_result = [&] {
        fit.coefficients.clear();
        fit.coef_covariance = Eigen::MatrixXd::Zero(total, total);
        for (Eigen::Index j = 0; j < J; ++j) {
            const auto& s1 = stage1[static_cast<std::size_t>(j)];
            fit.coefficients.push_back(s1.coefficients);
            const auto p = s1.coefficients.size();
            fit.coef_covariance.block(fit.offsets[j], fit.offsets[j], p, p) = fit.sigma(j, j) * s1.xtx_inverse;
        }
        fit.residuals = E;
    };

    if (!detail::sigma_usable(weight_sigma, opt.min_sigma_condition)) {
        fit.ols_fallback = true;
        fit.warning = "residual covariance is singular; using per-equation least squares";
        ols_result();
    } else {
        const Eigen::MatrixXd L = weight_sigma.llt().matrixL();
        const Eigen::MatrixXd W =
            L.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(J, J));  // L^-1, lower

        Eigen::MatrixXd Xw = Eigen::MatrixXd::Zero(n * J, total);
        Eigen::VectorXd yw = Eigen::VectorXd::Zero(n * J);
        for (Eigen::Index i = 0; i < J; ++i) {
            for (Eigen::Index k = 0; k <= i; ++k) {
                const double w = W(i, k);
                if (w == 0.0) continue;
                const auto& d = designs[static_cast<std::size_t>(k)];
                Xw.block(i * n, fit.offsets[k], n, d.width()) = w * d.rows;
                yw.segment(i * n, n) += w * d.target;
            }
        }
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(Xw);
        const Eigen::VectorXd theta = qr.solve(yw);
        const Eigen::MatrixXd R = qr.matrixQR().topLeftCorner(total, total).triangularView<Eigen::Upper>();
        const Eigen::MatrixXd Rinv =
            R.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(total, total));
        fit.coef_covariance = Rinv * Rinv.transpose();
        fit.coef_covariance = 0.5 * (fit.coef_covariance + fit.coef_covariance.transpose());

        fit.residuals.resize(n, J);
        for (Eigen::Index j = 0; j < J; ++j) {
            const auto& d = designs[static_cast<std::size_t>(j)];
            fit.coefficients.push_back(theta.segment(fit.offsets[j], d.width()));
            fit.residuals.col(j) = d.target - d.rows * fit.coefficients.back();
        }
    }

    for (Eigen::Index j = 0; j < J; ++j)
        fit.r_squared.push_back(r_squared(designs[static_cast<std::size_t>(j)].target, fit.residuals.col(j)));
    fit.first_date = designs.front().first_date;
    fit.last_date = fit.first_date + (n - 1);
    return fit;
}

struct FitOptions {
    double offset = kDefaultLogOffset;
    SurOptions sur;
};

/// Builds the designs for every series of `panel` and fits them jointly.
/// The trend basis is anchored on the panel's own span.
inline SurFit fit_model(const DailyPanel& panel, const ModelSpec& spec, const FitOptions& opt = {}) {
    DesignOptions dopt;
    dopt.offset = opt.offset;
    dopt.basis = basis_for(panel);
    auto fit = fit_sur(build_designs(panel, spec, dopt), opt.sur);
    fit.spec = spec;
    fit.basis = *dopt.basis;
    fit.offset = opt.offset;
    fit.series_names = panel.series_names();
    return fit;
}

/// Labeled coefficient table, residual covariance, and R-squared.
inline nlohmann::ordered_json fit_report(const SurFit& fit) {
    nlohmann::ordered_json j;
    j["estimator"] = fit.ols_fallback ? "per-equation least squares (fallback)" : "one-step SUR FGLS";
    if (!fit.warning.empty()) j["warning"] = fit.warning;
    j["first_date"] = fit.first_date.iso();
    j["last_date"] = fit.last_date.iso();
    j["usable_days"] = fit.usable_days();
    j["log_offset"] = fit.offset;
    j["sales_lags"] = fit.spec.sales_lags;
    j["license_lags"] = fit.spec.license_lags;
    j["time_effects"] = fit.spec.time_effects_label();
    auto eqs = nlohmann::ordered_json::array();
    for (Eigen::Index e = 0; e < fit.equations(); ++e) {
        const auto u = static_cast<std::size_t>(e);
        nlohmann::ordered_json q;
        q["series"] = u < fit.series_names.size() ? fit.series_names[u] : "series_" + std::to_string(e);
        if (fit.r_squared[u]) q["r_squared"] = *fit.r_squared[u];
        else q["r_squared"] = nullptr;
        const auto se = fit.standard_errors(e);
        auto coefs = nlohmann::ordered_json::array();
        for (Eigen::Index k = 0; k < fit.coefficients[u].size(); ++k)
            coefs.push_back({{"term", fit.labels[u][static_cast<std::size_t>(k)]},
                             {"estimate", fit.coefficients[u][k]},
                             {"std_error", se[k]}});
        q["coefficients"] = coefs;
        eqs.push_back(q);
    }
    j["equations"] = eqs;
    auto sig = nlohmann::ordered_json::array();
    for (Eigen::Index r = 0; r < fit.sigma.rows(); ++r) {
        auto row = nlohmann::ordered_json::array();
        for (Eigen::Index c = 0; c < fit.sigma.cols(); ++c) row.push_back(fit.sigma(r, c));
        sig.push_back(row);
    }
    j["sigma"] = sig;
    return j;
}

}  // namespace impact

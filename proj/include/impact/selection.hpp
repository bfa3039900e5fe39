#pragma once

// Blocked K-fold cross-validation of one-step-ahead log-scale prediction
// errors, successive lag selection, and time-effect specification grids.

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "impact/core_data.hpp"
#include "impact/design.hpp"
#include "impact/estimator.hpp"

namespace impact {

struct CvOptions {
    int folds = 10;
    double offset = kDefaultLogOffset;
    /// First panel row evaluated. Candidates compared against each other
    /// must share it so they predict identical dates; defaults to the
    /// specification's deepest lag.
    std::optional<Eigen::Index> first_row;
};

struct CvReport {
    ModelSpec spec;
    std::vector<std::string> series;
    Eigen::VectorXd rmse;
    Eigen::VectorXd mae;
    int fold_count = 0;
    Eigen::Index predicted_rows = 0;
    std::string fold_assignment;

    /// MAE averaged equally over series.
    [[nodiscard]] double mean_mae() const { return mae.mean(); }
};

/// Half-open row ranges of K contiguous blocks covering [0, n).
inline std::vector<std::pair<Eigen::Index, Eigen::Index>> contiguous_folds(Eigen::Index n, int k) {
    std::vector<std::pair<Eigen::Index, Eigen::Index>> out;
    for (int f = 0; f < k; ++f) out.emplace_back(n * f / k, n * (f + 1) / k);
    return out;
}

/// Each fold is one contiguous block of usable dates. The model is fit on
/// the remaining blocks and predicts the block one step ahead from observed
/// lags; errors are accumulated on the log scale.
inline CvReport cross_validate(const DailyPanel& panel, const ModelSpec& spec, const CvOptions& opt = {}) {
    if (opt.folds < 2) throw ArgumentError("cross-validation needs at least 2 folds", "selection");
    DesignOptions dopt;
    dopt.offset = opt.offset;
    dopt.basis = basis_for(panel);
    dopt.first_row = opt.first_row;
    const auto designs = build_designs(panel, spec, dopt);
    const Eigen::Index n = designs.front().usable_days();
    if (n < opt.folds) throw ArgumentError("fewer usable days than folds", "selection");
    const auto J = static_cast<Eigen::Index>(designs.size());
    const Eigen::Index p = designs.front().width();

    CvReport rep;
    rep.spec = spec;
    rep.series = panel.series_names();
    rep.fold_count = opt.folds;
    rep.predicted_rows = n;
    rep.fold_assignment = std::to_string(opt.folds) + " contiguous blocks over " + panel.date_at(designs.front().first_row).iso() +
                          ".." + panel.end_date().iso();
    Eigen::VectorXd abs_sum = Eigen::VectorXd::Zero(J);
    Eigen::VectorXd sq_sum = Eigen::VectorXd::Zero(J);

    const auto folds = contiguous_folds(n, opt.folds);
    for (std::size_t f = 0; f < folds.size(); ++f) {
        const auto [lo, hi] = folds[f];
        const Eigen::Index held = hi - lo;
        Eigen::MatrixXd X(n - held, p);
        Eigen::VectorXd y(n - held);
        for (Eigen::Index j = 0; j < J; ++j) {
            const auto& d = designs[static_cast<std::size_t>(j)];
            X.topRows(lo) = d.rows.topRows(lo);
            X.bottomRows(n - hi) = d.rows.bottomRows(n - hi);
            y.head(lo) = d.target.head(lo);
            y.tail(n - hi) = d.target.tail(n - hi);
            OlsFit fit;
            try {
                fit = fit_ols(X, y, d.labels, false);
            } catch (const RankDeficientError& e) {
                throw RankDeficientError("fold " + std::to_string(f + 1) + " of " + std::to_string(opt.folds) +
                                             " (series '" + rep.series[static_cast<std::size_t>(j)] + "')",
                                         e.columns());
            }
            const Eigen::VectorXd err = d.target.segment(lo, held) - d.rows.middleRows(lo, held) * fit.coefficients;
            abs_sum[j] += err.cwiseAbs().sum();
            sq_sum[j] += err.squaredNorm();
        }
    }
    rep.mae = abs_sum / static_cast<double>(n);
    rep.rmse = (sq_sum / static_cast<double>(n)).cwiseSqrt();
    return rep;
}

enum class LagKind { Sales, License };

struct LagSelection {
    LagKind kind = LagKind::Sales;
    int lags = 0;
    bool truncated = false;           // MAE still falling at max_lag
    std::vector<double> mae_by_lag;   // index = candidate lag count, evaluated prefix only
};

/// Adds lags one at a time from zero and stops the first time another lag
/// raises the series-averaged CV MAE. All candidates predict the same dates.
inline LagSelection select_lags(const DailyPanel& panel, const ModelSpec& base, LagKind which, int max_lag,
                                CvOptions opt = {}) {
    if (max_lag < 1) throw ArgumentError("max_lag must be at least 1", "selection");
    const int other = which == LagKind::Sales ? base.license_lags : base.sales_lags;
    if (!opt.first_row) opt.first_row = std::max(max_lag, other);

    LagSelection out;
    out.kind = which;
    auto mae_at = [&](int lags) {
        ModelSpec s = base;
        (which == LagKind::Sales ? s.sales_lags : s.license_lags) = lags;
        return cross_validate(panel, s, opt).mean_mae();
    };
    out.mae_by_lag.push_back(mae_at(0));
    for (int l = 1; l <= max_lag; ++l) {
        out.mae_by_lag.push_back(mae_at(l));
        if (out.mae_by_lag[static_cast<std::size_t>(l)] > out.mae_by_lag[static_cast<std::size_t>(l - 1)]) {
            out.lags = l - 1;
            return out;
        }
    }
    out.lags = max_lag;
    out.truncated = true;
    return out;
}

struct SequentialLagSelection {
    LagSelection sales;
    LagSelection license;
    ModelSpec spec;
};

/// Sales lags first, then license lags with the sales depth held fixed.
inline SequentialLagSelection select_lags_sequential(const DailyPanel& panel, const ModelSpec& base, int max_sales,
                                                     int max_license, const CvOptions& opt = {}) {
    SequentialLagSelection out;
    ModelSpec s = base;
    s.license_lags = 0;
    out.sales = select_lags(panel, s, LagKind::Sales, max_sales, opt);
    s.sales_lags = out.sales.lags;
    out.license = select_lags(panel, s, LagKind::License, max_license, opt);
    s.license_lags = out.license.lags;
    out.spec = s;
    return out;
}

/// One report per specification, all evaluated on the same folds.
inline std::vector<CvReport> compare_time_specs(const DailyPanel& panel, const std::vector<ModelSpec>& specs,
                                                CvOptions opt = {}) {
    if (specs.empty()) throw ArgumentError("compare_time_specs needs at least one specification", "selection");
    if (!opt.first_row) {
        Eigen::Index deepest = 0;
        for (const auto& s : specs) deepest = std::max<Eigen::Index>(deepest, s.max_lag());
        opt.first_row = deepest;
    }
    std::vector<CvReport> out;
    out.reserve(specs.size());
    for (const auto& s : specs) out.push_back(cross_validate(panel, s, opt));
    return out;
}

/// Delimited table: specification rows marked "x", then RMSE and MAE rows
/// for every series, one column per specification.
inline void write_cv_table(std::ostream& out, const std::vector<CvReport>& reports) {
    auto flag_row = [&](const char* name, auto pred) {
        out << name;
        for (const auto& r : reports) out << ',' << (pred(r.spec) ? "x" : "");
        out << '\n';
    };
    out << "row";
    for (std::size_t i = 0; i < reports.size(); ++i) out << ",spec_" << (i + 1);
    out << '\n';
    flag_row("Day-of-Week F.E.", [](const ModelSpec& s) { return s.day_of_week; });
    flag_row("Holiday F.E.", [](const ModelSpec& s) { return s.holiday; });
    flag_row("Day-of-Year F.E.", [](const ModelSpec& s) { return s.day_of_year; });
    flag_row("Week-of-Year F.E.", [](const ModelSpec& s) { return s.week_of_year; });
    flag_row("Linear Trend", [](const ModelSpec& s) { return s.linear_trend; });
    flag_row("Quadratic Trend", [](const ModelSpec& s) { return s.quadratic_trend; });
    out << "Sales Lags";
    for (const auto& r : reports) out << ',' << r.spec.sales_lags;
    out << "\nLicense Lags";
    for (const auto& r : reports) out << ',' << r.spec.license_lags;
    out << '\n';
    if (reports.empty()) return;
    char buf[32];
    for (std::size_t j = 0; j < reports.front().series.size(); ++j) {
        const auto& name = reports.front().series[j];
        out << name << ": Root Mean Sq. Prediction Error";
        for (const auto& r : reports) {
            std::snprintf(buf, sizeof buf, "%.6f", r.rmse[static_cast<Eigen::Index>(j)]);
            out << ',' << buf;
        }
        out << '\n' << name << ": Mean Abs. Prediction Error";
        for (const auto& r : reports) {
            std::snprintf(buf, sizeof buf, "%.6f", r.mae[static_cast<Eigen::Index>(j)]);
            out << ',' << buf;
        }
        out << '\n';
    }
}

}  // namespace impact

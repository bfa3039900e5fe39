#pragma once

// Synthetic daily panels drawn from the log-scale autoregressive model with
// calendar effects and lagged license regressors, plus multiplicative
// interventions with exactly known effects.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "impact/core_data.hpp"
#include "impact/date.hpp"
#include "impact/design.hpp"
#include "impact/detail/rng.hpp"
#include "impact/error.hpp"

namespace impact {

/// True coefficients of one equation. Weekday effects are indexed Monday = 0;
/// week-of-year seasonality is amplitude * sin(2 pi (week - 1) / 52 + phase).
/// Trends use t / days and (t / days)^2 with t = 1 on the first panel day.
struct SeriesParams {
    std::string name;
    double intercept = 0.0;
    std::vector<double> ar;
    std::array<double, 7> weekday{};
    double holiday = 0.0;
    double seasonal_amplitude = 0.0;
    double seasonal_phase = 0.0;
    double trend = 0.0;
    double trend_sq = 0.0;
    std::vector<double> new_license;
    std::vector<double> renewal_license;
};

/// Daily Poisson application streams; each application is issued after a
/// delay drawn uniformly from [delay_min, delay_max] days.
struct LicenseProcess {
    double new_rate = 30.0;
    double renewal_rate = 20.0;
    int delay_min = 35;
    int delay_max = 40;
};

/// Multiplies series `series` on days [start_offset, end_offset] after the
/// intervention day by `factor` on the level scale.
struct Intervention {
    Eigen::Index series = 0;
    int start_offset = 0;
    int end_offset = 0;
    double factor = 1.0;
};

struct SynthConfig {
    Date start{2010, 1, 1};
    Eigen::Index days = 1000;
    std::vector<SeriesParams> series;
    Eigen::MatrixXd sigma;  // J x J innovation covariance on the log scale
    LicenseProcess licenses;
    std::set<Date> holidays;
    Eigen::Index burn_in = 200;
    std::optional<Eigen::Index> intervention_day;  // panel index of offset 0
    std::vector<Intervention> interventions;
    bool round_counts = true;
    double offset = kDefaultLogOffset;
    std::uint64_t seed = 1;

    [[nodiscard]] Eigen::Index series_count() const { return static_cast<Eigen::Index>(series.size()); }
};

struct TrueEffect {
    Eigen::Index series = 0;
    int start_offset = 0;
    int end_offset = 0;
    double factor = 1.0;
    double cumulative = 0.0;  // sum of factual - counterfactual over the window
};

struct SynthTruth {
    Eigen::MatrixXd counterfactual;  // days x J levels
    Eigen::MatrixXd factual;
    Eigen::MatrixXd log_path;        // latent log-scale outcomes, no intervention
    std::vector<TrueEffect> effects;
};

struct SynthPanel {
    DailyPanel factual;
    SynthTruth truth;
};

/// Largest modulus among the roots of the AR companion matrix.
inline double ar_spectral_radius(const std::vector<double>& ar) {
    if (ar.empty()) return 0.0;
    const auto p = static_cast<Eigen::Index>(ar.size());
    Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(p, p);
    for (Eigen::Index i = 0; i < p; ++i) companion(0, i) = ar[static_cast<std::size_t>(i)];
    for (Eigen::Index i = 1; i < p; ++i) companion(i, i - 1) = 1.0;
    Eigen::EigenSolver<Eigen::MatrixXd> es(companion, false);
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

inline void validate(const SynthConfig& c) {
    const auto J = c.series_count();
    if (J < 1 || c.days < 1) throw ArgumentError("synthetic panel needs at least one series and one day", "synthgen");
    if (c.sigma.rows() != J || c.sigma.cols() != J) throw ArgumentError("sigma must be J x J", "synthgen");
    if (!c.sigma.isApprox(c.sigma.transpose(), 1e-12) && c.sigma.norm() > 0.0)
        throw ArgumentError("sigma must be symmetric", "synthgen");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c.sigma, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -1e-12 * std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff()))
        throw ArgumentError("sigma must be positive semidefinite", "synthgen");
    for (const auto& s : c.series) {
        if (ar_spectral_radius(s.ar) >= 1.0)
            throw ArgumentError("series '" + s.name + "' has a non-stationary AR polynomial", "synthgen");
        if (s.new_license.size() != s.renewal_license.size())
            throw ArgumentError("series '" + s.name + "' needs equally many new and renewal license lags", "synthgen");
    }
    if (c.licenses.delay_min < 0 || c.licenses.delay_max < c.licenses.delay_min)
        throw ArgumentError("license delay range is invalid", "synthgen");
    if (!(c.offset > 0.0)) throw ArgumentError("log offset must be positive", "synthgen");
    if (!c.interventions.empty() && !c.intervention_day)
        throw ArgumentError("interventions need an intervention day", "synthgen");
}

/// Multiplies `level` on [anchor + start, anchor + end] by each factor.
/// Windows touching the same series (here: the same path) may not overlap.
inline Eigen::VectorXd inject_intervention(Eigen::VectorXd level, Eigen::Index anchor,
                                           const std::vector<Intervention>& windows) {
    std::vector<bool> used(static_cast<std::size_t>(level.size()), false);
    for (const auto& w : windows) {
        if (w.start_offset < 0 || w.end_offset < w.start_offset)
            throw ArgumentError("intervention window must satisfy 0 <= start <= end", "synthgen");
        const Eigen::Index a = anchor + w.start_offset;
        const Eigen::Index b = anchor + w.end_offset;
        if (a < 0 || b >= level.size()) throw ArgumentError("intervention window outside the path", "synthgen");
        for (Eigen::Index t = a; t <= b; ++t) {
            if (used[static_cast<std::size_t>(t)])
                throw ArgumentError("overlapping intervention windows on one series", "synthgen");
            used[static_cast<std::size_t>(t)] = true;
            level[t] *= w.factor;
        }
    }
    return level;
}

namespace detail {

inline Eigen::MatrixXd covariance_root(const Eigen::MatrixXd& sigma) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (sigma + sigma.transpose()));
    return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

}  // namespace detail

/// Simulates licenses and log sales, then materializes counterfactual and
/// factual level paths from the same innovations.
inline SynthPanel generate_panel(const SynthConfig& c) {
    validate(c);
    const auto J = c.series_count();
    const Eigen::Index T = c.days;
    const Eigen::Index N = c.burn_in + T;
    std::mt19937_64 rng = detail::substream(c.seed, 0);

    // Licenses for simulation days 0..N-1; applications start early enough
    // that the first day already sees a full delay window.
    const int lead = c.licenses.delay_max;
    Eigen::VectorXd issued_new = Eigen::VectorXd::Zero(N), issued_renew = Eigen::VectorXd::Zero(N);
    {
        std::poisson_distribution<int> apps_new(c.licenses.new_rate);
        std::poisson_distribution<int> apps_renew(c.licenses.renewal_rate);
        std::uniform_int_distribution<int> delay(c.licenses.delay_min, c.licenses.delay_max);
        for (Eigen::Index d = -lead; d < N; ++d) {
            const int an = c.licenses.new_rate > 0 ? apps_new(rng) : 0;
            for (int k = 0; k < an; ++k)
                if (auto t = d + delay(rng); t >= 0 && t < N) issued_new[t] += 1.0;
            const int ar = c.licenses.renewal_rate > 0 ? apps_renew(rng) : 0;
            for (int k = 0; k < ar; ++k)
                if (auto t = d + delay(rng); t >= 0 && t < N) issued_renew[t] += 1.0;
        }
    }
    Eigen::VectorXd zn(N), zr(N);
    for (Eigen::Index t = 0; t < N; ++t) {
        zn[t] = std::log(issued_new[t] + c.offset);
        zr[t] = std::log(issued_renew[t] + c.offset);
    }

    const Eigen::MatrixXd root = detail::covariance_root(c.sigma);
    std::normal_distribution<double> normal;
    Eigen::MatrixXd y(N, J);
    const double two_pi = 2.0 * std::numbers::pi;
    for (Eigen::Index t = 0; t < N; ++t) {
        const Date date = c.start + (t - c.burn_in);
        Eigen::VectorXd z(J);
        for (Eigen::Index j = 0; j < J; ++j) z[j] = normal(rng);
        const Eigen::VectorXd eps = root * z;
        const double tt = static_cast<double>(t - c.burn_in + 1) / static_cast<double>(T);
        const int week = week_of_year(date);
        for (Eigen::Index j = 0; j < J; ++j) {
            const auto& s = c.series[static_cast<std::size_t>(j)];
            double ar_sum = 0.0;
            for (double a : s.ar) ar_sum += a;
            double v = s.intercept + s.weekday[static_cast<std::size_t>(date.weekday_index())] +
                       (c.holidays.contains(date) ? s.holiday : 0.0) +
                       s.seasonal_amplitude * std::sin(two_pi * (week - 1) / 52.0 + s.seasonal_phase) +
                       s.trend * tt + s.trend_sq * tt * tt;
            for (std::size_t l = 0; l < s.ar.size(); ++l) {
                const auto back = t - static_cast<Eigen::Index>(l) - 1;
                // Before the first simulated day, lags sit at the intercept's fixed point.
                v += s.ar[l] * (back >= 0 ? y(back, j) : s.intercept / (1.0 - ar_sum));
            }
            for (std::size_t l = 0; l < s.new_license.size(); ++l) {
                const auto back = std::max<Eigen::Index>(t - static_cast<Eigen::Index>(l) - 1, 0);
                v += s.new_license[l] * zn[back] + s.renewal_license[l] * zr[back];
            }
            y(t, j) = v + eps[j];
        }
    }

    SynthTruth truth;
    truth.log_path = y.bottomRows(T);
    Eigen::MatrixXd level = truth.log_path.unaryExpr([&](double v) { return inverse_log_offset(v, c.offset); });
    if (!level.allFinite()) throw ArgumentError("simulated path diverged", "synthgen");
    Eigen::MatrixXd factual_level = level;
    for (Eigen::Index j = 0; j < J; ++j) {
        std::vector<Intervention> mine;
        for (const auto& w : c.interventions)
            if (w.series == j) mine.push_back(w);
        if (!mine.empty()) factual_level.col(j) = inject_intervention(level.col(j), *c.intervention_day, mine);
    }
    auto materialize = [&](const Eigen::MatrixXd& m) {
        return c.round_counts ? Eigen::MatrixXd(m.array().round()) : m;
    };
    truth.counterfactual = materialize(level);
    truth.factual = materialize(factual_level);
    for (const auto& w : c.interventions) {
        if (w.series < 0 || w.series >= J) throw ArgumentError("intervention series out of range", "synthgen");
        TrueEffect e{w.series, w.start_offset, w.end_offset, w.factor, 0.0};
        for (int h = w.start_offset; h <= w.end_offset; ++h) {
            const auto t = *c.intervention_day + h;
            e.cumulative += truth.factual(t, w.series) - truth.counterfactual(t, w.series);
        }
        truth.effects.push_back(e);
    }

    std::vector<std::string> names;
    for (const auto& s : c.series) names.push_back(s.name);
    DailyPanel panel(c.start, truth.factual, issued_new.tail(T), issued_renew.tail(T), std::move(names));
    return SynthPanel{std::move(panel), std::move(truth)};
}

/// Four firearm-type series with two sales lags, two license lags, weekday,
/// holiday, week-of-year and quadratic-trend effects, mean daily level near
/// `mean_level`, innovation sd `sd` and cross-series correlation `rho`.
inline SynthConfig four_series_config(Eigen::Index days, double sd, double rho, std::uint64_t seed,
                                       double mean_level = 100.0) {
    SynthConfig c;
    c.start = Date(2010, 1, 1);
    c.days = days;
    c.seed = seed;
    c.holidays = us_federal_holidays(2008, 2010 + static_cast<int>(days / 365) + 2);
    const std::array<const char*, 4> names = {"Handgun", "TAWRifle", "NonTAWRifle", "Shotgun"};
    const std::array<double, 4> scale = {1.0, 0.6, 0.8, 0.4};
    for (std::size_t j = 0; j < 4; ++j) {
        SeriesParams s;
        s.name = names[j];
        s.ar = {0.35, 0.2};
        s.weekday = {0.0, -0.05, -0.02, 0.03, 0.15, 0.25, -0.6};
        s.holiday = -0.4;
        s.seasonal_amplitude = 0.15;
        s.seasonal_phase = 0.3 * static_cast<double>(j);
        s.trend = 0.4;
        s.trend_sq = -0.2;
        s.new_license = {0.08, 0.04};
        s.renewal_license = {0.05, 0.02};
        const double target = std::log(mean_level * scale[j]);
        const double persistence = 1.0 - (s.ar[0] + s.ar[1]);
        s.intercept = target * persistence - 0.12 * std::log(c.licenses.new_rate) -
                      0.07 * std::log(c.licenses.renewal_rate);
        c.series.push_back(std::move(s));
    }
    c.sigma = Eigen::MatrixXd::Constant(4, 4, rho * sd * sd);
    c.sigma.diagonal().setConstant(sd * sd);
    return c;
}

/// Expands a panel into one transaction per unit count and one license
/// record per issuance, with deterministic dealer and purchaser ids.
struct ExpandedRecords {
    std::vector<TransactionRecord> transactions;
    std::vector<LicenseRecord> licenses;
};

inline ExpandedRecords expand_to_records(const DailyPanel& panel, std::uint64_t seed, int dealers = 50,
                                         int purchasers = 20000) {
    ExpandedRecords out;
    auto rng = detail::substream(seed, 0x5EED);
    std::uniform_int_distribution<int> dealer(0, dealers - 1);
    std::uniform_int_distribution<int> buyer(0, purchasers - 1);
    for (Eigen::Index t = 0; t < panel.days(); ++t) {
        const Date d = panel.date_at(t);
        for (Eigen::Index j = 0; j < panel.series_count(); ++j) {
            auto type = parse_firearm_type(panel.series_names()[static_cast<std::size_t>(j)]);
            if (!type) throw ArgumentError("series '" + panel.series_names()[static_cast<std::size_t>(j)] +
                                               "' is not a firearm type",
                                           "synthgen");
            const auto n = static_cast<long>(std::llround(panel.counts()(t, j)));
            for (long k = 0; k < n; ++k) {
                const int dl = dealer(rng);
                char zip[16];
                std::snprintf(zip, sizeof zip, "%05d", 1000 + dl);
                out.transactions.push_back(TransactionRecord{d, *type, "D" + std::to_string(dl), std::string(zip),
                                                             "P" + std::to_string(buyer(rng)), "Make", "Model"});
            }
        }
        for (long k = 0; k < std::llround(panel.new_licenses()[t]); ++k)
            out.licenses.push_back({d, LicenseKind::New});
        for (long k = 0; k < std::llround(panel.renewal_licenses()[t]); ++k)
            out.licenses.push_back({d, LicenseKind::Renewal});
    }
    return out;
}

}  // namespace impact

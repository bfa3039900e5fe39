#pragma once

// Windowed observed-versus-counterfactual effects, pre-intervention holdout
// validation, and breakeven arithmetic.

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
#include "impact/forecast.hpp"

namespace impact {

/// Days [start_offset, end_offset] after the cutoff, both inclusive; day 0 is
/// the cutoff date itself.
struct EffectWindow {
    std::string label;
    int start_offset = 0;
    int end_offset = 0;

    void validate() const {
        if (start_offset < 0 || end_offset < start_offset)
            throw ArgumentError("effect window '" + label + "' must satisfy 0 <= start <= end", "effects");
    }
    [[nodiscard]] int length() const { return end_offset - start_offset + 1; }

    static EffectWindow immediate() { return {"immediate", 0, 4}; }
    static EffectWindow short_run() { return {"short_run", 5, 25}; }
};

struct EffectEstimate {
    EffectWindow window;
    std::string series;
    double observed_cum = 0.0;
    double predicted_cum = 0.0;
    double abs_diff = 0.0;
    std::optional<double> pct_diff;  // abs_diff / predicted_cum; missing when nothing was predicted
    double ci_low = 0.0;
    double ci_high = 0.0;
    double level = 0.95;
    bool significant = false;
};

/// Observed minus predicted cumulative sales over `window` for every series.
/// The interval is the percentile interval of (observed sum - replicate sum).
inline std::vector<EffectEstimate> estimate_effect(const DailyPanel& observed, const ForecastResult& forecast,
                                                   const EffectWindow& window, double level = 0.95) {
    window.validate();
    check_level(level);
    if (window.end_offset >= forecast.horizon)
        throw ArgumentError("window '" + window.label + "' ends beyond the forecast horizon", "effects");
    const auto base = observed.index_of(forecast.cutoff);
    if (!base || *base + window.end_offset >= observed.days())
        throw ArgumentError("observed data do not cover window '" + window.label + "'", "effects");
    if (observed.series_count() != forecast.series)
        throw ArgumentError("observed panel and forecast disagree on series count", "effects");

    std::vector<EffectEstimate> out;
    for (Eigen::Index j = 0; j < forecast.series; ++j) {
        EffectEstimate e;
        e.window = window;
        e.series = forecast.series_names[static_cast<std::size_t>(j)];
        e.level = level;
        for (int h = window.start_offset; h <= window.end_offset; ++h) {
            e.observed_cum += observed.counts()(*base + h, j);
            e.predicted_cum += forecast.point_path(h, j);
        }
        e.abs_diff = e.observed_cum - e.predicted_cum;
        if (e.predicted_cum != 0.0) e.pct_diff = e.abs_diff / e.predicted_cum;
        auto sums = forecast.window_sums(j, window.start_offset, window.end_offset);
        for (auto& s : sums) s = e.observed_cum - s;
        const auto iv = percentile_interval(std::move(sums), level);
        e.ci_low = iv.lower;
        e.ci_high = iv.upper;
        e.significant = !(e.ci_low <= 0.0 && 0.0 <= e.ci_high);
        out.push_back(std::move(e));
    }
    return out;
}

struct HoldoutSeries {
    std::string series;
    std::optional<double> mean_daily_pct_error;
    std::optional<double> cumulative_pct_error;
    int zero_days_excluded = 0;
    double observed_cum = 0.0;
    double predicted_cum = 0.0;
};

struct HoldoutReport {
    Date holdout_start;
    Eigen::Index days = 0;
    std::vector<HoldoutSeries> series;
    std::optional<double> total_cumulative_pct_error;  // all series pooled
    Eigen::MatrixXd observed;   // days x J
    Eigen::MatrixXd predicted;  // days x J, bootstrap mean path
};

/// Refits on data before `holdout_start`, forecasts `days` days, and scores
/// the forecast against what was observed. Percentage error is
/// (predicted - observed) / observed; zero-count days are left out of the
/// daily mean and counted.
inline HoldoutReport holdout_validation(const DailyPanel& panel, const ModelSpec& spec, Date holdout_start,
                                        Eigen::Index days, const ForecastOptions& fopt,
                                        const FitOptions& fit_opt = {}) {
    if (days < 1) throw ArgumentError("holdout needs at least one day", "effects");
    const auto start = panel.index_of(holdout_start);
    if (!start || *start + days > panel.days())
        throw ArgumentError("panel does not cover the holdout period", "effects");
    const PreCutoffHistory history(panel, holdout_start);
    const auto fit = fit_model(history.panel(), spec, fit_opt);
    auto opt = fopt;
    opt.horizon = days;
    const auto fc = forecast_counterfactual(fit, history, exogenous_from_panel(panel, holdout_start, days), opt);

    HoldoutReport rep;
    rep.holdout_start = holdout_start;
    rep.days = days;
    rep.observed = panel.counts().middleRows(*start, days);
    rep.predicted = fc.point_path;
    double obs_total = 0.0, pred_total = 0.0;
    for (Eigen::Index j = 0; j < panel.series_count(); ++j) {
        HoldoutSeries s;
        s.series = panel.series_names()[static_cast<std::size_t>(j)];
        double acc = 0.0;
        int used = 0;
        for (Eigen::Index h = 0; h < days; ++h) {
            const double o = rep.observed(h, j);
            const double p = rep.predicted(h, j);
            s.observed_cum += o;
            s.predicted_cum += p;
            if (o > 0.0) {
                acc += (p - o) / o;
                ++used;
            } else {
                ++s.zero_days_excluded;
            }
        }
        if (used > 0) s.mean_daily_pct_error = acc / used;
        if (s.observed_cum > 0.0) s.cumulative_pct_error = (s.predicted_cum - s.observed_cum) / s.observed_cum;
        obs_total += s.observed_cum;
        pred_total += s.predicted_cum;
        rep.series.push_back(std::move(s));
    }
    if (obs_total > 0.0) rep.total_cumulative_pct_error = (pred_total - obs_total) / obs_total;
    return rep;
}

struct Breakeven {
    std::optional<double> weeks;  // missing: the deficit never offsets the surplus

    [[nodiscard]] bool never() const { return !weeks.has_value(); }
    [[nodiscard]] std::optional<long> rounded_weeks() const {
        if (!weeks) return std::nullopt;
        return std::lround(*weeks);
    }
};

/// Weeks of the short-run daily deficit needed to cancel the immediate
/// surplus: surplus / (7 * deficit / shortrun_days).
inline Breakeven breakeven_weeks(double immediate_surplus, double shortrun_deficit, int shortrun_days) {
    if (shortrun_days < 1) throw ArgumentError("short-run window must span at least one day", "effects");
    if (!(shortrun_deficit > 0.0)) return Breakeven{};
    const double per_day = shortrun_deficit / shortrun_days;
    return Breakeven{immediate_surplus / (per_day * 7.0)};
}

// ---------------------------------------------------------------------------
// Reports

inline void write_effects_csv(std::ostream& out, const std::vector<EffectEstimate>& effects) {
    out << "series,window,start_offset,end_offset,observed_cum,predicted_cum,abs_diff,pct_diff,ci_low,ci_high,level,"
           "significant\n";
    for (const auto& e : effects) {
        out << detail::quote_if_needed(e.series) << ',' << detail::quote_if_needed(e.window.label) << ','
            << e.window.start_offset << ',' << e.window.end_offset << ',' << detail::format_double(e.observed_cum)
            << ',' << detail::format_double(e.predicted_cum) << ',' << detail::format_double(e.abs_diff) << ','
            << (e.pct_diff ? detail::format_double(*e.pct_diff) : "") << ',' << detail::format_double(e.ci_low) << ','
            << detail::format_double(e.ci_high) << ',' << detail::format_double(e.level) << ','
            << (e.significant ? "true" : "false") << '\n';
    }
}

inline void write_effects_summary(std::ostream& out, const std::vector<EffectEstimate>& effects) {
    char buf[256];
    for (const auto& e : effects) {
        const double pct = e.pct_diff.value_or(std::nan("")) * 100.0;
        std::snprintf(buf, sizeof buf, "%-12s %-10s days %2d-%-2d  observed %10.1f  predicted %10.1f  diff %+10.1f (%+.1f%%)  %.0f%% CI [%.1f, %.1f]%s\n",
                      e.series.c_str(), e.window.label.c_str(), e.window.start_offset, e.window.end_offset,
                      e.observed_cum, e.predicted_cum, e.abs_diff, pct, e.level * 100.0, e.ci_low, e.ci_high,
                      e.significant ? "  significant" : "");
        out << buf;
    }
}

}  // namespace impact

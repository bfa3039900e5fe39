#pragma once

// Per-equation regressors: own-series log-sales lags, calendar effects,
// scaled trends, and lagged log license issuances.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <istream>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "impact/core_data.hpp"
#include "impact/date.hpp"
#include "impact/error.hpp"

namespace impact {

inline constexpr int kWeeksPerYear = 52;
inline constexpr int kDaysPerCommonYear = 365;

/// min(ceil(day_of_year / 7), 52); days 365 and 366 fold into week 52.
inline int week_of_year(Date d) { return std::min((d.day_of_year() + 6) / 7, kWeeksPerYear); }

/// Day of year on a 365-day calendar. Feb 29 shares Feb 28's index and later
/// days of a leap year shift back by one.
inline int common_day_of_year(Date d) {
    const int doy = d.day_of_year();
    if (!d.leap_year() || doy < 60) return doy;
    return doy - 1;
}

namespace detail {

inline Date nth_weekday(int year, unsigned month, int iso_weekday_index, int n) {
    Date first(year, month, 1);
    const int shift = (iso_weekday_index - first.weekday_index() + 7) % 7;
    return first + (shift + 7 * (n - 1));
}

inline Date last_weekday(int year, unsigned month, int iso_weekday_index) {
    Date last = (month == 12 ? Date(year + 1, 1, 1) : Date(year, month + 1, 1)) - 1;
    const int shift = (last.weekday_index() - iso_weekday_index + 7) % 7;
    return last - shift;
}

inline void add_fixed_with_observed(std::set<Date>& out, Date d) {
    out.insert(d);
    if (d.weekday_index() == 5) out.insert(d - 1);
    if (d.weekday_index() == 6) out.insert(d + 1);
}

}  // namespace detail

/// US federal holidays for [first_year, last_year]: fixed-date holidays plus
/// their weekday observances, and the floating Monday/Thursday holidays.
inline std::set<Date> us_federal_holidays(int first_year, int last_year) {
    std::set<Date> out;
    for (int y = first_year; y <= last_year; ++y) {
        detail::add_fixed_with_observed(out, Date(y, 1, 1));
        out.insert(detail::nth_weekday(y, 1, 0, 3));   // Martin Luther King Jr. Day
        out.insert(detail::nth_weekday(y, 2, 0, 3));   // Washington's Birthday
        out.insert(detail::last_weekday(y, 5, 0));     // Memorial Day
        if (y >= 2021) detail::add_fixed_with_observed(out, Date(y, 6, 19));
        detail::add_fixed_with_observed(out, Date(y, 7, 4));
        out.insert(detail::nth_weekday(y, 9, 0, 1));   // Labor Day
        out.insert(detail::nth_weekday(y, 10, 0, 2));  // Columbus Day
        detail::add_fixed_with_observed(out, Date(y, 11, 11));
        out.insert(detail::nth_weekday(y, 11, 3, 4));  // Thanksgiving
        detail::add_fixed_with_observed(out, Date(y, 12, 25));
    }
    return out;
}

/// One ISO date per line; blank lines and '#' comments ignored.
inline std::set<Date> read_holidays(std::istream& in) {
    std::set<Date> out;
    std::string line;
    while (std::getline(in, line)) {
        auto s = detail::trim(line);
        if (s.empty() || s.front() == '#') continue;
        out.insert(Date::parse(s));
    }
    return out;
}

struct ModelSpec {
    int sales_lags = 1;
    int license_lags = 0;
    bool day_of_week = false;
    bool holiday = false;
    bool week_of_year = false;
    bool day_of_year = false;
    bool linear_trend = false;
    bool quadratic_trend = false;
    std::set<Date> holidays;

    void validate() const {
        if (sales_lags < 0 || license_lags < 0) throw ArgumentError("lag counts must be nonnegative", "design");
        if (week_of_year && day_of_year)
            throw ArgumentError("week-of-year and day-of-year effects are mutually exclusive", "design");
    }

    [[nodiscard]] int max_lag() const { return std::max(sales_lags, license_lags); }

    /// Weekday, holiday, week-of-year, linear and quadratic trends with the
    /// given lag depths.
    static ModelSpec full(int sales_lags, int license_lags, std::set<Date> holidays) {
        ModelSpec s;
        s.sales_lags = sales_lags;
        s.license_lags = license_lags;
        s.day_of_week = s.holiday = s.week_of_year = s.linear_trend = s.quadratic_trend = true;
        s.holidays = std::move(holidays);
        return s;
    }

    /// Short human-readable description of the time effects.
    [[nodiscard]] std::string time_effects_label() const {
        std::string out;
        auto add = [&](bool on, const char* name) {
            if (!on) return;
            if (!out.empty()) out += '+';
            out += name;
        };
        add(day_of_week, "dow");
        add(holiday, "holiday");
        add(week_of_year, "woy");
        add(day_of_year, "doy");
        add(linear_trend, "trend");
        add(quadratic_trend, "trend_sq");
        return out.empty() ? "none" : out;
    }

    bool operator==(const ModelSpec&) const = default;
};

/// The six time-effect alternatives compared on a first-order autoregression:
/// weekday and holiday effects always, crossed with {week-of-year,
/// day-of-year} and {no trend, linear, linear + quadratic}.
inline std::vector<ModelSpec> time_effect_grid(const std::set<Date>& holidays) {
    std::vector<ModelSpec> out;
    for (int trend = 0; trend < 3; ++trend) {
        for (int doy = 0; doy < 2; ++doy) {
            ModelSpec s;
            s.sales_lags = 1;
            s.license_lags = 0;
            s.day_of_week = s.holiday = true;
            s.week_of_year = doy == 0;
            s.day_of_year = doy == 1;
            s.linear_trend = trend >= 1;
            s.quadratic_trend = trend >= 2;
            s.holidays = holidays;
            out.push_back(std::move(s));
        }
    }
    return out;
}

/// Anchors the trend columns: day `origin` has t = 1 and trend = t / scale.
struct CalendarBasis {
    Date origin;
    double scale = 1.0;

    bool operator==(const CalendarBasis&) const = default;
};

inline CalendarBasis basis_for(const DailyPanel& panel) {
    return CalendarBasis{panel.start_date(), static_cast<double>(panel.days())};
}

inline std::vector<std::string> calendar_labels(const ModelSpec& spec) {
    static const char* kDays[] = {"mon", "tue", "wed", "thu", "fri", "sat", "sun"};
    std::vector<std::string> out;
    if (spec.day_of_week)
        for (int d = 1; d < 7; ++d) out.push_back(std::string("dow_") + kDays[d]);
    if (spec.holiday) out.emplace_back("holiday");
    if (spec.week_of_year)
        for (int w = 2; w <= kWeeksPerYear; ++w) out.push_back("woy_" + std::to_string(w));
    if (spec.day_of_year)
        for (int d = 2; d <= kDaysPerCommonYear; ++d) out.push_back("doy_" + std::to_string(d));
    if (spec.linear_trend) out.emplace_back("trend");
    if (spec.quadratic_trend) out.emplace_back("trend_sq");
    return out;
}

inline Eigen::Index calendar_width(const ModelSpec& spec) {
    return (spec.day_of_week ? 6 : 0) + (spec.holiday ? 1 : 0) + (spec.week_of_year ? kWeeksPerYear - 1 : 0) +
           (spec.day_of_year ? kDaysPerCommonYear - 1 : 0) + (spec.linear_trend ? 1 : 0) +
           (spec.quadratic_trend ? 1 : 0);
}

/// Writes the calendar block for `date` into `out` (length calendar_width).
/// Baselines: Monday, week 1, day 1.
inline void fill_calendar(Date date, const ModelSpec& spec, const CalendarBasis& basis,
                          Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> out) {
    out.setZero();
    Eigen::Index k = 0;
    if (spec.day_of_week) {
        const int wd = date.weekday_index();
        if (wd > 0) out[k + wd - 1] = 1.0;
        k += 6;
    }
    if (spec.holiday) out[k++] = spec.holidays.contains(date) ? 1.0 : 0.0;
    if (spec.week_of_year) {
        const int w = week_of_year(date);
        if (w > 1) out[k + w - 2] = 1.0;
        k += kWeeksPerYear - 1;
    }
    if (spec.day_of_year) {
        const int d = common_day_of_year(date);
        if (d > 1) out[k + d - 2] = 1.0;
        k += kDaysPerCommonYear - 1;
    }
    const double t = static_cast<double>((date - basis.origin) + 1) / basis.scale;
    if (spec.linear_trend) out[k++] = t;
    if (spec.quadratic_trend) out[k++] = t * t;
}

inline Eigen::RowVectorXd calendar_features(Date date, const ModelSpec& spec, const CalendarBasis& basis) {
    Eigen::RowVectorXd row(calendar_width(spec));
    fill_calendar(date, spec, basis, row);
    return row;
}

inline std::vector<std::string> design_labels(const ModelSpec& spec) {
    std::vector<std::string> out;
    for (int l = 1; l <= spec.sales_lags; ++l) out.push_back("sales_lag_" + std::to_string(l));
    for (auto& c : calendar_labels(spec)) out.push_back(std::move(c));
    for (int l = 1; l <= spec.license_lags; ++l) out.push_back("new_license_lag_" + std::to_string(l));
    for (int l = 1; l <= spec.license_lags; ++l) out.push_back("renewal_license_lag_" + std::to_string(l));
    out.emplace_back("intercept");
    return out;
}

inline Eigen::Index design_width(const ModelSpec& spec) {
    return spec.sales_lags + calendar_width(spec) + 2 * spec.license_lags + 1;
}

/// Assembles one regressor row. Lag spans are ordered most recent first:
/// `sales_lags[0]` is the log outcome one day before `date`.
inline void fill_regressor_row(Date date, const ModelSpec& spec, const CalendarBasis& basis,
                               std::span<const double> sales_lags, std::span<const double> new_lags,
                               std::span<const double> renewal_lags, Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> out) {
    Eigen::Index k = 0;
    for (int l = 0; l < spec.sales_lags; ++l) out[k++] = sales_lags[l];
    const Eigen::Index cw = calendar_width(spec);
    fill_calendar(date, spec, basis, out.segment(k, cw));
    k += cw;
    for (int l = 0; l < spec.license_lags; ++l) out[k++] = new_lags[l];
    for (int l = 0; l < spec.license_lags; ++l) out[k++] = renewal_lags[l];
    out[k] = 1.0;
}

struct DesignMatrix {
    Eigen::MatrixXd rows;
    std::vector<std::string> labels;
    Eigen::VectorXd target;
    Date first_date;
    Eigen::Index first_row = 0;  // panel index of the first usable day

    [[nodiscard]] Eigen::Index usable_days() const { return rows.rows(); }
    [[nodiscard]] Eigen::Index width() const { return rows.cols(); }
};

struct DesignOptions {
    double offset = kDefaultLogOffset;
    std::optional<CalendarBasis> basis;       // defaults to the panel's own span
    std::optional<Eigen::Index> first_row;    // defaults to spec.max_lag()
    bool check_rank = true;
};

/// Throws RankDeficientError naming the columns a column-pivoted QR places
/// beyond the numerical rank.
inline void require_full_rank(const Eigen::Ref<const Eigen::MatrixXd>& X, const std::vector<std::string>& labels,
                              const std::string& context) {
    if (X.rows() < X.cols())
        throw RankDeficientError(context + ": " + std::to_string(X.rows()) + " rows for " + std::to_string(X.cols()) +
                                     " columns",
                                 {});
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    qr.setThreshold(1e-10);
    const auto rank = qr.rank();
    if (rank == X.cols()) return;
    std::vector<std::string> bad;
    const auto& perm = qr.colsPermutation().indices();
    for (Eigen::Index i = rank; i < X.cols(); ++i) bad.push_back(labels[static_cast<std::size_t>(perm[i])]);
    std::sort(bad.begin(), bad.end());
    throw RankDeficientError(context + ": rank " + std::to_string(rank) + " < " + std::to_string(X.cols()),
                             std::move(bad));
}

/// Design matrix for equation `j`: rows start at max(T_y, T_z) (or
/// `opt.first_row`) so every lag is observed.
inline DesignMatrix build_design(const DailyPanel& panel, Eigen::Index j, const ModelSpec& spec,
                                 const DesignOptions& opt = {}) {
    spec.validate();
    if (j < 0 || j >= panel.series_count()) throw ArgumentError("series index out of range", "design");
    const Eigen::Index first = opt.first_row.value_or(spec.max_lag());
    if (first < spec.max_lag()) throw ArgumentError("first usable row precedes the deepest lag", "design");
    if (panel.days() <= first)
        throw ArgumentError("panel of " + std::to_string(panel.days()) + " days is too short for " +
                                std::to_string(first) + " lags",
                            "design");
    const auto basis = opt.basis.value_or(basis_for(panel));
    const auto y = panel.log_series(j, opt.offset).values;
    const auto zn = panel.log_new_licenses(opt.offset).values;
    const auto zr = panel.log_renewal_licenses(opt.offset).values;

    DesignMatrix d;
    d.labels = design_labels(spec);
    d.first_row = first;
    d.first_date = panel.date_at(first);
    const Eigen::Index n = panel.days() - first;
    d.rows.resize(n, design_width(spec));
    d.target = y.segment(first, n);

    std::vector<double> sl(static_cast<std::size_t>(spec.sales_lags));
    std::vector<double> nl(static_cast<std::size_t>(spec.license_lags));
    std::vector<double> rl(static_cast<std::size_t>(spec.license_lags));
    for (Eigen::Index r = 0; r < n; ++r) {
        const Eigen::Index t = first + r;
        for (int l = 0; l < spec.sales_lags; ++l) sl[static_cast<std::size_t>(l)] = y[t - l - 1];
        for (int l = 0; l < spec.license_lags; ++l) {
            nl[static_cast<std::size_t>(l)] = zn[t - l - 1];
            rl[static_cast<std::size_t>(l)] = zr[t - l - 1];
        }
        fill_regressor_row(panel.date_at(t), spec, basis, sl, nl, rl, d.rows.row(r));
    }
    if (opt.check_rank) require_full_rank(d.rows, d.labels, "design for series '" + panel.series_names()[j] + "'");
    return d;
}

/// One design per series, all sharing the same usable date range.
inline std::vector<DesignMatrix> build_designs(const DailyPanel& panel, const ModelSpec& spec,
                                               const DesignOptions& opt = {}) {
    std::vector<DesignMatrix> out;
    for (Eigen::Index j = 0; j < panel.series_count(); ++j) out.push_back(build_design(panel, j, spec, opt));
    return out;
}

}  // namespace impact

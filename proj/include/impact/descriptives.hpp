#pragma once

// Longitudinal and cross-sectional summaries of transaction records.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "impact/core_data.hpp"
#include "impact/design.hpp"
#include "impact/detail/csv.hpp"
#include "impact/error.hpp"

namespace impact {

using TypeCounts = std::array<long, 4>;

inline long total(const TypeCounts& c) { return c[0] + c[1] + c[2] + c[3]; }

inline std::size_t type_index(FirearmType t) { return static_cast<std::size_t>(t); }

inline std::map<int, TypeCounts> annual_totals(const std::vector<TransactionRecord>& tx) {
    std::map<int, TypeCounts> out;
    for (const auto& r : tx) ++out[r.date.year()][type_index(r.firearm_type)];
    return out;
}

using YearMonth = std::pair<int, unsigned>;

inline std::map<YearMonth, TypeCounts> monthly_totals(const std::vector<TransactionRecord>& tx) {
    std::map<YearMonth, TypeCounts> out;
    for (const auto& r : tx) ++out[{r.date.year(), r.date.month()}][type_index(r.firearm_type)];
    return out;
}

/// Two conventions for a year-over-year change in monthly sales: the mean
/// of the twelve month-on-same-month changes, and the change in the mean
/// monthly total.
struct MonthlyChange {
    std::optional<double> mean_of_monthly_changes;
    std::optional<double> change_of_monthly_means;
    int months_compared = 0;
};

inline MonthlyChange yoy_monthly_change(const std::map<YearMonth, TypeCounts>& monthly, int y0, int y1,
                                        FirearmType type) {
    MonthlyChange out;
    double acc = 0.0, sum0 = 0.0, sum1 = 0.0;
    int n0 = 0, n1 = 0;
    for (unsigned m = 1; m <= 12; ++m) {
        auto a = monthly.find({y0, m});
        auto b = monthly.find({y1, m});
        const double v0 = a == monthly.end() ? 0.0 : static_cast<double>(a->second[type_index(type)]);
        const double v1 = b == monthly.end() ? 0.0 : static_cast<double>(b->second[type_index(type)]);
        if (a != monthly.end()) {
            sum0 += v0;
            ++n0;
        }
        if (b != monthly.end()) {
            sum1 += v1;
            ++n1;
        }
        if (a != monthly.end() && b != monthly.end() && v0 > 0.0) {
            acc += (v1 - v0) / v0;
            ++out.months_compared;
        }
    }
    if (out.months_compared > 0) out.mean_of_monthly_changes = acc / out.months_compared;
    if (n0 > 0 && n1 > 0 && sum0 > 0.0) out.change_of_monthly_means = (sum1 / n1 - sum0 / n0) / (sum0 / n0);
    return out;
}

// ---------------------------------------------------------------------------
// Newly-observed purchasers

struct NewPurchaserReport {
    std::optional<Date> origin;                 // first date in the data; week 0 starts here
    std::vector<TypeCounts> newly_observed;     // per week index
    std::vector<TypeCounts> all_purchases;      // per week index
    std::size_t missing_id_excluded = 0;

    [[nodiscard]] long newly_observed_total() const {
        long n = 0;
        for (const auto& w : newly_observed) n += total(w);
        return n;
    }
    [[nodiscard]] long purchases_total() const {
        long n = 0;
        for (const auto& w : all_purchases) n += total(w);
        return n;
    }
};

/// Weeks are 7-day blocks counted from the earliest transaction date. Every
/// purchase a purchaser makes in their first active week is newly observed.
inline NewPurchaserReport newly_observed_purchasers(const std::vector<TransactionRecord>& tx) {
    NewPurchaserReport rep;
    for (const auto& r : tx)
        if (!r.purchaser_id.empty() && (!rep.origin || r.date < *rep.origin)) rep.origin = r.date;
    if (!rep.origin) {
        rep.missing_id_excluded = tx.size();
        return rep;
    }
    std::unordered_map<std::string, long> first_week;
    long last_week = 0;
    for (const auto& r : tx) {
        if (r.purchaser_id.empty()) continue;
        const long w = static_cast<long>((r.date - *rep.origin) / 7);
        last_week = std::max(last_week, w);
        auto [it, fresh] = first_week.emplace(r.purchaser_id, w);
        if (!fresh) it->second = std::min(it->second, w);
    }
    rep.newly_observed.assign(static_cast<std::size_t>(last_week + 1), TypeCounts{});
    rep.all_purchases.assign(static_cast<std::size_t>(last_week + 1), TypeCounts{});
    for (const auto& r : tx) {
        if (r.purchaser_id.empty()) {
            ++rep.missing_id_excluded;
            continue;
        }
        const auto w = static_cast<std::size_t>((r.date - *rep.origin) / 7);
        ++rep.all_purchases[w][type_index(r.firearm_type)];
        if (first_week.at(r.purchaser_id) == static_cast<long>(w)) ++rep.newly_observed[w][type_index(r.firearm_type)];
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Purchaser concentration

struct ConcentrationBucket {
    std::string label;
    long min_purchases = 0;
    long max_purchases = 0;  // inclusive; LONG_MAX for the open bucket
    long buyers = 0;
    long purchases = 0;
    double share = 0.0;
};

struct ConcentrationReport {
    Date first;
    Date last;
    long purchases = 0;
    std::size_t missing_id_excluded = 0;
    std::vector<ConcentrationBucket> buckets;
    double top10_retailer_share = 0.0;
};

/// Purchase shares by transactions-per-buyer bucket {1, 2, 3-4, 5-15, >15}
/// within [first, last] for the selected types, plus the share of the ten
/// busiest retailers.
inline ConcentrationReport purchaser_concentration(const std::vector<TransactionRecord>& tx, Date first, Date last,
                                                   const std::set<FirearmType>& types) {
    if (last < first) throw ArgumentError("concentration window is empty", "descriptives");
    ConcentrationReport rep;
    rep.first = first;
    rep.last = last;
    rep.buckets = {{"1", 1, 1}, {"2", 2, 2}, {"3-4", 3, 4}, {"5-15", 5, 15}, {">15", 16, std::numeric_limits<long>::max()}};
    std::unordered_map<std::string, long> per_buyer;
    std::map<std::string, long> per_dealer;
    long dealer_total = 0;
    for (const auto& r : tx) {
        if (r.date < first || r.date > last || !types.contains(r.firearm_type)) continue;
        ++per_dealer[r.dealer_id];
        ++dealer_total;
        if (r.purchaser_id.empty()) {
            ++rep.missing_id_excluded;
            continue;
        }
        ++per_buyer[r.purchaser_id];
        ++rep.purchases;
    }
    for (const auto& [_, n] : per_buyer)
        for (auto& b : rep.buckets)
            if (n >= b.min_purchases && n <= b.max_purchases) {
                ++b.buyers;
                b.purchases += n;
            }
    for (auto& b : rep.buckets)
        b.share = rep.purchases > 0 ? static_cast<double>(b.purchases) / static_cast<double>(rep.purchases) : 0.0;
    std::vector<long> sizes;
    for (const auto& [_, n] : per_dealer) sizes.push_back(n);
    std::sort(sizes.begin(), sizes.end(), std::greater<>());
    long top = 0;
    for (std::size_t i = 0; i < sizes.size() && i < 10; ++i) top += sizes[i];
    rep.top10_retailer_share = dealer_total > 0 ? static_cast<double>(top) / static_cast<double>(dealer_total) : 0.0;
    return rep;
}

// ---------------------------------------------------------------------------
// Retailer sales ratios

struct RetailerRatio {
    std::string dealer_id;
    std::optional<std::string> zip;
    TypeCounts sales_y0{};
    TypeCounts sales_y1{};
    std::array<std::optional<double>, 4> ratio{};  // y1 / y0, undefined when y0 is zero
};

struct RetailerRatioReport {
    int y0 = 0;
    int y1 = 0;
    double coverage_target = 0.9;
    double coverage_achieved = 0.0;  // subsample share of all y0 TAW rifle sales
    std::vector<RetailerRatio> retailers;
};

/// Ratios of year-y1 to year-y0 sales per type for the smallest set of top
/// retailers (by y0 TAW rifle sales) that reaches `coverage` of the y0 TAW
/// rifle total. Ties in y0 TAW sales break on dealer id.
inline RetailerRatioReport retailer_sales_ratios(const std::vector<TransactionRecord>& tx, int y0, int y1,
                                                 double coverage = 0.9) {
    if (!(coverage > 0.0 && coverage <= 1.0)) throw ArgumentError("coverage must lie in (0, 1]", "descriptives");
    bool has0 = false, has1 = false;
    std::map<std::string, RetailerRatio> by_dealer;
    for (const auto& r : tx) {
        const int y = r.date.year();
        has0 |= y == y0;
        has1 |= y == y1;
        if (y != y0 && y != y1) continue;
        auto& d = by_dealer[r.dealer_id];
        d.dealer_id = r.dealer_id;
        if (!d.zip && r.dealer_zip) d.zip = r.dealer_zip;
        ++(y == y0 ? d.sales_y0 : d.sales_y1)[type_index(r.firearm_type)];
    }
    if (!has0 || !has1)
        throw ArgumentError("years " + std::to_string(y0) + " and " + std::to_string(y1) + " must both be present",
                            "descriptives");
    std::vector<RetailerRatio> all;
    long taw_total = 0;
    for (auto& [_, d] : by_dealer) {
        for (std::size_t k = 0; k < 4; ++k)
            if (d.sales_y0[k] > 0) d.ratio[k] = static_cast<double>(d.sales_y1[k]) / static_cast<double>(d.sales_y0[k]);
        taw_total += d.sales_y0[type_index(FirearmType::TAWRifle)];
        all.push_back(d);
    }
    const auto taw = type_index(FirearmType::TAWRifle);
    std::stable_sort(all.begin(), all.end(), [&](const RetailerRatio& a, const RetailerRatio& b) {
        return a.sales_y0[taw] > b.sales_y0[taw];
    });
    RetailerRatioReport rep;
    rep.y0 = y0;
    rep.y1 = y1;
    rep.coverage_target = coverage;
    long covered = 0;
    for (auto& d : all) {
        if (taw_total > 0 && static_cast<double>(covered) >= coverage * static_cast<double>(taw_total)) break;
        if (d.sales_y0[taw] == 0) break;
        covered += d.sales_y0[taw];
        rep.retailers.push_back(std::move(d));
    }
    rep.coverage_achieved = taw_total > 0 ? static_cast<double>(covered) / static_cast<double>(taw_total) : 0.0;
    return rep;
}

/// Counts of defined ratios for `type` per bin [edges[i], edges[i+1]); the
/// last bin also takes values at or above the final edge.
inline std::vector<long> ratio_histogram(const RetailerRatioReport& rep, FirearmType type,
                                         const std::vector<double>& edges) {
    if (edges.size() < 2) throw ArgumentError("histogram needs at least two edges", "descriptives");
    std::vector<long> bins(edges.size() - 1, 0);
    for (const auto& r : rep.retailers) {
        const auto& v = r.ratio[type_index(type)];
        if (!v || *v < edges.front()) continue;
        auto it = std::upper_bound(edges.begin(), edges.end(), *v);
        auto i = static_cast<std::size_t>(std::distance(edges.begin(), it)) - 1;
        bins[std::min(i, bins.size() - 1)]++;
    }
    return bins;
}

// ---------------------------------------------------------------------------
// Correlation and covariate association

/// Pearson correlation; missing when either series has zero variance.
inline std::optional<double> series_correlation(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 3)
        throw ArgumentError("correlation needs two series of equal length >= 3", "descriptives");
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (!(saa > 0.0) || !(sbb > 0.0)) return std::nullopt;
    return sab / std::sqrt(saa * sbb);
}

/// zip,value with a header row.
inline std::map<std::string, double> read_covariates(std::istream& in) {
    std::map<std::string, double> out;
    std::string line;
    bool header = true;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (detail::skip_line(line)) continue;
        const auto f = detail::split_line(line);
        if (header) {
            header = false;
            if (f.size() != 2) throw ParseError("covariate header must be zip,value");
            continue;
        }
        ++row;
        if (f.size() != 2) throw ParseError("covariate row " + std::to_string(row) + ": wrong field count");
        try {
            out[f[0]] = std::stod(f[1]);
        } catch (const std::exception&) {
            throw ParseError("covariate row " + std::to_string(row) + ": bad value '" + f[1] + "'");
        }
    }
    return out;
}

struct CovariateAssociation {
    FirearmType type = FirearmType::TAWRifle;
    std::optional<double> pearson;
    double slope = 0.0;                 // least-squares slope of ratio on covariate
    std::optional<double> slope_std_error;
    std::size_t used = 0;
    std::size_t excluded = 0;           // undefined ratio or unmatched zip
    std::vector<std::pair<double, double>> scatter;  // (covariate, ratio)
};

inline CovariateAssociation covariate_association(const std::vector<RetailerRatio>& ratios,
                                                  const std::map<std::string, double>& covariate, FirearmType type) {
    CovariateAssociation out;
    out.type = type;
    for (const auto& r : ratios) {
        const auto& v = r.ratio[type_index(type)];
        if (!v || !r.zip) {
            ++out.excluded;
            continue;
        }
        auto it = covariate.find(*r.zip);
        if (it == covariate.end()) {
            ++out.excluded;
            continue;
        }
        out.scatter.emplace_back(it->second, *v);
    }
    out.used = out.scatter.size();
    if (out.used < 3)
        throw ArgumentError("covariate association needs at least 3 matched retailers, found " +
                                std::to_string(out.used),
                            "descriptives");
    std::vector<double> x, y;
    for (const auto& [a, b] : out.scatter) {
        x.push_back(a);
        y.push_back(b);
    }
    out.pearson = series_correlation(x, y);
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (sxx > 0.0) {
        out.slope = sxy / sxx;
        const double a = my - out.slope * mx;
        double ssr = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) ssr += std::pow(y[i] - a - out.slope * x[i], 2);
        if (x.size() > 2) out.slope_std_error = std::sqrt(ssr / (n - 2.0) / sxx);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Weekly and license totals

using YearWeek = std::pair<int, int>;

/// Sales per (year, week of year) using the same week numbering as the
/// calendar design: week 52 absorbs the last one or two days of the year.
inline std::map<YearWeek, TypeCounts> weekly_totals(const std::vector<TransactionRecord>& tx) {
    std::map<YearWeek, TypeCounts> out;
    for (const auto& r : tx) ++out[{r.date.year(), week_of_year(r.date)}][type_index(r.firearm_type)];
    return out;
}

/// Issued licenses per year, {new, renewal}.
inline std::map<int, std::array<long, 2>> annual_license_totals(const std::vector<LicenseRecord>& lic) {
    std::map<int, std::array<long, 2>> out;
    for (const auto& l : lic) ++out[l.issue_date.year()][l.kind == LicenseKind::New ? 0 : 1];
    return out;
}

// ---------------------------------------------------------------------------
// Long-format exports

inline void write_annual_csv(std::ostream& out, const std::map<int, TypeCounts>& annual) {
    out << "year,type,count\n";
    for (const auto& [y, c] : annual) {
        for (auto t : kFirearmTypes) out << y << ',' << to_string(t) << ',' << c[type_index(t)] << '\n';
        out << y << ",Total," << total(c) << '\n';
    }
}

inline void write_monthly_csv(std::ostream& out, const std::map<YearMonth, TypeCounts>& monthly) {
    out << "year,month,type,count\n";
    for (const auto& [ym, c] : monthly)
        for (auto t : kFirearmTypes) out << ym.first << ',' << ym.second << ',' << to_string(t) << ',' << c[type_index(t)] << '\n';
}

inline void write_weekly_csv(std::ostream& out, const std::map<YearWeek, TypeCounts>& weekly) {
    out << "year,week,type,count\n";
    for (const auto& [yw, c] : weekly)
        for (auto t : kFirearmTypes) out << yw.first << ',' << yw.second << ',' << to_string(t) << ',' << c[type_index(t)] << '\n';
}

inline void write_license_totals_csv(std::ostream& out, const std::map<int, std::array<long, 2>>& annual) {
    out << "year,kind,count\n";
    for (const auto& [y, c] : annual) out << y << ",New," << c[0] << '\n' << y << ",Renewal," << c[1] << '\n';
}

inline void write_new_purchasers_csv(std::ostream& out, const NewPurchaserReport& rep) {
    out << "week,week_start,type,newly_observed,all_purchases\n";
    for (std::size_t w = 0; w < rep.all_purchases.size(); ++w)
        for (auto t : kFirearmTypes)
            out << w << ',' << (*rep.origin + static_cast<std::int64_t>(7 * w)).iso() << ',' << to_string(t) << ','
                << rep.newly_observed[w][type_index(t)] << ',' << rep.all_purchases[w][type_index(t)] << '\n';
}

inline void write_retailer_ratios_csv(std::ostream& out, const RetailerRatioReport& rep) {
    out << "dealer_id,zip,type,sales_" << rep.y0 << ",sales_" << rep.y1 << ",ratio\n";
    for (const auto& r : rep.retailers)
        for (auto t : kFirearmTypes) {
            const auto k = type_index(t);
            out << detail::quote_if_needed(r.dealer_id) << ',' << detail::quote_if_needed(r.zip.value_or("")) << ','
                << to_string(t) << ',' << r.sales_y0[k] << ',' << r.sales_y1[k] << ','
                << (r.ratio[k] ? detail::format_double(*r.ratio[k]) : "") << '\n';
        }
}

}  // namespace impact

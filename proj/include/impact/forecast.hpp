#pragma once

// Counterfactual multi-step forecasts with the forward bootstrap: each
// replicate draws coefficients from their estimated asymptotic normal
// distribution and innovations from the centered fitted residuals, then
// iterates the autoregression forward from the observed pre-cutoff lags.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "impact/core_data.hpp"
#include "impact/design.hpp"
#include "impact/detail/csv.hpp"
#include "impact/detail/parallel.hpp"
#include "impact/detail/rng.hpp"
#include "impact/estimator.hpp"

namespace impact {

/// Observed data strictly before a cutoff date. Post-cutoff outcomes cannot
/// be represented here, so nothing downstream can read them.
class PreCutoffHistory {
public:
    PreCutoffHistory(const DailyPanel& panel, Date cutoff) : cutoff_(cutoff), panel_(panel.before(cutoff)) {}

    [[nodiscard]] Date cutoff() const { return cutoff_; }
    [[nodiscard]] const DailyPanel& panel() const { return panel_; }

private:
    Date cutoff_;
    DailyPanel panel_;
};

/// License issuances for the forecast horizon, starting on the cutoff date.
struct ExogenousFuture {
    Date first;
    Eigen::VectorXd new_licenses;
    Eigen::VectorXd renewal_licenses;

    [[nodiscard]] Eigen::Index days() const { return new_licenses.size(); }
};

/// Copies only the license series of `panel` for [cutoff, cutoff + days).
inline ExogenousFuture exogenous_from_panel(const DailyPanel& panel, Date cutoff, Eigen::Index days) {
    const auto first = panel.index_of(cutoff);
    if (!first || *first + days > panel.days())
        throw ArgumentError("panel does not cover " + std::to_string(days) + " license days from " + cutoff.iso(),
                            "forecast");
    return ExogenousFuture{cutoff, panel.new_licenses().segment(*first, days),
                           panel.renewal_licenses().segment(*first, days)};
}

struct ForecastOptions {
    Eigen::Index horizon = 26;
    int replicates = 1000;
    std::uint64_t seed = 1;
    unsigned threads = 1;
};

struct ForecastResult {
    Date cutoff;
    std::vector<Date> dates;
    std::vector<std::string> series_names;
    Eigen::MatrixXd point_path;   // H x J, replicate mean, level scale
    Eigen::MatrixXd plugin_path;  // H x J, recursion at the point estimates without innovations
    std::vector<double> draws;    // row-major [B][H][J], level scale
    int replicates = 0;
    Eigen::Index horizon = 0;
    Eigen::Index series = 0;
    std::uint64_t seed = 0;

    [[nodiscard]] double draw(int b, Eigen::Index h, Eigen::Index j) const {
        return draws[(static_cast<std::size_t>(b) * static_cast<std::size_t>(horizon) + static_cast<std::size_t>(h)) *
                         static_cast<std::size_t>(series) +
                     static_cast<std::size_t>(j)];
    }

    /// Per-replicate sums of series j over horizon offsets [first, last].
    [[nodiscard]] std::vector<double> window_sums(Eigen::Index j, Eigen::Index first, Eigen::Index last) const {
        if (first < 0 || last < first || last >= horizon)
            throw ArgumentError("window [" + std::to_string(first) + ", " + std::to_string(last) +
                                    "] outside forecast horizon of " + std::to_string(horizon) + " days",
                                "forecast");
        std::vector<double> out(static_cast<std::size_t>(replicates), 0.0);
        for (int b = 0; b < replicates; ++b)
            for (Eigen::Index h = first; h <= last; ++h) out[static_cast<std::size_t>(b)] += draw(b, h, j);
        return out;
    }
};

struct Interval {
    double lower = 0.0;
    double upper = 0.0;
};

inline void check_level(double level) {
    if (!(level > 0.0 && level < 1.0)) throw ArgumentError("confidence level must lie in (0, 1)", "forecast");
}

/// Empirical percentile interval. With k = floor(B (1 - level) / 2) the
/// bounds are the k-th and (B - k + 1)-th order statistics (1-based), e.g.
/// the 25th and 976th of 1,000 draws at level 0.95.
inline Interval percentile_interval(std::vector<double> values, double level) {
    check_level(level);
    if (values.size() < 2) throw ArgumentError("percentile interval needs at least 2 draws", "forecast");
    const auto B = values.size();
    const auto k = static_cast<std::size_t>(std::floor(static_cast<double>(B) * (1.0 - level) / 2.0 + 1e-9));
    const std::size_t lo = k == 0 ? 0 : k - 1;
    const std::size_t hi = k == 0 ? B - 1 : B - k;
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(lo), values.end());
    const double lower = values[lo];
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(hi), values.end());
    return Interval{lower, values[hi]};
}

struct PredictionBounds {
    double level = 0.95;
    Eigen::MatrixXd lower;  // H x J
    Eigen::MatrixXd upper;
};

inline PredictionBounds prediction_interval(const ForecastResult& f, double level) {
    check_level(level);
    if (f.replicates < 2) throw ArgumentError("prediction intervals need at least 2 replicates", "forecast");
    PredictionBounds out{level, Eigen::MatrixXd(f.horizon, f.series), Eigen::MatrixXd(f.horizon, f.series)};
    std::vector<double> col(static_cast<std::size_t>(f.replicates));
    for (Eigen::Index h = 0; h < f.horizon; ++h) {
        for (Eigen::Index j = 0; j < f.series; ++j) {
            for (int b = 0; b < f.replicates; ++b) col[static_cast<std::size_t>(b)] = f.draw(b, h, j);
            const auto iv = percentile_interval(col, level);
            out.lower(h, j) = iv.lower;
            out.upper(h, j) = iv.upper;
        }
    }
    return out;
}

/// Interval for the cumulative sum of series j over offsets [first, last].
inline Interval cumulative_interval(const ForecastResult& f, Eigen::Index j, Eigen::Index first, Eigen::Index last,
                                    double level) {
    return percentile_interval(f.window_sums(j, first, last), level);
}

namespace detail {

/// Symmetric square-root factor of a covariance after clipping negative
/// eigenvalues to zero.
inline Eigen::MatrixXd psd_factor(const Eigen::MatrixXd& cov) {
    if (cov.size() == 0) return cov;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (cov + cov.transpose()));
    const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * root.asDiagonal();
}

}  // namespace detail

/// Forward-bootstrap counterfactual forecast for `opt.horizon` days from the
/// history's cutoff. Lags before the cutoff use observed values; later lags
/// use the replicate's own generated values.
inline ForecastResult forecast_counterfactual(const SurFit& fit, const PreCutoffHistory& history,
                                              const ExogenousFuture& future, const ForecastOptions& opt) {
    const Eigen::Index H = opt.horizon;
    const int B = opt.replicates;
    if (B < 2) throw ArgumentError("forecast needs at least 2 bootstrap replicates", "forecast");
    if (H < 1) throw ArgumentError("forecast horizon must be positive", "forecast");
    if (future.first != history.cutoff())
        throw ArgumentError("exogenous path must start on the cutoff date", "forecast");
    if (future.days() < H)
        throw ArgumentError("exogenous path covers " + std::to_string(future.days()) + " days, horizon is " +
                                std::to_string(H),
                            "forecast");
    if (!(fit.last_date < history.cutoff()))
        throw ArgumentError("model must be estimated on data strictly before the cutoff", "forecast");

    const auto& spec = fit.spec;
    const auto& past = history.panel();
    const Eigen::Index J = fit.equations();
    if (past.series_count() != J) throw ArgumentError("history and model disagree on series count", "forecast");
    const Eigen::Index depth = std::max<Eigen::Index>(spec.max_lag(), 1);
    if (past.days() < depth) throw ArgumentError("history shorter than the deepest lag", "forecast");

    // Log-scale buffers: the last `depth` observed days followed by the horizon.
    const Eigen::Index T0 = past.days();
    Eigen::MatrixXd ylog(depth + H, J);
    for (Eigen::Index j = 0; j < J; ++j)
        for (Eigen::Index i = 0; i < depth; ++i) ylog(i, j) = log_offset(past.counts()(T0 - depth + i, j), fit.offset);
    Eigen::VectorXd zn(depth + H), zr(depth + H);
    for (Eigen::Index i = 0; i < depth; ++i) {
        zn[i] = log_offset(past.new_licenses()[T0 - depth + i], fit.offset);
        zr[i] = log_offset(past.renewal_licenses()[T0 - depth + i], fit.offset);
    }
    for (Eigen::Index h = 0; h < H; ++h) {
        zn[depth + h] = log_offset(future.new_licenses[h], fit.offset);
        zr[depth + h] = log_offset(future.renewal_licenses[h], fit.offset);
    }

    // Regressor rows with sales-lag slots left at zero; they are filled per replicate.
    const Eigen::Index P = design_width(spec);
    const int L = spec.sales_lags;
    std::vector<Eigen::RowVectorXd> templates;
    templates.reserve(static_cast<std::size_t>(H));
    {
        std::vector<double> none(static_cast<std::size_t>(L), 0.0);
        std::vector<double> nl(static_cast<std::size_t>(spec.license_lags));
        std::vector<double> rl(static_cast<std::size_t>(spec.license_lags));
        for (Eigen::Index h = 0; h < H; ++h) {
            const Eigen::Index t = depth + h;
            for (int l = 0; l < spec.license_lags; ++l) {
                nl[static_cast<std::size_t>(l)] = zn[t - l - 1];
                rl[static_cast<std::size_t>(l)] = zr[t - l - 1];
            }
            Eigen::RowVectorXd row(P);
            fill_regressor_row(history.cutoff() + h, spec, fit.basis, none, nl, rl, row);
            templates.push_back(std::move(row));
        }
    }

    Eigen::MatrixXd centered = fit.residuals;
    centered.rowwise() -= centered.colwise().mean();
    const Eigen::Index n_res = centered.rows();
    const Eigen::VectorXd theta_hat = fit.stacked();
    const Eigen::MatrixXd factor = detail::psd_factor(fit.coef_covariance);
    const Eigen::Index K = theta_hat.size();

    // Runs the recursion for one coefficient vector; `shock(h)` returns the
    // residual row index for day h, or -1 for none.
    auto simulate = [&](const Eigen::VectorXd& theta, auto&& shock, auto&& sink) {
        Eigen::MatrixXd path = ylog;
        Eigen::RowVectorXd row;
        for (Eigen::Index h = 0; h < H; ++h) {
            const Eigen::Index t = depth + h;
            const Eigen::Index r = shock(h);
            for (Eigen::Index j = 0; j < J; ++j) {
                row = templates[static_cast<std::size_t>(h)];
                for (int l = 0; l < L; ++l) row[l] = path(t - l - 1, j);
                double v = row.dot(theta.segment(fit.offsets[static_cast<std::size_t>(j)], P));
                if (r >= 0) v += centered(r, j);
                path(t, j) = v;
                sink(h, j, inverse_log_offset(v, fit.offset));
            }
        }
    };

    ForecastResult out;
    out.cutoff = history.cutoff();
    out.series_names = fit.series_names;
    out.replicates = B;
    out.horizon = H;
    out.series = J;
    out.seed = opt.seed;
    for (Eigen::Index h = 0; h < H; ++h) out.dates.push_back(history.cutoff() + h);
    out.plugin_path.resize(H, J);
    simulate(theta_hat, [](Eigen::Index) { return Eigen::Index{-1}; },
             [&](Eigen::Index h, Eigen::Index j, double v) { out.plugin_path(h, j) = v; });

    out.draws.assign(static_cast<std::size_t>(B) * static_cast<std::size_t>(H) * static_cast<std::size_t>(J), 0.0);
    detail::parallel_for(static_cast<std::size_t>(B), opt.threads, [&](std::size_t b) {
        auto rng = detail::substream(opt.seed, b);
        std::normal_distribution<double> normal;
        Eigen::VectorXd z(K);
        for (Eigen::Index k = 0; k < K; ++k) z[k] = normal(rng);
        const Eigen::VectorXd theta = theta_hat + factor * z;
        std::uniform_int_distribution<Eigen::Index> pick(0, n_res - 1);
        double* slot = out.draws.data() + b * static_cast<std::size_t>(H * J);
        simulate(theta, [&](Eigen::Index) { return pick(rng); },
                 [&](Eigen::Index h, Eigen::Index j, double v) { slot[h * J + j] = v; });
    });

    out.point_path = Eigen::MatrixXd::Zero(H, J);
    for (int b = 0; b < B; ++b)
        for (Eigen::Index h = 0; h < H; ++h)
            for (Eigen::Index j = 0; j < J; ++j) out.point_path(h, j) += out.draw(b, h, j);
    out.point_path /= static_cast<double>(B);
    return out;
}

// ---------------------------------------------------------------------------
// Export

inline constexpr char kDrawsMagic[8] = {'I', 'M', 'P', 'D', 'R', 'A', 'W', '1'};

/// Flat binary draws: 8-byte magic "IMPDRAW1", then B, H, J as uint64, then
/// B*H*J float64 values in row-major [B][H][J] order. Host byte order
/// (little-endian on every supported platform).
inline void write_draws_binary(std::ostream& out, const ForecastResult& f) {
    out.write(kDrawsMagic, sizeof kDrawsMagic);
    const std::uint64_t dims[3] = {static_cast<std::uint64_t>(f.replicates), static_cast<std::uint64_t>(f.horizon),
                                   static_cast<std::uint64_t>(f.series)};
    out.write(reinterpret_cast<const char*>(dims), sizeof dims);
    out.write(reinterpret_cast<const char*>(f.draws.data()),
              static_cast<std::streamsize>(f.draws.size() * sizeof(double)));
}

struct DrawTensor {
    std::uint64_t replicates = 0, horizon = 0, series = 0;
    std::vector<double> values;
};

inline DrawTensor read_draws_binary(std::istream& in) {
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kDrawsMagic, sizeof magic) != 0) throw ParseError("not a draws file");
    std::uint64_t dims[3];
    in.read(reinterpret_cast<char*>(dims), sizeof dims);
    if (!in) throw ParseError("truncated draws header");
    DrawTensor t{dims[0], dims[1], dims[2], {}};
    t.values.resize(dims[0] * dims[1] * dims[2]);
    in.read(reinterpret_cast<char*>(t.values.data()), static_cast<std::streamsize>(t.values.size() * sizeof(double)));
    if (!in) throw ParseError("truncated draws payload");
    return t;
}

/// Long-format table: date,series,point,plugin,lower,upper.
inline void write_forecast_csv(std::ostream& out, const ForecastResult& f, double level) {
    const auto bounds = prediction_interval(f, level);
    out << "date,series,point,plugin,lower,upper\n";
    for (Eigen::Index h = 0; h < f.horizon; ++h)
        for (Eigen::Index j = 0; j < f.series; ++j)
            out << f.dates[static_cast<std::size_t>(h)].iso() << ','
                << detail::quote_if_needed(f.series_names[static_cast<std::size_t>(j)]) << ','
                << detail::format_double(f.point_path(h, j)) << ',' << detail::format_double(f.plugin_path(h, j)) << ','
                << detail::format_double(bounds.lower(h, j)) << ',' << detail::format_double(bounds.upper(h, j)) << '\n';
}

}  // namespace impact

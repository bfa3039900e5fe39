#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>

#include "impact/forecast.hpp"
#include "impact/synthgen.hpp"
#include "oracles.hpp"

using namespace impact;

namespace {

struct Setup {
    SynthConfig cfg;
    SynthPanel data;
    SurFit fit;
    Date cutoff;
};

Setup make_setup(Eigen::Index days, double sd, std::uint64_t seed, Eigen::Index post = 30) {
    auto cfg = four_series_config(days, sd, 0.5, seed);
    if (sd == 0.0) cfg.round_counts = false;
    auto data = generate_panel(cfg);
    const Date cutoff = data.factual.start_date() + (days - post);
    auto fit = fit_model(data.factual.before(cutoff), ModelSpec::full(2, 2, cfg.holidays));
    return Setup{std::move(cfg), std::move(data), std::move(fit), cutoff};
}

ForecastResult run(const Setup& s, int B, std::uint64_t seed, unsigned threads = 1, Eigen::Index H = 26) {
    ForecastOptions opt;
    opt.horizon = H;
    opt.replicates = B;
    opt.seed = seed;
    opt.threads = threads;
    return forecast_counterfactual(s.fit, PreCutoffHistory(s.data.factual, s.cutoff),
                                   exogenous_from_panel(s.data.factual, s.cutoff, H), opt);
}

}  // namespace

TEST(PercentileInterval, OrderStatisticConvention) {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n01;
    std::vector<double> v(1000);
    for (auto& x : v) x = n01(rng);
    auto sorted = v;
    std::sort(sorted.begin(), sorted.end());
    const auto iv = percentile_interval(v, 0.95);
    EXPECT_EQ(iv.lower, sorted[24]);   // 25th
    EXPECT_EQ(iv.upper, sorted[975]);  // 976th
    const auto iv90 = percentile_interval(v, 0.90);
    EXPECT_EQ(iv90.lower, sorted[49]);
    EXPECT_EQ(iv90.upper, sorted[950]);
    EXPECT_GE(iv90.lower, iv.lower);
    EXPECT_LE(iv90.upper, iv.upper);
}

TEST(PercentileInterval, ConstantDrawsAndBadLevels) {
    const std::vector<double> c(50, 3.25);
    const auto iv = percentile_interval(c, 0.95);
    EXPECT_EQ(iv.lower, 3.25);
    EXPECT_EQ(iv.upper, 3.25);
    EXPECT_THROW(percentile_interval(c, 0.0), ArgumentError);
    EXPECT_THROW(percentile_interval(c, 1.0), ArgumentError);
    EXPECT_THROW(percentile_interval({1.0}, 0.5), ArgumentError);
}

TEST(Forecast, NoiselessMatchesDeterministicRecursion) {
    const auto s = make_setup(900, 0.0, 3);
    const Eigen::Index H = 25;
    const auto f = run(s, 20, 1, 1, H);
    const auto first = *s.data.factual.index_of(s.cutoff);
    const auto& p = s.data.factual;
    const Eigen::MatrixXd truth = oracle::deterministic_recursion(s.cfg, s.data.truth.log_path, p.new_licenses(),
                                                                  p.renewal_licenses(), first, H);
    for (Eigen::Index h = 0; h < H; ++h) {
        for (Eigen::Index j = 0; j < 4; ++j) {
            const double expected = std::exp(truth(h, j)) - 0.1;
            EXPECT_NEAR(f.point_path(h, j), expected, 1e-6) << h << "," << j;
            EXPECT_NEAR(f.plugin_path(h, j), expected, 1e-6) << h << "," << j;
        }
    }
}

TEST(Forecast, SameSeedIdenticalDrawsDifferentSeedDiffers) {
    const auto s = make_setup(700, 0.2, 4);
    const auto a = run(s, 50, 9);
    const auto b = run(s, 50, 9);
    EXPECT_EQ(a.draws, b.draws);
    EXPECT_EQ(a.point_path, b.point_path);
    const auto c = run(s, 50, 10);
    EXPECT_NE(a.draws, c.draws);
}

TEST(Forecast, ParallelEqualsSerial) {
    const auto s = make_setup(700, 0.2, 5);
    const auto a = run(s, 64, 2, 1);
    const auto b = run(s, 64, 2, 4);
    EXPECT_EQ(a.draws, b.draws);
}

TEST(Forecast, ReplicatePrefixIsStableAcrossB) {
    const auto s = make_setup(700, 0.2, 6);
    const auto a = run(s, 20, 3);
    const auto b = run(s, 40, 3);
    for (int r = 0; r < 20; ++r)
        for (Eigen::Index h = 0; h < a.horizon; ++h)
            for (Eigen::Index j = 0; j < 4; ++j) EXPECT_EQ(a.draw(r, h, j), b.draw(r, h, j));
}

TEST(Forecast, ShapesAndNonnegativity) {
    const auto s = make_setup(700, 0.3, 7);
    const auto f = run(s, 30, 1);
    EXPECT_EQ(f.draws.size(), 30u * 26u * 4u);
    EXPECT_EQ(f.dates.front(), s.cutoff);
    EXPECT_EQ(f.dates.back(), s.cutoff + 25);
    EXPECT_GE(f.point_path.minCoeff(), 0.0);
    EXPECT_GE(*std::min_element(f.draws.begin(), f.draws.end()), 0.0);
    // point path is the replicate mean
    double m = 0.0;
    for (int b = 0; b < 30; ++b) m += f.draw(b, 7, 2);
    EXPECT_NEAR(f.point_path(7, 2), m / 30.0, 1e-9);
    const auto pb = prediction_interval(f, 0.95);
    EXPECT_TRUE((pb.lower.array() <= pb.upper.array()).all());
}

TEST(Forecast, PreconditionErrors) {
    const auto s = make_setup(700, 0.2, 8);
    EXPECT_THROW(run(s, 1, 1), ArgumentError);
    ForecastOptions opt;
    opt.horizon = 26;
    opt.replicates = 10;
    const PreCutoffHistory hist(s.data.factual, s.cutoff);
    EXPECT_THROW(forecast_counterfactual(s.fit, hist, exogenous_from_panel(s.data.factual, s.cutoff, 10), opt),
                 ArgumentError);
    EXPECT_THROW(forecast_counterfactual(s.fit, PreCutoffHistory(s.data.factual, s.cutoff - 5),
                                         exogenous_from_panel(s.data.factual, s.cutoff - 5, 26), opt),
                 ArgumentError);
    EXPECT_THROW(exogenous_from_panel(s.data.factual, s.cutoff, 31), ArgumentError);
    EXPECT_THROW(prediction_interval(run(s, 10, 1), 1.5), ArgumentError);
}

// The history object holds no post-cutoff rows, so altering them cannot
// change the forecast.
TEST(Forecast, IgnoresPostCutoffOutcomes) {
    const auto s = make_setup(700, 0.2, 9);
    auto counts = s.data.factual.counts();
    const auto first = *s.data.factual.index_of(s.cutoff);
    counts.bottomRows(counts.rows() - first).setConstant(1e6);
    const DailyPanel altered(s.data.factual.start_date(), counts, s.data.factual.new_licenses(),
                             s.data.factual.renewal_licenses(), s.data.factual.series_names());
    ForecastOptions opt;
    opt.replicates = 20;
    const auto a = forecast_counterfactual(s.fit, PreCutoffHistory(s.data.factual, s.cutoff),
                                           exogenous_from_panel(s.data.factual, s.cutoff, 26), opt);
    const auto b = forecast_counterfactual(s.fit, PreCutoffHistory(altered, s.cutoff),
                                           exogenous_from_panel(altered, s.cutoff, 26), opt);
    EXPECT_EQ(a.draws, b.draws);
}

TEST(Forecast, MedianNearPointOnSymmetricDgp) {
    auto cfg = four_series_config(900, 0.05, 0.3, 10);
    for (auto& s : cfg.series) s.trend = s.trend_sq = 0.0;
    const auto data = generate_panel(cfg);
    const Date cutoff = data.factual.start_date() + 870;
    const auto fit = fit_model(data.factual.before(cutoff), ModelSpec::full(2, 2, cfg.holidays));
    ForecastOptions opt;
    opt.replicates = 2000;
    const auto f = forecast_counterfactual(fit, PreCutoffHistory(data.factual, cutoff),
                                           exogenous_from_panel(data.factual, cutoff, 26), opt);
    std::vector<double> col(2000);
    for (Eigen::Index h = 0; h < 26; h += 5) {
        for (Eigen::Index j = 0; j < 4; ++j) {
            for (int b = 0; b < 2000; ++b) col[static_cast<std::size_t>(b)] = f.draw(b, h, j);
            const double sd = oracle::stddev(col);
            std::nth_element(col.begin(), col.begin() + 1000, col.end());
            EXPECT_NEAR(col[1000], f.point_path(h, j), 4.0 * 1.25 * sd / std::sqrt(2000.0)) << h << "," << j;
        }
    }
}

TEST(Forecast, IntervalEndpointsConvergeInB) {
    const auto s = make_setup(900, 0.2, 11);
    const auto a = run(s, 5000, 21);
    const auto b = run(s, 10000, 22);
    for (Eigen::Index j = 0; j < 4; ++j) {
        const auto ia = cumulative_interval(a, j, 5, 25, 0.95);
        const auto ib = cumulative_interval(b, j, 5, 25, 0.95);
        const double width = ib.upper - ib.lower;
        EXPECT_LT(std::abs(ia.lower - ib.lower), 0.02 * width);
        EXPECT_LT(std::abs(ia.upper - ib.upper), 0.02 * width);
    }
}

TEST(Forecast, CumulativeIntervalCoverage) {
    int covered = 0, total = 0;
    for (std::uint64_t seed = 1; seed <= 50; ++seed) {
        const auto s = make_setup(800, 0.15, 500 + seed);
        const auto f = run(s, 400, seed);
        const auto first = *s.data.factual.index_of(s.cutoff);
        const Eigen::Index j = static_cast<Eigen::Index>(seed % 4);
        const double truth = s.data.truth.counterfactual.col(j).segment(first + 5, 21).sum();
        const auto iv = cumulative_interval(f, j, 5, 25, 0.95);
        covered += (iv.lower <= truth && truth <= iv.upper);
        ++total;
    }
    EXPECT_GE(covered, 43) << covered << "/" << total;
}

TEST(DrawsBinary, RoundTripAndHeader) {
    const auto s = make_setup(700, 0.2, 12);
    const auto f = run(s, 5, 1, 1, 3);
    std::stringstream ss;
    write_draws_binary(ss, f);
    const std::string bytes = ss.str();
    EXPECT_EQ(bytes.substr(0, 8), "IMPDRAW1");
    EXPECT_EQ(bytes.size(), 8u + 24u + 5u * 3u * 4u * 8u);
    const auto t = read_draws_binary(ss);
    EXPECT_EQ(t.replicates, 5u);
    EXPECT_EQ(t.horizon, 3u);
    EXPECT_EQ(t.series, 4u);
    EXPECT_EQ(t.values, f.draws);
    std::istringstream bad("NOTDRAWS");
    EXPECT_THROW(read_draws_binary(bad), ParseError);
}

TEST(ForecastCsv, LongFormatRows) {
    const auto s = make_setup(700, 0.2, 13);
    const auto f = run(s, 10, 1, 1, 4);
    std::ostringstream os;
    write_forecast_csv(os, f, 0.9);
    const auto text = os.str();
    EXPECT_EQ(text.rfind("date,series,point,plugin,lower,upper\n", 0), 0u);
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 1 + 4 * 4);
}

#include <gtest/gtest.h>

#include <sstream>

#include "impact/selection.hpp"
#include "impact/synthgen.hpp"
#include "oracles.hpp"

using namespace impact;

namespace {

ModelSpec dow_only(int sales, int license) {
    ModelSpec s;
    s.sales_lags = sales;
    s.license_lags = license;
    s.day_of_week = true;
    return s;
}

// Single series, white-noise log outcome around a constant, no calendar or
// license effects.
SynthConfig noise_config(Eigen::Index days, std::uint64_t seed) {
    SynthConfig c;
    c.days = days;
    c.seed = seed;
    SeriesParams s;
    s.name = "noise";
    s.intercept = std::log(200.0);
    c.series.push_back(s);
    c.sigma = Eigen::MatrixXd::Constant(1, 1, 0.04);
    return c;
}

}  // namespace

TEST(ContiguousFolds, CoverEveryRowOnce) {
    for (Eigen::Index n : {10, 11, 97, 1000}) {
        const auto f = contiguous_folds(n, 10);
        ASSERT_EQ(f.size(), 10u);
        EXPECT_EQ(f.front().first, 0);
        EXPECT_EQ(f.back().second, n);
        for (std::size_t k = 1; k < f.size(); ++k) EXPECT_EQ(f[k].first, f[k - 1].second);
        for (const auto& [lo, hi] : f) EXPECT_GE(hi - lo, n / 10);
    }
}

TEST(CrossValidate, RejectsSingleFold) {
    auto cfg = four_series_config(300, 0.2, 0.3, 1);
    const auto panel = generate_panel(cfg).factual;
    CvOptions opt;
    opt.folds = 1;
    EXPECT_THROW(cross_validate(panel, dow_only(1, 0), opt), ArgumentError);
}

// Independent computation: normal equations per fold on the same rows.
TEST(CrossValidate, MatchesNormalEquationOracle) {
    auto cfg = four_series_config(600, 0.2, 0.4, 2);
    const auto panel = generate_panel(cfg).factual;
    const auto spec = dow_only(3, 2);
    const auto rep = cross_validate(panel, spec);
    const auto designs = build_designs(panel, spec);
    const Eigen::Index n = designs[0].usable_days();
    EXPECT_EQ(rep.predicted_rows, n);
    for (std::size_t j = 0; j < designs.size(); ++j) {
        const auto& X = designs[j].rows;
        const auto& y = designs[j].target;
        double abs_sum = 0.0, sq_sum = 0.0;
        for (int f = 0; f < 10; ++f) {
            const Eigen::Index lo = n * f / 10, hi = n * (f + 1) / 10;
            Eigen::MatrixXd A = Eigen::MatrixXd::Zero(X.cols(), X.cols());
            Eigen::VectorXd b = Eigen::VectorXd::Zero(X.cols());
            for (Eigen::Index r = 0; r < n; ++r) {
                if (r >= lo && r < hi) continue;
                A += X.row(r).transpose() * X.row(r);
                b += X.row(r).transpose() * y[r];
            }
            const Eigen::VectorXd beta = A.ldlt().solve(b);
            for (Eigen::Index r = lo; r < hi; ++r) {
                const double e = y[r] - X.row(r).dot(beta);
                abs_sum += std::abs(e);
                sq_sum += e * e;
            }
        }
        EXPECT_NEAR(rep.mae[static_cast<Eigen::Index>(j)], abs_sum / n, 1e-9);
        EXPECT_NEAR(rep.rmse[static_cast<Eigen::Index>(j)], std::sqrt(sq_sum / n), 1e-9);
        EXPECT_GE(rep.rmse[static_cast<Eigen::Index>(j)], rep.mae[static_cast<Eigen::Index>(j)]);
    }
}

TEST(CrossValidate, NoiselessPanelHasZeroError) {
    auto cfg = four_series_config(1200, 0.0, 0.0, 3);
    cfg.round_counts = false;
    const auto panel = generate_panel(cfg).factual;
    const auto rep = cross_validate(panel, ModelSpec::full(2, 2, cfg.holidays));
    EXPECT_LT(rep.mae.maxCoeff(), 1e-6);
}

TEST(CrossValidate, DeterministicBitForBit) {
    auto cfg = four_series_config(500, 0.2, 0.3, 4);
    const auto panel = generate_panel(cfg).factual;
    const auto a = cross_validate(panel, dow_only(2, 1));
    const auto b = cross_validate(panel, dow_only(2, 1));
    EXPECT_EQ(a.mae, b.mae);
    EXPECT_EQ(a.rmse, b.rmse);
}

TEST(CrossValidate, RankDeficientFoldIsNamed) {
    auto cfg = four_series_config(120, 0.2, 0.3, 5);
    const auto panel = generate_panel(cfg).factual;
    ModelSpec s = dow_only(1, 0);
    s.holiday = true;
    s.holidays = {panel.start_date() + 60};  // one holiday: its fold cannot estimate it
    try {
        cross_validate(panel, s);
        FAIL();
    } catch (const RankDeficientError& e) {
        EXPECT_NE(std::string(e.what()).find("fold"), std::string::npos);
        ASSERT_FALSE(e.columns().empty());
        EXPECT_EQ(e.columns().front(), "holiday");
    }
}

TEST(CompareTimeSpecs, DuplicateSpecsGiveIdenticalReports) {
    auto cfg = four_series_config(500, 0.2, 0.3, 6);
    const auto panel = generate_panel(cfg).factual;
    const auto reps = compare_time_specs(panel, {dow_only(1, 1), dow_only(1, 1)});
    ASSERT_EQ(reps.size(), 2u);
    EXPECT_EQ(reps[0].mae, reps[1].mae);
    EXPECT_THROW(compare_time_specs(panel, {}), ArgumentError);
}

TEST(CompareTimeSpecs, SixSpecTableLayoutAndTrueFamilyWins) {
    auto cfg = four_series_config(1600, 0.25, 0.4, 7);
    const auto panel = generate_panel(cfg).factual;
    const auto grid = time_effect_grid(cfg.holidays);
    const auto reps = compare_time_specs(panel, grid);
    ASSERT_EQ(reps.size(), 6u);
    std::ostringstream os;
    write_cv_table(os, reps);
    std::istringstream in(os.str());
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) {
        ++lines;
        EXPECT_EQ(std::count(line.begin(), line.end(), ','), 6) << line;
    }
    EXPECT_EQ(lines, 1 + 6 + 2 + 4 * 2);
    // Generating process uses week-of-year seasonality plus a quadratic trend.
    EXPECT_LT(reps[4].mean_mae(), reps[5].mean_mae());
    EXPECT_LT(reps[4].mean_mae(), reps[0].mean_mae());
}

TEST(SelectLags, StoppingRuleAndPrefix) {
    auto cfg = four_series_config(1000, 0.2, 0.3, 8);
    const auto panel = generate_panel(cfg).factual;
    const auto sel = select_lags(panel, dow_only(0, 0), LagKind::Sales, 8);
    ASSERT_GE(sel.mae_by_lag.size(), 2u);
    const auto L = static_cast<std::size_t>(sel.lags);
    for (std::size_t l = 1; l <= L; ++l) EXPECT_LE(sel.mae_by_lag[l], sel.mae_by_lag[l - 1]);
    if (!sel.truncated) {
        ASSERT_EQ(sel.mae_by_lag.size(), L + 2);
        EXPECT_GT(sel.mae_by_lag[L + 1], sel.mae_by_lag[L]);
    }
    EXPECT_GE(sel.lags, 1);
    EXPECT_THROW(select_lags(panel, dow_only(0, 0), LagKind::Sales, 0), ArgumentError);
}

TEST(SelectLags, TruncationFlagWhenStillImproving) {
    auto cfg = four_series_config(1000, 0.2, 0.3, 9);
    for (auto& s : cfg.series) s.ar = {0.3, 0.2, 0.2};
    const auto panel = generate_panel(cfg).factual;
    const auto sel = select_lags(panel, dow_only(0, 0), LagKind::Sales, 1);
    EXPECT_EQ(sel.lags, 1);
    EXPECT_TRUE(sel.truncated);
}

TEST(SelectLags, SequentialOrderHoldsSalesDepth) {
    auto cfg = four_series_config(900, 0.2, 0.3, 10);
    const auto panel = generate_panel(cfg).factual;
    const auto seq = select_lags_sequential(panel, dow_only(0, 0), 4, 3);
    EXPECT_EQ(seq.spec.sales_lags, seq.sales.lags);
    EXPECT_EQ(seq.spec.license_lags, seq.license.lags);
    EXPECT_EQ(seq.sales.kind, LagKind::Sales);
    EXPECT_EQ(seq.license.kind, LagKind::License);
}

TEST(SelectLags, WhiteNoiseSelectsFewLags) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto panel = generate_panel(noise_config(600, seed)).factual;
        ModelSpec base;
        base.sales_lags = 0;
        const auto sel = select_lags(panel, base, LagKind::Sales, 6);
        EXPECT_LE(sel.lags, 3) << seed;
        EXPECT_LE(sel.mae_by_lag[static_cast<std::size_t>(sel.lags)], 1.02 * sel.mae_by_lag[0]) << seed;
    }
}

// Irrelevant regressors (license lags with zero true effect) lower in-sample
// residuals but raise out-of-fold error on average.
TEST(CrossValidate, IrrelevantRegressorsOverfit) {
    std::vector<double> gap_cv, gap_in, in_minus_cv;
    for (std::uint64_t seed = 1; seed <= 50; ++seed) {
        auto cfg = four_series_config(300, 0.3, 0.3, 100 + seed);
        for (auto& s : cfg.series) s.new_license = s.renewal_license = {};
        const auto panel = generate_panel(cfg).factual;
        CvOptions opt;
        opt.first_row = 6;
        const auto small = cross_validate(panel, dow_only(1, 0), opt);
        const auto big = cross_validate(panel, dow_only(1, 6), opt);
        gap_cv.push_back(big.mean_mae() - small.mean_mae());

        DesignOptions dopt;
        dopt.first_row = 6;
        const auto d_small = build_design(panel, 0, dow_only(1, 0), dopt);
        const auto d_big = build_design(panel, 0, dow_only(1, 6), dopt);
        const double ssr_small = fit_ols(d_small).ssr, ssr_big = fit_ols(d_big).ssr;
        EXPECT_LE(ssr_big, ssr_small + 1e-9);
        gap_in.push_back(ssr_big - ssr_small);

        const auto in_fit = fit_ols(d_big);
        in_minus_cv.push_back(in_fit.residuals.cwiseAbs().mean() - big.mae[0]);
    }
    EXPECT_GT(oracle::mean(gap_cv), 0.0);
    EXPECT_LT(oracle::mean(in_minus_cv), 0.0);
}

// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
// criterion fails. Oracles come from oracles.hpp or are written inline here.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "impact/impact.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace impact;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// ---------------------------------------------------------------------------
// 1. Printed confusion matrices reproduce the printed rates.

Outcome printed_confusion_rates() {
    const auto t0 = std::chrono::steady_clock::now();
    struct Printed {
        ConfusionMatrix cm;
        double accuracy, fnr, fpr;  // percent as printed
    };
    const Printed printed[] = {{{36, 3, 12, 47}, 85, 25, 6},
                               {{28.3, 3.6, 20.0, 46.1}, 75, 42, 7},
                               {{27, 0, 4, 38}, 94, 13, 0},
                               {{21.5, 0, 4.2, 43.2}, 94, 16, 0}};
    double worst = 0.0;
    bool ok = true;
    for (const auto& p : printed) {
        const auto m = metrics(p.cm);
        if (!m.accuracy || !m.fnr || !m.fpr) return {false, "missing metric"};
        for (auto [got, want] : {std::pair{*m.accuracy * 100, p.accuracy}, std::pair{*m.fnr * 100, p.fnr},
                                 std::pair{*m.fpr * 100, p.fpr}}) {
            worst = std::max(worst, std::abs(got - want));
            ok &= std::abs(got - want) <= 1.0;
        }
    }
    // The rated items rebuild the same four matrices.
    const auto rebuilt = evaluate_classifier(oracle::rated_items());
    for (std::size_t k = 0; k < 4; ++k) {
        const auto& a = rebuilt[k].result.matrix;
        const auto& b = printed[k].cm;
        ok &= std::abs(a.tn - b.tn) + std::abs(a.fp - b.fp) + std::abs(a.fn - b.fn) + std::abs(a.tp - b.tp) < 1e-9;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ok &= secs < 1.0;
    return {ok, fmt("max deviation %.2f pp over 12 printed rates, items rebuild all 4 matrices, %.3f s", worst, secs)};
}

// ---------------------------------------------------------------------------
// 2. Breakeven arithmetic.

Outcome breakeven_golden() {
    const auto taw = breakeven_weeks(1089, 49, 21);
    const auto ntaw = breakeven_weeks(1528, 194, 21);
    const bool ok = taw.rounded_weeks() == 67 && ntaw.rounded_weeks() == 24;
    return {ok, fmt("TAW %.2f -> %ld weeks, NonTAW %.2f -> %ld weeks", taw.weeks.value_or(-1),
                    taw.rounded_weeks().value_or(-1), ntaw.weeks.value_or(-1), ntaw.rounded_weeks().value_or(-1))};
}

// ---------------------------------------------------------------------------
// 3. Sales weights average to one.

Outcome sales_weights_identity() {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> len(1, 500);
    std::lognormal_distribution<double> sales(3.0, 1.5);
    double worst = 0.0;
    for (int r = 0; r < 100; ++r) {
        std::vector<double> v(static_cast<std::size_t>(len(rng)));
        for (auto& x : v) x = std::round(sales(rng));
        v.back() += 1.0;
        worst = std::max(worst, std::abs(sales_weights(v).mean() - 1.0));
    }
    return {worst <= 1e-12, fmt("max |mean - 1| = %.2e over 100 vectors", worst)};
}

// ---------------------------------------------------------------------------
// 4. SUR against per-equation least squares.

Outcome sur_correctness() {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(4);
    double worst = 0.0;
    for (int r = 0; r < 20; ++r) {
        const auto sys = oracle::correlated_system(rng, 200, 4, 5, 0.7, true);
        const auto sur = fit_sur(sys.designs);
        for (std::size_t j = 0; j < 4; ++j)
            worst = std::max(worst, (sur.coefficients[j] - fit_ols(sys.designs[j]).coefficients).cwiseAbs().maxCoeff());
    }
    double mse_sur = 0.0, mse_ols = 0.0;
    for (int r = 0; r < 50; ++r) {
        const auto sys = oracle::correlated_system(rng, 60, 4, 4, 0.8, false);
        const auto sur = fit_sur(sys.designs);
        for (std::size_t j = 0; j < 4; ++j) {
            mse_sur += (sur.coefficients[j] - sys.truth[j]).squaredNorm() / 50.0;
            mse_ols += (fit_ols(sys.designs[j]).coefficients - sys.truth[j]).squaredNorm() / 50.0;
        }
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {worst <= 1e-8 && mse_sur <= mse_ols && secs < 60.0,
            fmt("identical regressors max |SUR - OLS| = %.2e; correlated errors mean MSE SUR %.5f vs OLS %.5f; %.2f s",
                worst, mse_sur, mse_ols, secs)};
}

// ---------------------------------------------------------------------------
// 5. Effect recovery through the full modeling chain.

Outcome effect_recovery() {
    const auto t0 = std::chrono::steady_clock::now();
    const int runs = 50;
    const Eigen::Index day = 1960;
    int recovered = 0;
    std::map<std::string, int> covered;
    std::string lags;
    for (int r = 0; r < runs; ++r) {
        auto cfg = four_series_config(2000, 0.08, 0.5, 5000 + static_cast<std::uint64_t>(r));
        cfg.intervention_day = day;
        cfg.interventions = {{1, 0, 4, 7.16}, {1, 5, 25, 0.91}, {2, 0, 4, 7.16}, {2, 5, 25, 0.91}};
        const auto data = generate_panel(cfg);
        const Date cutoff = data.factual.date_at(day);
        const PreCutoffHistory history(data.factual, cutoff);
        const auto sel = select_lags_sequential(history.panel(), ModelSpec::full(0, 0, cfg.holidays), 10, 10);
        if (r < 5) lags += fmt("%s%d/%d", r ? "," : "", sel.spec.sales_lags, sel.spec.license_lags);
        const auto fit = fit_model(history.panel(), sel.spec);
        ForecastOptions opt;
        opt.replicates = 1000;
        opt.seed = static_cast<std::uint64_t>(r + 1);
        const auto fc = forecast_counterfactual(fit, history, exogenous_from_panel(data.factual, cutoff, 26), opt);
        const auto imm = estimate_effect(data.factual, fc, EffectWindow::immediate());
        const auto sr = estimate_effect(data.factual, fc, EffectWindow::short_run());
        bool ok = true;
        for (const auto& te : data.truth.effects) {
            const auto j = static_cast<std::size_t>(te.series);
            const auto& est = te.start_offset == 0 ? imm[j] : sr[j];
            const double cf =
                data.truth.counterfactual.col(te.series).segment(day + te.start_offset, est.window.length()).sum();
            const double true_pct = te.cumulative / cf;
            if (te.start_offset == 0) ok &= std::abs(*est.pct_diff - true_pct) <= 0.15 * std::abs(true_pct);
            else ok &= est.abs_diff < 0.0;
            covered[est.series + "/" + est.window.label] += est.ci_low <= te.cumulative && te.cumulative <= est.ci_high;
        }
        recovered += ok;
    }
    int worst_cover = runs;
    std::string cover_text;
    for (const auto& [k, n] : covered) {
        worst_cover = std::min(worst_cover, n);
        cover_text += fmt(" %s %d/50", k.c_str(), n);
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {recovered >= 45 && worst_cover >= 43 && secs < 600.0,
            fmt("recovered %d/50 runs; CI coverage%s; lags (first runs) %s; %.0f s", recovered, cover_text.c_str(),
                lags.c_str(), secs)};
}

// ---------------------------------------------------------------------------
// 6. Sales-lag selection on a two-lag process.

Outcome lag_selection() {
    const int runs = 50;
    int exact = 0;
    std::map<int, int> hist;
    bool stop_rule = true;
    for (int r = 0; r < runs; ++r) {
        const auto cfg = four_series_config(2000, 0.1, 0.5, 6000 + static_cast<std::uint64_t>(r));
        const auto panel = generate_panel(cfg).factual;
        const auto sel = select_lags(panel, ModelSpec::full(0, 2, cfg.holidays), LagKind::Sales, 10);
        ++hist[sel.lags];
        exact += sel.lags == 2;
        // First increase stops the search; everything before it was non-increasing.
        const auto L = static_cast<std::size_t>(sel.lags);
        for (std::size_t l = 1; l <= L; ++l) stop_rule &= sel.mae_by_lag[l] <= sel.mae_by_lag[l - 1];
        stop_rule &= sel.truncated || (sel.mae_by_lag.size() == L + 2 && sel.mae_by_lag[L + 1] > sel.mae_by_lag[L]);
    }
    std::string h;
    for (const auto& [l, n] : hist) h += fmt(" %d:%d", l, n);
    return {exact >= 45 && stop_rule, fmt("selected 2 lags in %d/50 runs (lags:count%s); stopping rule %s", exact,
                                          h.c_str(), stop_rule ? "held" : "violated")};
}

// ---------------------------------------------------------------------------
// 7. Forecast oracle, determinism, and Monte Carlo stability.

Outcome forecast_oracle() {
    // Noiseless process against the deterministic recursion.
    auto cfg = four_series_config(900, 0.0, 0.5, 7);
    cfg.round_counts = false;
    const auto data = generate_panel(cfg);
    const Date cutoff = data.factual.date_at(870);
    const PreCutoffHistory hist(data.factual, cutoff);
    const auto fit = fit_model(hist.panel(), ModelSpec::full(2, 2, cfg.holidays));
    ForecastOptions opt;
    opt.horizon = 25;
    opt.replicates = 20;
    const auto f = forecast_counterfactual(fit, hist, exogenous_from_panel(data.factual, cutoff, 25), opt);
    const Eigen::MatrixXd truth = oracle::deterministic_recursion(
        cfg, data.truth.log_path, data.factual.new_licenses(), data.factual.renewal_licenses(), 870, 25);
    const double err = (f.point_path - (truth.array().exp() - 0.1).matrix()).cwiseAbs().maxCoeff();

    // Same seed, any thread count: identical bytes.
    const auto noisy = generate_panel(four_series_config(900, 0.2, 0.5, 8));
    const PreCutoffHistory nh(noisy.factual, cutoff);
    const auto nfit = fit_model(nh.panel(), ModelSpec::full(2, 2, cfg.holidays));
    const auto exo = exogenous_from_panel(noisy.factual, cutoff, 26);
    auto bytes = [&](int B, std::uint64_t seed, unsigned threads) {
        ForecastOptions o;
        o.replicates = B;
        o.seed = seed;
        o.threads = threads;
        std::ostringstream os;
        write_draws_binary(os, forecast_counterfactual(nfit, nh, exo, o));
        return os.str();
    };
    const bool identical = bytes(500, 42, 1) == bytes(500, 42, 1) && bytes(500, 42, 1) == bytes(500, 42, 3);

    // Window intervals at B = 5,000 and 10,000 under one seed.
    auto run = [&](int B) {
        ForecastOptions o;
        o.replicates = B;
        o.seed = 77;
        return forecast_counterfactual(nfit, nh, exo, o);
    };
    const auto a = run(5000);
    const auto b = run(10000);
    double drift = 0.0, total = 0.0;
    for (const auto& w : {EffectWindow::immediate(), EffectWindow::short_run()})
        for (Eigen::Index j = 0; j < 4; ++j) {
            const auto ia = cumulative_interval(a, j, w.start_offset, w.end_offset, 0.95);
            const auto ib = cumulative_interval(b, j, w.start_offset, w.end_offset, 0.95);
            const double width = ib.upper - ib.lower;
            const double dl = std::abs(ia.lower - ib.lower) / width, du = std::abs(ia.upper - ib.upper) / width;
            drift = std::max({drift, dl, du});
            total += dl + du;
        }
    return {err <= 1e-6 && identical && drift < 0.02,
            fmt("max |forecast - recursion| = %.2e over 25 days; draws byte-identical: %s; endpoint drift max %.2f%% "
                "mean %.2f%% of width over 16 window endpoints",
                err, identical ? "yes" : "no", drift * 100.0, total / 16.0 * 100.0)};
}

// ---------------------------------------------------------------------------
// 8. Descriptives against brute-force scans.

Outcome descriptives_oracle() {
    long mismatches = 0, checks = 0;
    double corr_err = 0.0;
    auto expect = [&](bool ok) {
        ++checks;
        mismatches += !ok;
    };
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto tx = oracle::random_transactions(800 + seed, 1000);
        std::mt19937_64 rng(seed);
        std::uniform_int_distribution<int> day(0, 4 * 365), kind(0, 1);
        std::vector<LicenseRecord> lic;
        for (int i = 0; i < 1000; ++i)
            lic.push_back({Date(2014, 1, 1) + day(rng), kind(rng) ? LicenseKind::New : LicenseKind::Renewal});

        for (const auto& [y, c] : annual_totals(tx))
            for (auto t : kFirearmTypes) expect(c[type_index(t)] == oracle::bf_count(tx, y, t));
        const auto monthly = monthly_totals(tx);
        for (const auto& [ym, c] : monthly)
            for (auto t : kFirearmTypes) {
                long n = 0;
                for (const auto& r : tx)
                    n += r.date.year() == ym.first && r.date.month() == ym.second && r.firearm_type == t;
                expect(c[type_index(t)] == n);
            }
        for (const auto& [yw, c] : weekly_totals(tx))
            for (auto t : kFirearmTypes) {
                long n = 0;
                for (const auto& r : tx) {
                    const int w = std::min(static_cast<int>((r.date - Date(r.date.year(), 1, 1)) / 7) + 1, 52);
                    n += r.date.year() == yw.first && w == yw.second && r.firearm_type == t;
                }
                expect(c[type_index(t)] == n);
            }
        for (const auto& [y, c] : annual_license_totals(lic)) {
            long n = 0, rw = 0;
            for (const auto& l : lic)
                if (l.issue_date.year() == y) (l.kind == LicenseKind::New ? n : rw)++;
            expect(c[0] == n && c[1] == rw);
        }
        // Year-over-year change, mean of month-on-month ratios.
        for (auto t : kFirearmTypes) {
            const auto ch = yoy_monthly_change(monthly, 2015, 2017, t);
            double acc = 0.0;
            int used = 0;
            for (unsigned m = 1; m <= 12; ++m) {
                long a = 0, b = 0;
                for (const auto& r : tx) {
                    if (r.firearm_type != t || r.date.month() != m) continue;
                    a += r.date.year() == 2015;
                    b += r.date.year() == 2017;
                }
                if (a > 0) {
                    acc += static_cast<double>(b - a) / static_cast<double>(a);
                    ++used;
                }
            }
            expect(ch.months_compared == used);
            if (used > 0) expect(std::abs(*ch.mean_of_monthly_changes - acc / used) <= 1e-12);
        }
        const auto fresh = newly_observed_purchasers(tx);
        const auto bf = oracle::bf_newly_observed(tx);
        for (std::size_t w = 0; w < fresh.newly_observed.size(); ++w)
            for (auto t : kFirearmTypes) {
                auto it = bf.find({static_cast<long>(w), t});
                expect(fresh.newly_observed[w][type_index(t)] == (it == bf.end() ? 0 : it->second));
            }
        const std::set<FirearmType> rifles{FirearmType::TAWRifle, FirearmType::NonTAWRifle};
        const auto conc = purchaser_concentration(tx, Date(2015, 1, 1), Date(2016, 12, 31), rifles);
        for (const auto& b : conc.buckets)
            expect(b.purchases == oracle::bf_bucket_purchases(tx, Date(2015, 1, 1), Date(2016, 12, 31), rifles,
                                                              b.min_purchases, b.max_purchases));
        const auto ratios = retailer_sales_ratios(tx, 2015, 2017, 0.9);
        for (const auto& r : ratios.retailers)
            for (auto t : kFirearmTypes) {
                const long s0 = oracle::bf_dealer_type_year(tx, r.dealer_id, t, 2015);
                const long s1 = oracle::bf_dealer_type_year(tx, r.dealer_id, t, 2017);
                expect(r.sales_y0[type_index(t)] == s0 && r.sales_y1[type_index(t)] == s1);
                if (s0 > 0) expect(std::abs(*r.ratio[type_index(t)] - static_cast<double>(s1) / s0) <= 1e-12);
            }
        const std::vector<double> edges{0.0, 0.5, 1.0, 1.5, 2.0};
        const auto bins = ratio_histogram(ratios, FirearmType::TAWRifle, edges);
        for (std::size_t i = 0; i < bins.size(); ++i) {
            long n = 0;
            for (const auto& r : ratios.retailers) {
                const auto& v = r.ratio[type_index(FirearmType::TAWRifle)];
                if (!v) continue;
                n += *v >= edges[i] && (i + 1 == bins.size() || *v < edges[i + 1]);
            }
            expect(bins[i] == n);
        }
        // Daily series correlation.
        const auto panel = aggregate_daily(tx, lic, Date(2014, 1, 1), Date(2017, 12, 31)).panel;
        for (Eigen::Index a = 0; a < 4; ++a)
            for (Eigen::Index b = a + 1; b < 4; ++b) {
                const Eigen::VectorXd ca = panel.counts().col(a), cb = panel.counts().col(b);
                const std::vector<double> x(ca.data(), ca.data() + ca.size()), y(cb.data(), cb.data() + cb.size());
                corr_err = std::max(corr_err, std::abs(*series_correlation(x, y) - oracle::bf_pearson(x, y)));
            }
        // Covariate association.
        std::map<std::string, double> cov;
        for (int d = 0; d < 40; ++d) cov[std::to_string(10000 + d * 37)] = static_cast<double>((d * 7919) % 101) / 10.0;
        const auto assoc = covariate_association(ratios.retailers, cov, FirearmType::TAWRifle);
        std::vector<double> x, y;
        for (const auto& r : ratios.retailers) {
            const auto& v = r.ratio[type_index(FirearmType::TAWRifle)];
            if (!v || !r.zip || !cov.contains(*r.zip)) continue;
            x.push_back(cov.at(*r.zip));
            y.push_back(*v);
        }
        expect(assoc.used == x.size());
        corr_err = std::max(corr_err, std::abs(*assoc.pearson - oracle::bf_pearson(x, y)));
    }
    return {mismatches == 0 && corr_err <= 1e-12,
            fmt("%ld/%ld exact checks matched on 5 datasets of 1,000 records; max correlation error %.2e",
                checks - mismatches, checks, corr_err)};
}

// ---------------------------------------------------------------------------
// 9. Two full CLI runs with one seed.

int cli(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string("\"") + IMPACT_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
    const int rc = std::system(cmd.c_str());
    return rc == -1 ? -1 : WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Outcome end_to_end_determinism() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto root = fs::temp_directory_path() / "impact_acceptance_e2e";
    fs::remove_all(root);
    fs::create_directories(root);
    const auto q = [](const fs::path& p) { return "\"" + p.string() + "\""; };
    if (cli("simulate --sim-days 1200 --sim-mean-level 60 --seed 9 -o " + q(root / "sim"), root / "sim.log") != 0)
        return {false, "simulate failed: " + slurp(root / "sim.log")};
    {
        std::ofstream labels(root / "labels.csv");
        labels << "item_id,rater_1,rater_2,rater_3,predicted_label,sales_count\n";
        for (const auto& item : oracle::rated_items()) {
            labels << item.raters.item_id;
            for (auto l : item.raters.labels) labels << ',' << (l == RaterLabel::Assault ? "A" : "N");
            labels << ',' << (item.predicted_taw ? "TAW" : "NonTAW") << ',' << item.raters.sales_count << '\n';
        }
        std::ofstream cov(root / "income.csv");
        cov << "zip,value\n";
        for (int d = 0; d < 50; ++d) cov << fmt("%05d", 1000 + d) << ',' << 40000 + (d * 7919) % 60000 << '\n';
    }
    const std::string cutoff = nlohmann::json::parse(slurp(root / "sim" / "simulate.json"))["cutoff"];
    const Date c = Date::parse(cutoff);
    const std::string args = "report --transactions " + q(root / "sim" / "transactions.csv") + " --licenses " +
                             q(root / "sim" / "licenses.csv") + " --holidays " + q(root / "sim" / "holidays.txt") +
                             " --labels " + q(root / "labels.csv") + " --covariates " + q(root / "income.csv") +
                             " --cutoff " + cutoff + " --auto-select --max-sales-lags 8 --max-license-lags 8" +
                             " --compare-time-effects --ratio-year0 " + std::to_string(c.year() - 2) +
                             " --ratio-year1 " + std::to_string(c.year() - 1) + " --seed 2024 -o ";
    for (const char* run : {"a", "b"})
        if (cli(args + q(root / run), root / (std::string(run) + ".log")) != 0)
            return {false, std::string("report run failed: ") + slurp(root / (std::string(run) + ".log"))};
    std::size_t files = 0, differing = 0;
    for (const auto& e : fs::directory_iterator(root / "a")) {
        ++files;
        differing += slurp(e.path()) != slurp(root / "b" / e.path().filename());
    }
    const auto count_b = static_cast<std::size_t>(std::distance(fs::directory_iterator(root / "b"), fs::directory_iterator()));
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {differing == 0 && files == count_b && files > 20,
            fmt("%zu report files per run, %zu differ; %.0f s", files, differing, secs)};
}

}  // namespace

int main() {
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
        {"1 confusion-matrix golden rates", printed_confusion_rates},
        {"2 breakeven golden weeks", breakeven_golden},
        {"3 sales weights average to one", sales_weights_identity},
        {"4 SUR correctness", sur_correctness},
        {"5 effect recovery", effect_recovery},
        {"6 lag selection", lag_selection},
        {"7 forecast oracle", forecast_oracle},
        {"8 descriptives oracle", descriptives_oracle},
        {"9 end-to-end determinism", end_to_end_determinism},
    };
    int failed = 0;
    for (const auto& [name, fn] : criteria) {
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  " << name << "  " << o.detail << std::endl;
    }
    std::cout << (failed ? "FAILED " : "ALL PASSED ") << (9 - failed) << "/9" << std::endl;
    return failed ? 1 : 0;
}

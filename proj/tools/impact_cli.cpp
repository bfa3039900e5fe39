#include <CLI11.hpp>

#include <functional>
#include <iostream>
#include <map>
#include <string>

#include "impact/pipeline.hpp"

namespace {

struct RawOptions {
    std::string transactions, licenses, panel, holidays, labels, covariates;
    std::string study_start, study_end, cutoff, holdout_start;
    std::string windows;
    std::string concentration_start, concentration_end;
    int ratio_year0 = 0, ratio_year1 = 0;
    std::string histogram_edges;
    std::string sim_start;
    int sim_intervention_day = -1;
};

std::optional<std::filesystem::path> path_or_none(const std::string& s) {
    if (s.empty()) return std::nullopt;
    return std::filesystem::path(s);
}

std::optional<impact::Date> date_or_none(const std::string& s) {
    if (s.empty()) return std::nullopt;
    return impact::Date::parse(s);
}

void finalize(impact::RunConfig& c, const RawOptions& r) {
    c.transactions = path_or_none(r.transactions);
    c.licenses = path_or_none(r.licenses);
    c.panel = path_or_none(r.panel);
    c.holidays = path_or_none(r.holidays);
    c.labels = path_or_none(r.labels);
    c.covariates = path_or_none(r.covariates);
    c.study_start = date_or_none(r.study_start);
    c.study_end = date_or_none(r.study_end);
    c.cutoff = date_or_none(r.cutoff);
    c.holdout_start = date_or_none(r.holdout_start);
    c.concentration_start = date_or_none(r.concentration_start);
    c.concentration_end = date_or_none(r.concentration_end);
    if (!r.windows.empty()) c.windows = impact::parse_windows(r.windows);
    if (r.ratio_year0 > 0) c.ratio_year0 = r.ratio_year0;
    if (r.ratio_year1 > 0) c.ratio_year1 = r.ratio_year1;
    if (!r.histogram_edges.empty()) {
        c.histogram_edges.clear();
        for (const auto& f : impact::detail::split_line(r.histogram_edges)) c.histogram_edges.push_back(std::stod(f));
    }
    if (!r.sim_start.empty()) c.sim_start = impact::Date::parse(r.sim_start);
    if (r.sim_intervention_day >= 0) c.sim_intervention_day = r.sim_intervention_day;
    if (!(c.confidence > 0.0 && c.confidence < 1.0))
        throw impact::ArgumentError("confidence must lie strictly between 0 and 1", "cli");
    if (c.replicates < 2) throw impact::ArgumentError("bootstrap-reps must be at least 2", "cli");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Counterfactual forecasting of daily sales around a policy intervention"};
    app.set_version_flag("--version", impact::kVersion);
    app.set_config("--config", "", "INI or TOML file with option=value lines; flags override it");
    app.require_subcommand(1);
    app.fallthrough();

    impact::RunConfig cfg;
    RawOptions raw;

    app.add_option("--transactions", raw.transactions, "Transaction records (CSV)");
    app.add_option("--licenses", raw.licenses, "License issuance records (CSV)");
    app.add_option("--panel", raw.panel, "Pre-aggregated daily panel (CSV); replaces transactions+licenses for modeling");
    app.add_option("--holidays", raw.holidays, "Holiday dates, one per line (default: US federal holidays)");
    app.add_option("--labels", raw.labels, "Rater labels for classifier evaluation (CSV)");
    app.add_option("--covariates", raw.covariates, "Zip-level covariate (CSV: zip,value)");
    app.add_option("-o,--output", cfg.output, "Report directory");
    app.add_option("--study-start", raw.study_start, "First day of the study range");
    app.add_option("--study-end", raw.study_end, "Last day of the study range");
    app.add_option("--cutoff", raw.cutoff, "Intervention date; the forecast starts here");
    app.add_option("--windows", raw.windows, "Effect windows, e.g. immediate:0-4,short_run:5-25");
    app.add_flag("--auto-select", cfg.auto_select, "Choose lag depths by blocked cross-validation");
    app.add_option("--sales-lags", cfg.sales_lags, "Sales lags when not auto-selecting");
    app.add_option("--license-lags", cfg.license_lags, "License lags when not auto-selecting");
    app.add_option("--max-sales-lags", cfg.max_sales_lags, "Largest sales lag depth tried");
    app.add_option("--max-license-lags", cfg.max_license_lags, "Largest license lag depth tried");
    app.add_option("--time-effects", cfg.time_effects, "Calendar terms: dow, holiday, woy|doy, trend, trend_sq");
    app.add_flag("--compare-time-effects", cfg.compare_time_effects, "Include the six-way time-effect CV table");
    app.add_option("--folds", cfg.folds, "Cross-validation folds");
    app.add_option("--bootstrap-reps", cfg.replicates, "Bootstrap replicates");
    app.add_option("--seed", cfg.seed, "Master seed");
    app.add_option("--confidence", cfg.confidence, "Interval level");
    app.add_option("--threads", cfg.threads, "Worker threads for the bootstrap");
    app.add_option("--horizon", cfg.horizon, "Forecast days (default: last window end + 1)");
    app.add_option("--holdout-start", raw.holdout_start, "First holdout day (default: cutoff - holdout days)");
    app.add_option("--holdout-days", cfg.holdout_days, "Holdout length; 0 disables");
    app.add_flag("!--no-draws", cfg.write_draws, "Skip the binary draw tensor");
    app.add_option("--concentration-start", raw.concentration_start, "Purchaser concentration window start");
    app.add_option("--concentration-end", raw.concentration_end, "Purchaser concentration window end");
    app.add_option("--ratio-year0", raw.ratio_year0, "Base year for retailer sales ratios");
    app.add_option("--ratio-year1", raw.ratio_year1, "Comparison year for retailer sales ratios");
    app.add_option("--coverage", cfg.coverage, "Retailer subsample coverage of base-year TAW sales");
    app.add_option("--histogram-edges", raw.histogram_edges, "Ratio histogram bin edges, comma separated");
    app.add_option("--sim-start", raw.sim_start, "First simulated day");
    app.add_option("--sim-days", cfg.sim_days, "Simulated days");
    app.add_option("--sim-sd", cfg.sim_sd, "Log-scale innovation sd");
    app.add_option("--sim-rho", cfg.sim_rho, "Cross-series innovation correlation");
    app.add_option("--sim-mean-level", cfg.sim_mean_level, "Typical daily level of the largest series");
    app.add_option("--sim-intervention-day", raw.sim_intervention_day, "Panel index of the intervention (default: days - 60)");
    app.add_option("--sim-effects", cfg.sim_effects, "Series:start-end:factor list");
    app.add_option("--sim-dealers", cfg.sim_dealers, "Simulated retailers");
    app.add_option("--sim-purchasers", cfg.sim_purchasers, "Simulated purchaser pool");

    const std::map<std::string, std::pair<std::string, std::function<void(const impact::RunConfig&)>>> commands = {
        {"ingest", {"Validate records and build the daily panel", impact::run_ingest}},
        {"fit", {"Fit the SUR model on pre-cutoff data", impact::run_fit}},
        {"select", {"Cross-validate time effects and lag depths", impact::run_select}},
        {"forecast", {"Bootstrap counterfactual forecast from the cutoff", impact::run_forecast}},
        {"effects", {"Forecast, windowed effects, breakeven and holdout check", impact::run_effects}},
        {"classify-eval", {"Confusion matrices for the rifle classifier", impact::run_classify}},
        {"describe", {"Descriptive tables from transaction records", impact::run_describe}},
        {"simulate", {"Write a synthetic bundle with known effects", impact::run_simulate}},
        {"report", {"Run the full chain and write every report", impact::run_report}},
    };
    for (const auto& [name, entry] : commands) app.add_subcommand(name, entry.first);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        finalize(cfg, raw);
        for (const auto* sub : app.get_subcommands()) commands.at(sub->get_name()).second(cfg);
    } catch (const impact::Error& e) {
        std::cerr << "error [" << e.module() << "] " << e.message() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error [internal] " << e.what() << '\n';
        return 1;
    }
    return 0;
}

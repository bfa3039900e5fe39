#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "impact/classifier_eval.hpp"
#include "impact/core_data.hpp"
#include "impact/descriptives.hpp"
#include "impact/design.hpp"
#include "impact/detail/csv.hpp"
#include "impact/detail/rng.hpp"
#include "impact/effects.hpp"
#include "impact/error.hpp"
#include "impact/estimator.hpp"
#include "impact/forecast.hpp"
#include "impact/selection.hpp"
#include "impact/synthgen.hpp"

namespace impact {

inline constexpr const char* kVersion = "1.0.0";

struct RunConfig {
    // inputs and output
    std::optional<std::filesystem::path> transactions;
    std::optional<std::filesystem::path> licenses;
    std::optional<std::filesystem::path> panel;
    std::optional<std::filesystem::path> holidays;
    std::optional<std::filesystem::path> labels;
    std::optional<std::filesystem::path> covariates;
    std::filesystem::path output = "reports";

    std::optional<Date> study_start;
    std::optional<Date> study_end;
    std::optional<Date> cutoff;

    // model
    std::vector<EffectWindow> windows = {EffectWindow::immediate(), EffectWindow::short_run()};
    bool auto_select = false;
    int sales_lags = 28;
    int license_lags = 10;
    int max_sales_lags = 30;
    int max_license_lags = 15;
    std::string time_effects = "dow+holiday+woy+trend+trend_sq";
    bool compare_time_effects = false;  // the six-way grid; always on for `select`
    int folds = 10;
    int replicates = 1000;
    std::uint64_t seed = 1;
    double confidence = 0.95;
    unsigned threads = 1;
    int horizon = 0;  // 0: last window end + 1
    std::optional<Date> holdout_start;
    int holdout_days = 26;  // 0 disables; start defaults to cutoff - days
    bool write_draws = true;

    // descriptives
    std::optional<Date> concentration_start;
    std::optional<Date> concentration_end;
    std::optional<int> ratio_year0;
    std::optional<int> ratio_year1;
    double coverage = 0.9;
    std::vector<double> histogram_edges = {0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 2.0, 3.0};

    // simulate
    Date sim_start{2010, 1, 1};
    int sim_days = 2000;
    double sim_sd = 0.08;
    double sim_rho = 0.5;
    double sim_mean_level = 100.0;
    std::optional<int> sim_intervention_day;  // default: days - 60
    std::string sim_effects = "TAWRifle:0-4:7.16,TAWRifle:5-25:0.91,NonTAWRifle:0-4:5.33,NonTAWRifle:5-25:0.85";
    int sim_dealers = 50;
    int sim_purchasers = 20000;
};

// ---------------------------------------------------------------------------
// Parsing helpers shared by the CLI and config files

/// "dow+holiday+woy+trend+trend_sq"; '+' or ',' separate tokens, "none" for
/// no calendar terms.
inline ModelSpec parse_time_effects(const std::string& text) {
    ModelSpec s;
    std::string tok;
    std::stringstream ss(text);
    auto apply = [&](std::string t) {
        t = std::string(detail::trim(t));
        if (t.empty() || t == "none") return;
        if (t == "dow") s.day_of_week = true;
        else if (t == "holiday") s.holiday = true;
        else if (t == "woy") s.week_of_year = true;
        else if (t == "doy") s.day_of_year = true;
        else if (t == "trend") s.linear_trend = true;
        else if (t == "trend_sq") s.quadratic_trend = true;
        else throw ArgumentError("unknown time effect '" + t + "' (use dow, holiday, woy, doy, trend, trend_sq)", "cli");
    };
    for (char c : text) {
        if (c == '+' || c == ',') {
            apply(tok);
            tok.clear();
        } else {
            tok += c;
        }
    }
    apply(tok);
    s.validate();
    return s;
}

/// "label:start-end" items separated by ','.
inline std::vector<EffectWindow> parse_windows(const std::string& text) {
    std::vector<EffectWindow> out;
    for (const auto& item : detail::split_line(text)) {
        if (item.empty()) continue;
        const auto colon = item.find(':');
        const auto dash = item.find('-', colon == std::string::npos ? 0 : colon);
        if (colon == std::string::npos || dash == std::string::npos)
            throw ArgumentError("window '" + item + "' must look like label:start-end", "cli");
        EffectWindow w;
        w.label = item.substr(0, colon);
        try {
            w.start_offset = std::stoi(item.substr(colon + 1, dash - colon - 1));
            w.end_offset = std::stoi(item.substr(dash + 1));
        } catch (const std::exception&) {
            throw ArgumentError("window '" + item + "' has non-numeric offsets", "cli");
        }
        w.validate();
        out.push_back(w);
    }
    if (out.empty()) throw ArgumentError("at least one effect window is required", "cli");
    return out;
}

/// "Series:start-end:factor" items separated by ','.
inline std::vector<Intervention> parse_interventions(const std::string& text, const std::vector<std::string>& names) {
    std::vector<Intervention> out;
    for (const auto& item : detail::split_line(text)) {
        if (item.empty()) continue;
        const auto c1 = item.find(':');
        const auto c2 = item.rfind(':');
        if (c1 == std::string::npos || c1 == c2)
            throw ArgumentError("intervention '" + item + "' must look like Series:start-end:factor", "cli");
        const auto name = item.substr(0, c1);
        auto it = std::find(names.begin(), names.end(), name);
        if (it == names.end()) throw ArgumentError("intervention names unknown series '" + name + "'", "cli");
        const auto range = item.substr(c1 + 1, c2 - c1 - 1);
        const auto dash = range.find('-');
        Intervention iv;
        iv.series = static_cast<Eigen::Index>(it - names.begin());
        try {
            if (dash == std::string::npos) throw std::invalid_argument("range");
            iv.start_offset = std::stoi(range.substr(0, dash));
            iv.end_offset = std::stoi(range.substr(dash + 1));
            iv.factor = std::stod(item.substr(c2 + 1));
        } catch (const std::exception&) {
            throw ArgumentError("intervention '" + item + "' is malformed", "cli");
        }
        out.push_back(iv);
    }
    return out;
}

inline std::string windows_to_string(const std::vector<EffectWindow>& ws) {
    std::string out;
    for (const auto& w : ws) {
        if (!out.empty()) out += ',';
        out += w.label + ':' + std::to_string(w.start_offset) + '-' + std::to_string(w.end_offset);
    }
    return out;
}

/// Everything that shapes the outputs, minus the output directory itself so
/// that bundles written to different places compare equal.
inline nlohmann::ordered_json config_json(const RunConfig& c) {
    auto path = [](const std::optional<std::filesystem::path>& p) -> nlohmann::ordered_json {
        return p ? nlohmann::ordered_json(p->generic_string()) : nlohmann::ordered_json(nullptr);
    };
    auto date = [](const std::optional<Date>& d) -> nlohmann::ordered_json {
        return d ? nlohmann::ordered_json(d->iso()) : nlohmann::ordered_json(nullptr);
    };
    nlohmann::ordered_json j;
    j["transactions"] = path(c.transactions);
    j["licenses"] = path(c.licenses);
    j["panel"] = path(c.panel);
    j["holidays"] = path(c.holidays);
    j["labels"] = path(c.labels);
    j["covariates"] = path(c.covariates);
    j["study_start"] = date(c.study_start);
    j["study_end"] = date(c.study_end);
    j["cutoff"] = date(c.cutoff);
    j["windows"] = windows_to_string(c.windows);
    j["auto_select"] = c.auto_select;
    j["sales_lags"] = c.sales_lags;
    j["license_lags"] = c.license_lags;
    j["max_sales_lags"] = c.max_sales_lags;
    j["max_license_lags"] = c.max_license_lags;
    j["time_effects"] = c.time_effects;
    j["folds"] = c.folds;
    j["bootstrap_reps"] = c.replicates;
    j["seed"] = c.seed;
    j["confidence"] = c.confidence;
    j["horizon"] = c.horizon;
    j["holdout_start"] = date(c.holdout_start);
    j["holdout_days"] = c.holdout_days;
    return j;
}

// ---------------------------------------------------------------------------
// Report bundle

inline std::string hex64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

/// In-memory set of report files. Nothing touches the output directory until
/// `commit`, so a failing stage leaves no partial reports behind.
class ReportBundle {
public:
    void add(const std::string& name, std::string contents) { files_[name] = std::move(contents); }

    /// Delimited or text report with the master seed on its first line.
    template <class Writer>
    void add_table(const std::string& name, std::uint64_t seed, Writer&& write) {
        std::ostringstream os;
        os << "# seed=" << seed << '\n';
        write(os);
        add(name, os.str());
    }

    void add_json(const std::string& name, const nlohmann::ordered_json& j) { add(name, j.dump(2) + "\n"); }

    [[nodiscard]] const std::map<std::string, std::string>& files() const { return files_; }
    [[nodiscard]] bool contains(const std::string& name) const { return files_.contains(name); }

    /// Writes every file to a temporary sibling first, then renames them all.
    void commit(const std::filesystem::path& dir) const {
        std::error_code ec;
        std::filesystem::create_directories(dir, ec);
        if (ec || !std::filesystem::is_directory(dir))
            throw IoError("output directory '" + dir.string() + "' is not writable");
        std::vector<std::filesystem::path> staged;
        auto discard = [&] {
            for (const auto& p : staged) std::filesystem::remove(p, ec);
        };
        for (const auto& [name, body] : files_) {
            auto tmp = dir / name;
            tmp += ".tmp";
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            if (out) out.write(body.data(), static_cast<std::streamsize>(body.size()));
            out.close();
            if (!out) {
                discard();
                throw IoError("cannot write report '" + tmp.string() + "'");
            }
            staged.push_back(tmp);
        }
        for (const auto& [name, _] : files_) {
            auto tmp = dir / name;
            tmp += ".tmp";
            std::filesystem::rename(tmp, dir / name, ec);
            if (ec) {
                discard();
                throw IoError("cannot rename report '" + tmp.string() + "': " + ec.message());
            }
        }
    }

private:
    std::map<std::string, std::string> files_;
};

struct InputRecord {
    std::string role;
    std::string path;
    std::size_t bytes = 0;
    std::uint64_t hash = 0;
};

/// State of one subcommand run: the config, the inputs read so far, and the
/// reports produced so far.
struct Run {
    RunConfig cfg;
    std::string command;
    std::vector<InputRecord> inputs;
    ReportBundle bundle;

    /// Reads a whole input file and records its fingerprint.
    std::string read_input(const std::string& role, const std::filesystem::path& p) {
        std::ifstream in(p, std::ios::binary);
        if (!in) throw IoError("cannot open " + role + " file '" + p.string() + "'");
        std::ostringstream ss;
        ss << in.rdbuf();
        std::string text = ss.str();
        inputs.push_back({role, p.generic_string(), text.size(), detail::fnv1a(text.data(), text.size())});
        return text;
    }

    template <class Writer>
    void table(const std::string& name, Writer&& w) {
        bundle.add_table(name, cfg.seed, std::forward<Writer>(w));
    }

    void json(const std::string& name, nlohmann::ordered_json j) {
        nlohmann::ordered_json out;
        out["seed"] = cfg.seed;
        for (auto& [k, v] : j.items()) out[k] = v;
        bundle.add_json(name, out);
    }
};

inline nlohmann::ordered_json manifest(const Run& run) {
    nlohmann::ordered_json m;
    m["tool"] = "impact";
    m["version"] = kVersion;
    m["command"] = run.command;
    m["seed"] = run.cfg.seed;
    m["config"] = config_json(run.cfg);
    auto in = nlohmann::ordered_json::array();
    for (const auto& i : run.inputs)
        in.push_back({{"role", i.role}, {"path", i.path}, {"bytes", i.bytes}, {"fnv1a64", hex64(i.hash)}});
    m["inputs"] = in;
    auto out = nlohmann::ordered_json::array();
    for (const auto& [name, body] : run.bundle.files())
        out.push_back({{"file", name}, {"bytes", body.size()}, {"fnv1a64", hex64(detail::fnv1a(body.data(), body.size()))}});
    m["outputs"] = out;
    m["libraries"] = {{"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                    std::to_string(EIGEN_MINOR_VERSION)},
                      {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                            std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                            std::to_string(NLOHMANN_JSON_VERSION_PATCH)}};
    return m;
}

/// Adds the manifest and writes the bundle to the configured output dir.
inline void finish(Run& run) {
    run.bundle.add_json("manifest.json", manifest(run));
    run.bundle.commit(run.cfg.output);
}

// ---------------------------------------------------------------------------
// Loading

struct LoadedRecords {
    std::vector<TransactionRecord> transactions;
    std::vector<LicenseRecord> licenses;
    IngestReport transaction_report;
    IngestReport license_report;
};

inline IngestOptions ingest_options(const RunConfig& c) {
    IngestOptions o;
    o.study_start = c.study_start;
    o.study_end = c.study_end;
    return o;
}

inline LoadedRecords load_records(Run& run, bool need_licenses) {
    LoadedRecords out;
    if (!run.cfg.transactions) throw ArgumentError("a transactions file is required", "cli");
    {
        std::istringstream in(run.read_input("transactions", *run.cfg.transactions));
        auto t = ingest_transactions(in, ingest_options(run.cfg));
        out.transactions = std::move(t.records);
        out.transaction_report = std::move(t.report);
    }
    if (run.cfg.licenses) {
        std::istringstream in(run.read_input("licenses", *run.cfg.licenses));
        auto l = ingest_licenses(in, ingest_options(run.cfg));
        out.licenses = std::move(l.records);
        out.license_report = std::move(l.report);
    } else if (need_licenses) {
        throw ArgumentError("a licenses file is required", "cli");
    }
    if (out.transactions.empty()) throw ArgumentError("no valid transactions in the study range", "core-data");
    return out;
}

inline DailyPanel panel_from_records(const RunConfig& cfg, const LoadedRecords& rec) {
    Date lo = rec.transactions.front().date, hi = lo;
    for (const auto& t : rec.transactions) {
        lo = std::min(lo, t.date);
        hi = std::max(hi, t.date);
    }
    for (const auto& l : rec.licenses) {
        lo = std::min(lo, l.issue_date);
        hi = std::max(hi, l.issue_date);
    }
    return aggregate_daily(rec.transactions, rec.licenses, cfg.study_start.value_or(lo), cfg.study_end.value_or(hi))
        .panel;
}

/// The daily panel from a panel file if given, otherwise aggregated from
/// the transaction and license files.
inline DailyPanel load_panel(Run& run) {
    if (run.cfg.panel) {
        std::istringstream in(run.read_input("panel", *run.cfg.panel));
        auto p = read_panel_csv(in);
        if (run.cfg.study_start || run.cfg.study_end)
            p = p.slice(run.cfg.study_start.value_or(p.start_date()), run.cfg.study_end.value_or(p.end_date()));
        return p;
    }
    return panel_from_records(run.cfg, load_records(run, true));
}

inline std::set<Date> load_holidays(Run& run, const DailyPanel& panel) {
    if (run.cfg.holidays) {
        std::istringstream in(run.read_input("holidays", *run.cfg.holidays));
        return read_holidays(in);
    }
    return us_federal_holidays(panel.start_date().year() - 1, panel.end_date().year() + 1);
}

inline Date require_cutoff(const RunConfig& cfg, const DailyPanel& panel) {
    if (!cfg.cutoff) throw ArgumentError("a cutoff date is required", "cli");
    if (!panel.index_of(*cfg.cutoff) || *cfg.cutoff == panel.start_date())
        throw ArgumentError("cutoff " + cfg.cutoff->iso() + " outside data range " + panel.start_date().iso() + " to " +
                                panel.end_date().iso(),
                            "cli");
    return *cfg.cutoff;
}

inline Eigen::Index effective_horizon(const RunConfig& cfg) {
    if (cfg.horizon > 0) return cfg.horizon;
    int last = 0;
    for (const auto& w : cfg.windows) last = std::max(last, w.end_offset);
    return last + 1;
}

inline CvOptions cv_options(const RunConfig& cfg) {
    CvOptions o;
    o.folds = cfg.folds;
    return o;
}

// ---------------------------------------------------------------------------
// Stage outputs

inline void emit_lag_selection(Run& run, const SequentialLagSelection& sel) {
    run.table("lag_selection.csv", [&](std::ostream& os) {
        os << "kind,lags,mae\n";
        for (const auto* s : {&sel.sales, &sel.license})
            for (std::size_t l = 0; l < s->mae_by_lag.size(); ++l)
                os << (s->kind == LagKind::Sales ? "sales" : "license") << ',' << l << ','
                   << detail::format_double(s->mae_by_lag[l]) << '\n';
    });
    nlohmann::ordered_json j;
    j["sales_lags"] = sel.sales.lags;
    j["sales_truncated"] = sel.sales.truncated;
    j["license_lags"] = sel.license.lags;
    j["license_truncated"] = sel.license.truncated;
    j["time_effects"] = sel.spec.time_effects_label();
    j["folds"] = run.cfg.folds;
    run.json("lag_selection.json", j);
}

/// Model spec from the config, or chosen by cross-validation on `sample`.
inline ModelSpec resolve_spec(Run& run, const DailyPanel& sample, const std::set<Date>& holidays) {
    ModelSpec base = parse_time_effects(run.cfg.time_effects);
    base.holidays = holidays;
    base.sales_lags = run.cfg.sales_lags;
    base.license_lags = run.cfg.license_lags;
    if (!run.cfg.auto_select) return base;
    const auto sel = select_lags_sequential(sample, base, run.cfg.max_sales_lags, run.cfg.max_license_lags,
                                            cv_options(run.cfg));
    emit_lag_selection(run, sel);
    return sel.spec;
}

inline void emit_time_effect_grid(Run& run, const DailyPanel& sample, const std::set<Date>& holidays) {
    const auto reports = compare_time_specs(sample, time_effect_grid(holidays), cv_options(run.cfg));
    run.table("cv_time_effects.csv", [&](std::ostream& os) { write_cv_table(os, reports); });
}

inline void emit_fit(Run& run, const SurFit& fit) {
    run.json("fit.json", fit_report(fit));
    run.table("fit_coefficients.csv", [&](std::ostream& os) {
        os << "series,term,estimate,std_error\n";
        for (Eigen::Index e = 0; e < fit.equations(); ++e) {
            const auto u = static_cast<std::size_t>(e);
            const auto se = fit.standard_errors(e);
            for (Eigen::Index k = 0; k < fit.coefficients[u].size(); ++k)
                os << detail::quote_if_needed(fit.series_names[u]) << ',' << fit.labels[u][static_cast<std::size_t>(k)]
                   << ',' << detail::format_double(fit.coefficients[u][k]) << ',' << detail::format_double(se[k])
                   << '\n';
        }
    });
}

struct ForecastStage {
    SurFit fit;
    ForecastResult forecast;
};

inline ForecastStage run_forecast_stage(Run& run, const DailyPanel& panel, const std::set<Date>& holidays) {
    const Date cutoff = require_cutoff(run.cfg, panel);
    const Eigen::Index H = effective_horizon(run.cfg);
    const PreCutoffHistory history(panel, cutoff);
    const ModelSpec spec = resolve_spec(run, history.panel(), holidays);
    auto fit = fit_model(history.panel(), spec);
    ForecastOptions opt;
    opt.horizon = H;
    opt.replicates = run.cfg.replicates;
    opt.seed = run.cfg.seed;
    opt.threads = run.cfg.threads;
    auto fc = forecast_counterfactual(fit, history, exogenous_from_panel(panel, cutoff, H), opt);
    emit_fit(run, fit);
    run.table("forecast.csv", [&](std::ostream& os) { write_forecast_csv(os, fc, run.cfg.confidence); });
    if (run.cfg.write_draws) {
        std::ostringstream os;
        write_draws_binary(os, fc);
        run.bundle.add("draws.bin", os.str());
    }
    nlohmann::ordered_json j;
    j["cutoff"] = cutoff.iso();
    j["horizon"] = H;
    j["replicates"] = fc.replicates;
    j["confidence"] = run.cfg.confidence;
    j["estimator"] = fit.ols_fallback ? "per-equation least squares (fallback)" : "one-step SUR FGLS";
    j["sales_lags"] = spec.sales_lags;
    j["license_lags"] = spec.license_lags;
    j["time_effects"] = spec.time_effects_label();
    j["series"] = fc.series_names;
    j["draws_layout"] = "IMPDRAW1, uint64 replicates, horizon, series, then float64 [replicate][day][series]";
    run.json("forecast.json", j);
    return {std::move(fit), std::move(fc)};
}

inline void emit_effects(Run& run, const DailyPanel& panel, const ForecastResult& fc) {
    std::vector<EffectEstimate> all;
    for (const auto& w : run.cfg.windows) {
        auto e = estimate_effect(panel, fc, w, run.cfg.confidence);
        all.insert(all.end(), e.begin(), e.end());
    }
    run.table("effects.csv", [&](std::ostream& os) { write_effects_csv(os, all); });
    run.table("effects_summary.txt", [&](std::ostream& os) { write_effects_summary(os, all); });

    // Observed against forecast, one row per day and series.
    const auto bounds = prediction_interval(fc, run.cfg.confidence);
    const auto base = *panel.index_of(fc.cutoff);
    run.table("forecast_vs_observed.csv", [&](std::ostream& os) {
        os << "date,offset,series,observed,point,lower,upper\n";
        for (Eigen::Index h = 0; h < fc.horizon; ++h)
            for (Eigen::Index j = 0; j < fc.series; ++j) {
                const bool have = base + h < panel.days();
                os << fc.dates[static_cast<std::size_t>(h)].iso() << ',' << h << ','
                   << detail::quote_if_needed(fc.series_names[static_cast<std::size_t>(j)]) << ','
                   << (have ? detail::format_double(panel.counts()(base + h, j)) : "") << ','
                   << detail::format_double(fc.point_path(h, j)) << ',' << detail::format_double(bounds.lower(h, j))
                   << ',' << detail::format_double(bounds.upper(h, j)) << '\n';
            }
    });

    // Breakeven of the first window's surplus against the second's deficit.
    if (run.cfg.windows.size() >= 2) {
        const auto n = static_cast<std::size_t>(fc.series);
        const auto& w1 = run.cfg.windows[1];
        run.table("breakeven.csv", [&](std::ostream& os) {
            os << "series,surplus,deficit,deficit_days,weeks,rounded_weeks\n";
            for (std::size_t j = 0; j < n; ++j) {
                const double surplus = all[j].abs_diff;
                const double deficit = -all[n + j].abs_diff;
                const auto b = breakeven_weeks(surplus, deficit, w1.length());
                os << detail::quote_if_needed(all[j].series) << ',' << detail::format_double(surplus) << ','
                   << detail::format_double(deficit) << ',' << w1.length() << ','
                   << (b.never() ? "never" : detail::format_double(*b.weeks)) << ','
                   << (b.never() ? "never" : std::to_string(*b.rounded_weeks())) << '\n';
            }
        });
    }
}

inline void emit_holdout(Run& run, const DailyPanel& panel, const ModelSpec& spec) {
    if (run.cfg.holdout_days <= 0) return;
    const Date cutoff = require_cutoff(run.cfg, panel);
    const Date start = run.cfg.holdout_start.value_or(cutoff - run.cfg.holdout_days);
    ForecastOptions opt;
    opt.replicates = run.cfg.replicates;
    opt.seed = run.cfg.seed;
    opt.threads = run.cfg.threads;
    const auto rep = holdout_validation(panel.before(cutoff), spec, start, run.cfg.holdout_days, opt);
    auto opt_str = [](const std::optional<double>& v) { return v ? detail::format_double(*v) : std::string(); };
    run.table("holdout.csv", [&](std::ostream& os) {
        os << "series,observed_cum,predicted_cum,mean_daily_pct_error,cumulative_pct_error,zero_days_excluded\n";
        for (const auto& s : rep.series)
            os << detail::quote_if_needed(s.series) << ',' << detail::format_double(s.observed_cum) << ','
               << detail::format_double(s.predicted_cum) << ',' << opt_str(s.mean_daily_pct_error) << ','
               << opt_str(s.cumulative_pct_error) << ',' << s.zero_days_excluded << '\n';
        os << "Total,,,," << opt_str(rep.total_cumulative_pct_error) << ",\n";
    });
    run.table("holdout_daily.csv", [&](std::ostream& os) {
        os << "date,series,observed,predicted\n";
        for (Eigen::Index h = 0; h < rep.days; ++h)
            for (Eigen::Index j = 0; j < rep.observed.cols(); ++j)
                os << (start + h).iso() << ',' << detail::quote_if_needed(panel.series_names()[static_cast<std::size_t>(j)])
                   << ',' << detail::format_double(rep.observed(h, j)) << ','
                   << detail::format_double(rep.predicted(h, j)) << '\n';
    });
}

inline void emit_classifier(Run& run) {
    if (!run.cfg.labels) throw ArgumentError("a labels file is required", "cli");
    std::istringstream in(run.read_input("labels", *run.cfg.labels));
    const auto reports = evaluate_classifier(read_labels(in));
    nlohmann::ordered_json j;
    j["matrices"] = to_json(reports);
    run.json("confusion.json", j);
    run.table("confusion.txt", [&](std::ostream& os) { write_confusion_layout(os, reports); });
    run.table("confusion_cells.csv", [&](std::ostream& os) {
        os << "matrix,truth,predicted,value\n";
        for (const auto& r : reports) {
            const auto& c = r.result.matrix;
            os << r.name << ",NotAssault,NonTAW," << detail::format_double(c.tn) << '\n'
               << r.name << ",NotAssault,TAW," << detail::format_double(c.fp) << '\n'
               << r.name << ",Assault,NonTAW," << detail::format_double(c.fn) << '\n'
               << r.name << ",Assault,TAW," << detail::format_double(c.tp) << '\n';
        }
    });
}

inline void emit_descriptives(Run& run, const LoadedRecords& rec) {
    const auto& tx = rec.transactions;
    const auto annual = annual_totals(tx);
    const auto monthly = monthly_totals(tx);
    run.table("annual_sales.csv", [&](std::ostream& os) { write_annual_csv(os, annual); });
    run.table("monthly_sales.csv", [&](std::ostream& os) { write_monthly_csv(os, monthly); });
    run.table("weekly_sales.csv", [&](std::ostream& os) { write_weekly_csv(os, weekly_totals(tx)); });
    if (!rec.licenses.empty())
        run.table("annual_licenses.csv", [&](std::ostream& os) { write_license_totals_csv(os, annual_license_totals(rec.licenses)); });

    auto opt_str = [](const std::optional<double>& v) { return v ? detail::format_double(*v) : std::string(); };
    run.table("yoy_monthly_change.csv", [&](std::ostream& os) {
        os << "year0,year1,type,mean_of_monthly_changes,change_of_monthly_means,months_compared\n";
        std::vector<std::pair<int, int>> pairs;
        if (run.cfg.ratio_year0 && run.cfg.ratio_year1) pairs.emplace_back(*run.cfg.ratio_year0, *run.cfg.ratio_year1);
        for (auto it = annual.begin(); it != annual.end() && std::next(it) != annual.end(); ++it)
            pairs.emplace_back(it->first, std::next(it)->first);
        for (const auto& [y0, y1] : pairs)
            for (auto t : kFirearmTypes) {
                const auto ch = yoy_monthly_change(monthly, y0, y1, t);
                os << y0 << ',' << y1 << ',' << to_string(t) << ',' << opt_str(ch.mean_of_monthly_changes) << ','
                   << opt_str(ch.change_of_monthly_means) << ',' << ch.months_compared << '\n';
            }
    });

    const auto fresh = newly_observed_purchasers(tx);
    if (fresh.origin) run.table("new_purchasers.csv", [&](std::ostream& os) { write_new_purchasers_csv(os, fresh); });

    // Purchaser concentration: explicit window, else the immediate window
    // after the cutoff, else the whole range.
    Date lo = tx.front().date, hi = lo;
    for (const auto& t : tx) {
        lo = std::min(lo, t.date);
        hi = std::max(hi, t.date);
    }
    Date c0 = lo, c1 = hi;
    if (run.cfg.cutoff && !run.cfg.windows.empty()) {
        c0 = *run.cfg.cutoff + run.cfg.windows.front().start_offset;
        c1 = *run.cfg.cutoff + run.cfg.windows.front().end_offset;
    }
    c0 = run.cfg.concentration_start.value_or(c0);
    c1 = run.cfg.concentration_end.value_or(c1);
    run.table("purchaser_concentration.csv", [&](std::ostream& os) {
        os << "types,first,last,bucket,min_purchases,max_purchases,buyers,purchases,share,top10_retailer_share\n";
        const std::pair<const char*, std::set<FirearmType>> groups[] = {
            {"rifles", {FirearmType::TAWRifle, FirearmType::NonTAWRifle}},
            {"all", {kFirearmTypes.begin(), kFirearmTypes.end()}}};
        for (const auto& [label, types] : groups) {
            const auto rep = purchaser_concentration(tx, c0, c1, types);
            for (const auto& b : rep.buckets)
                os << label << ',' << c0.iso() << ',' << c1.iso() << ',' << b.label << ',' << b.min_purchases << ','
                   << (b.max_purchases == std::numeric_limits<long>::max() ? std::string() : std::to_string(b.max_purchases))
                   << ',' << b.buyers << ',' << b.purchases << ',' << detail::format_double(b.share) << ','
                   << detail::format_double(rep.top10_retailer_share) << '\n';
        }
    });

    // Daily cross-series correlation.
    const auto panel = aggregate_daily(tx, {}, lo, hi).panel;
    run.table("series_correlation.csv", [&](std::ostream& os) {
        os << "series_a,series_b,pearson\n";
        for (Eigen::Index a = 0; a < panel.series_count(); ++a)
            for (Eigen::Index b = a + 1; b < panel.series_count(); ++b) {
                const Eigen::VectorXd ca = panel.counts().col(a), cb = panel.counts().col(b);
                const std::vector<double> va(ca.data(), ca.data() + ca.size()), vb(cb.data(), cb.data() + cb.size());
                os << panel.series_names()[static_cast<std::size_t>(a)] << ','
                   << panel.series_names()[static_cast<std::size_t>(b)] << ','
                   << (va.size() >= 3 ? opt_str(series_correlation(va, vb)) : std::string()) << '\n';
            }
    });

    if (!run.cfg.ratio_year0 || !run.cfg.ratio_year1) {
        if (run.cfg.covariates) throw ArgumentError("covariate association needs ratio_year0 and ratio_year1", "cli");
        return;
    }
    const auto ratios = retailer_sales_ratios(tx, *run.cfg.ratio_year0, *run.cfg.ratio_year1, run.cfg.coverage);
    run.table("retailer_ratios.csv", [&](std::ostream& os) { write_retailer_ratios_csv(os, ratios); });
    run.table("ratio_histogram.csv", [&](std::ostream& os) {
        os << "type,bin_low,bin_high,retailers\n";
        const auto& e = run.cfg.histogram_edges;
        for (auto t : kFirearmTypes) {
            const auto bins = ratio_histogram(ratios, t, e);
            for (std::size_t i = 0; i < bins.size(); ++i)
                os << to_string(t) << ',' << detail::format_double(e[i]) << ','
                   << (i + 2 == e.size() ? std::string() : detail::format_double(e[i + 1])) << ',' << bins[i] << '\n';
        }
    });
    nlohmann::ordered_json rj;
    rj["year0"] = ratios.y0;
    rj["year1"] = ratios.y1;
    rj["coverage_target"] = ratios.coverage_target;
    rj["coverage_achieved"] = ratios.coverage_achieved;
    rj["retailers"] = ratios.retailers.size();
    run.json("retailer_ratios.json", rj);

    if (!run.cfg.covariates) return;
    std::istringstream in(run.read_input("covariates", *run.cfg.covariates));
    const auto cov = read_covariates(in);
    std::vector<CovariateAssociation> assoc;
    for (auto t : kFirearmTypes) assoc.push_back(covariate_association(ratios.retailers, cov, t));
    run.table("covariate_association.csv", [&](std::ostream& os) {
        os << "type,pearson,slope,slope_std_error,used,excluded\n";
        for (const auto& a : assoc)
            os << to_string(a.type) << ',' << opt_str(a.pearson) << ',' << detail::format_double(a.slope) << ','
               << opt_str(a.slope_std_error) << ',' << a.used << ',' << a.excluded << '\n';
    });
    run.table("covariate_scatter.csv", [&](std::ostream& os) {
        os << "type,covariate,ratio\n";
        for (const auto& a : assoc)
            for (const auto& [x, y] : a.scatter)
                os << to_string(a.type) << ',' << detail::format_double(x) << ',' << detail::format_double(y) << '\n';
    });
}

// ---------------------------------------------------------------------------
// Subcommands. Each builds its bundle in memory and commits only on success.

inline void run_ingest(const RunConfig& cfg) {
    Run run{cfg, "ingest", {}, {}};
    const auto rec = load_records(run, true);
    const auto panel = panel_from_records(cfg, rec);
    run.table("panel.csv", [&](std::ostream& os) { write_panel_csv(os, panel); });
    run.table("annual_licenses.csv",
              [&](std::ostream& os) { write_license_totals_csv(os, annual_license_totals(rec.licenses)); });
    nlohmann::ordered_json j;
    j["first_date"] = panel.start_date().iso();
    j["last_date"] = panel.end_date().iso();
    j["days"] = panel.days();
    j["transactions"] = rec.transaction_report.to_json();
    j["licenses"] = rec.license_report.to_json();
    run.json("ingest_report.json", j);
    finish(run);
}

inline void run_fit(const RunConfig& cfg) {
    Run run{cfg, "fit", {}, {}};
    const auto panel = load_panel(run);
    const auto holidays = load_holidays(run, panel);
    const auto sample = cfg.cutoff ? panel.before(require_cutoff(cfg, panel)) : panel;
    emit_fit(run, fit_model(sample, resolve_spec(run, sample, holidays)));
    finish(run);
}

inline void run_select(const RunConfig& cfg) {
    Run run{cfg, "select", {}, {}};
    run.cfg.auto_select = true;
    const auto panel = load_panel(run);
    const auto holidays = load_holidays(run, panel);
    const auto sample = cfg.cutoff ? panel.before(require_cutoff(cfg, panel)) : panel;
    emit_time_effect_grid(run, sample, holidays);
    resolve_spec(run, sample, holidays);
    finish(run);
}

inline void run_forecast(const RunConfig& cfg) {
    Run run{cfg, "forecast", {}, {}};
    const auto panel = load_panel(run);
    run_forecast_stage(run, panel, load_holidays(run, panel));
    finish(run);
}

inline void run_effects(const RunConfig& cfg) {
    Run run{cfg, "effects", {}, {}};
    const auto panel = load_panel(run);
    const auto st = run_forecast_stage(run, panel, load_holidays(run, panel));
    emit_effects(run, panel, st.forecast);
    emit_holdout(run, panel, st.fit.spec);
    finish(run);
}

inline void run_classify(const RunConfig& cfg) {
    Run run{cfg, "classify-eval", {}, {}};
    emit_classifier(run);
    finish(run);
}

inline void run_describe(const RunConfig& cfg) {
    Run run{cfg, "describe", {}, {}};
    emit_descriptives(run, load_records(run, false));
    finish(run);
}

/// Full chain: panel, optional lag selection, fit, forecast, effects,
/// holdout, plus classifier and descriptive reports when their inputs exist.
inline void run_report(const RunConfig& cfg) {
    Run run{cfg, "report", {}, {}};
    std::optional<LoadedRecords> rec;
    std::optional<DailyPanel> panel;
    if (cfg.panel) {
        panel = load_panel(run);
        if (cfg.transactions) rec = load_records(run, false);
    } else {
        rec = load_records(run, true);
        panel = panel_from_records(cfg, *rec);
    }
    run.table("panel.csv", [&](std::ostream& os) { write_panel_csv(os, *panel); });
    const auto holidays = load_holidays(run, *panel);
    if (cfg.compare_time_effects) emit_time_effect_grid(run, panel->before(require_cutoff(cfg, *panel)), holidays);
    const auto st = run_forecast_stage(run, *panel, holidays);
    emit_effects(run, *panel, st.forecast);
    emit_holdout(run, *panel, st.fit.spec);
    if (cfg.labels) emit_classifier(run);
    if (rec) emit_descriptives(run, *rec);
    finish(run);
}

/// Synthetic bundle in the ingestion file formats plus its ground truth.
inline void run_simulate(const RunConfig& cfg) {
    Run run{cfg, "simulate", {}, {}};
    if (cfg.sim_days < 100) throw ArgumentError("simulation needs at least 100 days", "cli");
    auto sc = four_series_config(cfg.sim_days, cfg.sim_sd, cfg.sim_rho, cfg.seed, cfg.sim_mean_level);
    sc.start = cfg.sim_start;
    sc.holidays = us_federal_holidays(cfg.sim_start.year() - 1, (cfg.sim_start + cfg.sim_days).year() + 1);
    std::vector<std::string> names;
    for (const auto& s : sc.series) names.push_back(s.name);
    sc.interventions = parse_interventions(cfg.sim_effects, names);
    const int day = cfg.sim_intervention_day.value_or(cfg.sim_days - 60);
    if (day < 1 || day >= cfg.sim_days) throw ArgumentError("intervention day outside the simulated range", "cli");
    if (!sc.interventions.empty()) sc.intervention_day = day;
    const auto data = generate_panel(sc);
    const auto rec = expand_to_records(data.factual, cfg.seed, cfg.sim_dealers, cfg.sim_purchasers);
    const Date cutoff = data.factual.date_at(day);

    run.table("transactions.csv", [&](std::ostream& os) { write_transactions_csv(os, rec.transactions); });
    run.table("licenses.csv", [&](std::ostream& os) { write_licenses_csv(os, rec.licenses); });
    run.table("panel.csv", [&](std::ostream& os) { write_panel_csv(os, data.factual); });
    run.table("holidays.txt", [&](std::ostream& os) {
        for (const auto& d : sc.holidays) os << d.iso() << '\n';
    });
    run.table("truth_effects.csv", [&](std::ostream& os) {
        os << "series,start_offset,end_offset,factor,true_cumulative,counterfactual_cumulative,true_pct\n";
        for (const auto& e : data.truth.effects) {
            const double cf = data.truth.counterfactual.col(e.series).segment(day + e.start_offset,
                                                                               e.end_offset - e.start_offset + 1).sum();
            os << names[static_cast<std::size_t>(e.series)] << ',' << e.start_offset << ',' << e.end_offset << ','
               << detail::format_double(e.factor) << ',' << detail::format_double(e.cumulative) << ','
               << detail::format_double(cf) << ',' << (cf > 0.0 ? detail::format_double(e.cumulative / cf) : "")
               << '\n';
        }
    });
    run.table("counterfactual.csv", [&](std::ostream& os) {
        os << "date,series,counterfactual,factual\n";
        for (Eigen::Index t = 0; t < data.factual.days(); ++t)
            for (std::size_t j = 0; j < names.size(); ++j)
                os << data.factual.date_at(t).iso() << ',' << names[j] << ','
                   << detail::format_double(data.truth.counterfactual(t, static_cast<Eigen::Index>(j))) << ','
                   << detail::format_double(data.truth.factual(t, static_cast<Eigen::Index>(j))) << '\n';
    });
    nlohmann::ordered_json j;
    j["start"] = cfg.sim_start.iso();
    j["days"] = cfg.sim_days;
    j["cutoff"] = cutoff.iso();
    j["sd"] = cfg.sim_sd;
    j["rho"] = cfg.sim_rho;
    j["mean_level"] = cfg.sim_mean_level;
    j["effects"] = cfg.sim_effects;
    j["transactions"] = rec.transactions.size();
    j["licenses"] = rec.licenses.size();
    run.json("simulate.json", j);
    finish(run);
}

}  // namespace impact

#pragma once

// Multi-rater truth fusion and (optionally sales-weighted) confusion
// matrices for scoring a binary assault-weapon tagger.

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "impact/core_data.hpp"
#include "impact/detail/csv.hpp"
#include "impact/error.hpp"

namespace impact {

enum class RaterLabel { Assault, NotAssault, Indeterminate };
enum class Truth { Assault, NotAssault, Excluded };
enum class TruthStandard { Median, Unanimous };

inline std::optional<RaterLabel> parse_rater_label(std::string_view s) {
    if (s == "Assault" || s == "A") return RaterLabel::Assault;
    if (s == "NotAssault" || s == "N") return RaterLabel::NotAssault;
    if (s == "Indeterminate" || s == "I") return RaterLabel::Indeterminate;
    return std::nullopt;
}

struct RaterLabels {
    std::string item_id;
    std::vector<RaterLabel> labels;
    double sales_count = 0.0;
};

struct LabeledItem {
    RaterLabels raters;
    bool predicted_taw = false;
};

/// Median: the side with strictly more votes wins, Indeterminate votes count
/// for neither side and ties are Excluded. Unanimous: kept only when every
/// rater gives the same Assault or NotAssault label.
inline Truth fuse_truth(const RaterLabels& item, TruthStandard standard) {
    if (item.labels.empty()) throw ArgumentError("item '" + item.item_id + "' has no rater labels", "classifier-eval");
    int yes = 0, no = 0;
    for (auto l : item.labels) {
        yes += l == RaterLabel::Assault;
        no += l == RaterLabel::NotAssault;
    }
    const int n = static_cast<int>(item.labels.size());
    if (standard == TruthStandard::Unanimous) {
        if (yes == n) return Truth::Assault;
        if (no == n) return Truth::NotAssault;
        return Truth::Excluded;
    }
    if (yes > no) return Truth::Assault;
    if (no > yes) return Truth::NotAssault;
    return Truth::Excluded;
}

inline std::vector<Truth> fuse_truth(const std::vector<RaterLabels>& items, TruthStandard standard) {
    std::vector<Truth> out;
    out.reserve(items.size());
    for (const auto& i : items) out.push_back(fuse_truth(i, standard));
    return out;
}

/// sales_i / mean(sales): the weights average to one.
inline Eigen::VectorXd sales_weights(const std::vector<double>& sales) {
    if (sales.empty()) throw ArgumentError("sales weights need at least one item", "classifier-eval");
    double total = 0.0;
    for (double s : sales) {
        if (!(s >= 0.0)) throw ArgumentError("sales counts must be nonnegative", "classifier-eval");
        total += s;
    }
    if (!(total > 0.0)) throw ArgumentError("sales weights undefined when every item has zero sales", "classifier-eval");
    const double n = static_cast<double>(sales.size());
    Eigen::VectorXd w(static_cast<Eigen::Index>(sales.size()));
    for (std::size_t i = 0; i < sales.size(); ++i) w[static_cast<Eigen::Index>(i)] = sales[i] * n / total;
    return w;
}

inline Eigen::VectorXd sales_weights(const std::vector<RaterLabels>& items) {
    std::vector<double> s;
    s.reserve(items.size());
    for (const auto& i : items) s.push_back(i.sales_count);
    return sales_weights(s);
}

/// Rows are truth (negative = NotAssault), columns the tagger.
struct ConfusionMatrix {
    double tn = 0.0, fp = 0.0, fn = 0.0, tp = 0.0;

    [[nodiscard]] double total() const { return tn + fp + fn + tp; }
};

struct ConfusionResult {
    ConfusionMatrix matrix;
    std::size_t scored = 0;
    std::size_t skipped_excluded = 0;
};

inline ConfusionResult confusion(const std::vector<Truth>& truth, const std::vector<bool>& predicted_taw,
                                 const std::optional<Eigen::VectorXd>& weights = std::nullopt) {
    if (truth.size() != predicted_taw.size())
        throw ArgumentError("truth and predictions cover different item counts", "classifier-eval");
    if (weights && static_cast<std::size_t>(weights->size()) != truth.size())
        throw ArgumentError("weight vector length mismatch", "classifier-eval");
    ConfusionResult r;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] == Truth::Excluded) {
            ++r.skipped_excluded;
            continue;
        }
        const double w = weights ? (*weights)[static_cast<Eigen::Index>(i)] : 1.0;
        const bool pos = truth[i] == Truth::Assault;
        if (pos) (predicted_taw[i] ? r.matrix.tp : r.matrix.fn) += w;
        else (predicted_taw[i] ? r.matrix.fp : r.matrix.tn) += w;
        ++r.scored;
    }
    return r;
}

/// `fnr` and `fpr` are normalized by the predicted class: fn / (fn + tn) is
/// the share of untagged items that are assault weapons, fp / (fp + tp) the
/// share of tagged items that are not. `miss_rate` and `fall_out` are the
/// truth-normalized rates fn / (fn + tp) and fp / (fp + tn).
struct ClassifierMetrics {
    std::optional<double> accuracy;
    std::optional<double> fnr;
    std::optional<double> fpr;
    std::optional<double> miss_rate;
    std::optional<double> fall_out;
};

inline ClassifierMetrics metrics(const ConfusionMatrix& cm) {
    auto ratio = [](double num, double den) -> std::optional<double> {
        if (!(den > 0.0)) return std::nullopt;
        return num / den;
    };
    return ClassifierMetrics{ratio(cm.tp + cm.tn, cm.total()), ratio(cm.fn, cm.fn + cm.tn), ratio(cm.fp, cm.fp + cm.tp),
                             ratio(cm.fn, cm.fn + cm.tp), ratio(cm.fp, cm.fp + cm.tn)};
}

/// Compares printed margins against the cell sums and describes every
/// mismatch larger than `tolerance`.
inline std::vector<std::string> check_printed_totals(const ConfusionMatrix& cm, double row_negative, double row_positive,
                                                     double col_negative, double col_positive, double tolerance = 0.05) {
    std::vector<std::string> out;
    auto check = [&](const char* what, double printed, double actual) {
        if (std::abs(printed - actual) > tolerance) {
            char buf[160];
            std::snprintf(buf, sizeof buf, "%s printed %.1f but cells sum to %.1f", what, printed, actual);
            out.emplace_back(buf);
        }
    };
    check("truth-negative row total", row_negative, cm.tn + cm.fp);
    check("truth-positive row total", row_positive, cm.fn + cm.tp);
    check("predicted-negative column total", col_negative, cm.tn + cm.fn);
    check("predicted-positive column total", col_positive, cm.fp + cm.tp);
    return out;
}

// ---------------------------------------------------------------------------
// Labels file: item_id,rater_1..rater_R,predicted_label,sales_count

inline std::vector<LabeledItem> read_labels(std::istream& in) {
    std::string line;
    std::vector<std::string> header;
    while (std::getline(in, line))
        if (!detail::skip_line(line)) {
            header = detail::split_line(line);
            break;
        }
    if (header.size() < 4 || header.front() != "item_id" || header[header.size() - 2] != "predicted_label" ||
        header.back() != "sales_count")
        throw ParseError("labels header must be item_id,rater_1..rater_R,predicted_label,sales_count");
    const std::size_t raters = header.size() - 3;
    std::vector<LabeledItem> out;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (detail::skip_line(line)) continue;
        ++row;
        const auto f = detail::split_line(line);
        const auto where = "labels row " + std::to_string(row) + ": ";
        if (f.size() != header.size()) throw ParseError(where + "wrong field count");
        LabeledItem item;
        item.raters.item_id = f[0];
        for (std::size_t r = 0; r < raters; ++r) {
            auto l = parse_rater_label(f[1 + r]);
            if (!l) throw ParseError(where + "unknown rater label '" + f[1 + r] + "'");
            item.raters.labels.push_back(*l);
        }
        const auto& p = f[1 + raters];
        if (p == "TAW" || p == "TAWRifle") item.predicted_taw = true;
        else if (p == "NonTAW" || p == "NonTAWRifle") item.predicted_taw = false;
        else throw ParseError(where + "predicted_label must be TAW or NonTAW, got '" + p + "'");
        try {
            item.raters.sales_count = std::stod(f[2 + raters]);
        } catch (const std::exception&) {
            throw ParseError(where + "bad sales_count '" + f[2 + raters] + "'");
        }
        if (item.raters.sales_count < 0) throw ParseError(where + "negative sales_count");
        out.push_back(std::move(item));
    }
    return out;
}

struct MatrixReport {
    std::string name;
    TruthStandard standard = TruthStandard::Median;
    bool weighted = false;
    ConfusionResult result;
    ClassifierMetrics metrics;
};

/// Median and unanimous truth, each unweighted and sales-weighted. Weights
/// are normalized over every item, including those a standard excludes.
inline std::vector<MatrixReport> evaluate_classifier(const std::vector<LabeledItem>& items) {
    std::vector<RaterLabels> raters;
    std::vector<bool> predicted;
    for (const auto& i : items) {
        raters.push_back(i.raters);
        predicted.push_back(i.predicted_taw);
    }
    const Eigen::VectorXd w = sales_weights(raters);
    std::vector<MatrixReport> out;
    for (auto standard : {TruthStandard::Median, TruthStandard::Unanimous}) {
        const auto truth = fuse_truth(raters, standard);
        for (bool weighted : {false, true}) {
            MatrixReport m;
            m.standard = standard;
            m.weighted = weighted;
            m.name = std::string(standard == TruthStandard::Median ? "median" : "unanimous") +
                     (weighted ? "_sales_weighted" : "_unweighted");
            m.result = confusion(truth, predicted, weighted ? std::optional<Eigen::VectorXd>(w) : std::nullopt);
            m.metrics = metrics(m.result.matrix);
            out.push_back(std::move(m));
        }
    }
    return out;
}

inline nlohmann::ordered_json to_json(const std::vector<MatrixReport>& reports) {
    auto opt = [](const std::optional<double>& v) -> nlohmann::ordered_json {
        return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
    };
    auto arr = nlohmann::ordered_json::array();
    for (const auto& r : reports) {
        const auto& cm = r.result.matrix;
        arr.push_back({{"matrix", r.name},
                       {"items_scored", r.result.scored},
                       {"items_excluded", r.result.skipped_excluded},
                       {"tn", cm.tn},
                       {"fp", cm.fp},
                       {"fn", cm.fn},
                       {"tp", cm.tp},
                       {"accuracy", opt(r.metrics.accuracy)},
                       {"fnr", opt(r.metrics.fnr)},
                       {"fpr", opt(r.metrics.fpr)},
                       {"miss_rate", opt(r.metrics.miss_rate)},
                       {"fall_out", opt(r.metrics.fall_out)}});
    }
    return arr;
}

/// Text layout: one 2x2 block with margins per matrix.
inline void write_confusion_layout(std::ostream& out, const std::vector<MatrixReport>& reports) {
    char buf[256];
    for (const auto& r : reports) {
        const auto& c = r.result.matrix;
        out << r.name << " (N=" << r.result.scored << ", excluded " << r.result.skipped_excluded << ")\n";
        std::snprintf(buf, sizeof buf, "%-22s %12s %12s %10s\n", "", "pred:NonTAW", "pred:TAW", "total");
        out << buf;
        std::snprintf(buf, sizeof buf, "%-22s %12.1f %12.1f %10.1f\n", "truth:NotAssault", c.tn, c.fp, c.tn + c.fp);
        out << buf;
        std::snprintf(buf, sizeof buf, "%-22s %12.1f %12.1f %10.1f\n", "truth:Assault", c.fn, c.tp, c.fn + c.tp);
        out << buf;
        std::snprintf(buf, sizeof buf, "%-22s %12.1f %12.1f\n", "total", c.tn + c.fn, c.fp + c.tp);
        out << buf;
        auto pct = [](const std::optional<double>& v) { return v ? *v * 100.0 : std::nan(""); };
        std::snprintf(buf, sizeof buf, "accuracy %.1f%%  fnr %.1f%%  fpr %.1f%%\n\n", pct(r.metrics.accuracy),
                      pct(r.metrics.fnr), pct(r.metrics.fpr));
        out << buf;
    }
}

}  // namespace impact

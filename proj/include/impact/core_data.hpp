#pragma once

// Transaction and license ingestion, daily aggregation, and the log-offset
// transform shared by every downstream model.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "impact/date.hpp"
#include "impact/detail/csv.hpp"
#include "impact/error.hpp"

namespace impact {

inline constexpr double kDefaultLogOffset = 0.1;

enum class FirearmType { Handgun = 0, TAWRifle = 1, NonTAWRifle = 2, Shotgun = 3 };

inline constexpr std::array<FirearmType, 4> kFirearmTypes = {FirearmType::Handgun, FirearmType::TAWRifle,
                                                             FirearmType::NonTAWRifle, FirearmType::Shotgun};

inline std::string_view to_string(FirearmType t) {
    switch (t) {
        case FirearmType::Handgun: return "Handgun";
        case FirearmType::TAWRifle: return "TAWRifle";
        case FirearmType::NonTAWRifle: return "NonTAWRifle";
        case FirearmType::Shotgun: return "Shotgun";
    }
    return "?";
}

inline std::optional<FirearmType> parse_firearm_type(std::string_view s) {
    for (auto t : kFirearmTypes)
        if (s == to_string(t)) return t;
    return std::nullopt;
}

inline bool is_rifle(FirearmType t) { return t == FirearmType::TAWRifle || t == FirearmType::NonTAWRifle; }

struct TransactionRecord {
    Date date;
    FirearmType firearm_type = FirearmType::Handgun;
    std::string dealer_id;
    std::optional<std::string> dealer_zip;
    std::string purchaser_id;
    std::string make;
    std::string model;

    auto operator<=>(const TransactionRecord&) const = default;
};

enum class LicenseKind { New, Renewal };

inline std::string_view to_string(LicenseKind k) { return k == LicenseKind::New ? "New" : "Renewal"; }

struct LicenseRecord {
    Date issue_date;
    LicenseKind kind = LicenseKind::New;

    auto operator<=>(const LicenseRecord&) const = default;
};

struct RowError {
    std::size_t row = 0;  // 1-based data row, header excluded
    std::string reason;
    std::string detail;
};

/// Machine-readable account of an ingestion pass. Rejected rows are never
/// silently dropped: each one lands in `rejected` and `errors`.
struct IngestReport {
    std::size_t rows = 0;
    std::size_t accepted = 0;
    std::size_t duplicates = 0;
    std::map<std::string, std::size_t> rejected;
    std::vector<RowError> errors;

    [[nodiscard]] std::size_t rejected_total() const {
        std::size_t n = 0;
        for (const auto& [_, c] : rejected) n += c;
        return n;
    }

    void reject(std::size_t row, std::string reason, std::string detail) {
        ++rejected[reason];
        errors.push_back({row, std::move(reason), std::move(detail)});
    }

    [[nodiscard]] nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["rows"] = rows;
        j["accepted"] = accepted;
        j["duplicates"] = duplicates;
        j["rejected"] = nlohmann::ordered_json::object();
        for (const auto& [k, v] : rejected) j["rejected"][k] = v;
        auto errs = nlohmann::ordered_json::array();
        for (const auto& e : errors) errs.push_back({{"row", e.row}, {"reason", e.reason}, {"detail", e.detail}});
        j["errors"] = errs;
        return j;
    }
};

template <class Record>
struct Ingested {
    std::vector<Record> records;
    IngestReport report;
};

struct IngestOptions {
    std::optional<Date> study_start;
    std::optional<Date> study_end;
    char delimiter = ',';
};

namespace detail {

inline std::map<std::string, std::size_t> header_index(const std::vector<std::string>& header) {
    std::map<std::string, std::size_t> idx;
    for (std::size_t i = 0; i < header.size(); ++i) {
        std::string key = header[i];
        std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return std::tolower(c); });
        idx.emplace(key, i);
    }
    return idx;
}

inline std::size_t require_column(const std::map<std::string, std::size_t>& idx, const std::string& name) {
    auto it = idx.find(name);
    if (it == idx.end()) throw ParseError("missing required column '" + name + "'");
    return it->second;
}

inline bool in_study_range(Date d, const IngestOptions& opt) {
    return (!opt.study_start || d >= *opt.study_start) && (!opt.study_end || d <= *opt.study_end);
}

inline bool is_machine_gun(std::string_view s) {
    std::string t;
    for (char c : s)
        if (c != ' ' && c != '_' && c != '-') t += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return t == "machinegun";
}

}  // namespace detail

/// Parses a transactions table with header
/// `date,firearm_type,dealer_id,dealer_zip,purchaser_id,make,model` and an
/// optional `transaction_type` column (only `sale` rows are kept).
inline Ingested<TransactionRecord> ingest_transactions(std::istream& in, const IngestOptions& opt = {}) {
    Ingested<TransactionRecord> out;
    std::string line;
    std::vector<std::string> header;
    while (std::getline(in, line)) {
        if (!detail::skip_line(line)) {
            header = detail::split_line(line, opt.delimiter);
            break;
        }
    }
    if (header.empty()) return out;

    const auto idx = detail::header_index(header);
    const auto c_date = detail::require_column(idx, "date");
    const auto c_type = detail::require_column(idx, "firearm_type");
    const auto c_dealer = detail::require_column(idx, "dealer_id");
    const auto c_zip = detail::require_column(idx, "dealer_zip");
    const auto c_buyer = detail::require_column(idx, "purchaser_id");
    const auto c_make = detail::require_column(idx, "make");
    const auto c_model = detail::require_column(idx, "model");
    std::optional<std::size_t> c_kind;
    if (auto it = idx.find("transaction_type"); it != idx.end()) c_kind = it->second;

    std::set<TransactionRecord> seen;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (detail::skip_line(line)) continue;
        ++row;
        ++out.report.rows;
        const auto f = detail::split_line(line, opt.delimiter);
        if (f.size() != header.size()) {
            out.report.reject(row, "field_count",
                              "expected " + std::to_string(header.size()) + " fields, got " + std::to_string(f.size()));
            continue;
        }
        if (c_kind) {
            std::string kind = f[*c_kind];
            std::transform(kind.begin(), kind.end(), kind.begin(), [](unsigned char c) { return std::tolower(c); });
            if (kind != "sale") {
                out.report.reject(row, "non_sale", f[*c_kind]);
                continue;
            }
        }
        TransactionRecord rec;
        try {
            rec.date = Date::parse(f[c_date]);
        } catch (const ParseError&) {
            out.report.reject(row, "bad_date", f[c_date]);
            continue;
        }
        if (detail::is_machine_gun(f[c_type])) {
            out.report.reject(row, "machine_gun", f[c_type]);
            continue;
        }
        auto type = parse_firearm_type(f[c_type]);
        if (!type) {
            out.report.reject(row, "unknown_firearm_type", f[c_type]);
            continue;
        }
        if (!detail::in_study_range(rec.date, opt)) {
            out.report.reject(row, "out_of_range", f[c_date]);
            continue;
        }
        rec.firearm_type = *type;
        rec.dealer_id = f[c_dealer];
        if (!f[c_zip].empty()) rec.dealer_zip = f[c_zip];
        rec.purchaser_id = f[c_buyer];
        rec.make = f[c_make];
        rec.model = f[c_model];
        if (!seen.insert(rec).second) ++out.report.duplicates;
        out.records.push_back(std::move(rec));
        ++out.report.accepted;
    }
    return out;
}

inline Ingested<TransactionRecord> ingest_transactions(const std::filesystem::path& path, const IngestOptions& opt = {}) {
    auto in = detail::open_input(path);
    return ingest_transactions(in, opt);
}

/// Parses a licenses table with header `issue_date,kind`, kind in {New, Renewal}.
inline Ingested<LicenseRecord> ingest_licenses(std::istream& in, const IngestOptions& opt = {}) {
    Ingested<LicenseRecord> out;
    std::string line;
    std::vector<std::string> header;
    while (std::getline(in, line)) {
        if (!detail::skip_line(line)) {
            header = detail::split_line(line, opt.delimiter);
            break;
        }
    }
    if (header.empty()) return out;
    const auto idx = detail::header_index(header);
    const auto c_date = detail::require_column(idx, "issue_date");
    const auto c_kind = detail::require_column(idx, "kind");

    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (detail::skip_line(line)) continue;
        ++row;
        ++out.report.rows;
        const auto f = detail::split_line(line, opt.delimiter);
        if (f.size() != header.size()) {
            out.report.reject(row, "field_count", line);
            continue;
        }
        LicenseRecord rec;
        try {
            rec.issue_date = Date::parse(f[c_date]);
        } catch (const ParseError&) {
            out.report.reject(row, "bad_date", f[c_date]);
            continue;
        }
        if (f[c_kind] == "New") {
            rec.kind = LicenseKind::New;
        } else if (f[c_kind] == "Renewal") {
            rec.kind = LicenseKind::Renewal;
        } else {
            out.report.reject(row, "unknown_license_kind", f[c_kind]);
            continue;
        }
        if (!detail::in_study_range(rec.issue_date, opt)) {
            out.report.reject(row, "out_of_range", f[c_date]);
            continue;
        }
        out.records.push_back(rec);
        ++out.report.accepted;
    }
    return out;
}

inline Ingested<LicenseRecord> ingest_licenses(const std::filesystem::path& path, const IngestOptions& opt = {}) {
    auto in = detail::open_input(path);
    return ingest_licenses(in, opt);
}

inline void write_transactions_csv(std::ostream& out, const std::vector<TransactionRecord>& records) {
    out << "date,firearm_type,dealer_id,dealer_zip,purchaser_id,make,model\n";
    for (const auto& r : records) {
        out << r.date.iso() << ',' << to_string(r.firearm_type) << ',' << detail::quote_if_needed(r.dealer_id) << ','
            << detail::quote_if_needed(r.dealer_zip.value_or("")) << ',' << detail::quote_if_needed(r.purchaser_id)
            << ',' << detail::quote_if_needed(r.make) << ',' << detail::quote_if_needed(r.model) << '\n';
    }
}

inline void write_licenses_csv(std::ostream& out, const std::vector<LicenseRecord>& records) {
    out << "issue_date,kind\n";
    for (const auto& r : records) out << r.issue_date.iso() << ',' << to_string(r.kind) << '\n';
}

// ---------------------------------------------------------------------------
// Log transform

/// ln(count + offset).
inline double log_offset(double count, double offset = kDefaultLogOffset) {
    if (!(offset > 0.0)) throw ArgumentError("log offset must be positive");
    if (!(count >= 0.0)) throw ArgumentError("log_offset expects a nonnegative count");
    return std::log(count + offset);
}

/// max(exp(v) - offset, 0); never yields a negative count.
inline double inverse_log_offset(double v, double offset = kDefaultLogOffset) {
    return std::max(std::exp(v) - offset, 0.0);
}

/// Log-scale values that remember the offset they were built with.
struct LogSeries {
    Eigen::VectorXd values;
    double offset = kDefaultLogOffset;

    static LogSeries from_counts(const Eigen::Ref<const Eigen::VectorXd>& counts, double offset = kDefaultLogOffset) {
        LogSeries s;
        s.offset = offset;
        s.values.resize(counts.size());
        for (Eigen::Index i = 0; i < counts.size(); ++i) s.values[i] = log_offset(counts[i], offset);
        return s;
    }

    [[nodiscard]] Eigen::VectorXd to_counts() const {
        return values.unaryExpr([o = offset](double v) { return inverse_log_offset(v, o); });
    }
};

// ---------------------------------------------------------------------------
// Daily panel

/// Contiguous daily counts: T days by J outcome series, plus the new and
/// renewal license issuance series. Counts are stored as doubles; ingested
/// panels hold whole numbers, synthetic panels may opt out of rounding.
class DailyPanel {
public:
    DailyPanel(Date start, Eigen::MatrixXd counts, Eigen::VectorXd new_licenses, Eigen::VectorXd renewal_licenses,
               std::vector<std::string> series_names)
        : start_(start),
          counts_(std::move(counts)),
          new_(std::move(new_licenses)),
          renewal_(std::move(renewal_licenses)),
          names_(std::move(series_names)) {
        if (counts_.rows() < 1 || counts_.cols() < 1) throw ArgumentError("panel needs at least one day and one series");
        if (new_.size() != counts_.rows() || renewal_.size() != counts_.rows())
            throw ArgumentError("license series length must equal panel length");
        if (static_cast<Eigen::Index>(names_.size()) != counts_.cols())
            throw ArgumentError("series name count must equal series count");
        auto ok = [](const auto& m) { return m.allFinite() && (m.array() >= 0.0).all(); };
        if (!ok(counts_) || !ok(new_) || !ok(renewal_)) throw ArgumentError("panel counts must be finite and nonnegative");
    }

    [[nodiscard]] Date start_date() const { return start_; }
    [[nodiscard]] Date end_date() const { return start_ + (days() - 1); }
    [[nodiscard]] Eigen::Index days() const { return counts_.rows(); }
    [[nodiscard]] Eigen::Index series_count() const { return counts_.cols(); }
    [[nodiscard]] Date date_at(Eigen::Index t) const { return start_ + t; }
    [[nodiscard]] const Eigen::MatrixXd& counts() const { return counts_; }
    [[nodiscard]] const Eigen::VectorXd& new_licenses() const { return new_; }
    [[nodiscard]] const Eigen::VectorXd& renewal_licenses() const { return renewal_; }
    [[nodiscard]] const std::vector<std::string>& series_names() const { return names_; }

    [[nodiscard]] std::optional<Eigen::Index> index_of(Date d) const {
        if (d < start_ || d > end_date()) return std::nullopt;
        return static_cast<Eigen::Index>(d - start_);
    }

    /// Sub-panel covering [first, last], both inclusive.
    [[nodiscard]] DailyPanel slice(Date first, Date last) const {
        auto a = index_of(first);
        auto b = index_of(last);
        if (!a || !b || *b < *a) throw ArgumentError("slice [" + first.iso() + ", " + last.iso() + "] outside panel");
        const Eigen::Index n = *b - *a + 1;
        return DailyPanel(first, counts_.middleRows(*a, n), new_.segment(*a, n), renewal_.segment(*a, n), names_);
    }

    /// Days strictly before `cutoff`.
    [[nodiscard]] DailyPanel before(Date cutoff) const { return slice(start_, cutoff - 1); }

    [[nodiscard]] LogSeries log_series(Eigen::Index j, double offset = kDefaultLogOffset) const {
        return LogSeries::from_counts(counts_.col(j), offset);
    }
    [[nodiscard]] LogSeries log_new_licenses(double offset = kDefaultLogOffset) const {
        return LogSeries::from_counts(new_, offset);
    }
    [[nodiscard]] LogSeries log_renewal_licenses(double offset = kDefaultLogOffset) const {
        return LogSeries::from_counts(renewal_, offset);
    }

private:
    Date start_;
    Eigen::MatrixXd counts_;
    Eigen::VectorXd new_;
    Eigen::VectorXd renewal_;
    std::vector<std::string> names_;
};

inline std::vector<std::string> firearm_series_names() {
    std::vector<std::string> names;
    for (auto t : kFirearmTypes) names.emplace_back(to_string(t));
    return names;
}

struct Aggregation {
    DailyPanel panel;
    std::size_t excluded_transactions = 0;
    std::size_t excluded_licenses = 0;
};

/// Daily counts per firearm type over [start, end]. Records outside the range
/// are excluded and counted; days without records are zero.
inline Aggregation aggregate_daily(const std::vector<TransactionRecord>& transactions,
                                   const std::vector<LicenseRecord>& licenses, Date start, Date end) {
    if (end < start) throw ArgumentError("aggregate_daily: start date after end date");
    const auto T = static_cast<Eigen::Index>(days_inclusive(start, end));
    Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(T, static_cast<Eigen::Index>(kFirearmTypes.size()));
    Eigen::VectorXd fresh = Eigen::VectorXd::Zero(T);
    Eigen::VectorXd renew = Eigen::VectorXd::Zero(T);
    std::size_t dropped_tx = 0;
    std::size_t dropped_lic = 0;
    for (const auto& r : transactions) {
        if (r.date < start || r.date > end) {
            ++dropped_tx;
            continue;
        }
        counts(r.date - start, static_cast<Eigen::Index>(r.firearm_type)) += 1.0;
    }
    for (const auto& l : licenses) {
        if (l.issue_date < start || l.issue_date > end) {
            ++dropped_lic;
            continue;
        }
        (l.kind == LicenseKind::New ? fresh : renew)[l.issue_date - start] += 1.0;
    }
    return Aggregation{DailyPanel(start, std::move(counts), std::move(fresh), std::move(renew), firearm_series_names()),
                       dropped_tx, dropped_lic};
}

// ---------------------------------------------------------------------------
// Panel files: date,<series...>,new_licenses,renewal_licenses

inline void write_panel_csv(std::ostream& out, const DailyPanel& panel) {
    out << "date";
    for (const auto& n : panel.series_names()) out << ',' << detail::quote_if_needed(n);
    out << ",new_licenses,renewal_licenses\n";
    for (Eigen::Index t = 0; t < panel.days(); ++t) {
        out << panel.date_at(t).iso();
        for (Eigen::Index j = 0; j < panel.series_count(); ++j) out << ',' << detail::format_double(panel.counts()(t, j));
        out << ',' << detail::format_double(panel.new_licenses()[t]) << ','
            << detail::format_double(panel.renewal_licenses()[t]) << '\n';
    }
}

inline DailyPanel read_panel_csv(std::istream& in) {
    std::string line;
    bool found = false;
    while (!found && std::getline(in, line)) found = !detail::skip_line(line);
    if (!found) throw ParseError("empty panel file");
    const auto header = detail::split_line(line);
    if (header.size() < 4 || header.front() != "date" || header[header.size() - 2] != "new_licenses" ||
        header.back() != "renewal_licenses")
        throw ParseError("panel header must be date,<series...>,new_licenses,renewal_licenses");
    const std::size_t J = header.size() - 3;
    std::vector<std::string> names(header.begin() + 1, header.begin() + 1 + static_cast<std::ptrdiff_t>(J));
    std::vector<std::vector<double>> rows;
    std::optional<Date> start;
    Date prev;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (detail::skip_line(line)) continue;
        ++row;
        const auto f = detail::split_line(line);
        if (f.size() != header.size()) throw ParseError("panel row " + std::to_string(row) + ": wrong field count");
        const Date d = Date::parse(f[0]);
        if (!start) {
            start = d;
        } else if (d - prev != 1) {
            throw ParseError("panel row " + std::to_string(row) + ": dates are not contiguous");
        }
        prev = d;
        std::vector<double> v;
        for (std::size_t i = 1; i < f.size(); ++i) {
            try {
                v.push_back(std::stod(f[i]));
            } catch (const std::exception&) {
                throw ParseError("panel row " + std::to_string(row) + ": bad number '" + f[i] + "'");
            }
        }
        rows.push_back(std::move(v));
    }
    if (rows.empty()) throw ParseError("panel file has no rows");
    const auto T = static_cast<Eigen::Index>(rows.size());
    Eigen::MatrixXd counts(T, static_cast<Eigen::Index>(J));
    Eigen::VectorXd fresh(T), renew(T);
    for (Eigen::Index t = 0; t < T; ++t) {
        for (std::size_t j = 0; j < J; ++j) counts(t, static_cast<Eigen::Index>(j)) = rows[t][j];
        fresh[t] = rows[t][J];
        renew[t] = rows[t][J + 1];
    }
    return DailyPanel(*start, std::move(counts), std::move(fresh), std::move(renew), std::move(names));
}

}  // namespace impact

#pragma once

#include <charconv>
#include <chrono>
#include <compare>
#include <cstdint>
#include <string>
#include <string_view>

#include "impact/error.hpp"

namespace impact {

/// A civil calendar day with no time zone attached.
class Date {
public:
    constexpr Date() = default;
    constexpr explicit Date(std::chrono::sys_days days) : days_(days) {}
    constexpr Date(int year, unsigned month, unsigned day)
        : days_(std::chrono::year_month_day{std::chrono::year{year}, std::chrono::month{month},
                                            std::chrono::day{day}}) {}

    /// Strict YYYY-MM-DD parsing; throws ParseError on anything else.
    static Date parse(std::string_view text) {
        auto fail = [&] { throw ParseError("invalid ISO-8601 date '" + std::string(text) + "'"); };
        if (text.size() != 10 || text[4] != '-' || text[7] != '-') fail();
        auto field = [&](std::size_t pos, std::size_t len) {
            int value = 0;
            auto [ptr, ec] = std::from_chars(text.data() + pos, text.data() + pos + len, value);
            if (ec != std::errc{} || ptr != text.data() + pos + len) fail();
            return value;
        };
        const int y = field(0, 4);
        const int m = field(5, 2);
        const int d = field(8, 2);
        std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{static_cast<unsigned>(m)},
                                        std::chrono::day{static_cast<unsigned>(d)}};
        if (!ymd.ok()) fail();
        return Date{std::chrono::sys_days{ymd}};
    }

    [[nodiscard]] std::string iso() const {
        const auto ymd = this->ymd();
        char buf[16];
        const int y = static_cast<int>(ymd.year());
        const unsigned m = static_cast<unsigned>(ymd.month());
        const unsigned d = static_cast<unsigned>(ymd.day());
        buf[0] = static_cast<char>('0' + (y / 1000) % 10);
        buf[1] = static_cast<char>('0' + (y / 100) % 10);
        buf[2] = static_cast<char>('0' + (y / 10) % 10);
        buf[3] = static_cast<char>('0' + y % 10);
        buf[4] = '-';
        buf[5] = static_cast<char>('0' + m / 10);
        buf[6] = static_cast<char>('0' + m % 10);
        buf[7] = '-';
        buf[8] = static_cast<char>('0' + d / 10);
        buf[9] = static_cast<char>('0' + d % 10);
        return std::string(buf, 10);
    }

    [[nodiscard]] constexpr std::chrono::sys_days sys_days() const { return days_; }
    [[nodiscard]] constexpr std::chrono::year_month_day ymd() const { return std::chrono::year_month_day{days_}; }
    [[nodiscard]] constexpr int year() const { return static_cast<int>(ymd().year()); }
    [[nodiscard]] constexpr unsigned month() const { return static_cast<unsigned>(ymd().month()); }
    [[nodiscard]] constexpr unsigned day() const { return static_cast<unsigned>(ymd().day()); }

    /// 0 = Monday ... 6 = Sunday.
    [[nodiscard]] constexpr int weekday_index() const {
        return static_cast<int>(std::chrono::weekday{days_}.iso_encoding()) - 1;
    }

    /// 1-based ordinal day within the year (1..366).
    [[nodiscard]] constexpr int day_of_year() const {
        const auto jan1 = std::chrono::sys_days{std::chrono::year{year()} / std::chrono::January / 1};
        return static_cast<int>((days_ - jan1).count()) + 1;
    }

    [[nodiscard]] constexpr bool leap_year() const { return ymd().year().is_leap(); }

    constexpr Date operator+(std::int64_t n) const { return Date{days_ + std::chrono::days{n}}; }
    constexpr Date operator-(std::int64_t n) const { return Date{days_ - std::chrono::days{n}}; }
    constexpr std::int64_t operator-(Date other) const { return (days_ - other.days_).count(); }
    constexpr Date& operator++() {
        days_ += std::chrono::days{1};
        return *this;
    }

    constexpr auto operator<=>(const Date&) const = default;

private:
    std::chrono::sys_days days_{};
};

/// Inclusive day count of [first, last]; zero when last precedes first.
inline std::int64_t days_inclusive(Date first, Date last) {
    return last < first ? 0 : (last - first) + 1;
}

}  // namespace impact

template <>
struct std::hash<impact::Date> {
    std::size_t operator()(const impact::Date& d) const noexcept {
        return std::hash<long long>{}(d.sys_days().time_since_epoch().count());
    }
};

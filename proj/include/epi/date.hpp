#pragma once

#include <compare>
#include <cstdint>
#include <string>

namespace epi {

/// Calendar day stored as a count of days since 1970-01-01.
/// Arithmetic in whole days; parsing/formatting is strict ISO-8601 (YYYY-MM-DD).
class Date {
public:
    Date() = default;
    explicit Date(std::int64_t days_since_epoch) : days_(days_since_epoch) {}

    static Date from_ymd(int year, int month, int day);
    static Date parse(const std::string& iso);

    std::int64_t days() const noexcept { return days_; }
    std::string to_string() const;

    Date operator+(std::int64_t n) const { return Date(days_ + n); }
    Date operator-(std::int64_t n) const { return Date(days_ - n); }
    std::int64_t operator-(Date other) const { return days_ - other.days_; }
    Date& operator++() { ++days_; return *this; }

    auto operator<=>(const Date&) const = default;

private:
    std::int64_t days_ = 0;
};

} // namespace epi

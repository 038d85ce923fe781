#pragma once

#include <charconv>
#include <compare>
#include <cstdio>
#include <string>
#include <string_view>

#include "tokencast/errors.hpp"

namespace tokencast {

// Plain calendar date. Trading-day arithmetic is done against an explicit
// calendar (the sorted set of dates present in a panel), not here.
struct Date {
    int y = 0;
    int m = 0;
    int d = 0;

    auto operator<=>(const Date&) const = default;

    bool valid() const {
        if (y < 1 || m < 1 || m > 12 || d < 1) return false;
        return d <= days_in_month(y, m);
    }

    static int days_in_month(int y, int m) {
        static constexpr int kDays[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
        if (m == 2 && (y % 4 == 0 && (y % 100 != 0 || y % 400 == 0))) return 29;
        return kDays[m - 1];
    }

    // Sakamoto's method; 0 = Sunday.
    int day_of_week() const {
        static constexpr int kT[] = {0, 3, 2, 5, 0, 3, 5, 1, 4, 6, 2, 4};
        int yy = y - (m < 3);
        return (yy + yy / 4 - yy / 100 + yy / 400 + kT[m - 1] + d) % 7;
    }

    bool is_weekday() const {
        int w = day_of_week();
        return w != 0 && w != 6;
    }

    Date next_day() const {
        Date n = *this;
        if (++n.d > days_in_month(n.y, n.m)) {
            n.d = 1;
            if (++n.m > 12) {
                n.m = 1;
                ++n.y;
            }
        }
        return n;
    }

    Date next_weekday() const {
        Date n = next_day();
        while (!n.is_weekday()) n = n.next_day();
        return n;
    }

    std::string to_string() const {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", y, m, d);
        return buf;
    }
};

inline Date parse_date(std::string_view s) {
    auto fail = [&] { throw DataError("malformed date '" + std::string(s) + "' (expected YYYY-MM-DD)"); };
    if (s.size() != 10 || s[4] != '-' || s[7] != '-') fail();
    Date d;
    auto num = [&](std::string_view part, int& out) {
        auto [p, ec] = std::from_chars(part.data(), part.data() + part.size(), out);
        if (ec != std::errc{} || p != part.data() + part.size()) fail();
    };
    num(s.substr(0, 4), d.y);
    num(s.substr(5, 2), d.m);
    num(s.substr(8, 2), d.d);
    if (!d.valid()) fail();
    return d;
}

}  // namespace tokencast

#pragma once

#include <chrono>
#include <string>
#include <string_view>

namespace smartcast {

using Date = std::chrono::sys_days;

// Parses a strict `YYYY-MM-DD` calendar date. Throws DataError on malformed
// or impossible dates.
Date parse_iso_date(std::string_view text);

std::string format_iso_date(Date date);

// Signed whole days from `from` to `to`.
inline long days_between(Date from, Date to) {
  return static_cast<long>((to - from).count());
}

}  // namespace smartcast

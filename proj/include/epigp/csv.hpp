#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace epigp::csv {

// Splits one RFC 4180 record. Quoted fields may contain commas and doubled
// quotes; returns nullopt on an unterminated quote.
std::optional<std::vector<std::string>> split_record(std::string_view line);

// Reads one physical line, stripping a trailing '\r'.
bool read_line(std::istream& in, std::string& line);

// 17 significant digits, enough to round-trip a double.
std::string format_real(double v);

std::optional<double> parse_real(std::string_view s);

// Quotes a field if it contains a comma, quote or newline.
std::string quote(std::string_view field);

} // namespace epigp::csv

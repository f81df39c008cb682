#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace typoreg {

std::vector<std::string> split(std::string_view text, char sep);
/// Splits on runs of spaces/tabs, dropping empty pieces.
std::vector<std::string> split_ws(std::string_view text);
std::string_view trim(std::string_view text);

/// Whole-string decimal parse; nullopt on any trailing garbage.
std::optional<double> parse_double(std::string_view text);
std::optional<long long> parse_int(std::string_view text);

/// Shortest representation that parses back to the same double.
std::string format_double(double value);
/// Fixed notation with `digits` decimals.
std::string format_fixed(double value, int digits);

}  // namespace typoreg

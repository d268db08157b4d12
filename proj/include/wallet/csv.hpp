#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace wallet::csv {

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

/// Strict parse of the whole field; throws Error(invalid_field).
double parse_double(std::string_view field);

std::vector<std::string_view> split_fields(std::string_view line);

/// Lines without their terminators; a trailing empty line is dropped and
/// CRLF is accepted.
std::vector<std::string_view> split_lines(std::string_view text);

}  // namespace wallet::csv

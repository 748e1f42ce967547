// Minimal RFC-4180-ish CSV helpers shared by the loaders and writers.
#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace stagdid::csv {

/// Splits one record. Handles double-quoted fields with "" escapes; does not
/// support newlines inside quotes.
std::vector<std::string> split_record(std::string_view line);

/// Splits text into non-empty lines, tolerating CRLF and a UTF-8 BOM.
std::vector<std::string_view> lines(std::string_view text);

std::string trim(std::string_view s);

/// Quotes a field when it contains a comma, quote or whitespace at the ends.
std::string escape(std::string_view field);

/// Shortest round-trip decimal representation.
std::string format_double(double v);

bool parse_double(std::string_view s, double& out);
bool parse_int(std::string_view s, long long& out);

}  // namespace stagdid::csv

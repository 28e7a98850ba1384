#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace epi::csv {

/// In-memory CSV table: one header row plus data rows of equal arity.
struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    /// Index of a header column, or nullopt.
    std::optional<size_t> column(const std::string& name) const;
};

/// Reads an RFC-4180-style CSV file (quoted fields, embedded commas/quotes,
/// CRLF or LF line endings). Throws DataError on missing file or ragged rows.
Table read_file(const std::string& path);

/// Parses CSV from a string (same rules as read_file).
Table parse(const std::string& text);

/// Writes a table; fields containing commas, quotes, or newlines are quoted.
void write_file(const std::string& path, const Table& table);

/// Shortest decimal representation of a double that round-trips to the same
/// bits (via std::to_chars). NaN/inf are rejected with NumericError.
std::string format_double(double value);

/// Strict double parse; the full field must be consumed.
double parse_double(const std::string& field, const std::string& context);

/// Strict integer parse.
std::int64_t parse_int(const std::string& field, const std::string& context);

} // namespace epi::csv

#include "epi/csv.hpp"

#include "epi/errors.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace epi::csv {

std::optional<size_t> Table::column(const std::string& name) const {
    for (size_t i = 0; i < header.size(); ++i) {
        if (header[i] == name) return i;
    }
    return std::nullopt;
}

namespace {

// State-machine CSV parser; handles quoted fields with "" escapes.
std::vector<std::vector<std::string>> parse_records(const std::string& text) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> row;
    std::string field;
    bool in_quotes = false;
    bool row_started = false;

    auto end_field = [&] {
        row.push_back(std::move(field));
        field.clear();
    };
    auto end_row = [&] {
        end_field();
        records.push_back(std::move(row));
        row.clear();
        row_started = false;
    };

    for (size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                field += c;
            }
            continue;
        }
        switch (c) {
        case '"':
            in_quotes = true;
            row_started = true;
            break;
        case ',':
            end_field();
            row_started = true;
            break;
        case '\r':
            break;
        case '\n':
            if (row_started || !field.empty() || !row.empty()) end_row();
            break;
        default:
            field += c;
            row_started = true;
            break;
        }
    }
    if (in_quotes) throw DataError("CSV: unterminated quoted field");
    if (row_started || !field.empty() || !row.empty()) end_row();
    return records;
}

std::string quote_if_needed(const std::string& field) {
    if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += '"';
    return out;
}

} // namespace

Table parse(const std::string& text) {
    auto records = parse_records(text);
    if (records.empty()) throw DataError("CSV: empty input");
    Table table;
    table.header = std::move(records.front());
    table.rows.assign(std::make_move_iterator(records.begin() + 1),
                      std::make_move_iterator(records.end()));
    for (size_t i = 0; i < table.rows.size(); ++i) {
        if (table.rows[i].size() != table.header.size()) {
            throw DataError("CSV: row " + std::to_string(i + 2) + " has " +
                            std::to_string(table.rows[i].size()) + " fields, expected " +
                            std::to_string(table.header.size()));
        }
    }
    return table;
}

Table read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    try {
        return parse(buf.str());
    } catch (const DataError& e) {
        throw DataError(path + ": " + e.what());
    }
}

void write_file(const std::string& path, const Table& table) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write file: " + path);
    auto write_row = [&out](const std::vector<std::string>& row) {
        for (size_t i = 0; i < row.size(); ++i) {
            if (i) out << ',';
            out << quote_if_needed(row[i]);
        }
        out << '\n';
    };
    write_row(table.header);
    for (const auto& row : table.rows) write_row(row);
    if (!out) throw DataError("write failed: " + path);
}

std::string format_double(double value) {
    if (!std::isfinite(value)) throw NumericError("cannot serialize non-finite value");
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, res.ptr);
}

double parse_double(const std::string& field, const std::string& context) {
    if (field.empty()) throw DataError(context + ": empty numeric field");
    const char* begin = field.c_str();
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(begin, &end);
    if (end != begin + field.size() || errno == ERANGE || !std::isfinite(v)) {
        throw DataError(context + ": not a finite number: '" + field + "'");
    }
    return v;
}

std::int64_t parse_int(const std::string& field, const std::string& context) {
    if (field.empty()) throw DataError(context + ": empty integer field");
    std::int64_t v = 0;
    auto res = std::from_chars(field.data(), field.data() + field.size(), v);
    if (res.ec != std::errc() || res.ptr != field.data() + field.size()) {
        throw DataError(context + ": not an integer: '" + field + "'");
    }
    return v;
}

} // namespace epi::csv

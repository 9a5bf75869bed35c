// SPDX-License-Identifier: Apache-2.0
#include "salt/csv.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "salt/errors.hpp"

namespace salt {

namespace {

bool needs_quoting(const std::string& s) {
    return s.find_first_of(",\"\n\r") != std::string::npos;
}

std::string escape(const std::string& s) {
    if (!needs_quoting(s)) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += "\"";
    return out;
}

} // namespace

std::string CsvTable::format_double(double value) {
    if (std::isnan(value)) return "nan";
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.6g", value);
    return buf;
}

CsvTable& CsvTable::begin_row() {
    if (!rows_.empty() && rows_.back().size() != header_.size()) {
        throw ContractError("csv row has " + std::to_string(rows_.back().size()) + " cells, header has " +
                            std::to_string(header_.size()));
    }
    rows_.emplace_back();
    return *this;
}

CsvTable& CsvTable::cell(const std::string& value) {
    if (rows_.empty()) throw ContractError("cell before begin_row");
    rows_.back().push_back(value);
    return *this;
}

CsvTable& CsvTable::cell(double value) {
    return cell(format_double(value));
}

CsvTable& CsvTable::cell(std::uint64_t value) {
    return cell(std::to_string(value));
}

CsvTable& CsvTable::cell(std::int64_t value) {
    return cell(std::to_string(value));
}

std::string CsvTable::to_string() const {
    if (!rows_.empty() && rows_.back().size() != header_.size()) {
        throw ContractError("last csv row is incomplete");
    }
    std::string out;
    for (std::size_t i = 0; i < header_.size(); ++i) {
        if (i) out += ',';
        out += escape(header_[i]);
    }
    out += "\r\n";
    for (const auto& row : rows_) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out += ',';
            out += escape(row[i]);
        }
        out += "\r\n";
    }
    return out;
}

void CsvTable::write(const std::string& path) const {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    const std::string s = to_string();
    f.write(s.data(), static_cast<std::streamsize>(s.size()));
    if (!f) throw IoError("write failed: " + path);
}

std::vector<std::vector<std::string>> CsvTable::parse(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool quoted = false;
    std::size_t i = 0;
    auto end_field = [&] {
        row.push_back(field);
        field.clear();
    };
    auto end_row = [&] {
        end_field();
        rows.push_back(row);
        row.clear();
    };
    while (i < text.size()) {
        const char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            end_field();
        } else if (c == '\r') {
            // swallow; \n closes the row
        } else if (c == '\n') {
            end_row();
        } else {
            field += c;
        }
        ++i;
    }
    if (!field.empty() || !row.empty()) end_row();
    return rows;
}

} // namespace salt

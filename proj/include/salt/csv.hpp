// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace salt {

/// RFC-4180-style table with a header row. Floats print with six
/// significant digits so identical runs emit identical bytes.
class CsvTable {
public:
    explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

    CsvTable& begin_row();
    CsvTable& cell(const std::string& value);
    CsvTable& cell(double value);
    CsvTable& cell(std::uint64_t value);
    CsvTable& cell(std::int64_t value);

    std::size_t rows() const { return rows_.size(); }
    std::string to_string() const;
    void write(const std::string& path) const;

    static std::string format_double(double value);

    /// Minimal RFC-4180 parse (quotes honored) for roundtrip checks.
    static std::vector<std::vector<std::string>> parse(const std::string& text);

private:
    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

} // namespace salt

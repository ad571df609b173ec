#pragma once

// Rectangular result tables emitted as CSV or JSON from one in-memory copy.

#include <charconv>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace iassd {

enum class TableFormat { kCsv, kJson };

inline TableFormat parse_table_format(std::string_view s) {
  if (s == "csv") return TableFormat::kCsv;
  if (s == "json") return TableFormat::kJson;
  throw std::invalid_argument("unknown table format '" + std::string(s) + "'");
}

struct ReportTable {
  std::string title;
  std::string row_header = "row";
  std::vector<std::string> columns;

  struct Row {
    std::string label;
    std::vector<std::optional<double>> cells;  // nullopt = null
  };
  std::vector<Row> rows;

  ReportTable() = default;
  ReportTable(std::string t, std::string header, std::vector<std::string> cols)
      : title(std::move(t)), row_header(std::move(header)), columns(std::move(cols)) {}

  /// Non-finite values are stored as null.
  void add_row(std::string label, const std::vector<std::optional<double>>& cells) {
    if (cells.size() != columns.size())
      throw std::invalid_argument("ReportTable '" + title + "': row '" + label + "' has " +
                                  std::to_string(cells.size()) + " cells, expected " + std::to_string(columns.size()));
    Row r{std::move(label), {}};
    for (const auto& c : cells) r.cells.push_back(c && std::isfinite(*c) ? c : std::nullopt);
    rows.push_back(std::move(r));
  }

  void add_row(std::string label, const std::vector<double>& cells) {
    add_row(std::move(label), std::vector<std::optional<double>>(cells.begin(), cells.end()));
  }

  std::optional<double> cell(std::string_view row, std::string_view col) const {
    for (std::size_t c = 0; c < columns.size(); ++c)
      if (columns[c] == col)
        for (const Row& r : rows)
          if (r.label == row) return r.cells[c];
    throw std::out_of_range("ReportTable: no cell (" + std::string(row) + ", " + std::string(col) + ")");
  }

  /// Shortest representation that round-trips.
  static std::string number(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return {buf, res.ptr};
  }

  static std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char ch : s) {
      if (ch == '"') out += '"';
      out += ch;
    }
    return out + "\"";
  }

  std::string to_csv() const {
    std::string out = csv_field(row_header);
    for (const auto& c : columns) out += "," + csv_field(c);
    out += "\n";
    for (const Row& r : rows) {
      out += csv_field(r.label);
      for (const auto& v : r.cells) out += "," + (v ? number(*v) : std::string());
      out += "\n";
    }
    return out;
  }

  /// Keys keep column order.
  nlohmann::ordered_json to_json() const {
    using oj = nlohmann::ordered_json;
    oj rs = oj::array();
    for (const Row& r : rows) {
      oj cells = oj::object();
      for (std::size_t c = 0; c < columns.size(); ++c) cells[columns[c]] = r.cells[c] ? oj(*r.cells[c]) : oj();
      rs.push_back({{row_header, r.label}, {"values", cells}});
    }
    return oj{{"title", title}, {"row_header", row_header}, {"columns", columns}, {"rows", rs}};
  }

  std::string render(TableFormat f) const { return f == TableFormat::kCsv ? to_csv() : to_json().dump(2) + "\n"; }
};

}  // namespace iassd

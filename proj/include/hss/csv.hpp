#pragma once

#include <filesystem>
#include <istream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace hss::csv {

/// Parse failure carrying the 1-based line number of the offending row.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& what)
      : std::runtime_error(file + ":" + std::to_string(line) + ": " + what), line_(line) {}
  [[nodiscard]] std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct Row {
  std::size_t line{};
  std::vector<std::string> fields;
};

/// Header-indexed CSV table. Plain comma separation, no quoting; every file
/// this project reads or writes is numeric or uses simple identifiers.
class Table {
 public:
  static Table read(const std::filesystem::path& path);
  static Table parse(std::istream& in, const std::string& name);

  [[nodiscard]] bool has(std::string_view column) const;
  [[nodiscard]] std::size_t column(std::string_view name) const;
  [[nodiscard]] const std::vector<Row>& rows() const { return rows_; }
  [[nodiscard]] const std::vector<std::string>& header() const { return header_; }
  [[nodiscard]] const std::string& name() const { return name_; }

  [[nodiscard]] const std::string& get(const Row& r, std::string_view col) const;
  [[nodiscard]] int get_int(const Row& r, std::string_view col) const;
  [[nodiscard]] double get_double(const Row& r, std::string_view col) const;

  [[noreturn]] void fail(const Row& r, const std::string& what) const { throw ParseError(name_, r.line, what); }

 private:
  std::string name_;
  std::vector<std::string> header_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<Row> rows_;
};

std::vector<std::string> split(std::string_view line, char sep = ',');

/// Shortest round-trip representation of a double.
std::string format(double v);

}  // namespace hss::csv

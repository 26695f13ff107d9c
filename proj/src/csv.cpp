#include "hss/csv.hpp"

#include "hss/core.hpp"

#include <charconv>
#include <cmath>
#include <fstream>

namespace hss::csv {

std::vector<std::string> split(std::string_view line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    auto field = line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start);
    while (!field.empty() && (field.back() == ' ' || field.back() == '\t')) field.remove_suffix(1);
    while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
    out.emplace_back(field);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

Table Table::read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open " + path.string());
  return parse(in, path.string());
}

Table Table::parse(std::istream& in, const std::string& name) {
  Table t;
  t.name_ = name;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    auto fields = split(line);
    if (!have_header) {
      t.header_ = std::move(fields);
      for (std::size_t i = 0; i < t.header_.size(); ++i) t.index_[t.header_[i]] = i;
      have_header = true;
      continue;
    }
    if (fields.size() != t.header_.size()) {
      throw ParseError(name, lineno,
                       "expected " + std::to_string(t.header_.size()) + " fields, got " + std::to_string(fields.size()));
    }
    t.rows_.push_back(Row{lineno, std::move(fields)});
  }
  if (!have_header) throw ParseError(name, lineno, "missing header");
  return t;
}

bool Table::has(std::string_view column) const { return index_.contains(std::string(column)); }

std::size_t Table::column(std::string_view col) const {
  const auto it = index_.find(std::string(col));
  if (it == index_.end()) throw ParseError(name_, 1, "missing column '" + std::string(col) + "'");
  return it->second;
}

const std::string& Table::get(const Row& r, std::string_view col) const { return r.fields[column(col)]; }

int Table::get_int(const Row& r, std::string_view col) const {
  const auto& s = get(r, col);
  int v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) fail(r, "column '" + std::string(col) + "': not an integer: '" + s + "'");
  return v;
}

double Table::get_double(const Row& r, std::string_view col) const {
  const auto& s = get(r, col);
  if (s == "NA" || s == "nan" || s == "NaN") return std::nan("");
  double v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) fail(r, "column '" + std::string(col) + "': not a number: '" + s + "'");
  return v;
}

std::string format(double v) {
  if (std::isnan(v)) return "NA";
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace hss::csv

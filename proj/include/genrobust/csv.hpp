#pragma once

#include <string>
#include <vector>

namespace genrobust {

/// Writes `contents` to a temporary sibling and renames it over `path`.
void atomic_write(const std::string& path, const std::string& contents);

std::string read_file(const std::string& path);

/// CSV text with a mandatory header row; fields are quoted when they contain
/// a comma, a quote or a line break (quotes doubled).
class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header);

  CsvWriter& row(const std::vector<std::string>& fields);
  std::string str() const { return text_; }
  void save(const std::string& path) const { atomic_write(path, text_); }

  static std::string quote(const std::string& field);

 private:
  std::size_t columns_;
  std::string text_;
};

/// Shortest round-trip decimal form of a double.
std::string format_double(double value);

/// Parses CSV text (RFC-style quoting) into rows of fields.
std::vector<std::vector<std::string>> parse_csv(const std::string& text);

}  // namespace genrobust

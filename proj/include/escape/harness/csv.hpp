#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace escape {

/// 17 significant digits, so values round-trip exactly.
std::string format_number(double v);

class CsvWriter {
 public:
  explicit CsvWriter(std::ostream& out) : out_(out) {}

  void header(const std::vector<std::string>& columns);
  CsvWriter& cell(const std::string& s);
  CsvWriter& cell(double v);
  CsvWriter& cell(long v);
  void end_row();

 private:
  std::ostream& out_;
  bool first_ = true;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  bool has(const std::string& column) const;
  /// Throws MissingColumn.
  std::size_t column(const std::string& name) const;
  std::vector<double> numbers(const std::string& name) const;
  std::vector<std::string> strings(const std::string& name) const;
};

CsvTable read_csv(const std::filesystem::path& file);

}  // namespace escape

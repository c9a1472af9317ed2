#pragma once

// Text formats: observation and path CSVs, matrix files, and the sectioned
// key-value format shared by configuration files and fit reports.

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "vnd/estimation.hpp"
#include "vnd/hmm.hpp"
#include "vnd/matrix.hpp"

namespace vnd {

// Shortest representation that parses back to the same double.
std::string format_double(double x);

// C-locale parse of the whole of `text` (surrounding blanks allowed). Throws
// ParseError mentioning `context` otherwise.
double parse_double(std::string_view text, const std::string& context);
long long parse_integer(std::string_view text, const std::string& context);
bool parse_bool(std::string_view text, const std::string& context);

// One value per line; blank lines and lines starting with '#' are skipped.
// A single non-numeric first line is taken as a header. Errors cite the line.
ObservationSeries read_observations(std::istream& in, const std::string& source = "<input>");
ObservationSeries read_observations(const std::filesystem::path& path);
void write_observations(std::ostream& out, const ObservationSeries& obs);

// Same layout with integer states under a "state" header.
HiddenPath read_path(std::istream& in, const std::string& source = "<input>");
HiddenPath read_path(const std::filesystem::path& path);
void write_path(std::ostream& out, const HiddenPath& path);

// Rows of numbers separated by commas and/or blanks.
Matrix read_matrix(std::istream& in, const std::string& source = "<input>");
Matrix read_matrix(const std::filesystem::path& path);

// Sectioned key-value text:
//
//   # comment
//   [section]
//   key = value
//
// Keys before the first section header belong to section "". Duplicate keys
// are errors.
class KeyValueDocument {
 public:
  struct Entry {
    std::string value;
    int line = 0;
  };

  static KeyValueDocument parse(std::istream& in, const std::string& source = "<input>");
  static KeyValueDocument parse_file(const std::filesystem::path& path);

  const std::string& source() const noexcept { return source_; }
  bool has_section(const std::string& section) const;
  bool has(const std::string& section, const std::string& key) const;

  std::optional<std::string> get(const std::string& section, const std::string& key) const;
  std::string require(const std::string& section, const std::string& key) const;

  double get_double(const std::string& section, const std::string& key, double fallback) const;
  double require_double(const std::string& section, const std::string& key) const;
  long long get_integer(const std::string& section, const std::string& key, long long fallback) const;
  long long require_integer(const std::string& section, const std::string& key) const;
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
  std::vector<double> get_doubles(const std::string& section, const std::string& key) const;
  std::vector<long long> get_integers(const std::string& section, const std::string& key) const;

  // Throws ConfigError naming the first key or section not in `allowed`.
  void check_known(const std::map<std::string, std::set<std::string>>& allowed) const;

 private:
  std::string context(const std::string& section, const std::string& key) const;

  std::string source_;
  std::map<std::string, std::map<std::string, Entry>> sections_;
  std::map<std::string, int> section_lines_;
};

// Fit report in the key-value format; read_fit_report restores the model.
void write_fit_report(std::ostream& out, const FitResult& fit);
FitResult read_fit_report(const KeyValueDocument& doc);
FitResult read_fit_report(const std::filesystem::path& path);

std::string join_doubles(const std::vector<double>& xs);

}  // namespace vnd

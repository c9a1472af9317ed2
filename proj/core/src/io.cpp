#include "vnd/io.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "vnd/error.hpp"
#include "vnd/experiments.hpp"
#include "vnd/sum_chain.hpp"

namespace vnd {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split_list(std::string_view s, bool allow_blank_separator) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  auto is_sep = [&](char c) {
    return c == ',' || (allow_blank_separator && (c == ' ' || c == '\t'));
  };
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || is_sep(s[i])) {
      auto tok = trim(s.substr(start, i - start));
      if (!tok.empty() || !allow_blank_separator) out.push_back(tok);
      start = i + 1;
    }
  }
  return out;
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("io", "cannot open " + path.string());
  return in;
}

std::string line_context(const std::string& source, int line) {
  return source + ":" + std::to_string(line);
}

// Reads single-column numeric data with an optional header line.
template <class Parse>
void read_column(std::istream& in, const std::string& source, Parse&& parse) {
  std::string line;
  int lineno = 0;
  bool seen_content = false;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    if (!seen_content) {
      seen_content = true;
      // A header is the first line when it does not start like a number.
      const char c = t.front();
      const bool numeric = std::isdigit(static_cast<unsigned char>(c)) || c == '-' || c == '+' || c == '.';
      const bool special = t == "nan" || t == "inf" || t == "-inf";
      if (!numeric && !special) continue;
    }
    parse(t, line_context(source, lineno) + " (row " + std::to_string(lineno) + ")");
  }
}

}  // namespace

std::string format_double(double x) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

double parse_double(std::string_view text, const std::string& context) {
  const auto t = trim(text);
  double v = 0.0;
  const char* first = t.data();
  const char* last = t.data() + t.size();
  if (!t.empty() && *first == '+') ++first;
  const auto r = std::from_chars(first, last, v);
  if (t.empty() || r.ec != std::errc() || r.ptr != last) {
    throw ParseError(context + ": expected a number, got '" + std::string(t) + "'");
  }
  return v;
}

long long parse_integer(std::string_view text, const std::string& context) {
  const auto t = trim(text);
  long long v = 0;
  const char* first = t.data();
  const char* last = t.data() + t.size();
  if (!t.empty() && *first == '+') ++first;
  const auto r = std::from_chars(first, last, v);
  if (t.empty() || r.ec != std::errc() || r.ptr != last) {
    throw ParseError(context + ": expected an integer, got '" + std::string(t) + "'");
  }
  return v;
}

bool parse_bool(std::string_view text, const std::string& context) {
  std::string t(trim(text));
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  if (t == "true" || t == "yes" || t == "1" || t == "on") return true;
  if (t == "false" || t == "no" || t == "0" || t == "off") return false;
  throw ParseError(context + ": expected true or false, got '" + t + "'");
}

ObservationSeries read_observations(std::istream& in, const std::string& source) {
  ObservationSeries obs;
  read_column(in, source, [&](std::string_view t, const std::string& ctx) {
    const double v = parse_double(t, ctx);
    if (!std::isfinite(v)) throw ParseError(ctx + ": value is not finite");
    obs.values.push_back(v);
  });
  if (obs.values.empty()) throw ParseError(source + ": no observations");
  return obs;
}

ObservationSeries read_observations(const std::filesystem::path& path) {
  auto in = open_input(path);
  return read_observations(in, path.string());
}

void write_observations(std::ostream& out, const ObservationSeries& obs) {
  out << "y\n";
  for (double v : obs.values) out << format_double(v) << '\n';
}

HiddenPath read_path(std::istream& in, const std::string& source) {
  HiddenPath path;
  read_column(in, source, [&](std::string_view t, const std::string& ctx) {
    const long long v = parse_integer(t, ctx);
    if (v < 0 || v > 65535) throw ParseError(ctx + ": state out of range");
    path.push_back(static_cast<int>(v));
  });
  if (path.empty()) throw ParseError(source + ": empty path");
  return path;
}

HiddenPath read_path(const std::filesystem::path& path) {
  auto in = open_input(path);
  return read_path(in, path.string());
}

void write_path(std::ostream& out, const HiddenPath& path) {
  out << "state\n";
  for (int s : path) out << s << '\n';
}

Matrix read_matrix(std::istream& in, const std::string& source) {
  std::vector<std::vector<double>> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    std::vector<double> row;
    for (auto tok : split_list(t, true)) {
      row.push_back(parse_double(tok, line_context(source, lineno)));
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw ParseError(line_context(source, lineno) + ": row has " + std::to_string(row.size()) +
                       " entries, expected " + std::to_string(rows.front().size()));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError(source + ": empty matrix");
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) m(r, c) = rows[r][c];
  }
  return m;
}

Matrix read_matrix(const std::filesystem::path& path) {
  auto in = open_input(path);
  return read_matrix(in, path.string());
}

// ---------------------------------------------------------------------------

KeyValueDocument KeyValueDocument::parse(std::istream& in, const std::string& source) {
  KeyValueDocument doc;
  doc.source_ = source;
  std::string section;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto t = trim(line);
    if (t.empty() || t.front() == '#' || t.front() == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError(line_context(source, lineno) + ": unterminated section header");
      section = std::string(trim(t.substr(1, t.size() - 2)));
      if (section.empty()) throw ConfigError(line_context(source, lineno) + ": empty section name");
      doc.sections_[section];
      doc.section_lines_.emplace(section, lineno);
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(line_context(source, lineno) + ": expected 'key = value'");
    }
    const std::string key(trim(t.substr(0, eq)));
    auto value = trim(t.substr(eq + 1));
    if (const auto hash = value.find(" #"); hash != std::string_view::npos) value = trim(value.substr(0, hash));
    if (key.empty()) throw ConfigError(line_context(source, lineno) + ": missing key");
    auto& sec = doc.sections_[section];
    if (sec.count(key)) {
      throw ConfigError(line_context(source, lineno) + ": duplicate key '" + key + "' (first set on line " +
                        std::to_string(sec[key].line) + ")");
    }
    sec[key] = Entry{std::string(value), lineno};
  }
  return doc;
}

KeyValueDocument KeyValueDocument::parse_file(const std::filesystem::path& path) {
  auto in = open_input(path);
  return parse(in, path.string());
}

bool KeyValueDocument::has_section(const std::string& section) const {
  return sections_.count(section) > 0;
}

bool KeyValueDocument::has(const std::string& section, const std::string& key) const {
  const auto it = sections_.find(section);
  return it != sections_.end() && it->second.count(key) > 0;
}

std::string KeyValueDocument::context(const std::string& section, const std::string& key) const {
  const auto it = sections_.find(section);
  std::string where = source_;
  if (it != sections_.end()) {
    if (const auto e = it->second.find(key); e != it->second.end()) where += ":" + std::to_string(e->second.line);
  }
  return where + ": [" + section + "] " + key;
}

std::optional<std::string> KeyValueDocument::get(const std::string& section, const std::string& key) const {
  const auto it = sections_.find(section);
  if (it == sections_.end()) return std::nullopt;
  const auto e = it->second.find(key);
  if (e == it->second.end()) return std::nullopt;
  return e->second.value;
}

std::string KeyValueDocument::require(const std::string& section, const std::string& key) const {
  auto v = get(section, key);
  if (!v) throw ConfigError(source_ + ": missing required key '" + key + "' in section [" + section + "]");
  return *v;
}

double KeyValueDocument::get_double(const std::string& section, const std::string& key, double fallback) const {
  return has(section, key) ? require_double(section, key) : fallback;
}

double KeyValueDocument::require_double(const std::string& section, const std::string& key) const {
  const auto v = require(section, key);
  try {
    return parse_double(v, context(section, key));
  } catch (const ParseError& e) {
    throw ConfigError(e.what());
  }
}

long long KeyValueDocument::get_integer(const std::string& section, const std::string& key,
                                        long long fallback) const {
  return has(section, key) ? require_integer(section, key) : fallback;
}

long long KeyValueDocument::require_integer(const std::string& section, const std::string& key) const {
  const auto v = require(section, key);
  try {
    return parse_integer(v, context(section, key));
  } catch (const ParseError& e) {
    throw ConfigError(e.what());
  }
}

bool KeyValueDocument::get_bool(const std::string& section, const std::string& key, bool fallback) const {
  if (!has(section, key)) return fallback;
  try {
    return parse_bool(require(section, key), context(section, key));
  } catch (const ParseError& e) {
    throw ConfigError(e.what());
  }
}

std::vector<double> KeyValueDocument::get_doubles(const std::string& section, const std::string& key) const {
  std::vector<double> out;
  const auto v = get(section, key);
  if (!v) return out;
  try {
    for (auto tok : split_list(*v, false)) out.push_back(parse_double(tok, context(section, key)));
  } catch (const ParseError& e) {
    throw ConfigError(e.what());
  }
  return out;
}

std::vector<long long> KeyValueDocument::get_integers(const std::string& section, const std::string& key) const {
  std::vector<long long> out;
  const auto v = get(section, key);
  if (!v) return out;
  try {
    for (auto tok : split_list(*v, false)) out.push_back(parse_integer(tok, context(section, key)));
  } catch (const ParseError& e) {
    throw ConfigError(e.what());
  }
  return out;
}

void KeyValueDocument::check_known(const std::map<std::string, std::set<std::string>>& allowed) const {
  for (const auto& [section, entries] : sections_) {
    const auto a = allowed.find(section);
    if (a == allowed.end()) {
      const auto line = section_lines_.count(section) ? section_lines_.at(section) : 0;
      throw ConfigError(line_context(source_, line) + ": unknown section [" + section + "]");
    }
    for (const auto& [key, entry] : entries) {
      if (!a->second.count(key)) {
        throw ConfigError(line_context(source_, entry.line) + ": unknown key '" + key + "' in section [" +
                          section + "]");
      }
    }
  }
}

// ---------------------------------------------------------------------------

std::string join_doubles(const std::vector<double>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ", ";
    out += format_double(xs[i]);
  }
  return out;
}

void write_fit_report(std::ostream& out, const FitResult& fit) {
  out << "# vndhmm fit report\n";
  out << "[fit]\n";
  out << "model = " << to_string(fit.model_kind) << '\n';
  out << "ell = " << fit.ell << '\n';
  out << "samples = " << fit.num_samples << '\n';
  out << "log_likelihood = " << format_double(fit.log_likelihood) << '\n';
  if (fit.num_samples > 0) {
    out << "bic = " << format_double(bic_score(fit.log_likelihood, fit_param_count(fit), fit.num_samples)) << '\n';
  }
  out << "parameters = " << fit_param_count(fit) << '\n';
  out << "iterations = " << fit.iterations << '\n';
  out << "converged = " << (fit.converged ? "true" : "false") << '\n';
  out << "degenerate_emission = " << (fit.degenerate_emission ? "true" : "false") << '\n';
  out << "initial = " << join_doubles(fit.initial) << '\n';
  if (!fit.restart_log_likelihoods.empty()) {
    out << "restart_log_likelihoods = " << join_doubles(fit.restart_log_likelihoods) << '\n';
  }

  out << "\n[hidden]\n";
  if (const auto* v = std::get_if<VndParams>(&fit.theta_h)) {
    out << "lambda = " << join_doubles(v->lambdas) << '\n';
    out << "eta = " << join_doubles(v->etas) << '\n';
  } else if (const auto* u = std::get_if<UcParams>(&fit.theta_h)) {
    out << "lambda = " << format_double(u->lambda) << '\n';
    out << "eta = " << format_double(u->eta) << '\n';
  } else {
    const auto& c = std::get<CkParams>(fit.theta_h);
    out << "lambda = " << format_double(c.lambda) << '\n';
    out << "eta = " << format_double(c.eta) << '\n';
    out << "kappa = " << format_double(c.kappa) << '\n';
  }

  out << "\n[emission]\n";
  out << "mu = " << format_double(fit.theta_e.mu) << '\n';
  out << "nu = " << format_double(fit.theta_e.nu) << '\n';
  out << "sigma = " << join_doubles(fit.theta_e.sigmas) << '\n';

  if (const auto* v = std::get_if<VndParams>(&fit.theta_h); v && v->ell() >= 2) {
    const auto g = gating_ratios(*v);
    out << "\n[gating]\n";
    out << "ratio_lambda = " << format_double(g.ratio_lambda) << '\n';
    out << "ratio_eta = " << format_double(g.ratio_eta) << '\n';
    out << "label = " << to_string(g.label) << '\n';
    if (g.division_by_zero) out << "division_by_zero = true\n";
  }
}

FitResult read_fit_report(const KeyValueDocument& doc) {
  doc.check_known({
      {"fit", {"model", "ell", "samples", "log_likelihood", "bic", "parameters", "iterations", "converged",
               "degenerate_emission", "initial", "restart_log_likelihoods"}},
      {"hidden", {"lambda", "eta", "kappa"}},
      {"emission", {"mu", "nu", "sigma"}},
      {"gating", {"ratio_lambda", "ratio_eta", "label", "division_by_zero"}},
  });
  FitResult fit;
  fit.model_kind = parse_model_kind(doc.require("fit", "model"));
  fit.ell = static_cast<int>(doc.require_integer("fit", "ell"));
  if (fit.ell < 1) throw ConfigError(doc.source() + ": ell must be at least 1");
  fit.num_samples = static_cast<std::size_t>(doc.get_integer("fit", "samples", 0));
  fit.log_likelihood = doc.get_double("fit", "log_likelihood", 0.0);
  fit.iterations = static_cast<int>(doc.get_integer("fit", "iterations", 0));
  fit.converged = doc.get_bool("fit", "converged", false);
  fit.degenerate_emission = doc.get_bool("fit", "degenerate_emission", false);
  fit.restart_log_likelihoods = doc.get_doubles("fit", "restart_log_likelihoods");

  const auto lambdas = doc.get_doubles("hidden", "lambda");
  const auto etas = doc.get_doubles("hidden", "eta");
  const auto n = static_cast<std::size_t>(fit.ell);
  auto expect = [&](const std::vector<double>& xs, std::size_t count, const char* key) {
    if (xs.size() != count) {
      throw ConfigError(doc.source() + ": [hidden] " + key + " needs " + std::to_string(count) + " value(s)");
    }
  };
  switch (fit.model_kind) {
    case ModelKind::vnd:
      expect(lambdas, n, "lambda");
      expect(etas, n, "eta");
      fit.theta_h = VndParams{lambdas, etas};
      break;
    case ModelKind::uc:
      expect(lambdas, 1, "lambda");
      expect(etas, 1, "eta");
      fit.theta_h = UcParams{lambdas[0], etas[0]};
      break;
    case ModelKind::ck:
      expect(lambdas, 1, "lambda");
      expect(etas, 1, "eta");
      fit.theta_h = CkParams{lambdas[0], etas[0], doc.require_double("hidden", "kappa")};
      break;
  }

  fit.theta_e.mu = doc.require_double("emission", "mu");
  fit.theta_e.nu = doc.require_double("emission", "nu");
  fit.theta_e.sigmas = doc.get_doubles("emission", "sigma");
  if (fit.theta_e.sigmas.size() == 1) fit.theta_e.sigmas.resize(n + 1, fit.theta_e.sigmas[0]);
  if (fit.theta_e.sigmas.size() != n + 1) {
    throw ConfigError(doc.source() + ": [emission] sigma needs 1 or ell+1 values");
  }
  try {
    fit.theta_e.validate();
    const auto q = fit.hidden();
    fit.initial = doc.get_doubles("fit", "initial");
    if (fit.initial.empty()) fit.initial = stationary_distribution(q).distribution;
    fit.model().validate();
  } catch (const DomainError& e) {
    throw ConfigError(doc.source() + ": " + e.what());
  }
  return fit;
}

FitResult read_fit_report(const std::filesystem::path& path) {
  return read_fit_report(KeyValueDocument::parse_file(path));
}

}  // namespace vnd

#include "cli_config.hpp"

#include <map>
#include <set>

#include "vnd/error.hpp"

namespace vndcli {

using vnd::ConfigError;

namespace {

const std::map<std::string, std::set<std::string>> kSchema = {
    {"model", {"kind", "ell", "lambda", "eta", "kappa"}},
    {"emission", {"mu", "nu", "sigma"}},
    {"simulation", {"samples", "seed", "sample_interval"}},
    {"fit",
     {"model", "ell", "max_iterations", "tolerance", "restarts", "seed", "assume_half_constraint",
      "variance_floor", "threads", "decimate"}},
    {"scan", {"ells"}},
    {"robustness",
     {"true_ell", "fit_ell", "samples", "repetitions", "seed", "threads", "leave_closed_0", "leave_closed_1",
      "leave_open_1", "leave_open_2", "eta_rest", "mu", "nu", "sigma"}},
};

std::string where(const vnd::KeyValueDocument& doc, const std::string& section, const std::string& key) {
  return doc.source() + ": [" + section + "] " + key;
}

long long positive(const vnd::KeyValueDocument& doc, const std::string& section, const std::string& key,
                   long long value) {
  if (value < 1) throw ConfigError(where(doc, section, key) + " must be at least 1, got " + std::to_string(value));
  return value;
}

long long nonnegative(const vnd::KeyValueDocument& doc, const std::string& section, const std::string& key,
                      long long value) {
  if (value < 0) throw ConfigError(where(doc, section, key) + " must be nonnegative");
  return value;
}

std::vector<double> exactly(const vnd::KeyValueDocument& doc, const std::string& section, const std::string& key,
                            std::size_t count) {
  if (!doc.has(section, key)) throw ConfigError(where(doc, section, key) + " is missing");
  auto xs = doc.get_doubles(section, key);
  if (xs.size() != count) {
    throw ConfigError(where(doc, section, key) + " needs " + std::to_string(count) + " value(s), got " +
                      std::to_string(xs.size()));
  }
  for (double x : xs) {
    if (!(x >= 0.0 && x <= 1.0)) throw ConfigError(where(doc, section, key) + " values must lie in [0, 1]");
  }
  return xs;
}

vnd::GaussianEmission read_emission(const vnd::KeyValueDocument& doc, const std::string& section, int ell,
                                    double mu, double nu, double sigma) {
  vnd::GaussianEmission e = vnd::GaussianEmission::uniform(ell, mu, nu, sigma);
  e.mu = doc.get_double(section, "mu", mu);
  e.nu = doc.get_double(section, "nu", nu);
  if (doc.has(section, "sigma")) {
    auto s = doc.get_doubles(section, "sigma");
    if (s.size() == 1) s.assign(static_cast<std::size_t>(ell) + 1, s[0]);
    if (s.size() != static_cast<std::size_t>(ell) + 1) {
      throw ConfigError(where(doc, section, "sigma") + " needs 1 or " + std::to_string(ell + 1) + " values");
    }
    e.sigmas = s;
  }
  try {
    e.validate();
  } catch (const vnd::DomainError& err) {
    throw ConfigError(doc.source() + ": [" + section + "] " + err.what());
  }
  return e;
}

}  // namespace

Config Config::load(const std::string& path) {
  Config c;
  c.doc_ = vnd::KeyValueDocument::parse_file(path);
  c.doc_->check_known(kSchema);
  return c;
}

ModelSection Config::model() const {
  if (!doc_ || !doc_->has_section("model")) throw ConfigError("configuration has no [model] section");
  const auto& d = *doc_;
  ModelSection m;
  m.kind = vnd::parse_model_kind(d.get("model", "kind").value_or("vnd"));
  m.ell = static_cast<int>(positive(d, "model", "ell", d.require_integer("model", "ell")));
  switch (m.kind) {
    case vnd::ModelKind::vnd: {
      const auto n = static_cast<std::size_t>(m.ell);
      m.theta = vnd::VndParams{exactly(d, "model", "lambda", n), exactly(d, "model", "eta", n)};
      break;
    }
    case vnd::ModelKind::uc:
      m.theta = vnd::UcParams{exactly(d, "model", "lambda", 1)[0], exactly(d, "model", "eta", 1)[0]};
      break;
    case vnd::ModelKind::ck: {
      const double kappa = d.require_double("model", "kappa");
      if (!(kappa >= 0.0 && kappa <= 1.0)) throw ConfigError(where(d, "model", "kappa") + " must lie in [0, 1]");
      m.theta = vnd::CkParams{exactly(d, "model", "lambda", 1)[0], exactly(d, "model", "eta", 1)[0], kappa};
      break;
    }
  }
  return m;
}

vnd::GaussianEmission Config::emission(int ell) const {
  if (!doc_ || !doc_->has_section("emission")) throw ConfigError("configuration has no [emission] section");
  if (!doc_->has("emission", "sigma")) throw ConfigError(where(*doc_, "emission", "sigma") + " is missing");
  return read_emission(*doc_, "emission", ell, 0.0, 1.0, 1.0);
}

SimulationSection Config::simulation() const {
  if (!doc_ || !doc_->has_section("simulation")) throw ConfigError("configuration has no [simulation] section");
  const auto& d = *doc_;
  SimulationSection s;
  s.samples = static_cast<std::size_t>(positive(d, "simulation", "samples", d.require_integer("simulation", "samples")));
  s.seed = static_cast<std::uint64_t>(nonnegative(d, "simulation", "seed", d.get_integer("simulation", "seed", 0)));
  if (d.has("simulation", "sample_interval")) {
    s.sample_interval = d.require_double("simulation", "sample_interval");
    if (!(*s.sample_interval > 0.0)) throw ConfigError(where(d, "simulation", "sample_interval") + " must be positive");
  }
  return s;
}

FitSection Config::fit() const {
  FitSection f;
  if (!doc_) return f;
  const auto& d = *doc_;
  auto& c = f.config;
  if (auto m = d.get("fit", "model")) c.model_kind = vnd::parse_model_kind(*m);
  c.ell = static_cast<int>(positive(d, "fit", "ell", d.get_integer("fit", "ell", c.ell)));
  c.max_iterations = static_cast<int>(positive(d, "fit", "max_iterations", d.get_integer("fit", "max_iterations", c.max_iterations)));
  c.loglik_rel_tol = d.get_double("fit", "tolerance", c.loglik_rel_tol);
  c.restarts = static_cast<int>(positive(d, "fit", "restarts", d.get_integer("fit", "restarts", c.restarts)));
  c.seed = static_cast<std::uint64_t>(nonnegative(d, "fit", "seed", d.get_integer("fit", "seed", 0)));
  c.enforce_half_constraint = d.get_bool("fit", "assume_half_constraint", c.enforce_half_constraint);
  c.variance_floor_factor = d.get_double("fit", "variance_floor", c.variance_floor_factor);
  c.threads = static_cast<std::size_t>(nonnegative(d, "fit", "threads", d.get_integer("fit", "threads", 0)));
  f.decimate = static_cast<std::size_t>(positive(d, "fit", "decimate", d.get_integer("fit", "decimate", 1)));
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(d.source() + ": [fit] " + e.what());
  }
  return f;
}

std::vector<int> Config::scan_ells() const {
  std::vector<int> out;
  if (!doc_) return out;
  for (long long v : doc_->get_integers("scan", "ells")) {
    out.push_back(static_cast<int>(positive(*doc_, "scan", "ells", v)));
  }
  return out;
}

RobustnessSection Config::robustness() const {
  RobustnessSection r;
  if (!doc_) return r;
  const auto& d = *doc_;
  auto& s = r.scenario;
  auto& o = r.options;
  const std::string sec = "robustness";
  s.true_ell = static_cast<int>(positive(d, sec, "true_ell", d.get_integer(sec, "true_ell", s.true_ell)));
  o.fit_ell = static_cast<int>(positive(d, sec, "fit_ell", d.get_integer(sec, "fit_ell", o.fit_ell)));
  if (o.fit_ell > s.true_ell) throw ConfigError(where(d, sec, "fit_ell") + " must not exceed true_ell");
  if (s.true_ell < 3) throw ConfigError(where(d, sec, "true_ell") + " must be at least 3");
  o.num_samples = static_cast<std::size_t>(positive(d, sec, "samples", d.get_integer(sec, "samples", static_cast<long long>(o.num_samples))));
  o.repetitions = static_cast<int>(positive(d, sec, "repetitions", d.get_integer(sec, "repetitions", o.repetitions)));
  o.seed = static_cast<std::uint64_t>(nonnegative(d, sec, "seed", d.get_integer(sec, "seed", 0)));
  o.threads = static_cast<std::size_t>(nonnegative(d, sec, "threads", d.get_integer(sec, "threads", 0)));
  for (auto [key, field] : {std::pair{"leave_closed_0", &s.leave_closed_0}, {"leave_closed_1", &s.leave_closed_1},
                            {"leave_open_1", &s.leave_open_1}, {"leave_open_2", &s.leave_open_2}, {"eta_rest", &s.eta_rest}}) {
    *field = d.get_double(sec, key, *field);
    if (!(*field >= 0.0 && *field <= 1.0)) throw ConfigError(where(d, sec, key) + " must lie in [0, 1]");
  }
  s.emission = read_emission(d, sec, s.true_ell, 0.0, 1.0, 0.2);
  return r;
}

}  // namespace vndcli

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cli_config.hpp"
#include "vnd/error.hpp"
#include "vnd/estimation.hpp"
#include "vnd/experiments.hpp"
#include "vnd/hmm.hpp"
#include "vnd/io.hpp"
#include "vnd/sum_chain.hpp"

namespace {

using namespace vnd;
using vndcli::Config;

enum ExitCode { kOk = 0, kUsage = 2, kConfig = 3, kParse = 4, kNumeric = 5, kIo = 6 };

int exit_code(const std::string& category) {
  if (category == "config") return kConfig;
  if (category == "parse") return kParse;
  if (category == "io") return kIo;
  return kNumeric;
}

void warn(const std::string& category, const std::string& msg) {
  std::cerr << "warning[" << category << "]: " << msg << '\n';
}

// "-" or empty means stdout.
class Output {
 public:
  explicit Output(const std::string& path) : path_(path) {
    if (!to_stdout()) {
      file_.open(path, std::ios::binary);
      if (!file_) throw Error("io", "cannot write " + path);
    }
  }
  std::ostream& stream() { return to_stdout() ? std::cout : file_; }
  void close() {
    stream().flush();
    if (!stream()) throw Error("io", "write failed for " + (to_stdout() ? std::string("stdout") : path_));
  }

 private:
  bool to_stdout() const { return path_.empty() || path_ == "-"; }
  std::string path_;
  std::ofstream file_;
};

void write_to(const std::string& path, const std::function<void(std::ostream&)>& body) {
  Output out(path);
  body(out.stream());
  out.close();
}

std::string csv_field(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  if (s.find_first_of(",\"") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + '"';
}

// Flags shared by the commands that fit models. Values left unset fall back
// to the configuration file and then to library defaults.
struct FitFlags {
  std::string config;
  std::optional<std::string> model;
  std::optional<int> ell;
  std::optional<int> restarts;
  std::optional<std::uint64_t> seed;
  std::optional<bool> half;
  std::optional<int> max_iterations;
  std::optional<double> tolerance;
  std::optional<std::size_t> threads;
  std::optional<std::size_t> decimate;

  void add_to(CLI::App& app, bool with_model) {
    app.add_option("--config", config, "Configuration file");
    if (with_model) {
      app.add_option("--model", model, "Model kind")
          ->check(CLI::IsMember({"vnd", "uc", "ck"}, CLI::ignore_case));
      app.add_option("--ell", ell, "Number of channels")->check(CLI::PositiveNumber);
    }
    app.add_option("--restarts", restarts, "EM restarts")->check(CLI::PositiveNumber);
    app.add_option("--seed", seed, "Random seed");
    app.add_flag("--assume-half-constraint,!--no-assume-half-constraint", half,
                 "Resolve the even-ell middle level on the lambda >= 1 - eta branch (default on)");
    app.add_option("--max-iterations", max_iterations, "EM iteration cap")->check(CLI::PositiveNumber);
    app.add_option("--tolerance", tolerance, "Relative log-likelihood tolerance")->check(CLI::PositiveNumber);
    app.add_option("--threads", threads, "Worker threads (0 = all cores)");
    app.add_option("--decimate", decimate, "Keep every n-th sample")->check(CLI::PositiveNumber);
  }

  Config load_config() const { return config.empty() ? Config{} : Config::load(config); }

  vndcli::FitSection resolve(const Config& cfg) const {
    auto f = cfg.fit();
    auto& c = f.config;
    if (model) c.model_kind = parse_model_kind(*model);
    if (ell) c.ell = *ell;
    if (restarts) c.restarts = *restarts;
    if (seed) c.seed = *seed;
    if (half) c.enforce_half_constraint = *half;
    if (max_iterations) c.max_iterations = *max_iterations;
    if (tolerance) c.loglik_rel_tol = *tolerance;
    if (threads) c.threads = *threads;
    if (decimate) f.decimate = *decimate;
    c.validate();
    return f;
  }
};

ObservationSeries load_data(const std::string& path, std::size_t decimate) {
  auto obs = read_observations(std::filesystem::path(path));
  if (decimate > 1) {
    std::vector<double> kept;
    kept.reserve(obs.size() / decimate + 1);
    for (std::size_t k = 0; k < obs.size(); k += decimate) kept.push_back(obs.values[k]);
    obs.values = std::move(kept);
    if (obs.sample_interval) *obs.sample_interval *= static_cast<double>(decimate);
  }
  return obs;
}

FitResult run_fit(const ObservationSeries& obs, const FitConfig& config) {
  auto fit = baum_welch(obs, config);
  if (!fit.converged) {
    warn("did-not-converge", to_string(fit.model_kind) + " fit stopped after " + std::to_string(fit.iterations) +
                                 " iterations without meeting the tolerance");
  }
  if (fit.degenerate_emission) warn("degenerate-emission", "a level is empty or at the variance floor");
  return fit;
}

// --- CSV writers -------------------------------------------------------------

void write_dwell_csv(std::ostream& out, const std::vector<DwellHistogram>& hs) {
  out << "state,length,count,censored_count\n";
  for (const auto& h : hs) {
    std::set<std::size_t> lengths;
    for (const auto& [t, c] : h.counts) lengths.insert(t);
    for (const auto& [t, c] : h.censored_counts) lengths.insert(t);
    for (std::size_t t : lengths) {
      const auto a = h.counts.find(t);
      const auto b = h.censored_counts.find(t);
      out << h.state << ',' << t << ',' << (a == h.counts.end() ? 0 : a->second) << ','
          << (b == h.censored_counts.end() ? 0 : b->second) << '\n';
    }
  }
}

void write_prediction_csv(std::ostream& out, const SumTransitionMatrix& q, const std::vector<DwellHistogram>& hs,
                          std::size_t max_length) {
  out << "state,length,probability\n";
  for (int s = 0; s <= q.ell; ++s) {
    std::size_t longest = max_length;
    if (longest == 0) {
      longest = 1;
      if (static_cast<std::size_t>(s) < hs.size()) {
        const auto& h = hs[static_cast<std::size_t>(s)];
        if (!h.counts.empty()) longest = std::max(longest, h.counts.rbegin()->first);
        if (!h.censored_counts.empty()) longest = std::max(longest, h.censored_counts.rbegin()->first);
      }
    }
    for (std::size_t t = 1; t <= longest; ++t) {
      out << s << ',' << t << ',' << format_double(dwell_prediction(q, s, t)) << '\n';
    }
  }
}

void write_bic_csv(std::ostream& out, const BicTable& table) {
  out << "comparison,log_likelihood_a,log_likelihood_b,params_a,params_b,difference\n";
  auto entry = [&](const std::string& label) {
    return *std::find_if(table.entries.begin(), table.entries.end(),
                         [&](const BicEntry& e) { return e.label == label; });
  };
  for (const auto& c : table.comparisons) {
    const auto a = entry(c.a);
    const auto b = entry(c.b);
    out << c.a << '-' << c.b << ',' << format_double(a.log_likelihood) << ',' << format_double(b.log_likelihood)
        << ',' << a.num_params << ',' << b.num_params << ',' << format_double(c.difference) << '\n';
  }
}

BicTable fit_all_kinds(const ObservationSeries& obs, FitConfig config, const FitResult* have) {
  std::vector<FitResult> fits;
  for (ModelKind k : {ModelKind::uc, ModelKind::vnd, ModelKind::ck}) {
    if (have && have->model_kind == k) {
      fits.push_back(*have);
      continue;
    }
    config.model_kind = k;
    fits.push_back(run_fit(obs, config));
  }
  return bic_compare(fits, obs.size());
}

void write_recovery(std::ostream& out, const SumTransitionMatrix& q, const RecoveryResult& r) {
  out << "# vndhmm recovery\n[recovery]\n";
  out << "ell = " << q.ell << '\n';
  out << "residual = " << format_double(r.residual) << '\n';
  std::string flags;
  for (std::size_t i = 0; i < r.unidentified.size(); ++i) {
    if (i) flags += ", ";
    flags += r.unidentified[i] ? "true" : "false";
  }
  out << "unidentified = " << flags << '\n';
  out << "branch = " << (r.rejected_branch ? "constrained" : "unique") << '\n';
  out << "\n[params]\nlambda = " << join_doubles(r.params.lambdas) << "\neta = " << join_doubles(r.params.etas)
      << '\n';
  if (r.rejected_branch) {
    out << "\n[rejected]\nlambda = " << join_doubles(r.rejected_branch->lambdas)
        << "\neta = " << join_doubles(r.rejected_branch->etas) << '\n';
  }
}

// --- commands ---------------------------------------------------------------

struct SimulateCmd {
  std::string config, output, truth;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> samples;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("simulate", "Simulate observations from a configured model");
    c->add_option("--config", config, "Configuration file")->required();
    c->add_option("--output", output, "Observation CSV (default stdout)");
    c->add_option("--truth", truth, "Hidden-path CSV (default <output>.truth.csv)");
    c->add_option("--seed", seed, "Random seed");
    c->add_option("--samples", samples, "Number of samples")->check(CLI::PositiveNumber);
    c->callback([this] { run(); });
  }

  void run() {
    const auto cfg = Config::load(config);
    const auto m = cfg.model();
    auto sim_cfg = cfg.simulation();
    if (seed) sim_cfg.seed = *seed;
    if (samples) sim_cfg.samples = *samples;
    const auto q = hidden_matrix(m.theta, m.ell);
    const auto model = HmmModel::with_stationary_start(q, cfg.emission(m.ell));
    auto sim = simulate(model, sim_cfg.samples, sim_cfg.seed);
    sim.observations.sample_interval = sim_cfg.sample_interval;
    write_to(output, [&](std::ostream& o) { write_observations(o, sim.observations); });
    std::string truth_path = truth;
    if (truth_path.empty() && !output.empty() && output != "-") truth_path = output + ".truth.csv";
    if (!truth_path.empty()) write_to(truth_path, [&](std::ostream& o) { write_path(o, sim.path); });
  }
};

struct FitCmd {
  FitFlags flags;
  std::string data, output, viterbi_path, dwell_path, prediction_path, compare_path;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("fit", "Fit a hidden Markov model by Baum-Welch");
    c->add_option("data", data, "Observation CSV")->required();
    c->add_option("--output", output, "Fit report (default stdout)");
    c->add_option("--viterbi", viterbi_path, "Write the Viterbi path CSV");
    c->add_option("--dwell", dwell_path, "Write the dwell-time histogram CSV of the Viterbi path");
    c->add_option("--dwell-prediction", prediction_path, "Write geometric dwell-time predictions CSV");
    c->add_option("--compare", compare_path, "Fit vnd, uc and ck and write the BIC comparison CSV");
    flags.add_to(*c, true);
    c->callback([this] { run(); });
  }

  void run() {
    const auto cfg = flags.load_config();
    const auto f = flags.resolve(cfg);
    const auto obs = load_data(data, f.decimate);
    const auto fit = run_fit(obs, f.config);
    write_to(output, [&](std::ostream& o) { write_fit_report(o, fit); });

    if (!viterbi_path.empty() || !dwell_path.empty() || !prediction_path.empty()) {
      const auto path = viterbi(fit.model(), obs);
      if (!viterbi_path.empty()) write_to(viterbi_path, [&](std::ostream& o) { write_path(o, path); });
      const auto hs = dwell_times(path, fit.ell);
      if (!dwell_path.empty()) write_to(dwell_path, [&](std::ostream& o) { write_dwell_csv(o, hs); });
      if (!prediction_path.empty()) {
        write_to(prediction_path, [&](std::ostream& o) { write_prediction_csv(o, fit.hidden(), hs, 0); });
      }
    }
    if (!compare_path.empty()) {
      const auto table = fit_all_kinds(obs, f.config, &fit);
      write_to(compare_path, [&](std::ostream& o) { write_bic_csv(o, table); });
    }
  }
};

struct ViterbiCmd {
  FitFlags flags;
  std::string data, output, report;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("viterbi", "Decode the most likely hidden path");
    c->add_option("data", data, "Observation CSV")->required();
    c->add_option("--report", report, "Use the model in this fit report instead of fitting")
        ;
    c->add_option("--output", output, "Path CSV (default stdout)");
    flags.add_to(*c, true);
    c->callback([this] { run(); });
  }

  void run() {
    const auto cfg = flags.load_config();
    const auto f = flags.resolve(cfg);
    const auto obs = load_data(data, f.decimate);
    const auto model = report.empty() ? run_fit(obs, f.config).model() : read_fit_report(report).model();
    const auto path = viterbi(model, obs);
    write_to(output, [&](std::ostream& o) { write_path(o, path); });
  }
};

struct DwellCmd {
  std::string path_file, output, report, prediction;
  std::optional<int> ell;
  std::size_t max_length = 0;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("dwell", "Dwell-time histograms of a hidden path");
    c->add_option("path", path_file, "Hidden-path CSV")->required();
    c->add_option("--ell", ell, "Number of channels (default: from the report or the path)")
        ->check(CLI::PositiveNumber);
    c->add_option("--output", output, "Histogram CSV (default stdout)");
    c->add_option("--report", report, "Fit report providing the prediction model");
    c->add_option("--prediction", prediction, "Write geometric predictions CSV (needs --report)");
    c->add_option("--max-length", max_length, "Longest predicted dwell (default: longest observed)");
    c->callback([this] { run(); });
  }

  void run() {
    const auto path = read_path(std::filesystem::path(path_file));
    std::optional<FitResult> fit;
    if (!report.empty()) fit = read_fit_report(report);
    int n = ell.value_or(fit ? fit->ell : *std::max_element(path.begin(), path.end()));
    if (fit && n != fit->ell) throw ConfigError("--ell " + std::to_string(n) + " does not match the report");
    const auto hs = dwell_times(path, n);
    write_to(output, [&](std::ostream& o) { write_dwell_csv(o, hs); });
    if (!prediction.empty()) {
      if (!fit) throw ConfigError("--prediction needs --report");
      write_to(prediction, [&](std::ostream& o) { write_prediction_csv(o, fit->hidden(), hs, max_length); });
    }
  }
};

struct RecoverCmd {
  std::string matrix, output;
  bool half = false;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("recover", "Recover VND parameters from a sum-chain transition matrix");
    c->add_option("matrix", matrix, "Matrix file, one row per line")->required();
    c->add_option("--output", output, "Recovery report (default stdout)");
    c->add_flag("--assume-half-constraint", half, "Pick the lambda >= 1 - eta branch for even ell");
    c->callback([this] { run(); });
  }

  void run() {
    auto m = read_matrix(std::filesystem::path(matrix));
    if (m.rows() != m.cols() || m.rows() < 2) {
      throw DomainError(matrix + ": expected a square matrix with at least 2 rows");
    }
    const auto q = SumTransitionMatrix::from_matrix(std::move(m));
    RecoveryOptions o;
    o.even_ell_constraint = half;
    try {
      const auto r = recover_vnd_params(q, o);
      write_to(output, [&](std::ostream& out) { write_recovery(out, q, r); });
    } catch (const AmbiguousEvenCase& e) {
      std::ostringstream msg;
      msg << e.what() << "; candidates:";
      for (const auto& c : e.candidates()) {
        msg << " (lambda = " << join_doubles(c.lambdas) << "; eta = " << join_doubles(c.etas) << ")";
      }
      msg << "; pass --assume-half-constraint to choose the lambda >= 1 - eta branch";
      warn(e.category(), msg.str());
      write_to(output, [&](std::ostream& out) {
        out << "# vndhmm recovery\n[recovery]\nell = " << q.ell << "\nbranch = ambiguous\nlevel = " << e.level()
            << '\n';
        for (std::size_t i = 0; i < e.candidates().size(); ++i) {
          out << "\n[candidate_" << i + 1 << "]\nlambda = " << join_doubles(e.candidates()[i].lambdas)
              << "\neta = " << join_doubles(e.candidates()[i].etas) << '\n';
        }
      });
    }
  }
};

struct CompareCmd {
  FitFlags flags;
  std::vector<std::string> inputs;
  bool reports = false;
  std::string output;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("compare", "BIC comparison of the vnd, uc and ck models");
    c->add_option("inputs", inputs, "Observation CSV, or fit reports with --reports")->required();
    c->add_flag("--reports", reports, "Inputs are fit reports of the same data");
    c->add_option("--output", output, "BIC CSV (default stdout)");
    flags.add_to(*c, true);
    c->callback([this] { run(); });
  }

  void run() {
    BicTable table;
    if (reports) {
      std::vector<FitResult> fits;
      for (const auto& p : inputs) fits.push_back(read_fit_report(p));
      const std::size_t n = fits.front().num_samples;
      for (const auto& f : fits) {
        if (f.num_samples != n || n == 0) throw ConfigError("fit reports must share a nonzero sample count");
      }
      table = bic_compare(fits, n);
    } else {
      if (inputs.size() != 1) throw ConfigError("compare takes one observation file unless --reports is given");
      const auto cfg = flags.load_config();
      const auto f = flags.resolve(cfg);
      const auto obs = load_data(inputs.front(), f.decimate);
      table = fit_all_kinds(obs, f.config, nullptr);
    }
    write_to(output, [&](std::ostream& o) { write_bic_csv(o, table); });
  }
};

struct ScanCmd {
  FitFlags flags;
  std::string data, output;
  std::vector<int> ells;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("scan", "Log-likelihood of VND fits over candidate channel counts");
    c->add_option("data", data, "Observation CSV")->required();
    c->add_option("--ells", ells, "Candidate channel counts")->delimiter(',')->check(CLI::PositiveNumber);
    c->add_option("--output", output, "Scan CSV (default stdout)");
    flags.add_to(*c, false);
    c->callback([this] { run(); });
  }

  void run() {
    const auto cfg = flags.load_config();
    auto f = flags.resolve(cfg);
    auto candidates = ells.empty() ? cfg.scan_ells() : ells;
    if (candidates.empty()) throw ConfigError("no candidate ell values: use --ells or [scan] ells");
    const auto obs = load_data(data, f.decimate);
    const auto scan = channel_count_scan(obs, candidates, f.config);
    write_to(output, [&](std::ostream& o) {
      o << "ell,log_likelihood,status\n";
      for (const auto& e : scan.entries) {
        o << e.ell << ',';
        if (e.fit) {
          o << format_double(e.fit->log_likelihood) << ',' << (e.fit->converged ? "ok" : "not-converged") << '\n';
        } else {
          o << ',' << csv_field(e.error) << '\n';
        }
      }
    });
    for (const auto& e : scan.entries) {
      if (!e.fit) warn("scan", "ell = " + std::to_string(e.ell) + ": " + e.error);
    }
  }
};

struct RobustnessCmd {
  FitFlags flags;
  std::string output;
  std::optional<int> repetitions;
  std::optional<std::size_t> samples;
  std::optional<int> fit_ell;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("robustness", "Gating ratios when fitting fewer channels than simulated");
    c->add_option("--output", output, "Ratio-sample CSV (default stdout)");
    c->add_option("--repetitions", repetitions, "Repetitions")->check(CLI::PositiveNumber);
    c->add_option("--samples", samples, "Samples per repetition")->check(CLI::PositiveNumber);
    c->add_option("--ell", fit_ell, "Fitted channel count")->check(CLI::PositiveNumber);
    flags.add_to(*c, false);
    c->callback([this] { run(); });
  }

  void run() {
    const auto cfg = flags.load_config();
    auto r = cfg.robustness();
    auto& o = r.options;
    o.fit = flags.resolve(cfg).config;
    if (flags.seed) o.seed = *flags.seed;
    if (flags.threads) o.threads = *flags.threads;
    if (repetitions) o.repetitions = *repetitions;
    if (samples) o.num_samples = *samples;
    if (fit_ell) o.fit_ell = *fit_ell;
    const auto results = robustness_experiment(r.scenario.params(), r.scenario.emission, o);
    write_to(output, [&](std::ostream& out) {
      out << "repetition,ratio_lambda,ratio_eta,label,status\n";
      for (const auto& s : results) {
        out << s.repetition << ',';
        if (s.ratios) {
          out << format_double(s.ratios->ratio_lambda) << ',' << format_double(s.ratios->ratio_eta) << ','
              << to_string(s.ratios->label) << ',' << (s.ratios->division_by_zero ? "division-by-zero" : "ok")
              << '\n';
        } else {
          out << ",,," << csv_field(s.error) << '\n';
        }
      }
    });
    for (const auto& s : results) {
      if (!s.ratios) warn("robustness", "repetition " + std::to_string(s.repetition) + ": " + s.error);
    }
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hidden Markov models for ion-channel recordings with coupled gating"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "vndhmm 0.1.0");

  SimulateCmd simulate_cmd;
  FitCmd fit_cmd;
  ViterbiCmd viterbi_cmd;
  DwellCmd dwell_cmd;
  RecoverCmd recover_cmd;
  CompareCmd compare_cmd;
  ScanCmd scan_cmd;
  RobustnessCmd robustness_cmd;
  simulate_cmd.add(app);
  fit_cmd.add(app);
  viterbi_cmd.add(app);
  dwell_cmd.add(app);
  recover_cmd.add(app);
  compare_cmd.add(app);
  scan_cmd.add(app);
  robustness_cmd.add(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error[usage]: " << e.what() << '\n';
    return kUsage;
  } catch (const Error& e) {
    std::cerr << "error[" << e.category() << "]: " << e.what() << '\n';
    return exit_code(e.category());
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << e.what() << '\n';
    return 1;
  }
  return kOk;
}

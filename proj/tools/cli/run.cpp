#include "cli/run.hpp"

#include <algorithm>
#include <cerrno>
#include <climits>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "perfect/cftp.hpp"
#include "perfect/couplers.hpp"
#include "perfect/doubly_intractable.hpp"
#include "perfect/errors.hpp"
#include "perfect/fill.hpp"
#include "perfect/finite_chain.hpp"
#include "perfect/models/decreasing_density.hpp"
#include "perfect/models/ising.hpp"
#include "perfect/models/ladder.hpp"
#include "perfect/models/mixture.hpp"
#include "perfect/models/nonmonotone3.hpp"
#include "perfect/readonce.hpp"
#include "perfect/stats.hpp"
#include "perfect/umcmc.hpp"

namespace perfect::cli {
namespace {

using json = nlohmann::ordered_json;

constexpr const char* kSeedEnv = "PERFECT_SEED";
constexpr std::uint64_t kDefaultSeed = 1;
constexpr std::uint64_t kIsingDataSeed = 19960701;

const std::vector<std::string> kKeys{
    "seed", "n",     "model", "sampler", "out", "summary", "cap",  "threads", "p",         "beta",      "side", "data",
    "a",    "b0",    "b1",    "c",       "g_sd", "L",      "k",    "h",       "init",      "cv",        "pilot", "K",
    "target", "T0",  "sd",    "thin",    "theta0", "beta_true", "data_seed", "atoms", "starts", "in", "from"};

const std::map<std::string, std::vector<std::string>> kSamplers{
    {"ladder", {"cftp-bruteforce", "cftp-monotone", "ro-cftp", "fill", "umcmc"}},
    {"nonmonotone3", {"cftp-bruteforce", "cftp-bounding", "ro-cftp", "umcmc"}},
    {"ising", {"cftp-monotone"}},
    {"mixture", {"cftp-monotone"}},
    {"gamma", {"multigamma"}},
    {"slice-exp", {"slice"}},
    {"normal-walk", {"common-proposal"}},
    {"ising-posterior", {"moller", "naive-mh"}},
};

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_real(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size() || errno == ERANGE || !std::isfinite(d))
    throw ConfigError("setting '" + key + "': not a finite number: '" + v + "'");
  return d;
}

long long parse_int(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  const long long x = std::strtoll(v.c_str(), &end, 10);
  if (v.empty() || end != v.c_str() + v.size() || errno == ERANGE)
    throw ConfigError("setting '" + key + "': not an integer: '" + v + "'");
  return x;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
  if (v.empty() || v[0] == '-' || end != v.c_str() + v.size() || errno == ERANGE)
    throw ConfigError("setting '" + key + "': not an unsigned integer: '" + v + "'");
  return x;
}

std::vector<double> parse_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(parse_real(key, trim(item)));
  if (out.empty()) throw ConfigError("setting '" + key + "': empty list");
  return out;
}

// Resolved settings of one run. Getters record the defaults they fall back
// on, so the embedded config always describes the run completely.
class Config {
 public:
  std::string command;
  std::map<std::string, std::string> kv;

  bool has(const std::string& k) const { return kv.count(k) > 0; }

  std::string str(const std::string& k, const std::string& def) { return kv.emplace(k, def).first->second; }
  std::string required(const std::string& k) const {
    if (!has(k)) throw ConfigError("missing required setting '" + k + "'");
    return kv.at(k);
  }
  double real(const std::string& k, double def) { return parse_real(k, kv.emplace(k, fmt17(def)).first->second); }
  long long integer(const std::string& k, long long def) {
    return parse_int(k, kv.emplace(k, std::to_string(def)).first->second);
  }
  long long positive(const std::string& k, long long def) {
    const auto v = integer(k, def);
    if (v < 1) throw ConfigError("setting '" + k + "' must be >= 1");
    return v;
  }
  std::uint64_t seed() const { return parse_u64("seed", kv.at("seed")); }

  json to_json() const {
    json j = json::object();
    for (const auto& [k, v] : kv)
      if (k != "out" && k != "summary" && k != "threads") j[k] = v;
    return j;
  }
};

std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::map<std::string, std::string> out;
  int lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (std::find(kKeys.begin(), kKeys.end(), key) == kKeys.end())
      throw ConfigError(path + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

// ---------------------------------------------------------------- tables

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  std::size_t col(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw ConfigError("sample file has no column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  }
  std::vector<double> column(const std::string& name) const {
    const auto c = col(name);
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(r[c]);
    return out;
  }
};

std::string to_csv(const Table& t) {
  std::string s;
  for (std::size_t i = 0; i < t.header.size(); ++i) s += (i ? "," : "") + t.header[i];
  s += '\n';
  for (const auto& r : t.rows) {
    for (std::size_t i = 0; i < r.size(); ++i) s += (i ? "," : "") + fmt17(r[i]);
    s += '\n';
  }
  return s;
}

Table read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read sample file '" + path + "'");
  Table t;
  std::string line;
  if (!std::getline(in, line) || trim(line).empty()) throw ConfigError("sample file '" + path + "' is empty");
  std::stringstream hs(line);
  for (std::string h; std::getline(hs, h, ',');) t.header.push_back(trim(h));
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    std::vector<double> row;
    std::stringstream rs(line);
    for (std::string cell; std::getline(rs, cell, ',');) row.push_back(parse_real(path, trim(cell)));
    if (row.size() != t.header.size()) throw ConfigError("sample file '" + path + "': ragged row");
    t.rows.push_back(std::move(row));
  }
  if (t.rows.empty()) throw ConfigError("sample file '" + path + "' has no rows");
  return t;
}

void emit(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
    return;
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ConfigError("cannot write '" + path + "'");
  f << text;
}

// Rows for replicates 0..n-1, computed on `threads` workers. The error
// reported is the one at the lowest failing replicate, whatever the timing.
template <typename F>
std::vector<std::vector<double>> fan_out(std::size_t n, unsigned threads, F f) {
  if (n > UINT32_MAX) throw ConfigError("at most 2^32 replicates per run");
  std::vector<std::vector<double>> rows(n);
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  std::vector<std::size_t> fail_at(threads, SIZE_MAX);
  std::vector<std::exception_ptr> fail(threads);
  auto work = [&](unsigned w) {
    for (std::size_t i = w; i < n; i += threads) {
      try {
        rows[i] = f(static_cast<std::uint32_t>(i));
      } catch (...) {
        fail_at[w] = i;
        fail[w] = std::current_exception();
        return;
      }
    }
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < threads; ++w) pool.emplace_back(work, w);
    for (auto& th : pool) th.join();
  }
  const auto first = std::min_element(fail_at.begin(), fail_at.end());
  if (*first != SIZE_MAX) std::rethrow_exception(fail[static_cast<std::size_t>(first - fail_at.begin())]);
  return rows;
}

// ---------------------------------------------------------------- models

void validate_names(Config& cfg) {
  const std::string model = cfg.required("model");
  const auto it = kSamplers.find(model);
  if (it == kSamplers.end()) throw ConfigError("unknown model '" + model + "'");
  const std::string sampler = cfg.required("sampler");
  if (std::find(it->second.begin(), it->second.end(), sampler) == it->second.end())
    throw ConfigError("sampler '" + sampler + "' is not available for model '" + model + "'");
}

BackoffSchedule schedule(Config& cfg) { return BackoffSchedule(cfg.positive("cap", kDefaultDepthCap)); }

models::LadderWalk make_ladder(Config& cfg) { return models::LadderWalk(cfg.real("p", 0.5)); }
models::NonMonotoneWalk make_nonmonotone(Config& cfg) { return models::NonMonotoneWalk(cfg.real("p", 0.5)); }
models::Ising2D make_ising(Config& cfg) {
  return models::Ising2D(static_cast<int>(cfg.positive("side", 4)), cfg.real("beta", 0.3));
}
GammaKernelChain make_gamma(Config& cfg) { return GammaKernelChain(cfg.real("a", 2.0), cfg.real("b0", 1.0), cfg.real("b1", 3.0)); }
SliceSampler make_slice(Config& cfg) { return SliceSampler(models::truncated_exponential(cfg.real("c", 3.0))); }

models::MixtureData make_mixture_data(Config& cfg) {
  if (!cfg.has("data")) return models::default_mixture_data();
  const std::string path = cfg.required("data");
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read mixture data '" + path + "'");
  models::MixtureData d = models::default_mixture_data();
  d.points.clear();
  for (std::string tok; in >> tok;) d.points.push_back(parse_real(path, tok));
  if (d.points.empty()) throw ConfigError("mixture data '" + path + "' is empty");
  return d;
}

template <typename M>
BlockSpec block_spec(const M& m, Config& cfg) {
  const auto pilot = static_cast<std::uint64_t>(cfg.positive("pilot", 10000));
  if (cfg.has("K")) {
    const auto K = cfg.positive("K", 1);
    return BlockSpec{K, estimate_block_coalescence(m, K, cfg.seed(), pilot), pilot};
  }
  return choose_block_size(m, cfg.seed(), cfg.real("target", 0.5), pilot);
}

template <typename State>
Distribution init_law(const FiniteChainSpec<State>& spec, Config& cfg) {
  return point_mass(spec, static_cast<State>(cfg.real("init", static_cast<double>(spec.labels.back()))));
}

double apply_h(const std::string& h, double x) {
  if (h == "identity") return x;
  if (h == "square") return x * x;
  throw ConfigError("unknown h '" + h + "' (identity, square)");
}

template <typename State>
umcmc::ControlVariatePlan cv_plan(const FiniteChainSpec<State>& spec, Config& cfg) {
  return umcmc::build_cv_plan(spec, init_law(spec, cfg), cfg.integer("k", 0), cfg.positive("L", 1), cfg.seed(),
                              static_cast<std::size_t>(cfg.positive("pilot", 10000)));
}

template <typename State>
Table umcmc_table(const FiniteChainSpec<State>& spec, Config& cfg) {
  const auto n = static_cast<std::size_t>(cfg.positive("n", 1000));
  const auto L = cfg.positive("L", 1);
  const auto k = cfg.integer("k", 0);
  const auto init = init_law(spec, cfg);
  const std::string h = cfg.str("h", "identity");
  apply_h(h, 0.0);
  const bool cv = cfg.integer("cv", 0) != 0;
  const auto cap = cfg.positive("cap", 1LL << 24);
  const auto seed = cfg.seed();
  umcmc::ControlVariatePlan plan;
  if (cv) plan = cv_plan(spec, cfg);
  const umcmc::LagConfig lag{L, k, cv ? umcmc::cv_horizon(plan) : 0, cap};
  Table t{{"replicate", "value", "J"}, {}};
  if (cv) t.header.push_back("cv");
  const auto hf = [&](const State& s) { return apply_h(h, static_cast<double>(s)); };
  t.rows = fan_out(n, static_cast<unsigned>(cfg.positive("threads", 1)), [&](std::uint32_t r) {
    const auto pair = umcmc::run_lagged_pair(spec, init, lag, seed, r);
    const auto e = umcmc::h_estimate(pair, spec, hf);
    std::vector<double> row{static_cast<double>(r), e.value, static_cast<double>(e.J)};
    if (cv) row.push_back(umcmc::cv_estimate(pair, spec, hf, plan));
    return row;
  });
  return t;
}

template <typename M>
Table sample_finite(const M& m, Config& cfg, const std::string& sampler) {
  const auto n = static_cast<std::size_t>(cfg.positive("n", 1000));
  const auto seed = cfg.seed();
  const auto threads = static_cast<unsigned>(cfg.positive("threads", 1));
  const auto shape = m.noise_shape();
  if (sampler == "cftp-bruteforce" || sampler == "cftp-monotone" || sampler == "cftp-bounding") {
    const auto sched = schedule(cfg);
    Table t{{"replicate", "value", "depth"}, {}};
    t.rows = fan_out(n, threads, [&](std::uint32_t r) -> std::vector<double> {
      const KeyedNoise noise{seed, r, shape};
      CoalescenceCertificate<typename M::state_type> c;
      if (sampler == "cftp-bruteforce") {
        c = cftp_bruteforce(m, noise, sched);
      } else if (sampler == "cftp-monotone") {
        if constexpr (OrderedModel<M>) c = cftp_monotone(m, noise, sched);
      } else {
        if constexpr (BoundedModel<M>) c = cftp_bounding(m, noise, sched);
      }
      return {static_cast<double>(r), static_cast<double>(c.draw), static_cast<double>(c.depth)};
    });
    return t;
  }
  if (sampler == "ro-cftp") {
    const auto spec = block_spec(m, cfg);
    RoCftpStream<M> stream(m, spec, seed, 0, cfg.positive("cap", kDefaultBlocksPerSample));
    Table t{{"replicate", "value", "blocks"}, {}};
    for (std::size_t i = 0; i < n; ++i) {
      const auto d = stream.next();
      t.rows.push_back({static_cast<double>(i), static_cast<double>(d.value), static_cast<double>(d.blocks)});
    }
    return t;
  }
  if (sampler == "fill") {
    if constexpr (FillModel<M>) {
      const FillSampler<M> fs(m);
      const auto T0 = cfg.positive("T0", 1);
      const auto cap = cfg.positive("cap", FillSampler<M>::kFillDefaultCap);
      Table t{{"replicate", "value", "rejections", "T"}, {}};
      t.rows = fan_out(n, threads, [&](std::uint32_t r) -> std::vector<double> {
        const auto d = fs.draw(seed, r, T0, cap);
        return {static_cast<double>(r), static_cast<double>(d.value), static_cast<double>(d.rejections),
                static_cast<double>(d.T)};
      });
      return t;
    }
  }
  if (sampler == "umcmc") return umcmc_table(m.transition_spec(), cfg);
  throw ConfigError("sampler '" + sampler + "' is not available for this model");
}

Table sample_table(Config& cfg) {
  validate_names(cfg);
  const std::string model = cfg.kv.at("model"), sampler = cfg.kv.at("sampler");
  const auto n = static_cast<std::size_t>(cfg.positive("n", 1000));
  const auto seed = cfg.seed();
  const auto threads = static_cast<unsigned>(cfg.positive("threads", 1));
  if (model == "ladder") return sample_finite(make_ladder(cfg), cfg, sampler);
  if (model == "nonmonotone3") return sample_finite(make_nonmonotone(cfg), cfg, sampler);
  if (model == "ising") {
    const auto m = make_ising(cfg);
    const auto sched = schedule(cfg);
    Table t{{"replicate", "value", "pair_sum", "depth"}, {}};
    t.rows = fan_out(n, threads, [&](std::uint32_t r) -> std::vector<double> {
      const auto c = cftp_monotone(m, KeyedNoise{seed, r, m.noise_shape()}, sched);
      return {static_cast<double>(r), models::Ising2D::abs_magnetization(c.draw), static_cast<double>(m.pair_sum(c.draw)),
              static_cast<double>(c.depth)};
    });
    return t;
  }
  if (model == "mixture") {
    const models::MixtureLatentChain chain(make_mixture_data(cfg));
    const auto sched = schedule(cfg);
    Table t{{"replicate", "value", "l", "depth"}, {}};
    t.rows = fan_out(n, threads, [&](std::uint32_t r) -> std::vector<double> {
      const KeyedNoise noise{seed, r, chain.noise_shape()};
      const auto c = cftp_monotone(chain, noise, sched);
      return {static_cast<double>(r), chain.alpha_given_l(c.draw, noise(0)), static_cast<double>(c.draw),
              static_cast<double>(c.depth)};
    });
    return t;
  }
  if (model == "gamma") {
    const auto chain = make_gamma(cfg);
    const auto cap = cfg.positive("cap", std::int64_t{1} << 30);
    Table t{{"replicate", "value", "T"}, {}};
    t.rows = fan_out(n, threads, [&](std::uint32_t r) -> std::vector<double> {
      const auto d = multigamma_exact_draw(chain, seed, r, cap);
      return {static_cast<double>(r), d.value, static_cast<double>(d.T)};
    });
    return t;
  }
  if (model == "slice-exp") {
    const auto s = make_slice(cfg);
    const auto sched = schedule(cfg);
    Table t{{"replicate", "value", "depth"}, {}};
    t.rows = fan_out(n, threads, [&](std::uint32_t r) -> std::vector<double> {
      const auto c = slice_cftp(s, seed, r, sched);
      return {static_cast<double>(r), c.draw, static_cast<double>(c.depth)};
    });
    return t;
  }
  throw ConfigError("model '" + model + "' has no sampler for 'sample'");
}

// ---------------------------------------------------------------- moller

moller::IsingPosteriorTarget make_posterior(Config& cfg) {
  const int side = static_cast<int>(cfg.positive("side", 4));
  const auto data_seed = parse_u64("data_seed", cfg.str("data_seed", std::to_string(kIsingDataSeed)));
  const auto y = moller::simulate_ising_data(side, cfg.real("beta_true", 0.3), data_seed);
  return moller::IsingPosteriorTarget(side, y, cfg.real("sd", 0.05));
}

Table moller_table(Config& cfg) {
  cfg.str("model", "ising-posterior");
  cfg.str("sampler", "moller");
  validate_names(cfg);
  const auto target = make_posterior(cfg);
  const auto n = static_cast<std::size_t>(cfg.positive("n", 1000));
  const auto thin = static_cast<std::size_t>(cfg.positive("thin", 1));
  const double theta0 = cfg.real("theta0", 0.3);
  moller::ChainRun run;
  if (cfg.kv.at("sampler") == "moller") {
    run = moller::run_moller(target, moller::IsingPerfectSampler(target.side(), schedule(cfg)), theta0, n, cfg.seed(), 0,
                             thin);
  } else {
    run = moller::run_naive_mh(target, models::IsingDensityOfStates(target.side()), theta0, n, cfg.seed(), 0, thin);
  }
  Table t{{"replicate", "value", "accepts"}, {}};
  for (std::size_t i = 0; i < n; ++i)
    t.rows.push_back({static_cast<double>(i), run.thetas[i], static_cast<double>(run.accepts[i])});
  return t;
}

// ---------------------------------------------------------------- summaries

template <typename State>
void umcmc_extras(const FiniteChainSpec<State>& spec, Config& cfg, const Table& t, json& body) {
  const auto h = stats::mean_se(t.column("value"));
  const auto j = stats::mean_se(t.column("J"));
  body["mean_H"] = h.mean;
  body["se_H"] = h.se;
  body["mean_J"] = j.mean;
  body["se_J"] = j.se;
  const auto oracle = exact_stationary(spec);
  const std::string hname = cfg.str("h", "identity");
  body["exact_expectation"] = oracle.expectation([&](const State& s) { return apply_h(hname, static_cast<double>(s)); });
  body["exact_tv"] = exact_tv_at(oracle, init_law(spec, cfg), static_cast<long>(cfg.integer("k", 0)));
  if (cfg.integer("cv", 0) != 0) {
    const auto c = stats::mean_se(t.column("cv"));
    const auto plan = cv_plan(spec, cfg);
    body["mean_cv"] = c.mean;
    body["se_cv"] = c.se;
    body["eta_active"] = plan.active();
    body["S"] = plan.S;
  }
}

json summarize(Config& cfg, const Table& t) {
  json body;
  body["rows"] = t.rows.size();
  const auto v = stats::mean_se(t.column("value"));
  body["mean"] = v.mean;
  body["se"] = v.se;
  for (const auto& c : t.header)
    if (c != "replicate" && c != "value") body["mean_" + c] = stats::mean_se(t.column(c)).mean;

  const std::string model = cfg.required("model"), sampler = cfg.required("sampler");
  if (sampler == "ro-cftp") {
    const auto spec = model == "ladder" ? block_spec(make_ladder(cfg), cfg) : block_spec(make_nonmonotone(cfg), cfg);
    body["K"] = spec.K;
    body["p_hat"] = spec.p_hat;
    body["pilot_n"] = spec.pilot_n;
  } else if (sampler == "umcmc") {
    if (model == "ladder") umcmc_extras(make_ladder(cfg).transition_spec(), cfg, t, body);
    else umcmc_extras(make_nonmonotone(cfg).transition_spec(), cfg, t, body);
  } else if (sampler == "multigamma") {
    body["rho"] = make_gamma(cfg).minorizer().rho();
  } else if (sampler == "moller" || sampler == "naive-mh") {
    const auto target = make_posterior(cfg);
    double acc = 0.0;
    for (double a : t.column("accepts")) acc += a;
    body["acceptance_rate"] = acc / (static_cast<double>(t.rows.size()) * static_cast<double>(cfg.positive("thin", 1)));
    body["data_stat"] = target.data_stat();
    if (target.side() <= 4)
      body["posterior_mean"] = moller::GridPosterior(target, models::IsingDensityOfStates(target.side()), 10000).mean();
  }

  json s;
  s["command"] = cfg.command;
  s["model"] = model;
  s["sampler"] = sampler;
  s["seed"] = cfg.seed();
  for (auto& [k, val] : body.items()) s[k] = val;
  s["config"] = cfg.to_json();
  return s;
}

void write_run(Config& cfg, const Table& t, std::ostream& out) {
  const std::string path = cfg.has("out") ? cfg.kv.at("out") : "-";
  const auto summary = summarize(cfg, t);
  emit(path, to_csv(t), out);
  std::string spath = cfg.has("summary") ? cfg.kv.at("summary") : "";
  if (spath.empty() && path != "-") spath = path + ".json";
  if (!spath.empty()) emit(spath, summary.dump(2) + "\n", out);
}

// ---------------------------------------------------------------- trace

std::vector<NoiseAtom> parse_atoms(const std::string& v) {
  std::vector<NoiseAtom> atoms;
  for (double b : parse_list("atoms", v)) {
    if (b != 0.0 && b != 1.0) throw ConfigError("atoms must be 0/1 bits");
    atoms.push_back(bernoulli_atom({static_cast<int>(b)}));
  }
  return atoms;
}

template <typename M, typename N>
Table trace_paths(const M& m, const std::string& sampler, const N& noise, std::int64_t depth) {
  using State = typename M::state_type;
  std::vector<State> starts = m.states();
  if constexpr (OrderedModel<M>)
    if (sampler == "cftp-monotone") starts = {m.min_state(), m.max_state()};
  const auto rows = backward_paths(m, starts, noise, depth);
  const bool bounding = sampler == "cftp-bounding";
  Table t{{"time", "path_id", "state"}, {}};
  std::vector<BoundingSet<State>> sets;
  if (bounding) {
    if constexpr (BoundedModel<M>) sets = bounding_trajectory(m, noise, depth);
    t.header.insert(t.header.end(), {"in_set", "set_min", "set_max"});
  }
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t p = 0; p < starts.size(); ++p) {
      std::vector<double> row{static_cast<double>(static_cast<std::int64_t>(r) - depth), static_cast<double>(p),
                              static_cast<double>(rows[r][p])};
      if (bounding) {
        row.push_back(sets[r].contains(rows[r][p]) ? 1.0 : 0.0);
        row.push_back(static_cast<double>(sets[r].front()));
        row.push_back(static_cast<double>(sets[r].back()));
      }
      t.rows.push_back(std::move(row));
    }
  }
  return t;
}

template <typename M>
Table trace_finite(const M& m, Config& cfg, const std::string& sampler) {
  if (cfg.has("atoms")) {
    auto atoms = parse_atoms(cfg.kv.at("atoms"));
    const auto depth = static_cast<std::int64_t>(atoms.size());
    return trace_paths(m, sampler, ScriptedNoise::backward(std::move(atoms)), depth);
  }
  const KeyedNoise noise{cfg.seed(), 0, m.noise_shape()};
  const auto sched = schedule(cfg);
  std::int64_t depth = 0;
  if (sampler == "cftp-bruteforce") depth = cftp_bruteforce(m, noise, sched).depth;
  if constexpr (OrderedModel<M>)
    if (sampler == "cftp-monotone") depth = cftp_monotone(m, noise, sched).depth;
  if constexpr (BoundedModel<M>)
    if (sampler == "cftp-bounding") depth = cftp_bounding(m, noise, sched).depth;
  if (depth == 0) throw ConfigError("sampler '" + sampler + "' has no trace for this model");
  return trace_paths(m, sampler, noise, depth);
}

Table trace_table(Config& cfg) {
  validate_names(cfg);
  const std::string model = cfg.kv.at("model"), sampler = cfg.kv.at("sampler");
  if (model == "ladder") return trace_finite(make_ladder(cfg), cfg, sampler);
  if (model == "nonmonotone3") return trace_finite(make_nonmonotone(cfg), cfg, sampler);
  if (model == "normal-walk") {
    const CommonProposalWalk walk(cfg.real("g_sd", 2.0), true);
    auto xs = parse_list("starts", cfg.str("starts", "-3,3"));
    const auto steps = cfg.positive("n", 20);
    const auto seed = cfg.seed();
    Table t{{"time", "path_id", "state"}, {}};
    for (std::int64_t time = 0;; ++time) {
      for (std::size_t p = 0; p < xs.size(); ++p) t.rows.push_back({static_cast<double>(time), static_cast<double>(p), xs[p]});
      if (time == steps) break;
      const auto atom = noise_at(seed, time + 1, 0, walk.noise_shape());
      for (auto& x : xs) x = walk.step(x, atom);
    }
    return t;
  }
  throw ConfigError("model '" + model + "' has no trace");
}

// ---------------------------------------------------------------- gof / oracle

json gof_report(Config& cfg) {
  const auto t = read_csv(cfg.required("in"));
  const auto values = t.column("value");
  const std::string model = cfg.required("model");
  stats::GofReport r;
  auto finite = [&](const auto& spec) {
    const auto oracle = exact_stationary(spec);
    std::vector<double> counts(spec.size(), 0.0);
    for (double v : values) counts[spec.index_of(static_cast<typename std::decay_t<decltype(spec.labels)>::value_type>(v))] += 1;
    return stats::chi_square_gof(counts, oracle.pi());
  };
  if (model == "ladder") {
    r = finite(make_ladder(cfg).transition_spec());
  } else if (model == "nonmonotone3") {
    r = finite(make_nonmonotone(cfg).transition_spec());
  } else if (model == "ising") {
    const auto m = make_ising(cfg);
    if (m.sites() > 16) throw OracleUnavailable("ising: exact law of |m| needs 2^{L^2} <= 2^16");
    std::map<double, double> law;
    const double shift = std::abs(m.beta()) * 2.0 * m.side() * (m.side() - 1);
    double z = 0.0;
    for (std::uint32_t b = 0; b < (1u << m.sites()); ++b) {
      const auto s = models::Ising2D::decode(b, m.sites());
      const double w = std::exp(m.log_q(s) - shift);
      law[models::Ising2D::abs_magnetization(s)] += w;
      z += w;
    }
    std::vector<double> probs, counts;
    for (auto& [val, w] : law) {
      probs.push_back(w / z);
      counts.push_back(static_cast<double>(std::count(values.begin(), values.end(), val)));
    }
    double seen = 0.0;
    for (double c : counts) seen += c;
    if (seen != static_cast<double>(values.size())) throw ConfigError("sample holds values outside the |m| support");
    r = stats::chi_square_gof(counts, probs);
  } else if (model == "mixture") {
    const models::MixturePosteriorGrid grid(make_mixture_data(cfg), 10000);
    r = stats::ks_one_sample(values, [&](double a) { return grid.cdf(a); });
  } else if (model == "slice-exp") {
    const auto d = models::truncated_exponential(cfg.real("c", 3.0));
    const double norm = -std::expm1(-d.c);
    r = stats::ks_one_sample(values, [&](double x) {
      if (x <= 0.0) return 0.0;
      if (x >= d.c) return 1.0;
      return -std::expm1(-x) / norm;
    });
  } else if (kSamplers.count(model)) {
    throw OracleUnavailable("no exact oracle for model '" + model + "'");
  } else {
    throw ConfigError("unknown model '" + model + "'");
  }
  json j;
  j["test"] = r.test;
  j["statistic"] = r.statistic;
  j["p_value"] = r.p_value;
  j["n"] = r.n1;
  j["dof"] = r.dof;
  j["config"] = cfg.to_json();
  return j;
}

json oracle_report(Config& cfg) {
  const std::string model = cfg.required("model");
  json j;
  j["model"] = model;
  auto finite = [&](const auto& spec) {
    const auto oracle = exact_stationary(spec);
    std::vector<double> labels;
    for (const auto& s : spec.labels) labels.push_back(static_cast<double>(s));
    j["labels"] = labels;
    j["pi"] = oracle.pi();
    j["mean"] = oracle.expectation([](const auto& s) { return static_cast<double>(s); });
    if (cfg.has("k")) j["tv_at_k"] = exact_tv_at(oracle, init_law(spec, cfg), static_cast<long>(cfg.integer("k", 0)));
  };
  if (model == "ladder") {
    finite(make_ladder(cfg).transition_spec());
  } else if (model == "nonmonotone3") {
    finite(make_nonmonotone(cfg).transition_spec());
  } else if (model == "ising") {
    const auto m = make_ising(cfg);
    const auto mom = models::ising_exact_moments(m.side(), m.beta());
    j["log_partition"] = mom.log_partition;
    j["mean_abs_magnetization"] = mom.mean_abs_magnetization;
  } else if (model == "mixture") {
    const models::MixturePosteriorGrid grid(make_mixture_data(cfg), 10000);
    double mean = 0.0;
    for (int i = 0; i < 10000; ++i) mean += (1.0 - grid.cdf((i + 0.5) / 10000.0)) / 10000.0;
    j["posterior_mean"] = mean;
  } else if (model == "slice-exp") {
    const double c = models::truncated_exponential(cfg.real("c", 3.0)).c;
    j["normalizer"] = -std::expm1(-c);
    j["mean"] = (1.0 - (c + 1.0) * std::exp(-c)) / -std::expm1(-c);
  } else if (model == "gamma") {
    j["rho"] = make_gamma(cfg).minorizer().rho();
  } else if (model == "ising-posterior") {
    const auto target = make_posterior(cfg);
    const models::IsingDensityOfStates dos(target.side());
    j["data_stat"] = target.data_stat();
    j["posterior_mean"] = moller::GridPosterior(target, dos, 10000).mean();
  } else if (kSamplers.count(model)) {
    throw OracleUnavailable("no exact oracle for model '" + model + "'");
  } else {
    throw ConfigError("unknown model '" + model + "'");
  }
  j["config"] = cfg.to_json();
  return j;
}

// ---------------------------------------------------------------- dispatch

int fail(std::ostream& err, const char* kind, const std::string& message, int code) {
  json j;
  j["error"] = kind;
  j["message"] = message;
  j["exit_code"] = code;
  err << j.dump() << "\n";
  return code;
}

std::string flag_name(const std::string& key) {
  std::string f = key;
  std::replace(f.begin(), f.end(), '_', '-');
  return "--" + f;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Perfect sampling toolkit"};
  app.require_subcommand(1);
  const std::vector<std::pair<std::string, std::string>> commands{
      {"sample", "draw exact samples; CSV replicate,value[,extra...] plus a JSON summary"},
      {"trace", "per-step paths as long-format CSV time,path_id,state"},
      {"gof", "goodness of fit of a sample file against the model's exact law"},
      {"oracle", "exact quantities of a model"},
      {"umcmc", "lagged-coupling unbiased estimates, J counts and control variates"},
      {"moller", "auxiliary-variable M-H for the Ising coupling posterior"},
      {"summarize", "recompute the JSON summary of a sample file"}};
  std::map<std::string, std::string> values;
  std::string config_path;
  std::map<std::string, std::map<std::string, CLI::Option*>> opts;
  for (const auto& [name, desc] : commands) {
    auto* sub = app.add_subcommand(name, desc);
    sub->set_help_flag("--help", "print this help and exit");  // frees --h for the observable
    sub->add_option("--config", config_path, "settings file with key = value lines; flags win");
    for (const auto& key : kKeys) opts[name][key] = sub->add_option(flag_name(key), values[key]);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    return fail(err, "config_error", e.what(), 2);
  }

  try {
    Config cfg;
    cfg.command = app.get_subcommands().front()->get_name();
    if (!config_path.empty()) cfg.kv = read_config_file(config_path);
    for (const auto& [key, opt] : opts[cfg.command])
      if (opt->count() > 0) cfg.kv[key] = values[key];
    if (!cfg.has("seed")) {
      const char* env = std::getenv(kSeedEnv);
      cfg.kv["seed"] = env ? env : std::to_string(kDefaultSeed);
    }
    cfg.seed();

    if (cfg.command == "sample") {
      write_run(cfg, sample_table(cfg), out);
    } else if (cfg.command == "umcmc") {
      if (cfg.str("sampler", "umcmc") != "umcmc") throw ConfigError("umcmc: sampler must be 'umcmc'");
      cfg.str("model", "ladder");
      write_run(cfg, sample_table(cfg), out);
    } else if (cfg.command == "moller") {
      write_run(cfg, moller_table(cfg), out);
    } else if (cfg.command == "trace") {
      emit(cfg.has("out") ? cfg.kv.at("out") : "-", to_csv(trace_table(cfg)), out);
    } else if (cfg.command == "gof") {
      emit(cfg.has("out") ? cfg.kv.at("out") : "-", gof_report(cfg).dump(2) + "\n", out);
    } else if (cfg.command == "oracle") {
      emit(cfg.has("out") ? cfg.kv.at("out") : "-", oracle_report(cfg).dump(2) + "\n", out);
    } else if (cfg.command == "summarize") {
      const auto t = read_csv(cfg.required("in"));
      std::ifstream in(cfg.required("from"));
      if (!in) throw ConfigError("cannot read summary '" + cfg.kv.at("from") + "'");
      const auto prior = json::parse(in, nullptr, false);
      if (prior.is_discarded() || !prior.contains("config")) throw ConfigError("summary file lacks a config object");
      Config replay;
      replay.command = prior.at("command").get<std::string>();
      for (const auto& [k, v] : prior.at("config").items()) replay.kv[k] = v.get<std::string>();
      emit(cfg.has("out") ? cfg.kv.at("out") : "-", summarize(replay, t).dump(2) + "\n", out);
    }
    return 0;
  } catch (const ConfigError& e) {
    return fail(err, "config_error", e.what(), 2);
  } catch (const ChainPropertyError& e) {
    return fail(err, "config_error", e.what(), 2);
  } catch (const OrderViolation& e) {
    return fail(err, "config_error", e.what(), 2);
  } catch (const CapExceeded& e) {
    return fail(err, "cap_exceeded", e.what(), 3);
  } catch (const OracleUnavailable& e) {
    return fail(err, "oracle_unavailable", e.what(), 4);
  } catch (const std::exception& e) {
    return fail(err, "internal_error", e.what(), 1);
  }
}

}  // namespace perfect::cli

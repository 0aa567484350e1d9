// One line per acceptance criterion. Exits non-zero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <boost/math/quadrature/exp_sinh.hpp>

#include "cli/run.hpp"
#include "perfect/cftp.hpp"
#include "perfect/couplers.hpp"
#include "perfect/doubly_intractable.hpp"
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

namespace {

using namespace perfect;
using models::LadderWalk;
using models::NonMonotoneWalk;

struct Verdict {
  bool pass = true;
  std::string detail;

  void check(bool ok, const std::string& what) {
    pass = pass && ok;
    if (!detail.empty()) detail += "; ";
    detail += what + (ok ? "" : " [x]");
  }
};

std::string f(const char* fmt, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, fmt, args...);
  return buf;
}

std::vector<NoiseAtom> bits(std::initializer_list<int> xs) {
  std::vector<NoiseAtom> out;
  for (int x : xs) out.push_back(bernoulli_atom({x}));
  return out;
}

template <typename State>
std::vector<double> label_counts(const FiniteChainSpec<State>& spec, const std::vector<State>& draws) {
  std::vector<double> c(spec.size(), 0.0);
  for (const auto& d : draws) c[spec.index_of(d)] += 1.0;
  return c;
}

// ---------------------------------------------------------------- 1, 2

Verdict traces() {
  Verdict v;
  const LadderWalk m(0.5);
  const auto states = m.states();
  auto map_of = [&](std::initializer_list<int> xs) {
    const auto img = backward_map(m, states, ScriptedNoise::backward(bits(xs)), static_cast<std::int64_t>(xs.size()));
    std::map<double, double> out;
    for (std::size_t i = 0; i < states.size(); ++i) out[states[i]] = img[i];
    return out;
  };
  v.check(map_of({0}) == std::map<double, double>{{4, 2}, {2, 0.5}, {0.5, 0.25}, {0.25, 0.25}}, "xi={0}");
  v.check(map_of({1, 0}) == std::map<double, double>{{4, 2}, {2, 2}, {0.5, 0.5}, {0.25, 0.25}}, "xi={1,0}");
  const auto all = map_of({1, 1, 1, 0});
  v.check(std::all_of(all.begin(), all.end(), [](const auto& kv) { return kv.second == 2.0; }), "xi={1,1,1,0} all->2");
  const auto cert = cftp_bruteforce(m, ScriptedNoise::backward(bits({1, 1, 1, 0})), BackoffSchedule(4));
  v.check(cert.draw == 2.0 && cert.depth == 4, f("coalesces at depth %lld on %g", (long long)cert.depth, cert.draw));
  return v;
}

Verdict bounding_rows() {
  Verdict v;
  const NonMonotoneWalk m(0.5);
  using Set = BoundingSet<double>;
  const Set low{0.25, 0.5}, high{0.5, 2.0}, full(m.states());
  const auto one = bernoulli_atom({1}), zero = bernoulli_atom({0});
  v.check(m.bounding_update(low, one) == low, "{.25,.5},1->{.25,.5}");
  v.check(m.bounding_update(high, one) == low, "{.5,2},1->{.25,.5}");
  v.check(m.bounding_update(low, zero) == high, "{.25,.5},0->{.5,2}");
  v.check(m.bounding_update(high, zero) == Set{2.0}, "{.5,2},0->{2}");
  v.check(m.bounding_update(full, one) == low && m.bounding_update(full, zero) == high, "full space rows");
  bool singletons = true;
  for (double x : m.states())
    for (const auto& a : {one, zero}) singletons = singletons && m.bounding_update(Set{x}, a) == Set{m.step(x, a)};
  v.check(singletons, "singletons follow phi");
  Set y = full;
  for (int b : {1, 0, 0}) y = m.bounding_update(y, bernoulli_atom({b}));
  v.check(y == Set{2.0}, "{1,0,0} collapses to {2}");
  return v;
}

// ---------------------------------------------------------------- 3, 4, 5

Verdict exactness() {
  Verdict v;
  constexpr std::uint32_t n = 100000;
  const LadderWalk ladder(0.5);
  const NonMonotoneWalk nm(0.5);
  const auto lspec = ladder.transition_spec(), nspec = nm.transition_spec();
  const auto lpi = exact_stationary(lspec).pi(), npi = exact_stationary(nspec).pi();
  auto run = [&](const char* name, const auto& spec, const std::vector<double>& pi, auto draw) {
    std::vector<double> draws;
    draws.reserve(n);
    for (std::uint32_t r = 0; r < n; ++r) draws.push_back(draw(r));
    const auto rep = stats::chi_square_gof(label_counts(spec, draws), pi);
    v.check(rep.p_value > 0.001, f("%s p=%.3g", name, rep.p_value));
  };
  run("bruteforce", nspec, npi, [&](std::uint32_t r) { return cftp_bruteforce(nm, KeyedNoise{301, r, nm.noise_shape()}).draw; });
  run("monotone", lspec, lpi,
      [&](std::uint32_t r) { return cftp_monotone(ladder, KeyedNoise{302, r, ladder.noise_shape()}).draw; });
  run("bounding", nspec, npi, [&](std::uint32_t r) { return cftp_bounding(nm, KeyedNoise{303, r, nm.noise_shape()}).draw; });
  const auto stream = ro_cftp_stream(ladder, choose_block_size(ladder, 304), 304, n);
  const auto ro = stats::chi_square_gof(label_counts(lspec, stream.draws), lpi);
  v.check(ro.p_value > 0.001, f("ro_cftp p=%.3g", ro.p_value));
  const FillSampler<LadderWalk> fill(ladder);
  run("fill", lspec, lpi, [&](std::uint32_t r) { return fill.draw(305, r).value; });
  return v;
}

Verdict monotone_equals_bruteforce() {
  Verdict v;
  const LadderWalk m(0.5);
  std::uint32_t mismatches = 0;
  for (std::uint32_t r = 0; r < 10000; ++r) {
    const KeyedNoise noise{401, r, m.noise_shape()};
    const auto a = cftp_monotone(m, noise), b = cftp_bruteforce(m, noise);
    mismatches += !(a.draw == b.draw && a.depth == b.depth);
  }
  v.check(mismatches == 0, f("%u mismatches over 10^4 seeds", mismatches));
  return v;
}

Verdict block_counts() {
  Verdict v;
  const LadderWalk m(0.5);
  const auto spec = choose_block_size(m, 501, 0.5, 1000000);
  const auto res = ro_cftp_stream(m, spec, 501, 100000);
  const auto ms = stats::mean_se(std::vector<double>(res.blocks.begin(), res.blocks.end()));
  const double p = spec.p_hat;
  // 1/p_hat carries pilot error too (delta method).
  const double pilot_se = std::sqrt((1.0 - p) / (p * p * p * static_cast<double>(spec.pilot_n)));
  const double se = std::hypot(ms.se, pilot_se);
  v.check(std::abs(ms.mean - 1.0 / p) < 3.0 * se,
          f("K=%lld mean=%.5f 1/p_hat=%.5f |diff|/se=%.2f", (long long)spec.K, ms.mean, 1.0 / p, std::abs(ms.mean - 1.0 / p) / se));
  return v;
}

// ---------------------------------------------------------------- 6, 7, 8, 9

Verdict multigamma() {
  Verdict v;
  for (auto [a, b0, b1] : {std::tuple{2.0, 1.0, 2.0}, std::tuple{0.5, 1.0, 3.0}, std::tuple{5.0, 2.0, 2.5}}) {
    const GammaMinorizer g(a, b0, b1);
    // r(y) = b0^a y^(a-1) e^(-b1 y) / Gamma(a) lies below Gamma(a, b) for all
    // b in [b0, b1]; its mass is rho.
    const auto r = [&](double y) { return y <= 0 ? 0.0 : std::exp(a * std::log(b0) + (a - 1) * std::log(y) - b1 * y - std::lgamma(a)); };
    const auto dens = [&](double y, double b) { return std::exp(a * std::log(b) + (a - 1) * std::log(y) - b * y - std::lgamma(a)); };
    const double mass = boost::math::quadrature::exp_sinh<double>().integrate(r, 0.0, std::numeric_limits<double>::infinity());
    bool below = true;
    for (int i = 1; i <= 2000; ++i) {
      const double y = 0.01 * i;
      for (int j = 0; j <= 20; ++j) below = below && r(y) <= dens(y, b0 + (b1 - b0) * j / 20.0) * (1 + 1e-12);
    }
    const double closed = std::pow(b0 / b1, a);
    v.check(g.rho() == closed && std::abs(mass - closed) < 1e-8 && below, f("rho(%g,%g,%g)=%.10f", a, b0, b1, g.rho()));
  }
  const GammaKernelChain chain(2.0, 1.0, 2.0);
  std::vector<double> exact, forward;
  for (std::uint32_t r = 0; r < 10000; ++r) exact.push_back(multigamma_exact_draw(chain, 601, r).value);
  double x = 1.0;
  for (std::int64_t t = 0; t < 1000000; ++t) {
    x = chain.direct_step(x, keyed_uniform(NoiseKey{602, t, 0}, slot::kUniform, 0));
    if (t >= 1000 && t % 10 == 0) forward.push_back(x);
  }
  const auto rep = stats::ks_two_sample(exact, forward);
  v.check(rep.p_value > 0.001, f("KS vs forward chain p=%.3g", rep.p_value));
  return v;
}

Verdict mixture() {
  Verdict v;
  const models::MixtureLatentChain chain(models::default_mixture_data());
  const models::MixturePosteriorGrid grid(models::default_mixture_data(), 10000);
  std::vector<double> alphas;
  for (std::uint32_t r = 0; r < 10000; ++r) alphas.push_back(models::mixture_perfect_alpha(chain, 701, r));
  const auto rep = stats::ks_one_sample(alphas, [&](double a) { return grid.cdf(a); });
  v.check(rep.p_value > 0.001, f("KS p=%.3g", rep.p_value));
  return v;
}

Verdict slice() {
  Verdict v;
  const SliceSampler s(models::truncated_exponential(3.0));
  std::vector<double> xs;
  for (std::uint32_t r = 0; r < 100000; ++r) xs.push_back(slice_cftp(s, 801, r).draw);
  const double norm = -std::expm1(-3.0);
  const auto rep = stats::ks_one_sample(xs, [&](double x) { return x <= 0 ? 0.0 : x >= 3 ? 1.0 : -std::expm1(-x) / norm; });
  v.check(rep.p_value > 0.001, f("KS p=%.3g", rep.p_value));
  int bad = 0;
  for (std::int64_t t = 0; t < 10000; ++t) {
    const auto atom = noise_at(802, t, 0, s.noise_shape());
    double x1 = 3.0 * keyed_uniform(NoiseKey{803, t, 0}, slot::kUniform, 0);
    double x2 = 3.0 * keyed_uniform(NoiseKey{803, t, 0}, slot::kUniform, 1);
    if (s.density().f(x2) > s.density().f(x1)) std::swap(x1, x2);
    const auto u1 = s.update(x1, atom), u2 = s.update(x2, atom);
    bad += !(u2.tau <= u1.tau && s.precedes(u2.value, u1.value));
  }
  v.check(bad == 0, f("tau ordering violated on %d/10^4 pairs", bad));
  return v;
}

Verdict gibbs_recovery() {
  Verdict v;
  double worst = 0.0;
  for (std::uint32_t p = 0; p < 1000; ++p) {
    std::vector<gibbs::Deviates> noise;
    for (std::int64_t t = 0; t < 100; ++t) {
      const auto a = noise_at(901, t, p, NoiseShape{0, 2, {}});
      noise.push_back({a.normals[0], a.normals[1]});
    }
    const auto s0 = noise_at(902, 0, p, NoiseShape{0, 2, {}});
    const auto path = gibbs::forward_path({s0.normals[0], s0.normals[1]}, noise);
    const auto again = gibbs::forward_path(path.front(), gibbs::recover_forward_noise(path));
    for (std::size_t t = 0; t < path.size(); ++t)
      for (auto [a, b] : {std::pair{path[t].x, again[t].x}, std::pair{path[t].y, again[t].y}})
        worst = std::max(worst, a == b ? 0.0 : std::abs(a - b) / std::abs(a));
  }
  v.check(worst < 1e-12, f("max relative error %.3g over 10^3 paths x 100 steps", worst));
  return v;
}

// ---------------------------------------------------------------- 10

Verdict ising() {
  Verdict v;
  const models::Ising2D m(4, 0.3);
  std::vector<double> am;
  for (std::uint32_t r = 0; r < 10000; ++r) am.push_back(models::Ising2D::abs_magnetization(cftp_monotone(m, KeyedNoise{1001, r, m.noise_shape()}).draw));
  const auto ms = stats::mean_se(am);
  const double exact = models::ising_exact_moments(4, 0.3).mean_abs_magnetization;
  v.check(std::abs(ms.mean - exact) < 3 * ms.se, f("E|m| %.5f vs exact %.5f (%.2f SE)", ms.mean, exact, std::abs(ms.mean - exact) / ms.se));
  return v;
}

// ---------------------------------------------------------------- 11, 12, 13

const FiniteChainSpec<double>& ladder_spec() {
  static const auto spec = LadderWalk(0.5).transition_spec();
  return spec;
}
double ident(double x) { return x; }

Verdict umcmc_unbiased() {
  Verdict v;
  const auto& spec = ladder_spec();
  const auto init = point_mass(spec, 4.0);
  const double truth = exact_stationary(spec).expectation(ident);
  for (long k : {0L, 2L}) {
    for (long L : {1L, 3L}) {
      std::vector<double> hs;
      std::size_t disagree = 0;
      for (std::uint32_t r = 0; r < 100000; ++r) {
        const auto pair = umcmc::run_lagged_pair(spec, init, umcmc::LagConfig{L, k}, 1100 + k * 10 + L, r);
        const auto fw = umcmc::h_estimate(pair, spec, ident), bw = umcmc::h_estimate_backward(pair, spec, ident);
        disagree += !(fw.value == bw.value);
        hs.push_back(fw.value);
      }
      const auto ms = stats::mean_se(hs);
      v.check(std::abs(ms.mean - truth) < 4 * ms.se && disagree == 0,
              f("k=%ld L=%ld %.4f vs %.4f (%.2f SE, %zu fwd/bwd mismatches)", k, L, ms.mean, truth,
                std::abs(ms.mean - truth) / ms.se, disagree));
    }
  }
  return v;
}

Verdict tv_bound() {
  Verdict v;
  const auto& spec = ladder_spec();
  const auto init = point_mass(spec, 4.0);
  const auto oracle = exact_stationary(spec);
  for (long k : {0L, 1L, 2L, 5L, 10L}) {
    const auto b = umcmc::tv_bound(spec, init, 1, k, 10000, 1201);
    const double tv = exact_tv_at(oracle, init, k);
    v.check(b.mean + 3 * b.se >= tv, f("k=%ld E[J]+3SE=%.4f >= %.4f", k, b.mean + 3 * b.se, tv));
  }
  return v;
}

Verdict control_variate() {
  Verdict v;
  const auto& spec = ladder_spec();
  const auto init = point_mass(spec, 4.0);
  const double truth = exact_stationary(spec).expectation(ident);
  for (long k : {0L, 2L}) {
    for (long L : {1L, 3L}) {
      const auto plan = umcmc::build_cv_plan(spec, init, k, L, 1300);
      const umcmc::LagConfig cfg{L, k, umcmc::cv_horizon(plan)};
      std::vector<double> hs, cs;
      for (std::uint32_t r = 0; r < 100000; ++r) {
        const auto pair = umcmc::run_lagged_pair(spec, init, cfg, 1301, r);
        hs.push_back(umcmc::h_estimate(pair, spec, ident).value);
        cs.push_back(umcmc::cv_estimate(pair, spec, ident, plan));
      }
      const auto h = stats::mean_se(hs), c = stats::mean_se(cs);
      const bool unbiased = std::abs(c.mean - truth) < 4 * c.se;
      const bool var_ok = plan.active() == 0 || c.variance <= h.variance;
      v.check(unbiased && var_ok, f("k=%ld L=%ld active=%zu cv %.4f (%.2f SE) var %.4f vs H var %.4f", k, L,
                                    static_cast<std::size_t>(plan.active()), c.mean, std::abs(c.mean - truth) / c.se,
                                    c.variance, h.variance));
    }
  }
  return v;
}

// ---------------------------------------------------------------- 14

Verdict moller_posterior() {
  Verdict v;
  {
    const moller::IsingPosteriorTarget t(4, moller::simulate_ising_data(4, 0.3, 19960701));
    const models::IsingDensityOfStates dos(4);
    const auto run = moller::run_moller(t, moller::IsingPerfectSampler(4), 0.3, 100000, 1401);
    auto counts = moller::bin_counts(run.thetas, 0, 1, 10);
    for (double& c : counts) c /= static_cast<double>(run.thetas.size());
    const double tv = tv_distance(counts, moller::GridPosterior(t, dos, 10000).binned(10));
    v.check(tv < 0.03, f("4x4 sd=0.05 10^5 steps: binned TV %.4f, acceptance %.3f", tv, run.acceptance_rate()));
  }
  {
    const moller::IsingPosteriorTarget t(2, {1, 1, 1, 1}, 0.5);
    const models::IsingDensityOfStates dos(2);
    // The auxiliary lattice keeps successive thetas correlated for ~10^2
    // steps; thin hard so the chi-square sees near-independent draws.
    const auto a = moller::run_moller(t, moller::IsingPerfectSampler(2), 0.5, 20000, 1402, 0, 200);
    const auto b = moller::run_naive_mh(t, dos, 0.5, 20000, 1403, 0, 200);
    const auto rep = stats::two_sample_chi_square(moller::bin_counts(a.thetas, 0, 1, 10), moller::bin_counts(b.thetas, 0, 1, 10));
    v.check(rep.p_value > 0.001, f("2x2 vs naive MH with exact C, thin 200: chi-square p=%.3g", rep.p_value));
  }
  return v;
}

// ---------------------------------------------------------------- 15

Verdict determinism() {
  Verdict v;
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / ("perfect_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  const std::vector<std::vector<std::string>> runs{
      {"--model", "ladder", "--sampler", "cftp-bruteforce"}, {"--model", "ladder", "--sampler", "cftp-monotone"},
      {"--model", "ladder", "--sampler", "ro-cftp"},         {"--model", "ladder", "--sampler", "fill"},
      {"--model", "ladder", "--sampler", "umcmc", "--cv", "1"}, {"--model", "nonmonotone3", "--sampler", "cftp-bounding"},
      {"--model", "ising", "--sampler", "cftp-monotone"},   {"--model", "mixture", "--sampler", "cftp-monotone"},
      {"--model", "gamma", "--sampler", "multigamma"},      {"--model", "slice-exp", "--sampler", "slice"},
  };
  int identical = 0;
  for (const auto& flags : runs) {
    std::string outputs[2];
    for (int rep = 0; rep < 2; ++rep) {
      const auto out = (dir / ("run" + std::to_string(rep) + ".csv")).string();
      std::vector<std::string> args{"perfect", "sample", "--n", "500", "--seed", "1501", "--out", out};
      args.insert(args.end(), flags.begin(), flags.end());
      std::vector<const char*> argv;
      for (const auto& a : args) argv.push_back(a.c_str());
      std::ostringstream so, se;
      if (cli::run(static_cast<int>(argv.size()), argv.data(), so, se) != 0) outputs[rep] = "error: " + se.str();
      else outputs[rep] = slurp(out) + slurp(out + ".json");
    }
    identical += outputs[0] == outputs[1] && outputs[0].rfind("error", 0) != 0;
  }
  fs::remove_all(dir);
  v.check(identical == static_cast<int>(runs.size()), f("%d/%zu sample configs byte-identical", identical, runs.size()));
  return v;
}

}  // namespace

int main() {
  std::setvbuf(stdout, nullptr, _IOLBF, 0);
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
      {"back-off traces", traces},
      {"bounding chain rows", bounding_rows},
      {"exactness suite", exactness},
      {"monotone equals brute force", monotone_equals_bruteforce},
      {"read-once block counts", block_counts},
      {"multigamma", multigamma},
      {"mixture posterior", mixture},
      {"slice sampler", slice},
      {"gibbs noise recovery", gibbs_recovery},
      {"ising E|m|", ising},
      {"umcmc unbiasedness", umcmc_unbiased},
      {"umcmc tv bound", tv_bound},
      {"control variate", control_variate},
      {"moller posterior", moller_posterior},
      {"cli determinism", determinism},
  };
  int failures = 0, id = 0;
  for (const auto& [name, fn] : criteria) {
    ++id;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failures += !v.pass;
    std::printf("%s  %02d %s: %s (%.1fs)\n", v.pass ? "PASS" : "FAIL", id, name, v.detail.c_str(), secs);
  }
  std::printf("%d/%zu criteria passed\n", id - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}

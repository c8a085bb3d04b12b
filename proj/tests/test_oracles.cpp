#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <random>

#include "doctest.h"
#include "duet/channel.hpp"
#include "duet/errors.hpp"
#include "duet/oracles.hpp"

using namespace duet;
using oracle::OracleReport;

TEST_CASE("dft_oracle of a delta impulse is flat") {
  std::vector<double> x(8, 0.0);
  x[0] = 1.0;
  for (double a : oracle::dft_oracle(x)) CHECK(a == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("dft_oracle pure cosine at bin 3, T=32") {
  int T = 32;
  const double pi = std::acos(-1.0);
  std::vector<double> x(T);
  for (int t = 0; t < T; ++t) x[t] = std::cos(2 * pi * 3 * t / T);
  std::vector<double> amp = oracle::dft_oracle(x);
  CHECK(amp[2] == doctest::Approx(16.0).epsilon(1e-9));  // bin 3 at index 2
  for (size_t b = 0; b < amp.size(); ++b)
    if (b != 2) CHECK(std::abs(amp[b]) < 1e-9);
}

TEST_CASE("dft_oracle cross-checks frequency_amplitude over T in 2..64") {
  std::mt19937 gen(1);
  std::normal_distribution<double> nd;
  int cases = 0;
  for (int T = 2; T <= 64; ++T) {
    for (int rep = 0; rep < 8; ++rep) {
      std::vector<double> x(T);
      for (double& v : x) v = nd(gen);
      std::vector<double> a = frequency_amplitude(x);
      std::vector<double> b = oracle::dft_oracle(x);
      REQUIRE(a.size() == b.size());
      for (size_t i = 0; i < a.size(); ++i) {
        double denom = std::max(std::abs(b[i]), 1e-9);
        CHECK(std::abs(a[i] - b[i]) / denom < 1e-6);
      }
      ++cases;
    }
  }
  CHECK(cases >= 500);
}

TEST_CASE("finite_difference_gradient on theta^2") {
  auto f = [](const std::vector<double>& th) { return th[0] * th[0]; };
  std::vector<double> g = oracle::finite_difference_gradient(f, {3.0}, 1e-4);
  CHECK(g[0] == doctest::Approx(6.0).epsilon(1e-6));
}

TEST_CASE("finite_difference_gradient at a kink reports, does not fail") {
  auto f = [](const std::vector<double>& th) { return std::abs(th[0]); };
  std::vector<double> g = oracle::finite_difference_gradient(f, {0.0}, 1e-4);
  CHECK(std::isfinite(g[0]));  // central difference of |.| at 0 is 0
  CHECK(g[0] == doctest::Approx(0.0));
}

TEST_CASE("finite_difference_gradient rejects nondeterministic losses") {
  int calls = 0;
  auto f = [&calls](const std::vector<double>&) { return static_cast<double>(calls++); };
  CHECK_THROWS_AS(oracle::finite_difference_gradient(f, {1.0}, 1e-4), Error);
}

TEST_CASE("gating equivalence: degenerate sigma=0") {
  std::mt19937 gen(2);
  std::normal_distribution<double> nd;
  int M = 3;
  Matrix mu(M, 1), sigma = Matrix::filled(M, 1, 0.0), WH(M, M);
  for (double& v : mu.v) v = nd(gen);
  for (double& v : WH.v) v = nd(gen);
  RngStream rng(0);
  OracleReport rep = oracle::gating_equivalence_check(mu, sigma, WH, 10000, rng);
  CHECK(rep.passed);
}

TEST_CASE("gating equivalence: identity projection") {
  int M = 4;
  Matrix mu(M, 1), sigma(M, 1);
  mu.v = {0.5, -1.0, 2.0, 0.0};
  sigma.v = {0.3, 1.0, 0.1, 2.0};
  RngStream rng(7);
  OracleReport rep = oracle::gating_equivalence_check(mu, sigma, Matrix::identity(M), 100000, rng);
  CHECK(rep.passed);
}

TEST_CASE("gating equivalence: random M=4 instance at 100k samples") {
  std::mt19937 gen(3);
  std::normal_distribution<double> nd;
  int M = 4;
  Matrix mu(M, 1), sigma(M, 1), WH(M, M);
  for (double& v : mu.v) v = nd(gen);
  for (double& v : sigma.v) v = std::abs(nd(gen)) + 0.1;
  for (double& v : WH.v) v = nd(gen);
  RngStream rng(11);
  OracleReport rep = oracle::gating_equivalence_check(mu, sigma, WH, 100000, rng);
  INFO(rep.details);
  CHECK(rep.passed);
  CHECK(rep.n_cases == 100000);
}

TEST_CASE("oracle report serializes as a JSON line") {
  OracleReport rep;
  rep.name = "x\"y";
  rep.passed = true;
  rep.n_cases = 3;
  rep.details = "tolerance 1e-6";
  std::string line = rep.to_json_line();
  CHECK(line.front() == '{');
  CHECK(line.back() == '}');
  CHECK(line.find("\\\"") != std::string::npos);
  CHECK(line.find("tolerance 1e-6") != std::string::npos);
}

namespace {

RouterParams random_router(int T, int d0, int M, std::mt19937& gen) {
  std::normal_distribution<double> nd(0.0, 0.5);
  RouterParams r;
  r.W0_mu = Matrix(T, d0);
  r.W1_mu = Matrix(d0, M);
  r.W0_sigma = Matrix(T, d0);
  r.W1_sigma = Matrix(d0, M);
  r.WH = Matrix(M, M);
  for (Matrix* m : {&r.W0_mu, &r.W1_mu, &r.W0_sigma, &r.W1_sigma, &r.WH})
    for (double& v : m->v) v = nd(gen);
  return r;
}

ExtractorParams random_extractors(int T, int d, int M, std::mt19937& gen) {
  std::normal_distribution<double> nd(0.0, 0.5);
  ExtractorParams e;
  for (int i = 0; i < M; ++i) {
    Matrix wt(T, d), ws(T, d);
    for (double& v : wt.v) v = nd(gen);
    for (double& v : ws.v) v = nd(gen);
    e.Wt.push_back(wt);
    e.Ws.push_back(ws);
  }
  return e;
}

}  // namespace

TEST_CASE("dense mixture oracle equals tcm_forward (k=M, k=1, and sparse k)") {
  std::mt19937 gen(4);
  std::normal_distribution<double> nd;
  int N = 3, T = 8, M = 4, d = 5;
  RouterParams r = random_router(T, 4, M, gen);
  ExtractorParams e = random_extractors(T, d, M, gen);
  Matrix x(N, T);
  for (double& v : x.v) v = nd(gen);

  for (int k : {M, 1, 2}) {
    for (auto mode : {RunMode::Eval, RunMode::Train}) {
      RngStream r1(99), r2(99);
      TcmOutput main_out = tcm_forward(x, r, e, k, 3, mode, r1);
      TcmOutput oracle_out = oracle::dense_mixture_oracle(x, r, e, k, 3, mode, r2);
      for (size_t i = 0; i < main_out.features.v.size(); ++i)
        CHECK(main_out.features.v[i] ==
              doctest::Approx(oracle_out.features.v[i]).epsilon(1e-6).scale(1.0));
      for (int c = 0; c < N; ++c) CHECK(main_out.gates[c].indices == oracle_out.gates[c].indices);
    }
  }
}

TEST_CASE("dense mixture oracle with k=1 is the argmax extractor") {
  std::mt19937 gen(5);
  std::normal_distribution<double> nd;
  int T = 8, M = 3, d = 4;
  RouterParams r = random_router(T, 4, M, gen);
  ExtractorParams e = random_extractors(T, d, M, gen);
  Matrix x(1, T);
  for (double& v : x.v) v = nd(gen);
  RngStream rng(0);
  TcmOutput out = oracle::dense_mixture_oracle(x, r, e, 1, 3, RunMode::Eval, rng);
  int chosen = out.gates[0].indices[0];
  std::vector<double> row(T);
  for (int t = 0; t < T; ++t) row[t] = x(0, t);
  std::vector<double> f = extract_pattern(decompose_series(row, 3), chosen, e);
  for (int j = 0; j < d; ++j) CHECK(out.features(0, j) == doctest::Approx(f[j]).epsilon(1e-9));
  CHECK(out.gates[0].weights[0] == doctest::Approx(1.0));
}

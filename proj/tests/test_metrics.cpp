#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "fdnflow/metrics.hpp"
#include "fdnflow/rng.hpp"

using namespace fdnflow;

namespace {

FlowField random_flow(int h, int w, std::mt19937_64& gen, double range = 5.0) {
  FlowField f = FlowField::zeros(h, w);
  for (std::size_t i = 0; i < f.u.size(); ++i) {
    f.u[i] = uniform(gen, -range, range);
    f.v[i] = uniform(gen, -range, range);
  }
  return f;
}

// Scalar-loop oracle, independent of the metrics module internals.
struct OracleOut {
  double aee, sdee, aae, sdae;
};

OracleOut metrics_oracle(const FlowField& p, const FlowField& g) {
  const std::size_t n = p.u.size();
  std::vector<double> ee(n), ae(n);
  for (std::size_t i = 0; i < n; ++i) {
    ee[i] = std::hypot(p.u[i] - g.u[i], p.v[i] - g.v[i]);
    double c = (p.u[i] * g.u[i] + p.v[i] * g.v[i] + 1.0) /
               std::sqrt((p.u[i] * p.u[i] + p.v[i] * p.v[i] + 1.0) *
                         (g.u[i] * g.u[i] + g.v[i] * g.v[i] + 1.0));
    if (c > 1.0) c = 1.0;
    if (c < -1.0) c = -1.0;
    ae[i] = std::acos(c) * 180.0 / M_PI;
  }
  auto stat = [n](const std::vector<double>& xs) {
    double m = 0.0;
    for (double x : xs) m += x;
    m /= n;
    double v = 0.0;
    for (double x : xs) v += (x - m) * (x - m);
    return std::pair{m, std::sqrt(v / n)};
  };
  auto [aee, sdee] = stat(ee);
  auto [aae, sdae] = stat(ae);
  return {aee, sdee, aae, sdae};
}

}  // namespace

TEST_CASE("identical flows give zero errors") {
  std::mt19937_64 gen(1);
  FlowField f = random_flow(4, 4, gen);
  auto [aee, sdee] = endpoint_error(f, f);
  CHECK(aee == 0.0);
  CHECK(sdee == 0.0);
  auto [aae, sdae] = angular_error(f, f);
  CHECK(aae == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("3-4-5 endpoint error on a single pixel") {
  FlowField p = FlowField::zeros(1, 1), g = FlowField::zeros(1, 1);
  p.u[0] = 3.0;
  p.v[0] = 4.0;
  auto [aee, sdee] = endpoint_error(p, g);
  CHECK(aee == 5.0);
  CHECK(sdee == 0.0);
}

TEST_CASE("errors 1 and 3 give aee 2, sdee 1 (population convention)") {
  FlowField p = FlowField::zeros(1, 2), g = FlowField::zeros(1, 2);
  p.u[0] = 1.0;
  p.u[1] = 3.0;
  auto [aee, sdee] = endpoint_error(p, g);
  CHECK(aee == 2.0);
  CHECK(sdee == 1.0);
}

TEST_CASE("zero flow against zero flow is stable: theta = 0") {
  FlowField z = FlowField::zeros(2, 2);
  auto [aae, sdae] = angular_error(z, z);
  CHECK(aae == 0.0);
  CHECK(sdae == 0.0);
}

TEST_CASE("orthogonal unit vectors: cos = 1/2, theta = 60 degrees") {
  FlowField p = FlowField::zeros(1, 1), g = FlowField::zeros(1, 1);
  p.u[0] = 1.0;
  g.v[0] = 1.0;
  auto [aae, sdae] = angular_error(p, g);
  CHECK(aae == doctest::Approx(60.0).epsilon(1e-12));
}

TEST_CASE("metrics match the scalar-loop oracle on random 32x32 fields") {
  std::mt19937_64 gen(2);
  for (int rep = 0; rep < 20; ++rep) {
    FlowField p = random_flow(32, 32, gen);
    FlowField g = random_flow(32, 32, gen);
    auto ref = metrics_oracle(p, g);
    auto [aee, sdee] = endpoint_error(p, g);
    auto [aae, sdae] = angular_error(p, g);
    CHECK(std::abs(aee - ref.aee) < 1e-12);
    CHECK(std::abs(sdee - ref.sdee) < 1e-12);
    CHECK(std::abs(aae - ref.aae) < 1e-12);
    CHECK(std::abs(sdae - ref.sdae) < 1e-12);
  }
}

TEST_CASE("both metrics are symmetric in pred/gt") {
  std::mt19937_64 gen(3);
  FlowField a = random_flow(8, 8, gen);
  FlowField b = random_flow(8, 8, gen);
  CHECK(endpoint_error(a, b) == endpoint_error(b, a));
  CHECK(angular_error(a, b) == angular_error(b, a));
}

TEST_CASE("aee is translation-covariant") {
  std::mt19937_64 gen(4);
  FlowField a = random_flow(6, 6, gen);
  FlowField b = random_flow(6, 6, gen);
  const double before = endpoint_error(a, b).first;
  for (std::size_t i = 0; i < a.u.size(); ++i) {
    a.u[i] += 2.5;
    b.u[i] += 2.5;
    a.v[i] -= 1.0;
    b.v[i] -= 1.0;
  }
  CHECK(endpoint_error(a, b).first == doctest::Approx(before).epsilon(1e-12));
}

TEST_CASE("arccos input is clamped against rounding") {
  FlowField p = FlowField::zeros(1, 1), g = FlowField::zeros(1, 1);
  p.u[0] = g.u[0] = 1e8;  // cos could round above 1
  auto [aae, sdae] = angular_error(p, g);
  CHECK(std::isfinite(aae));
  CHECK(aae >= 0.0);
}

TEST_CASE("masking and error paths") {
  std::mt19937_64 gen(5);
  FlowField p = random_flow(2, 2, gen);
  FlowField g = random_flow(2, 2, gen);
  std::vector<std::uint8_t> only_first{1, 0, 0, 0};
  auto [aee, sdee] = endpoint_error(p, g, only_first);
  CHECK(aee == doctest::Approx(std::hypot(p.u[0] - g.u[0], p.v[0] - g.v[0])));
  CHECK(sdee == 0.0);

  std::vector<std::uint8_t> empty_mask(4, 0);
  CHECK_THROWS_AS(endpoint_error(p, g, empty_mask), std::invalid_argument);
  CHECK_THROWS_AS(angular_error(p, g, empty_mask), std::invalid_argument);

  FlowField wrong = FlowField::zeros(3, 2);
  CHECK_THROWS_AS(endpoint_error(p, wrong), std::invalid_argument);

  MetricReport r = evaluate_flow(p, g, only_first);
  CHECK(r.pixel_count == 1);
}

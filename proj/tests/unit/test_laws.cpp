#include <algorithm>
#include <cmath>
#include <limits>
#include <functional>
#include <numbers>
#include <vector>

#include <doctest.h>

#include "subscale/error.hpp"
#include "subscale/laws.hpp"
#include "subscale/rng.hpp"

using namespace subscale;

namespace {

const SubOptimalParams kReference{1.372, 61.929, 0.272, 455.345, 0.289, 0.00810, 0.00114};

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Central differences in each parameter of `law`, evaluated on `record`.
struct NumericGradient {
  std::vector<double> value;
  std::vector<double> noise;  // rounding error bound of each central difference
};

NumericGradient numeric_gradient(const LawParams& law, const TrainingRun& record) {
  const auto family = family_of(law);
  auto v = to_vector(law);
  const double f = std::fabs(evaluate(law, record));
  NumericGradient g{std::vector<double>(v.size()), std::vector<double>(v.size())};
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double h = 1e-6 * std::max(std::fabs(v[i]), 1e-3);
    auto up = v;
    auto down = v;
    up[i] += h;
    down[i] -= h;
    g.value[i] = (evaluate(from_vector(family, up), record) - evaluate(from_vector(family, down), record)) / (2.0 * h);
    g.noise[i] = 100.0 * std::numeric_limits<double>::epsilon() * f / h;
  }
  return g;
}

TrainingRun nd(double n, double d) {
  TrainingRun r;
  r.run_id = "r";
  r.model_size = n;
  r.tokens = d;
  r.loss = 1.0;
  return r;
}

}  // namespace

TEST_CASE("power law evaluations") {
  CHECK(eval_power({1.0, 1.0, PowerInput::Compute}, 2.0) == doctest::Approx(0.5).epsilon(1e-15));
  const PowerLawParams p{5.0, 0.0521, PowerInput::Compute};
  CHECK(eval_power(p, 1e20) / eval_power(p, 1e21) == doctest::Approx(std::pow(10.0, 0.0521)).epsilon(1e-12));
  CHECK(eval_power(p, 1e20) / eval_power(p, 1e21) == doctest::Approx(1.1274).epsilon(1e-4));
  for (double x : {1e-3, 1.0, 1e9, 1e24}) {
    CHECK(eval_power({7.0, 1e-12, PowerInput::Compute}, x) == doctest::Approx(7.0).epsilon(1e-9));
  }
}

TEST_CASE("repetition factor values") {
  CHECK(repetition_factor(1e-12, 0.5) == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(repetition_factor(1e-12, 0.0) == 1.5);
  CHECK(repetition_factor(20.0, 0.00810) == doctest::Approx(1.0 + logistic(0.162)).epsilon(1e-14));
  CHECK(repetition_factor(20.0, 0.00810) == doctest::Approx(1.5404).epsilon(1e-4));
  CHECK(repetition_factor(1875.0, 0.00114) == doctest::Approx(1.0 + logistic(2.1375)).epsilon(1e-14));
  CHECK(repetition_factor(1875.0, 0.00114) == doctest::Approx(1.8945).epsilon(1e-4));
  CHECK(repetition_factor(1e6, 1.0) < 2.0);
  CHECK_THROWS_AS(repetition_factor(0.0, 1.0), Error);
  CHECK_THROWS_AS(repetition_factor(1.0, -1.0), Error);
}

TEST_CASE("repetition factor bounds and monotonicity on random draws") {
  Rng rng(10);
  for (int i = 0; i < 20000; ++i) {
    const double o = std::exp(rng.uniform(std::log(1e-6), std::log(1e5)));
    const double k = rng.uniform(1e-4, 0.05);
    const double r = repetition_factor(o, k);
    CHECK(r >= 1.5);
    CHECK(r < 2.0);
    CHECK(repetition_factor(o * 1.01, k) >= r);
  }
}

TEST_CASE("chinchilla baseline, monotonicity and relation to the sub-optimal law") {
  CHECK(eval_chinchilla({1.9, 0.0, 0.3, 0.0, 0.3}, 1e9, 1e10) == 1.9);
  const ChinchillaParams c{1.7, 406.4, 0.34, 410.7, 0.28};
  Rng rng(3);
  for (int i = 0; i < 500; ++i) {
    const double n = std::exp(rng.uniform(std::log(1e6), std::log(1e12)));
    const double d = std::exp(rng.uniform(std::log(1e8), std::log(1e14)));
    const double l = eval_chinchilla(c, n, d);
    CHECK(eval_chinchilla(c, n * 1.1, d) < l);
    CHECK(eval_chinchilla(c, n, d * 1.1) < l);

    // k = 0 makes both factors exactly 1.5, so lambda / 1.5 recovers chinchilla.
    const SubOptimalParams flat{c.e_irreducible, c.lambda_n / 1.5, c.alpha_n, c.lambda_d / 1.5, c.alpha_d, 0.0, 0.0};
    CHECK(eval_suboptimal(flat, n, d) == doctest::Approx(l).epsilon(1e-13));

    const SubOptimalParams same{c.e_irreducible, c.lambda_n, c.alpha_n, c.lambda_d, c.alpha_d, 0.0, 0.0};
    const double expected = c.e_irreducible + 1.5 * (l - c.e_irreducible);
    CHECK(eval_suboptimal(same, n, d) == doctest::Approx(expected).epsilon(1e-13));

    const SubOptimalParams steep{c.e_irreducible, c.lambda_n, c.alpha_n, c.lambda_d, c.alpha_d, 0.01, 0.003};
    CHECK(eval_suboptimal(steep, n, d) >= l);
  }
}

TEST_CASE("sub-optimal law at the reference constants") {
  const double n = 1e9;
  const double d = 2e10;
  const double o = d / n;
  const double hand = 1.372 + 61.929 * (1.0 + logistic(0.00114 * o)) * std::pow(n, -0.272) +
                      455.345 * (1.0 + logistic(0.00810 * o)) * std::pow(d, -0.289);
  CHECK(eval_suboptimal(kReference, n, d) == doctest::Approx(hand).epsilon(1e-13));
  CHECK(std::fabs(eval_suboptimal(kReference, n, d) - 2.443) < 1e-3);
}

TEST_CASE("loss at fixed compute is U-shaped in model size") {
  for (double budget : {1e18, 1e20, 1e22, 1e24}) {
    std::vector<double> losses;
    for (int i = 0; i <= 400; ++i) {
      const double n = std::exp(std::log(1e6) + (std::log(1e13) - std::log(1e6)) * i / 400.0);
      losses.push_back(eval_suboptimal(kReference, n, budget / (6.0 * n)));
    }
    int sign_changes = 0;
    for (std::size_t i = 2; i < losses.size(); ++i) {
      const bool down_before = losses[i - 1] < losses[i - 2];
      const bool down_now = losses[i] < losses[i - 1];
      if (down_before != down_now) ++sign_changes;
    }
    CHECK(sign_changes == 1);
    CHECK(losses.front() > *std::min_element(losses.begin(), losses.end()));
    CHECK(losses.back() > *std::min_element(losses.begin(), losses.end()));
  }
}

TEST_CASE("saturating performance regimes") {
  const SaturatingPerfParams low{0.8, 2.0, 1e-6, 0.0};
  for (double n : {1.0, 10.0, 100.0, 2500.0}) {
    REQUIRE(low.beta * low.i0 * n <= 0.01);
    const double linear = low.p0 * low.beta * low.i0 * n;
    CHECK(std::fabs(eval_saturating_perf(low, n) - linear) <= 0.01 * linear);
  }
  CHECK(eval_saturating_perf(low, 1e12) == doctest::Approx(0.8).epsilon(1e-12));

  const SaturatingPerfParams high{0.8, 2.0, 3.0, 0.4};
  double prev = eval_saturating_perf(high, 1.0);
  for (int i = 1; i <= 200; ++i) {
    const double v = eval_saturating_perf(high, std::pow(10.0, i * 0.05));
    CHECK(v < prev);
    prev = v;
  }
}

TEST_CASE("decayed performance law") {
  const DecayedPerfParams plain{1.0, 0.02, 0.08};
  for (double c : {1e18, 1e20, 1e22}) {
    CHECK(eval_decayed_perf(plain, c) == doctest::Approx(0.02 * std::pow(c, 0.08)).epsilon(1e-14));
    const DecayedPerfParams half{0.5, 0.02, 0.08};
    CHECK(eval_decayed_perf(half, c) == doctest::Approx(0.5 * eval_decayed_perf(plain, c)).epsilon(1e-14));
  }
  // Least-squares slope of ln P on ln C.
  std::vector<double> x;
  std::vector<double> y;
  for (int i = 0; i < 50; ++i) {
    const double c = std::pow(10.0, 17.0 + i * 0.1);
    x.push_back(std::log(c));
    y.push_back(std::log(eval_decayed_perf({0.7, 0.02, 0.08}, c)));
  }
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(y.size());
  double sxy = 0.0;
  double sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  CHECK(std::fabs(sxy / sxx - 0.08) < 1e-10);
}

TEST_CASE("analytic gradients agree with central differences") {
  Rng rng(21);
  auto check = [](const LawParams& law, const TrainingRun& r) {
    const auto analytic = gradient(law, r);
    const auto numeric = numeric_gradient(law, r);
    REQUIRE(analytic.size() == numeric.value.size());
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      // alpha = 0 selects the low-density branch; it is not a differentiable point.
      const auto* sat = std::get_if<SaturatingPerfParams>(&law);
      if (sat && sat->low_density() && i == 3) continue;
      const double scale = std::max(std::fabs(analytic[i]), std::fabs(numeric.value[i]));
      INFO(family_name(family_of(law)), " param ", i, " analytic ", analytic[i], " numeric ", numeric.value[i]);
      CHECK(std::fabs(analytic[i] - numeric.value[i]) <= 1e-4 * scale + numeric.noise[i]);
    }
  };
  for (int t = 0; t < 50; ++t) {
    const double n = std::exp(rng.uniform(std::log(1e7), std::log(1e10)));
    const double d = n * std::exp(rng.uniform(std::log(1.0), std::log(2000.0)));
    auto r = nd(n, d);
    r.batch_size = rng.uniform(64, 4096);
    r.learning_rate = rng.uniform(1e-4, 1e-2);
    check(PowerLawParams{rng.uniform(1, 100), rng.uniform(0.01, 0.4), PowerInput::Compute}, r);
    check(PowerLawParams{rng.uniform(1, 100), rng.uniform(0.01, 0.4), PowerInput::BatchSize}, r);
    check(PowerLawParams{rng.uniform(1, 100), rng.uniform(0.01, 0.4), PowerInput::LearningRate}, r);
    check(ChinchillaParams{rng.uniform(0.5, 2), rng.uniform(10, 500), rng.uniform(0.1, 0.5), rng.uniform(10, 500),
                           rng.uniform(0.1, 0.5)},
          r);
    check(SubOptimalParams{rng.uniform(0.5, 2), rng.uniform(10, 500), rng.uniform(0.1, 0.5), rng.uniform(10, 500),
                           rng.uniform(0.1, 0.5), rng.uniform(1e-4, 0.02), rng.uniform(1e-4, 0.02)},
          r);
    auto samples = nd(1.0, rng.uniform(10, 1e5));
    check(SaturatingPerfParams{rng.uniform(0.5, 1), rng.uniform(0.1, 2), rng.uniform(0.5, 3), rng.uniform(0.05, 0.5)},
          samples);
    check(SaturatingPerfParams{rng.uniform(0.5, 1), rng.uniform(1e-6, 1e-4), rng.uniform(0.5, 3), 0.0}, samples);
    check(DecayedPerfParams{rng.uniform(0.2, 1), rng.uniform(1e-3, 0.1), rng.uniform(0.01, 0.1)}, r);
  }
}

TEST_CASE("swapping the roles of N and D") {
  Rng rng(8);
  for (int i = 0; i < 200; ++i) {
    const double n = std::exp(rng.uniform(std::log(1e6), std::log(1e12)));
    const double d = std::exp(rng.uniform(std::log(1e6), std::log(1e14)));
    const ChinchillaParams c{1.5, rng.uniform(10, 500), rng.uniform(0.1, 0.5), rng.uniform(10, 500),
                             rng.uniform(0.1, 0.5)};
    const ChinchillaParams cs{c.e_irreducible, c.lambda_d, c.alpha_d, c.lambda_n, c.alpha_n};
    CHECK(eval_chinchilla(cs, d, n) == doctest::Approx(eval_chinchilla(c, n, d)).epsilon(1e-14));

    // With k > 0 the swap also inverts the OTR, so the identity needs k1 = k2 = 0.
    const SubOptimalParams s{1.5, c.lambda_n, c.alpha_n, c.lambda_d, c.alpha_d, 0.0, 0.0};
    const SubOptimalParams ss{1.5, c.lambda_d, c.alpha_d, c.lambda_n, c.alpha_n, 0.0, 0.0};
    CHECK(eval_suboptimal(ss, d, n) == doctest::Approx(eval_suboptimal(s, n, d)).epsilon(1e-14));
  }
}

TEST_CASE("family names, vectors and json round-trip") {
  const std::vector<LawParams> laws = {PowerLawParams{3.0, 0.3, PowerInput::Compute},
                                       PowerLawParams{3.0, 0.3, PowerInput::BatchSize},
                                       PowerLawParams{3.0, 0.3, PowerInput::LearningRate},
                                       ChinchillaParams{1.7, 406.4, 0.34, 410.7, 0.28},
                                       kReference,
                                       SaturatingPerfParams{0.8, 2.0, 1.0, 0.3},
                                       DecayedPerfParams{0.9, 0.02, 0.08}};
  for (const auto& law : laws) {
    const auto family = family_of(law);
    CHECK(family_from_name(family_name(family)) == family);
    CHECK(parameter_names(family).size() == to_vector(law).size());
    CHECK(from_vector(family, to_vector(law)) == law);
    CHECK(law_from_json(to_json(law)) == law);
    CHECK_NOTHROW(check_params(law));
  }
  CHECK_THROWS_AS(family_from_name("nope"), Error);
  CHECK_THROWS_AS(law_from_json(nlohmann::json{{"family", "power"}}), Error);
  CHECK(parameter_names(LawFamily::SubOptimal) ==
        std::vector<std::string>{"e_irreducible", "lambda_n", "alpha_n", "lambda_d", "alpha_d", "k1", "k2"});
}

TEST_CASE("parameter invariants are enforced") {
  CHECK_THROWS_AS(check_params(PowerLawParams{-1.0, 0.3, PowerInput::Compute}), Error);
  CHECK_THROWS_AS(check_params(ChinchillaParams{-0.1, 1, 0.3, 1, 0.3}), Error);
  CHECK_THROWS_AS(check_params(SubOptimalParams{1, 1, 0.3, 1, 0.3, -0.1, 0}), Error);
  CHECK_THROWS_AS(check_params(DecayedPerfParams{1.5, 1, 0.1}), Error);
  CHECK_THROWS_AS(check_params(DecayedPerfParams{0.0, 1, 0.1}), Error);
  CHECK_THROWS_AS(check_params(SaturatingPerfParams{1, 0, 1, 0}), Error);
}

TEST_CASE("record evaluation reads the right input") {
  auto r = nd(1e9, 2e10);
  CHECK(evaluate(PowerLawParams{2.0, 0.1, PowerInput::Compute}, r) ==
        doctest::Approx(2.0 * std::pow(1.2e20, -0.1)).epsilon(1e-14));
  try {
    evaluate(PowerLawParams{2.0, 0.1, PowerInput::BatchSize}, r);
    FAIL("expected MissingField");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingField);
  }
  r.batch_size = 512;
  CHECK(evaluate(PowerLawParams{2.0, 0.1, PowerInput::BatchSize}, r) ==
        doctest::Approx(2.0 * std::pow(512.0, -0.1)).epsilon(1e-14));
}

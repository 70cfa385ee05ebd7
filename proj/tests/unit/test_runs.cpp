#include <cmath>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <doctest.h>

#include "scratch_dir.hpp"
#include "subscale/error.hpp"
#include "subscale/rng.hpp"
#include "subscale/runs.hpp"
#include "subscale/synth.hpp"

using namespace subscale;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::InvalidArgument;
}

RunSeries parse(const std::string& text) {
  std::istringstream in(text);
  return parse_csv(in);
}

TrainingRun rec(const std::string& id, double n, double d, double loss) {
  TrainingRun r;
  r.run_id = id;
  r.model_size = n;
  r.tokens = d;
  r.loss = loss;
  return r;
}

}  // namespace

TEST_CASE("csv with two rows parses into two records") {
  const auto s = parse("run_id,model_size,tokens,loss\na,1e8,1e9,3.2\na,1e8,2e9,3.0\n");
  REQUIRE(s.size() == 2);
  CHECK(s.records[0].model_size == 1e8);
  CHECK(s.records[0].tokens == 1e9);
  CHECK(s.records[0].loss == 3.2);
  CHECK(s.records[1].tokens == 2e9);
  CHECK(s.records[1].loss == 3.0);
  CHECK(!s.records[0].batch_size);
}

TEST_CASE("schema errors name the offending row") {
  SUBCASE("negative loss") {
    CHECK(code_of([] { parse("run_id,model_size,tokens,loss\na,1e8,1e9,3\na,1e8,2e9,-1\n"); }) ==
          ErrorCode::NonPositiveValue);
    try {
      parse("run_id,model_size,tokens,loss\na,1e8,1e9,3\na,1e8,2e9,-1\n");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("row 2") != std::string::npos);
    }
  }
  SUBCASE("missing column") {
    CHECK(code_of([] { parse("run_id,model_size,loss\na,1e8,3\n"); }) == ErrorCode::MissingColumn);
  }
  SUBCASE("tokens not increasing within a run") {
    CHECK(code_of([] { parse("run_id,model_size,tokens,loss\na,1e8,2e9,3\na,1e8,1e9,2.9\n"); }) ==
          ErrorCode::NonMonotoneTokens);
  }
  SUBCASE("unparsable number") {
    CHECK(code_of([] { parse("run_id,model_size,tokens,loss\na,1e8,x,3\n"); }) == ErrorCode::Format);
  }
  SUBCASE("empty file") {
    CHECK_THROWS_AS(parse(""), Error);
  }
}

TEST_CASE("interleaved runs are validated per run") {
  const auto s = parse("run_id,model_size,tokens,loss\na,1,10,3\nb,2,5,3\na,1,20,2\nb,2,6,2.5\n");
  CHECK(s.run_ids() == std::vector<std::string>{"a", "b"});
  CHECK(s.indices_of("b") == std::vector<std::size_t>{1, 3});
}

TEST_CASE("jsonl and csv encodings of the same synthetic records agree") {
  CurveSpec spec;
  spec.law = ChinchillaParams{1.7, 400.0, 0.34, 410.0, 0.28};
  spec.model_sizes = {1e7, 5e7};
  spec.token_checkpoints = {{1e8, 2e8, 3e8, 4e8, 5e8}, {1e9, 2e9, 3e9, 4e9, 5e9}};
  spec.noise_sigma = 0.01;
  spec.seed = 11;
  RunSeries series = gen_curves(spec);
  for (auto& r : series.records) {
    r.batch_size = 256;
    r.learning_rate = 3e-4;
  }
  REQUIRE(series.size() == 10);

  std::stringstream csv;
  write_csv(csv, series);
  std::stringstream jsonl;
  write_jsonl(jsonl, series);
  const auto from_csv = parse_csv(csv);
  const auto from_jsonl = parse_jsonl(jsonl);
  REQUIRE(from_csv.size() == 10);
  REQUIRE(from_jsonl.size() == 10);
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(from_csv.records[i] == series.records[i]);
    CHECK(from_jsonl.records[i] == series.records[i]);
  }
}

TEST_CASE("ingest and save round-trip through files") {
  ScratchDir dir("runs");
  RunSeries s;
  s.records = {rec("x", 1e6, 1e7, 4.0), rec("x", 1e6, 2e7, 3.5), rec("y,z", 2e6, 1e7, 3.9)};
  s.records[1].step = 10;
  for (const char* name : {"a.csv", "a.jsonl"}) {
    const auto path = dir / name;
    save(path, s, format_from_path(path));
    const auto back = ingest(path);
    REQUIRE(back.size() == s.size());
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(back.records[i] == s.records[i]);
  }
  CHECK_THROWS_AS(ingest(dir / "missing.csv"), Error);
}

TEST_CASE("compute_flops and otr") {
  CHECK(compute_flops(1, 1) == 6.0);
  CHECK(compute_flops(1e9, 2e10) == doctest::Approx(1.2e20).epsilon(1e-15));
  CHECK(compute_flops(8e9, 1.5e13) == doctest::Approx(7.2e23).epsilon(1e-15));
  CHECK(otr(123.0, 123.0) == 1.0);
  CHECK(otr(1e9, 2e10) == doctest::Approx(20.0).epsilon(1e-15));
  CHECK(otr(8e9, 1.5e13) == doctest::Approx(1875.0).epsilon(1e-15));
  CHECK_THROWS_AS(compute_flops(0, 1), Error);
  CHECK_THROWS_AS(otr(1, -1), Error);

  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    const double n = std::exp(rng.uniform(0.0, 25.0));
    const double d = std::exp(rng.uniform(0.0, 30.0));
    CHECK(compute_flops(n, d) == doctest::Approx(6.0 * otr(n, d) * n * n).epsilon(1e-12));
  }
}

TEST_CASE("smoothing preserves constants and length") {
  RunSeries s;
  for (int i = 1; i <= 25; ++i) s.records.push_back(rec("a", 10, i, 2.5));
  const auto out = gaussian_smooth(s, {10, std::nullopt});
  REQUIRE(out.size() == s.size());
  for (const auto& r : out.records) CHECK(r.loss == doctest::Approx(2.5).epsilon(1e-15));
}

TEST_CASE("window 1 is the identity") {
  RunSeries s;
  Rng rng(2);
  for (int i = 1; i <= 12; ++i) s.records.push_back(rec("a", 10, i, 3.0 + rng.normal()));
  const auto out = gaussian_smooth(s, {1, std::nullopt});
  for (std::size_t i = 0; i < s.size(); ++i) CHECK(out.records[i].loss == s.records[i].loss);
}

TEST_CASE("smoothing equals a hand-rolled truncated convolution") {
  RunSeries s;
  Rng rng(99);
  std::vector<double> raw_a;
  std::vector<double> raw_b;
  for (int i = 1; i <= 40; ++i) {
    raw_a.push_back(2.0 + 0.05 * rng.normal());
    s.records.push_back(rec("a", 10, i, raw_a.back()));
    if (i <= 17) {
      raw_b.push_back(3.0 + 0.05 * rng.normal());
      s.records.push_back(rec("b", 20, i, raw_b.back()));
    }
  }
  const std::size_t window = 10;
  const double sigma = 2.5;
  auto oracle = [&](const std::vector<double>& x) {
    std::vector<double> y(x.size());
    const int half = static_cast<int>(window) / 2;
    for (int t = 0; t < static_cast<int>(x.size()); ++t) {
      double num = 0.0;
      double den = 0.0;
      for (int j = -half; j < -half + static_cast<int>(window); ++j) {
        const int s_idx = t + j;
        if (s_idx < 0 || s_idx >= static_cast<int>(x.size())) continue;
        const double w = std::exp(-0.5 * (j / sigma) * (j / sigma));
        num += w * x[static_cast<std::size_t>(s_idx)];
        den += w;
      }
      y[static_cast<std::size_t>(t)] = num / den;
    }
    return y;
  };
  const auto want_a = oracle(raw_a);
  const auto want_b = oracle(raw_b);
  const auto out = gaussian_smooth(s, {window, std::nullopt});
  std::size_t ia = 0;
  std::size_t ib = 0;
  for (const auto& r : out.records) {
    if (r.run_id == "a") CHECK(std::fabs(r.loss - want_a[ia++]) < 1e-12);
    else CHECK(std::fabs(r.loss - want_b[ib++]) < 1e-12);
  }
}

TEST_CASE("runs shorter than the window are rejected") {
  RunSeries s;
  for (int i = 1; i <= 5; ++i) s.records.push_back(rec("short", 10, i, 2.0));
  CHECK(code_of([&] { gaussian_smooth(s, {10, std::nullopt}); }) == ErrorCode::WindowLargerThanRun);
}

TEST_CASE("fit/holdout split counts") {
  RunSeries eight;
  for (int i = 1; i <= 8; ++i) eight.records.push_back(rec("a", 10, i, 2.0));
  auto sp = split_fit_holdout(eight, 0.25);
  CHECK(sp.fit.size() == 2);
  CHECK(sp.holdout.size() == 6);

  RunSeries four;
  for (int i = 1; i <= 4; ++i) four.records.push_back(rec("a", 10, i, 2.0));
  sp = split_fit_holdout(four, 0.5);
  CHECK(sp.fit.size() == 2);
  CHECK(sp.holdout.size() == 2);

  RunSeries three;
  for (int i = 1; i <= 3; ++i) three.records.push_back(rec("a", 10, i, 2.0));
  CHECK(code_of([&] { split_fit_holdout(three, 0.25); }) == ErrorCode::TooFewRecords);
  CHECK_THROWS_AS(split_fit_holdout(four, 1.0), Error);
}

TEST_CASE("multi-run split matches independent per-run slicing") {
  RunSeries s;
  std::map<std::string, std::vector<TrainingRun>> by_run;
  Rng rng(4);
  const std::vector<std::pair<std::string, int>> runs = {{"a", 9}, {"b", 13}, {"c", 4}};
  // Interleave the runs to make ordering matter.
  std::map<std::string, int> emitted;
  bool more = true;
  while (more) {
    more = false;
    for (const auto& [id, len] : runs) {
      if (emitted[id] < len) {
        const int i = ++emitted[id];
        auto r = rec(id, 100, i * 10.0, 3.0 - 0.01 * i);
        s.records.push_back(r);
        by_run[id].push_back(r);
        more = true;
      }
    }
  }
  const double f = 0.3;
  const auto sp = split_fit_holdout(s, f);
  std::size_t fit_total = 0;
  for (const auto& [id, len] : runs) {
    const auto n_fit = static_cast<std::size_t>(std::ceil(f * len));
    std::vector<TrainingRun> got_fit;
    std::vector<TrainingRun> got_hold;
    for (const auto& r : sp.fit.records) {
      if (r.run_id == id) got_fit.push_back(r);
    }
    for (const auto& r : sp.holdout.records) {
      if (r.run_id == id) got_hold.push_back(r);
    }
    const auto& all = by_run[id];
    CHECK(got_fit == std::vector<TrainingRun>(all.begin(), all.begin() + static_cast<long>(n_fit)));
    CHECK(got_hold == std::vector<TrainingRun>(all.begin() + static_cast<long>(n_fit), all.end()));
    fit_total += n_fit;
  }
  CHECK(sp.fit.size() == fit_total);
  CHECK(sp.fit.size() + sp.holdout.size() == s.size());
}

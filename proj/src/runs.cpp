#include "subscale/runs.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <ctime>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "subscale/error.hpp"
#include "text.hpp"

namespace subscale {

namespace {

using json = nlohmann::json;

constexpr double kMaxCount = 9007199254740992.0;  // 2^53

constexpr std::array<const char*, 8> kColumns = {"run_id", "model_size", "tokens", "loss",
                                                 "step", "batch_size", "learning_rate", "dataset_tag"};

std::string row_label(std::size_t row) { return "row " + std::to_string(row); }

double require_count(double v, const char* field, std::size_t row) {
  if (!(v > 0.0)) {
    throw Error(ErrorCode::NonPositiveValue, row_label(row) + ": " + field + " must be > 0");
  }
  if (v != std::floor(v) || v > kMaxCount) {
    throw Error(ErrorCode::Format, row_label(row) + ": " + field + " must be an integer count up to 2^53");
  }
  return v;
}

double require_positive(double v, const char* field, std::size_t row) {
  if (!(v > 0.0) || !std::isfinite(v)) {
    throw Error(ErrorCode::NonPositiveValue, row_label(row) + ": " + field + " must be > 0");
  }
  return v;
}

double parse_field(const std::string& text, const char* field, std::size_t row) {
  auto v = detail::parse_double(text);
  if (!v) throw Error(ErrorCode::Format, row_label(row) + ": cannot parse " + field + " '" + text + "'");
  return *v;
}

void check_record(const TrainingRun& r, std::size_t row) {
  require_count(r.model_size, "model_size", row);
  require_count(r.tokens, "tokens", row);
  require_positive(r.loss, "loss", row);
  if (r.batch_size) require_positive(*r.batch_size, "batch_size", row);
  if (r.learning_rate) require_positive(*r.learning_rate, "learning_rate", row);
}

std::string now_utc() {
  std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

}  // namespace

std::vector<std::string> RunSeries::run_ids() const {
  std::vector<std::string> ids;
  std::unordered_map<std::string, bool> seen;
  for (const auto& r : records) {
    if (seen.emplace(r.run_id, true).second) ids.push_back(r.run_id);
  }
  return ids;
}

std::vector<std::size_t> RunSeries::indices_of(const std::string& run_id) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].run_id == run_id) out.push_back(i);
  }
  return out;
}

RunFormat format_from_path(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".jsonl" || ext == ".json" || ext == ".ndjson") return RunFormat::Jsonl;
  return RunFormat::Csv;
}

void validate(const RunSeries& series) {
  if (series.empty()) throw Error(ErrorCode::EmptyInput, "series has no records");
  struct Last {
    double tokens;
    std::optional<std::int64_t> step;
  };
  std::unordered_map<std::string, Last> last;
  for (std::size_t i = 0; i < series.records.size(); ++i) {
    const auto& r = series.records[i];
    check_record(r, i + 1);
    auto it = last.find(r.run_id);
    if (it != last.end()) {
      const bool tokens_ok = r.tokens > it->second.tokens;
      const bool step_ok = !(r.step && it->second.step) || *r.step > *it->second.step;
      if (!tokens_ok || !step_ok) {
        throw Error(ErrorCode::NonMonotoneTokens,
                    "run '" + r.run_id + "' at " + row_label(i + 1) + ": tokens must strictly increase with step");
      }
      it->second = {r.tokens, r.step};
    } else {
      last.emplace(r.run_id, Last{r.tokens, r.step});
    }
  }
}

RunSeries parse_csv(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::MissingColumn, "empty file, header required");
  const auto header = detail::split_csv_line(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[std::string(detail::trim(header[i]))] = i;
  for (const char* required : {"run_id", "model_size", "tokens", "loss"}) {
    if (!col.count(required)) throw Error(ErrorCode::MissingColumn, std::string("header lacks '") + required + "'");
  }
  auto get = [&](const std::vector<std::string>& f, const char* name) -> std::optional<std::string> {
    auto it = col.find(name);
    if (it == col.end() || it->second >= f.size()) return std::nullopt;
    auto v = detail::trim(f[it->second]);
    if (v.empty()) return std::nullopt;
    return std::string(v);
  };

  RunSeries series;
  series.metadata.source = source;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    ++row;
    const auto f = detail::split_csv_line(line);
    TrainingRun r;
    auto run_id = get(f, "run_id");
    auto n = get(f, "model_size");
    auto d = get(f, "tokens");
    auto l = get(f, "loss");
    if (!n || !d || !l) throw Error(ErrorCode::Format, row_label(row) + ": missing required value");
    r.run_id = run_id.value_or("");
    r.model_size = parse_field(*n, "model_size", row);
    r.tokens = parse_field(*d, "tokens", row);
    r.loss = parse_field(*l, "loss", row);
    if (auto s = get(f, "step")) {
      const double v = parse_field(*s, "step", row);
      if (v != std::floor(v)) throw Error(ErrorCode::Format, row_label(row) + ": step must be an integer");
      r.step = static_cast<std::int64_t>(v);
    }
    if (auto b = get(f, "batch_size")) r.batch_size = parse_field(*b, "batch_size", row);
    if (auto e = get(f, "learning_rate")) r.learning_rate = parse_field(*e, "learning_rate", row);
    if (auto t = get(f, "dataset_tag")) r.dataset_tag = *t;
    check_record(r, row);
    series.records.push_back(std::move(r));
  }
  validate(series);
  return series;
}

RunSeries parse_jsonl(std::istream& in, const std::string& source) {
  RunSeries series;
  series.metadata.source = source;
  std::string line;
  std::size_t row = 0;
  auto number = [&](const json& obj, const char* key) -> std::optional<double> {
    auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) return std::nullopt;
    if (it->is_number()) return it->get<double>();
    if (it->is_string()) {
      const auto s = it->get<std::string>();
      if (detail::trim(s).empty()) return std::nullopt;
      return parse_field(s, key, row);
    }
    throw Error(ErrorCode::Format, row_label(row) + ": '" + key + "' is not a number");
  };
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    ++row;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::Format, row_label(row) + ": invalid JSON");
    }
    if (!obj.is_object()) throw Error(ErrorCode::Format, row_label(row) + ": expected a JSON object");
    for (const char* required : {"model_size", "tokens", "loss"}) {
      if (!obj.contains(required) || obj[required].is_null()) {
        throw Error(ErrorCode::MissingColumn, row_label(row) + ": missing key '" + required + "'");
      }
    }
    TrainingRun r;
    if (auto it = obj.find("run_id"); it != obj.end() && !it->is_null()) {
      r.run_id = it->is_string() ? it->get<std::string>() : it->dump();
    }
    r.model_size = *number(obj, "model_size");
    r.tokens = *number(obj, "tokens");
    r.loss = *number(obj, "loss");
    if (auto s = number(obj, "step")) {
      if (*s != std::floor(*s)) throw Error(ErrorCode::Format, row_label(row) + ": step must be an integer");
      r.step = static_cast<std::int64_t>(*s);
    }
    r.batch_size = number(obj, "batch_size");
    r.learning_rate = number(obj, "learning_rate");
    if (auto it = obj.find("dataset_tag"); it != obj.end() && it->is_string()) r.dataset_tag = it->get<std::string>();
    check_record(r, row);
    series.records.push_back(std::move(r));
  }
  validate(series);
  return series;
}

RunSeries ingest(const std::filesystem::path& path, RunFormat format) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + path.string() + "'");
  RunSeries series = format == RunFormat::Csv ? parse_csv(in, path.string()) : parse_jsonl(in, path.string());
  series.metadata.ingested_at = now_utc();
  return series;
}

RunSeries ingest(const std::filesystem::path& path) { return ingest(path, format_from_path(path)); }

void write_csv(std::ostream& out, const RunSeries& series) {
  for (std::size_t i = 0; i < kColumns.size(); ++i) out << (i ? "," : "") << kColumns[i];
  out << '\n';
  for (const auto& r : series.records) {
    out << detail::csv_escape(r.run_id) << ',' << detail::format_number(r.model_size) << ','
        << detail::format_number(r.tokens) << ',' << detail::format_number(r.loss) << ',';
    if (r.step) out << *r.step;
    out << ',';
    if (r.batch_size) out << detail::format_number(*r.batch_size);
    out << ',';
    if (r.learning_rate) out << detail::format_number(*r.learning_rate);
    out << ',' << detail::csv_escape(r.dataset_tag) << '\n';
  }
}

void write_jsonl(std::ostream& out, const RunSeries& series) {
  for (const auto& r : series.records) {
    json obj = json::object();
    obj["run_id"] = r.run_id;
    obj["model_size"] = r.model_size;
    obj["tokens"] = r.tokens;
    obj["loss"] = r.loss;
    obj["step"] = r.step ? json(*r.step) : json(nullptr);
    obj["batch_size"] = r.batch_size ? json(*r.batch_size) : json(nullptr);
    obj["learning_rate"] = r.learning_rate ? json(*r.learning_rate) : json(nullptr);
    obj["dataset_tag"] = r.dataset_tag;
    out << obj.dump() << '\n';
  }
}

void save(const std::filesystem::path& path, const RunSeries& series, RunFormat format) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write '" + path.string() + "'");
  if (format == RunFormat::Csv) write_csv(out, series);
  else write_jsonl(out, series);
}

double compute_flops(double model_size, double tokens) {
  if (!(model_size > 0.0) || !(tokens > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "compute_flops requires N > 0 and D > 0");
  }
  return 6.0 * model_size * tokens;
}

double otr(double model_size, double tokens) {
  if (!(model_size > 0.0) || !(tokens > 0.0)) throw Error(ErrorCode::InvalidArgument, "otr requires N > 0 and D > 0");
  return tokens / model_size;
}

std::vector<std::pair<int, double>> smoothing_kernel(const SmoothingOptions& options) {
  if (options.window < 1) throw Error(ErrorCode::InvalidArgument, "smoothing window must be >= 1");
  const double sigma = options.sigma.value_or(static_cast<double>(options.window) / 4.0);
  if (!(sigma > 0.0)) throw Error(ErrorCode::InvalidArgument, "smoothing sigma must be > 0");
  const int w = static_cast<int>(options.window);
  const int lo = -(w / 2);
  std::vector<std::pair<int, double>> kernel;
  for (int k = lo; k < lo + w; ++k) {
    kernel.emplace_back(k, std::exp(-0.5 * (k / sigma) * (k / sigma)));
  }
  return kernel;
}

RunSeries gaussian_smooth(const RunSeries& series, const SmoothingOptions& options) {
  const auto kernel = smoothing_kernel(options);
  RunSeries out = series;
  for (const auto& id : series.run_ids()) {
    const auto idx = series.indices_of(id);
    if (idx.size() < options.window) {
      throw Error(ErrorCode::WindowLargerThanRun, "run '" + id + "' has " + std::to_string(idx.size()) +
                                                      " records, window is " + std::to_string(options.window));
    }
    const auto n = static_cast<long>(idx.size());
    for (long j = 0; j < n; ++j) {
      double acc = 0.0;
      double norm = 0.0;
      for (const auto& [offset, weight] : kernel) {
        const long t = j + offset;
        if (t < 0 || t >= n) continue;
        acc += weight * series.records[idx[t]].loss;
        norm += weight;
      }
      out.records[idx[j]].loss = acc / norm;
    }
  }
  return out;
}

FitHoldoutSplit split_fit_holdout(const RunSeries& series, double fraction) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw Error(ErrorCode::InvalidArgument, "fraction must lie in (0, 1)");
  std::vector<bool> to_fit(series.size(), false);
  for (const auto& id : series.run_ids()) {
    auto idx = series.indices_of(id);
    const double scaled = fraction * static_cast<double>(idx.size());
    // Tolerate representation error, e.g. 0.25 * 4.
    if (scaled < 1.0 - 1e-12) {
      throw Error(ErrorCode::TooFewRecords,
                  "run '" + id + "' has " + std::to_string(idx.size()) + " records, too few for fraction " +
                      detail::format_number(fraction));
    }
    const auto n_fit = static_cast<std::size_t>(std::ceil(scaled - 1e-12));
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return series.records[a].tokens < series.records[b].tokens; });
    for (std::size_t i = 0; i < n_fit; ++i) to_fit[idx[i]] = true;
  }
  FitHoldoutSplit split;
  split.fit.metadata = series.metadata;
  split.holdout.metadata = series.metadata;
  for (std::size_t i = 0; i < series.size(); ++i) {
    (to_fit[i] ? split.fit : split.holdout).records.push_back(series.records[i]);
  }
  return split;
}

}  // namespace subscale

#include "subscale/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "subscale/alloc.hpp"
#include "subscale/density.hpp"
#include "subscale/error.hpp"
#include "subscale/fit.hpp"
#include "subscale/laws.hpp"
#include "subscale/report.hpp"
#include "subscale/runs.hpp"
#include "subscale/svg.hpp"
#include "subscale/synth.hpp"
#include "text.hpp"

namespace subscale {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

struct Globals {
  std::optional<std::uint64_t> seed;
  unsigned threads = 1;
};

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::NoConvergence:
    case ErrorCode::NoInteriorMinimum:
    case ErrorCode::DegenerateGeometry:
    case ErrorCode::TargetUnreachable:
    case ErrorCode::NoRunReachesTarget:
      return kExitAnalytic;
    default:
      return kExitInput;
  }
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

std::string abs_path(const std::string& p) { return fs::absolute(p).lexically_normal().string(); }

std::string num(double v) { return detail::format_number(v); }

json load_json(const std::string& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Format, path + ": " + e.what());
  }
}

unsigned resolve_threads(const CLI::Option* flag, unsigned flag_value) {
  if (flag->count() > 0) {
    if (flag_value == 0) throw Error(ErrorCode::InvalidArgument, "--threads must be >= 1");
    return flag_value;
  }
  if (const char* env = std::getenv("SUBSCALE_THREADS"); env != nullptr && *env != '\0') {
    const auto v = detail::parse_double(env);
    if (!v || *v < 1.0 || *v != std::floor(*v) || *v > 1024.0) {
      throw Error(ErrorCode::InvalidArgument, std::string("SUBSCALE_THREADS must be a positive integer, got '") + env + "'");
    }
    return static_cast<unsigned>(*v);
  }
  return 1;
}

json input_entry(const std::string& path) { return {{"path", path}, {"fnv1a64", file_fingerprint(path)}}; }

json base_manifest(const std::string& command, const std::vector<std::string>& argv, const json& inputs,
                   std::uint64_t seed) {
  json m = json::object();
  m["command"] = command;
  m["argv"] = argv;
  m["inputs"] = inputs;
  m["seed"] = seed;
  return m;
}

// ---- ingest ---------------------------------------------------------------

struct IngestArgs {
  std::string input;
  std::string format;
  std::size_t smooth = 0;
  std::optional<double> sigma;
  std::string out;
};

int cmd_ingest(const IngestArgs& a, std::ostream& out) {
  RunSeries series = a.format.empty() ? ingest(a.input)
                                      : ingest(a.input, a.format == "csv" ? RunFormat::Csv : RunFormat::Jsonl);
  if (a.smooth > 0) series = gaussian_smooth(series, {a.smooth, a.sigma});
  if (!a.out.empty()) save(a.out, series, format_from_path(a.out));
  json summary = {{"source", series.metadata.source},
                  {"records", series.size()},
                  {"runs", series.run_ids().size()},
                  {"smoothed", a.smooth > 0}};
  out << summary.dump() << '\n';
  return kExitOk;
}

// ---- fit / compare --------------------------------------------------------

struct FitArgs {
  std::string input;
  std::vector<std::string> families;
  std::string config;
  double split = 0.25;
  std::string residual;
  std::optional<int> max_iters;
  std::size_t smooth = 0;
  std::string out;
};

PlotSpec loss_plot(const std::string& title) {
  PlotSpec spec;
  spec.title = title;
  spec.x_label = "tokens D";
  spec.y_label = "loss";
  return spec;
}

std::string residual_csv(const RunSeries& series, const RunSeries& fit_part, const LawParams& params) {
  std::ostringstream o;
  o << "run_id,model_size,tokens,loss,predicted,rel_error,split\n";
  std::size_t j = 0;
  for (const auto& r : series.records) {
    const bool in_fit = j < fit_part.size() && fit_part.records[j] == r;
    if (in_fit) ++j;
    const double pred = evaluate(params, r);
    o << detail::csv_escape(r.run_id) << ',' << num(r.model_size) << ',' << num(r.tokens) << ',' << num(r.loss) << ','
      << num(pred) << ',' << num((pred - r.loss) / r.loss) << ',' << (in_fit ? "fit" : "holdout") << '\n';
  }
  return o.str();
}

std::string fit_svg(const RunSeries& series, const LawParams& params, const std::string& family) {
  PlotSpec spec = loss_plot("Observed vs fitted loss (" + family + ")");
  for (const auto& id : series.run_ids()) {
    PlotSeries observed{id, {}, {}, true, false};
    PlotSeries fitted{id + " fit", {}, {}, false, true};
    for (auto i : series.indices_of(id)) {
      const auto& r = series.records[i];
      observed.x.push_back(r.tokens);
      observed.y.push_back(r.loss);
      fitted.x.push_back(r.tokens);
      fitted.y.push_back(evaluate(params, r));
    }
    spec.series.push_back(std::move(observed));
    spec.series.push_back(std::move(fitted));
  }
  return render_svg(spec);
}

std::string comparison_svg(const RunSeries& series, std::span<const ComparisonRow> rows) {
  // The largest model carries the longest extrapolation; plot that run only.
  const auto ids = series.run_ids();
  std::string largest = ids.front();
  double largest_n = 0.0;
  for (const auto& id : ids) {
    const double n = series.records[series.indices_of(id).front()].model_size;
    if (n > largest_n) {
      largest_n = n;
      largest = id;
    }
  }
  PlotSpec spec = loss_plot("Law comparison on run " + largest);
  PlotSeries observed{"observed", {}, {}, true, false};
  const auto idx = series.indices_of(largest);
  for (auto i : idx) {
    observed.x.push_back(series.records[i].tokens);
    observed.y.push_back(series.records[i].loss);
  }
  spec.series.push_back(std::move(observed));
  for (const auto& row : rows) {
    if (!row.result) continue;
    PlotSeries s{std::string(family_name(row.family)), {}, {}, false, false};
    for (auto i : idx) {
      s.x.push_back(series.records[i].tokens);
      s.y.push_back(evaluate(row.result->params, series.records[i]));
    }
    spec.series.push_back(std::move(s));
  }
  return render_svg(spec);
}

int cmd_fit(const std::string& command, FitArgs a, const Globals& g, std::ostream& out, std::ostream& err) {
  if (a.families.empty()) {
    if (command == "compare") a.families = {"chinchilla", "suboptimal"};
    else a.families = {"suboptimal"};
  }
  std::vector<LawFamily> families;
  for (const auto& f : a.families) families.push_back(family_from_name(f));
  if (!(a.split > 0.0 && a.split < 1.0)) throw Error(ErrorCode::InvalidArgument, "--split must lie in (0, 1)");

  const std::string input = abs_path(a.input);
  json inputs = json::array({input_entry(input)});
  FitConfig cfg;
  std::string config_path;
  if (!a.config.empty()) {
    config_path = abs_path(a.config);
    cfg = fit_config_from_json(load_json(config_path));
    inputs.push_back(input_entry(config_path));
  }
  if (g.seed) cfg.seed = *g.seed;
  if (!a.residual.empty()) cfg.residual_space = a.residual == "linear" ? ResidualSpace::Linear : ResidualSpace::Log;
  if (a.max_iters) cfg.max_iters = *a.max_iters;
  if (cfg.max_iters < 1) throw Error(ErrorCode::InvalidArgument, "max_iters must be >= 1");
  cfg.threads = g.threads;

  std::vector<std::string> argv = {command, input};
  for (const auto& f : a.families) argv.insert(argv.end(), {"--family", f});
  argv.insert(argv.end(), {"--split", num(a.split)});
  if (!config_path.empty()) argv.insert(argv.end(), {"--config", config_path});
  if (!a.residual.empty()) argv.insert(argv.end(), {"--residual", a.residual});
  if (a.max_iters) argv.insert(argv.end(), {"--max-iters", std::to_string(*a.max_iters)});
  if (a.smooth > 0) argv.insert(argv.end(), {"--smooth", std::to_string(a.smooth)});
  argv.insert(argv.end(), {"--seed", std::to_string(cfg.seed)});

  RunSeries series = ingest(input);
  if (a.smooth > 0) series = gaussian_smooth(series, {a.smooth, std::nullopt});

  json config_json = to_json(cfg);
  config_json["split_fraction"] = a.split;
  config_json["smooth_window"] = a.smooth;
  ReportBundle bundle;
  bundle.manifest = base_manifest(command, argv, inputs, cfg.seed);
  bundle.manifest["config"] = config_json;

  int code = kExitOk;
  if (families.size() == 1) {
    const auto split = split_fit_holdout(series, a.split);
    FitResult result;
    try {
      result = fit_law(split.fit, families.front(), cfg);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NoConvergence) throw;
      err << "subscale: " << one_line(e.what()) << '\n';
      return kExitAnalytic;
    }
    if (!split.holdout.empty()) result.mape_pred = predict(result.params, split.holdout).mape;
    const std::string family(family_name(result.family));
    bundle.tables.push_back({"fit_result.json", to_json(result).dump(2) + "\n"});
    bundle.tables.push_back({"params.json", to_json(result.params).dump(2) + "\n"});
    bundle.tables.push_back({"residuals.csv", residual_csv(series, split.fit, result.params)});
    bundle.plots.push_back({"fit.svg", fit_svg(series, result.params, family)});
    write_bundle(a.out, bundle);
    out << fmt::format("{} mape_fit={} mape_pred={} converged={}\n", family, num(result.mape_fit),
                       result.mape_pred ? num(*result.mape_pred) : "n/a", result.converged ? "true" : "false");
    if (!result.converged) {
      err << "subscale: NoConvergence: " << family << " fit stopped after " << cfg.max_iters
          << " iterations without meeting the tolerance\n";
      code = kExitAnalytic;
    }
    return code;
  }

  const auto rows = compare_laws(series, families, cfg, a.split);
  const std::string table = comparison_csv(rows);
  bundle.tables.push_back({"comparison.csv", table});
  bundle.tables.push_back({"comparison.json", to_json(rows).dump(2) + "\n"});
  bundle.plots.push_back({"comparison.svg", comparison_svg(series, rows)});
  write_bundle(a.out, bundle);
  out << table;
  const bool any_converged =
      std::any_of(rows.begin(), rows.end(), [](const ComparisonRow& r) { return r.result && r.result->converged; });
  for (const auto& r : rows) {
    if (!r.result) err << "subscale: " << family_name(r.family) << ": " << one_line(r.error) << '\n';
  }
  if (!any_converged) {
    err << "subscale: NoConvergence: no family converged\n";
    code = kExitAnalytic;
  }
  return code;
}

// ---- predict --------------------------------------------------------------

struct PredictArgs {
  std::string input;
  std::string law;
  std::optional<double> split;
  std::string out;
};

int cmd_predict(const PredictArgs& a, std::ostream& out) {
  const LawParams law = law_from_json(load_json(a.law));
  check_params(law);
  RunSeries series = ingest(a.input);
  if (a.split) series = split_fit_holdout(series, *a.split).holdout;
  const Prediction p = predict(law, series);
  if (!a.out.empty()) {
    std::ostringstream o;
    o << "run_id,model_size,tokens,loss,predicted,ape\n";
    for (std::size_t i = 0; i < series.size(); ++i) {
      const auto& r = series.records[i];
      o << detail::csv_escape(r.run_id) << ',' << num(r.model_size) << ',' << num(r.tokens) << ',' << num(r.loss)
        << ',' << num(p.predicted[i]) << ',' << num(std::abs(p.predicted[i] - r.loss) / r.loss) << '\n';
    }
    write_file(a.out, o.str());
  }
  out << json({{"family", family_name(family_of(law))}, {"records", series.size()}, {"mape", p.mape}}).dump() << '\n';
  return kExitOk;
}

// ---- alloc / sweep --------------------------------------------------------

struct OtrGrid {
  std::vector<double> values;
  double lo = 1.0;
  double hi = 2000.0;
  std::size_t count = 60;

  std::vector<double> resolve() const {
    if (!values.empty()) return values;
    if (!(lo > 0.0 && hi > lo) || count < 2) throw Error(ErrorCode::InvalidArgument, "OTR grid needs 0 < min < max, count >= 2");
    return log_space(lo, hi, count);
  }
};

struct AllocArgs {
  std::string law;
  double budget = 0.0;
  bool sweep = false;
  OtrGrid grid;
  AllocationOptions options;
  std::string out;
};

std::string alloc_svg(const LawParams& law, double budget, std::span<const double> otrs,
                      const AllocationOptions& options) {
  PlotSpec spec;
  spec.title = "Loss vs model size at fixed compute";
  spec.x_label = "model size N";
  spec.y_label = "loss";
  spec.log_y = false;
  PlotSeries locus{"optimal N*", {}, {}, false, true};
  PlotSeries minima{"minima", {}, {}, true, false};
  for (int e = -2; e <= 2; ++e) {
    const double b = budget * std::pow(10.0, e);
    auto pts = otr_sweep(law, b, otrs);
    std::sort(pts.begin(), pts.end(), [](const SweepPoint& x, const SweepPoint& y) { return x.n < y.n; });
    PlotSeries s{"C = " + fmt::format("{:.3g}", b), {}, {}, false, false};
    for (const auto& p : pts) {
      s.x.push_back(p.n);
      s.y.push_back(p.loss);
    }
    spec.series.push_back(std::move(s));
    try {
      const auto plan = optimal_allocation(law, b, options);
      locus.x.push_back(plan.n_star);
      locus.y.push_back(plan.predicted_loss);
    } catch (const Error& err) {
      if (err.code() != ErrorCode::NoInteriorMinimum) throw;
    }
  }
  minima.x = locus.x;
  minima.y = locus.y;
  spec.series.push_back(std::move(locus));
  spec.series.push_back(std::move(minima));
  return render_svg(spec);
}

int cmd_alloc(const AllocArgs& a, std::ostream& out) {
  if (a.sweep && a.out.empty()) throw Error(ErrorCode::InvalidArgument, "--sweep needs --out");
  const std::string law_path = abs_path(a.law);
  const LawParams law = law_from_json(load_json(law_path));
  const AllocationPlan plan = optimal_allocation(law, a.budget, a.options);
  const json plan_json = to_json(plan);
  out << plan_json.dump(2) << '\n';
  if (a.out.empty()) return kExitOk;
  std::vector<std::string> argv = {"alloc", "--law", law_path, "--budget", num(a.budget),
                                   "--n-min", num(a.options.n_min), "--n-max", num(a.options.n_max),
                                   "--d-max", num(a.options.d_max)};
  ReportBundle bundle;
  bundle.tables.push_back({"plan.json", plan_json.dump(2) + "\n"});
  if (a.sweep) {
    const auto otrs = a.grid.resolve();
    argv.push_back("--sweep");
    argv.push_back("--otr");
    std::string joined;
    for (double v : otrs) joined += (joined.empty() ? "" : ",") + num(v);
    argv.push_back(joined);
    const auto pts = otr_sweep(law, a.budget, otrs);
    bundle.tables.push_back({"sweep.csv", sweep_csv(pts)});
    bundle.plots.push_back({"alloc.svg", alloc_svg(law, a.budget, otrs, a.options)});
  }
  bundle.manifest = base_manifest("alloc", argv, json::array({input_entry(law_path)}), 0);
  bundle.manifest["config"] = {{"n_min", a.options.n_min},
                               {"n_max", a.options.n_max},
                               {"d_max", a.options.d_max},
                               {"tolerance", a.options.tolerance},
                               {"scan_points", a.options.scan_points}};
  write_bundle(a.out, bundle);
  return kExitOk;
}

struct SweepArgs {
  std::string law;
  double budget = 0.0;
  OtrGrid grid;
  std::string out;
};

int cmd_sweep(const SweepArgs& a, std::ostream& out) {
  const LawParams law = law_from_json(load_json(a.law));
  check_params(law);
  const auto otrs = a.grid.resolve();
  const std::string csv = sweep_csv(otr_sweep(law, a.budget, otrs));
  if (a.out.empty()) out << csv;
  else write_file(a.out, csv);
  return kExitOk;
}

// ---- density / select -----------------------------------------------------

struct DensityArgs {
  std::string input;
  std::size_t k = 0;
  std::size_t max_iters = 100;
  bool normalize = false;
  double radius_floor = 1e-12;
  std::optional<double> fraction;
  std::optional<double> log_density;
  std::string out;
};

std::string clusters_csv(const DatasetDensityReport& rep) {
  std::ostringstream o;
  o << "cluster_id,n_samples,radius,log_density,radius_floored\n";
  for (const auto& c : rep.per_cluster) {
    o << c.cluster_id << ',' << c.n_samples << ',' << num(c.radius) << ',' << num(c.log_density) << ','
      << (c.radius_floored ? "true" : "false") << '\n';
  }
  return o.str();
}

int cmd_density(const std::string& command, const DensityArgs& a, const Globals& g, std::ostream& out) {
  if (a.fraction && a.log_density) throw Error(ErrorCode::InvalidArgument, "give --fraction or --log-density, not both");
  if (command == "select" && !a.fraction && !a.log_density) {
    throw Error(ErrorCode::InvalidArgument, "select needs --fraction or --log-density");
  }
  if (a.k == 0) throw Error(ErrorCode::InvalidArgument, "--k must be >= 1");
  const std::string input = abs_path(a.input);
  const std::uint64_t seed = g.seed.value_or(0);
  EmbeddingSet emb = read_embeddings(input);
  if (a.normalize) emb = emb.unit_normalized();

  KMeansOptions km;
  km.k = a.k;
  km.seed = seed;
  km.max_iters = a.max_iters;
  km.threads = g.threads;
  const DensityOptions dopt{a.radius_floor};
  const Clustering clustering = kmeans(emb, km);
  const DatasetDensityReport rep = dataset_density(emb, clustering, dopt);

  std::vector<std::string> argv = {command, input, "--k", std::to_string(a.k), "--max-iters",
                                   std::to_string(a.max_iters), "--radius-floor", num(a.radius_floor)};
  if (a.normalize) argv.push_back("--normalize");
  if (a.fraction) argv.insert(argv.end(), {"--fraction", num(*a.fraction)});
  if (a.log_density) argv.insert(argv.end(), {"--log-density", num(*a.log_density)});
  argv.insert(argv.end(), {"--seed", std::to_string(seed)});

  ReportBundle bundle;
  bundle.manifest = base_manifest(command, argv, json::array({input_entry(input)}), seed);
  bundle.manifest["config"] = {{"k", a.k},
                               {"max_iters", a.max_iters},
                               {"normalize", a.normalize},
                               {"radius_floor", a.radius_floor},
                               {"metric", "euclidean"}};
  bundle.tables.push_back({"density_report.json", to_json(rep).dump(2) + "\n"});
  bundle.tables.push_back({"clusters.csv", clusters_csv(rep)});

  json summary = {{"k", rep.k}, {"n", rep.n}, {"n_total", rep.n_total}, {"log_density", rep.log_density},
                  {"normalized_density", rep.normalized_density}};
  if (a.fraction || a.log_density) {
    const SelectionTarget target =
        a.fraction ? SelectionTarget::keep_fraction(*a.fraction) : SelectionTarget::max_log_density(*a.log_density);
    const SelectionResult sel = select_low_density(emb, clustering, target, dopt);
    std::string ids;
    for (const auto& id : sel.retained_ids) ids += id + "\n";
    bundle.tables.push_back({"retained_ids.txt", ids});
    bundle.tables.push_back({"selection.json", to_json(sel).dump(2) + "\n"});
    summary["retained"] = sel.retained_rows.size();
    summary["log_density_before"] = sel.log_density_before;
    summary["log_density_after"] = sel.log_density_after;
  }
  write_bundle(a.out, bundle);
  out << summary.dump() << '\n';
  return kExitOk;
}

// ---- synth ----------------------------------------------------------------

struct SynthArgs {
  std::string spec;
  std::string preset;
  std::optional<double> noise;
  std::string out;
  std::string labels;
  std::string truth;
};

CurveSpec reference_curve_spec() {
  CurveSpec spec;
  spec.law = SubOptimalParams{1.372, 61.929, 0.272, 455.345, 0.289, 0.00810, 0.00114};
  spec.model_sizes = reference_model_sizes();
  spec.token_checkpoints = otr_checkpoints(spec.model_sizes, log_space(5.0, 1700.0, 30));
  return spec;
}

int cmd_synth_curves(const SynthArgs& a, const Globals& g, std::ostream& out) {
  CurveSpec spec;
  if (!a.preset.empty()) {
    if (!a.spec.empty()) throw Error(ErrorCode::InvalidArgument, "give --spec or --preset, not both");
    if (a.preset != "reference") throw Error(ErrorCode::InvalidArgument, "unknown preset '" + a.preset + "'");
    spec = reference_curve_spec();
  } else if (!a.spec.empty()) {
    spec = curve_spec_from_json(load_json(a.spec));
  } else {
    throw Error(ErrorCode::InvalidArgument, "synth curves needs --spec or --preset");
  }
  if (a.noise) spec.noise_sigma = *a.noise;
  if (g.seed) spec.seed = *g.seed;
  const RunSeries series = gen_curves(spec);
  save(a.out, series, format_from_path(a.out));
  if (!a.truth.empty()) write_file(a.truth, to_json(spec.law).dump(2) + "\n");
  out << json({{"records", series.size()}, {"runs", series.run_ids().size()}, {"seed", spec.seed}}).dump() << '\n';
  return kExitOk;
}

int cmd_synth_blobs(const SynthArgs& a, const Globals& g, std::ostream& out) {
  if (a.spec.empty()) throw Error(ErrorCode::InvalidArgument, "synth blobs needs --spec");
  BlobSpec spec = blob_spec_from_json(load_json(a.spec));
  if (g.seed) spec.seed = *g.seed;
  const BlobSample sample = gen_blobs(spec);
  save_embeddings(a.out, sample.embeddings);
  if (!a.labels.empty()) {
    std::ostringstream o;
    o << "id,label\n";
    for (std::size_t i = 0; i < sample.labels.size(); ++i) o << sample.embeddings.ids()[i] << ',' << sample.labels[i] << '\n';
    write_file(a.labels, o.str());
  }
  out << json({{"rows", sample.embeddings.rows()}, {"dim", sample.embeddings.dim()}, {"seed", spec.seed}}).dump()
      << '\n';
  return kExitOk;
}

// ---- report ---------------------------------------------------------------

int cmd_report(const std::string& manifest_path, const std::string& out_dir, const Globals& g, std::ostream& out,
               std::ostream& err) {
  const json m = load_json(manifest_path);
  if (!m.is_object() || !m.contains("argv") || !m["argv"].is_array() || m["argv"].empty()) {
    throw Error(ErrorCode::Format, manifest_path + ": manifest lacks an argv array");
  }
  if (m.contains("inputs")) {
    for (const auto& in : m["inputs"]) {
      const auto path = in.at("path").get<std::string>();
      if (file_fingerprint(path) != in.at("fnv1a64").get<std::string>()) {
        throw Error(ErrorCode::InvalidArgument, "input " + path + " changed since the manifest was written");
      }
    }
  }
  std::vector<std::string> args = {"--threads", std::to_string(g.threads)};
  for (const auto& a : m["argv"]) args.push_back(a.get<std::string>());
  if (args[2] == "report") throw Error(ErrorCode::Format, "a manifest cannot replay another report");
  args.insert(args.end(), {"--out", out_dir});

  std::ostringstream replay_out;
  const int code = run_cli(args, replay_out, err);
  if (code == kExitInput) return code;

  const json fresh = load_json((fs::path(out_dir) / "manifest.json").string());
  const json& want = m.at("outputs");
  const json& got = fresh.at("outputs");
  std::size_t mismatches = 0;
  for (const auto& w : want) {
    const auto it = std::find_if(got.begin(), got.end(), [&](const json& x) { return x.at("name") == w.at("name"); });
    if (it == got.end() || it->at("fnv1a64") != w.at("fnv1a64")) {
      err << "subscale: " << w.at("name").get<std::string>() << " differs from the recorded run\n";
      ++mismatches;
    }
  }
  if (got.size() != want.size()) ++mismatches;
  if (mismatches > 0) return kExitAnalytic;
  out << fmt::format("reproduced {} artifacts byte-identically\n", want.size());
  return code;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Scaling-law fitting, compute allocation and data-density analysis.", "subscale"};
  app.require_subcommand(1);
  app.fallthrough();

  std::uint64_t seed_value = 0;
  unsigned threads_value = 1;
  auto* seed_opt = app.add_option("--seed", seed_value, "Override every embedded seed");
  auto* threads_opt = app.add_option("--threads", threads_value, "Worker threads (default: $SUBSCALE_THREADS or 1)");

  IngestArgs ingest_args;
  auto* ingest_cmd = app.add_subcommand("ingest", "Validate a run log and optionally smooth or convert it");
  ingest_cmd->add_option("input", ingest_args.input, "CSV or JSONL run log")->required();
  ingest_cmd->add_option("--format", ingest_args.format, "Input format")->check(CLI::IsMember({"csv", "jsonl"}));
  ingest_cmd->add_option("--smooth", ingest_args.smooth, "Gaussian smoothing window (records)");
  ingest_cmd->add_option("--sigma", ingest_args.sigma, "Smoothing kernel sigma");
  ingest_cmd->add_option("--out", ingest_args.out, "Write the normalized series (.csv or .jsonl)");

  FitArgs fit_args;
  FitArgs compare_args;
  auto add_fit_options = [](CLI::App* cmd, FitArgs& a) {
    cmd->add_option("input", a.input, "CSV or JSONL run log")->required();
    cmd->add_option("--family", a.families, "Law family (repeatable)");
    cmd->add_option("--config", a.config, "Flat JSON fit configuration");
    cmd->add_option("--split", a.split, "Fraction of each run used for fitting");
    cmd->add_option("--residual", a.residual, "Residual space")->check(CLI::IsMember({"log", "linear"}));
    cmd->add_option("--max-iters", a.max_iters, "Iteration cap per start");
    cmd->add_option("--smooth", a.smooth, "Gaussian smoothing window applied before fitting");
    cmd->add_option("--out", a.out, "Output directory")->required();
  };
  auto* fit_cmd = app.add_subcommand("fit", "Fit one law family, or compare several");
  add_fit_options(fit_cmd, fit_args);
  auto* compare_cmd = app.add_subcommand("compare", "Fit several families and rank them by holdout MAPE");
  add_fit_options(compare_cmd, compare_args);

  PredictArgs predict_args;
  auto* predict_cmd = app.add_subcommand("predict", "Evaluate a fitted law against a run log");
  predict_cmd->add_option("input", predict_args.input, "CSV or JSONL run log")->required();
  predict_cmd->add_option("--law", predict_args.law, "Law parameters JSON")->required();
  predict_cmd->add_option("--split", predict_args.split, "Score only the records after this fraction of each run");
  predict_cmd->add_option("--out", predict_args.out, "Per-record predictions CSV");

  AllocArgs alloc_args;
  auto* alloc_cmd = app.add_subcommand("alloc", "Compute-optimal model size and token count for a budget");
  alloc_cmd->add_option("--law", alloc_args.law, "Law parameters JSON (chinchilla or suboptimal)")->required();
  alloc_cmd->add_option("--budget", alloc_args.budget, "Compute budget C in FLOPs")->required();
  alloc_cmd->add_flag("--sweep", alloc_args.sweep, "Also write the OTR sweep table and plot");
  alloc_cmd->add_option("--otr", alloc_args.grid.values, "Explicit OTR values")->delimiter(',');
  alloc_cmd->add_option("--otr-min", alloc_args.grid.lo, "Smallest OTR of the sweep grid");
  alloc_cmd->add_option("--otr-max", alloc_args.grid.hi, "Largest OTR of the sweep grid");
  alloc_cmd->add_option("--otr-count", alloc_args.grid.count, "Number of log-spaced sweep points");
  alloc_cmd->add_option("--n-min", alloc_args.options.n_min, "Smallest model size searched");
  alloc_cmd->add_option("--n-max", alloc_args.options.n_max, "Largest model size searched");
  alloc_cmd->add_option("--d-max", alloc_args.options.d_max, "Largest token count searched");
  alloc_cmd->add_option("--out", alloc_args.out, "Output directory");

  SweepArgs sweep_args;
  auto* sweep_cmd = app.add_subcommand("sweep", "Loss along an OTR grid at fixed compute");
  sweep_cmd->add_option("--law", sweep_args.law, "Law parameters JSON")->required();
  sweep_cmd->add_option("--budget", sweep_args.budget, "Compute budget C in FLOPs")->required();
  sweep_cmd->add_option("--otr", sweep_args.grid.values, "Explicit OTR values")->delimiter(',');
  sweep_cmd->add_option("--otr-min", sweep_args.grid.lo, "Smallest OTR of the grid");
  sweep_cmd->add_option("--otr-max", sweep_args.grid.hi, "Largest OTR of the grid");
  sweep_cmd->add_option("--otr-count", sweep_args.grid.count, "Number of log-spaced points");
  sweep_cmd->add_option("--out", sweep_args.out, "CSV path (default: stdout)");

  DensityArgs density_args;
  DensityArgs select_args;
  auto add_density_options = [](CLI::App* cmd, DensityArgs& a) {
    cmd->add_option("input", a.input, "Embeddings (EMB1 binary or CSV)")->required();
    cmd->add_option("--k", a.k, "Number of clusters")->required();
    cmd->add_option("--max-iters", a.max_iters, "k-means iteration cap");
    cmd->add_flag("--normalize", a.normalize, "Scale every embedding to unit length first");
    cmd->add_option("--radius-floor", a.radius_floor, "Smallest cluster radius");
    cmd->add_option("--fraction", a.fraction, "Keep this fraction of samples, pruning dense clusters first");
    cmd->add_option("--log-density", a.log_density, "Prune until the dataset log-density is at most this");
    cmd->add_option("--out", a.out, "Output directory")->required();
  };
  auto* density_cmd = app.add_subcommand("density", "Cluster embeddings and report sample density");
  add_density_options(density_cmd, density_args);
  auto* select_cmd = app.add_subcommand("select", "Density report plus low-density selection");
  add_density_options(select_cmd, select_args);

  SynthArgs curves_args;
  SynthArgs blobs_args;
  auto* synth_cmd = app.add_subcommand("synth", "Generate synthetic fixtures with known ground truth");
  synth_cmd->require_subcommand(1);
  auto* curves_cmd = synth_cmd->add_subcommand("curves", "Loss curves drawn from a law");
  curves_cmd->add_option("--spec", curves_args.spec, "Curve spec JSON");
  curves_cmd->add_option("--preset", curves_args.preset, "Built-in spec")->check(CLI::IsMember({"reference"}));
  curves_cmd->add_option("--noise", curves_args.noise, "Multiplicative lognormal sigma");
  curves_cmd->add_option("--out", curves_args.out, "Run log path (.csv or .jsonl)")->required();
  curves_cmd->add_option("--truth", curves_args.truth, "Write the generating law as JSON");
  auto* blobs_cmd = synth_cmd->add_subcommand("blobs", "Gaussian blobs in embedding space");
  blobs_cmd->add_option("--spec", blobs_args.spec, "Blob spec JSON")->required();
  blobs_cmd->add_option("--out", blobs_args.out, "Embeddings path (.csv or EMB1)")->required();
  blobs_cmd->add_option("--labels", blobs_args.labels, "Write blob labels as CSV");

  std::string manifest_path;
  std::string report_out;
  auto* report_cmd = app.add_subcommand("report", "Replay a run from its manifest and verify its outputs");
  report_cmd->add_option("--manifest", manifest_path, "manifest.json of an earlier run")->required();
  report_cmd->add_option("--out", report_out, "Output directory for the replay")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "subscale: " << one_line(e.what()) << '\n';
    return kExitInput;
  }

  try {
    Globals g;
    if (seed_opt->count() > 0) g.seed = seed_value;
    g.threads = resolve_threads(threads_opt, threads_value);

    if (ingest_cmd->parsed()) return cmd_ingest(ingest_args, out);
    if (fit_cmd->parsed()) return cmd_fit("fit", fit_args, g, out, err);
    if (compare_cmd->parsed()) return cmd_fit("compare", compare_args, g, out, err);
    if (predict_cmd->parsed()) return cmd_predict(predict_args, out);
    if (alloc_cmd->parsed()) return cmd_alloc(alloc_args, out);
    if (sweep_cmd->parsed()) return cmd_sweep(sweep_args, out);
    if (density_cmd->parsed()) return cmd_density("density", density_args, g, out);
    if (select_cmd->parsed()) return cmd_density("select", select_args, g, out);
    if (curves_cmd->parsed()) return cmd_synth_curves(curves_args, g, out);
    if (blobs_cmd->parsed()) return cmd_synth_blobs(blobs_args, g, out);
    if (report_cmd->parsed()) return cmd_report(manifest_path, report_out, g, out, err);
    err << "subscale: no subcommand given\n";
    return kExitInput;
  } catch (const Error& e) {
    err << "subscale: " << one_line(e.what()) << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "subscale: " << one_line(e.what()) << '\n';
    return kExitInput;
  }
}

}  // namespace subscale

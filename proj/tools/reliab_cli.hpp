#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "reliab/reliab.hpp"

// Command-line front end. `run_cli` is the whole program; main() only
// forwards argv, so tests can drive every subcommand in-process.
namespace reliab::cli {

enum ExitCode : int {
  kOk = 0,
  kInvalidArgument = 2,
  kInvalidData = 3,
  kIoError = 4,
};

namespace detail {

inline std::vector<long long> parse_int_list(const std::string& s, const std::string& flag) {
  std::vector<long long> out;
  if (s.empty()) return out;
  for (auto part : text::split(s, ',')) {
    const auto dash = part.find('-', 1);
    long long lo = 0;
    long long hi = 0;
    if (dash != std::string_view::npos) {
      if (!text::parse_number(part.substr(0, dash), lo) || !text::parse_number(part.substr(dash + 1), hi) || lo > hi) {
        throw InvalidArgument(flag + ": bad range \"" + std::string(part) + "\"");
      }
    } else {
      if (!text::parse_number(part, lo)) throw InvalidArgument(flag + ": bad integer \"" + std::string(part) + "\"");
      hi = lo;
    }
    for (long long v = lo; v <= hi; ++v) out.push_back(v);
  }
  return out;
}

inline std::vector<double> parse_percent_list(const std::string& s, const std::string& flag) {
  std::vector<double> out;
  for (auto part : text::split(s, ',')) {
    double v = 0.0;
    if (!text::parse_number(part, v) || !(v > 0.0 && v <= 100.0)) {
      throw InvalidArgument(flag + ": bad percentage \"" + std::string(part) + "\"");
    }
    out.push_back(v / 100.0);
  }
  if (out.empty()) throw InvalidArgument(flag + ": empty list");
  return out;
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << content;
  if (!os) throw IoError("write failed: " + path.string());
}

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

struct Common {
  std::string manifest;
  std::string out_dir = "reliab-out";
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  double lambda = 1.0;
  std::string days;
  std::string split;
  std::string variant;
  std::string classes;
  std::size_t first_k = 0;

  SelectionFilter filter(std::optional<Split> split_override = std::nullopt) const {
    SelectionFilter f;
    if (!days.empty()) {
      std::set<int> d;
      for (auto v : parse_int_list(days, "--days")) d.insert(static_cast<int>(v));
      f.days = std::move(d);
    }
    if (split_override) {
      f.split = split_override;
    } else if (!split.empty()) {
      f.split = parse_split(split);
    }
    if (!variant.empty()) f.variant = variant;
    if (!classes.empty()) {
      std::vector<ClassId> c;
      for (auto v : parse_int_list(classes, "--classes")) c.push_back(static_cast<ClassId>(v));
      f.classes = std::move(c);
    }
    if (first_k > 0) f.first_k_per_class = first_k;
    return f;
  }
};

struct TrialFlags {
  std::size_t t_min = 0;
  std::size_t t_max = 0;
  std::size_t trials = 400;
  bool no_dedupe = false;
  std::string levels = "98,90,80,70,50";
  std::size_t window = 1;
  std::string tie_rule = "summed-score";
};

// Options whose values are filesystem paths; the config echo stores them
// absolute so a replay works from any working directory.
inline const std::set<std::string>& path_options() {
  static const std::set<std::string> names{"manifest", "out-dir", "model"};
  return names;
}

inline nlohmann::ordered_json config_echo(const CLI::App& sub) {
  nlohmann::ordered_json doc;
  doc["command"] = sub.get_name();
  nlohmann::ordered_json opts = nlohmann::ordered_json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    if (opt->get_lnames().empty()) continue;
    const auto& name = opt->get_lnames().front();
    if (name == "help") continue;
    if (opt->get_expected_min() == 0) {
      opts[name] = opt->count() > 0;
      continue;
    }
    std::string value = opt->count() > 0 ? opt->as<std::string>() : opt->get_default_str();
    if (path_options().contains(name) && !value.empty()) {
      value = std::filesystem::absolute(value).lexically_normal().string();
    }
    opts[name] = value;
  }
  doc["options"] = std::move(opts);
  return doc;
}

inline std::vector<std::string> replay_args(const nlohmann::json& doc, const std::string& out_dir_override) {
  if (!doc.contains("command") || !doc.contains("options")) throw InvalidData("config echo lacks command/options");
  std::vector<std::string> args{doc["command"].get<std::string>()};
  for (const auto& [name, value] : doc["options"].items()) {
    if (value.is_boolean()) {
      if (value.get<bool>()) args.push_back("--" + name);
      continue;
    }
    std::string v = value.get<std::string>();
    if (name == "out-dir" && !out_dir_override.empty()) v = out_dir_override;
    if (v.empty()) continue;
    args.push_back("--" + name);
    args.push_back(v);
  }
  return args;
}

inline void add_common(CLI::App& sub, Common& c, bool with_manifest = true, bool with_split = false) {
  if (with_manifest) sub.add_option("--manifest", c.manifest, "Dataset manifest (JSON)")->required();
  sub.add_option("--out-dir", c.out_dir, "Directory for reports and the config echo");
  sub.add_option("--seed", c.seed, "Master seed for all randomness");
  sub.add_option("--workers", c.workers, "Worker threads for trials and matrix cells (0 = all cores)");
  sub.add_option("--lambda", c.lambda, "Ridge regularizer")->check(CLI::PositiveNumber);
  if (!with_manifest) return;
  sub.add_option("--days", c.days, "Days to keep, e.g. 1,2 or 1-3");
  if (with_split) sub.add_option("--split", c.split, "Split to keep: train or test");
  sub.add_option("--variant", c.variant, "Variant tag to keep");
  sub.add_option("--classes", c.classes, "Class ids to keep (re-indexed densely)");
  sub.add_option("--first-k", c.first_k, "Keep the first k frames per class (0 = all)");
}

inline void add_trial_flags(CLI::App& sub, TrialFlags& t) {
  sub.add_option("--t-min", t.t_min, "Smallest subset size (0 = 2)");
  sub.add_option("--t-max", t.t_max, "Largest subset size (0 = T-2)");
  sub.add_option("--trials", t.trials, "Subset trials per t")->check(CLI::PositiveNumber);
  sub.add_flag("--no-dedupe", t.no_dedupe, "Allow repeated class subsets");
  sub.add_option("--levels", t.levels, "Confidence levels in percent, comma separated");
  sub.add_option("--window", t.window, "Majority filter window applied to each trial's test stream")
      ->check(CLI::PositiveNumber);
  sub.add_option("--tie-rule", t.tie_rule, "Filter tie rule: summed-score or most-recent");
}

struct TrialSetup {
  FeatureDataset train;
  FeatureDataset test;
  std::size_t t_min = 2;
  std::size_t t_max = 2;
  SubsetTrialPlan plan;
  FilterConfig filter;
};

inline TrialSetup prepare_trials(const Common& c, const TrialFlags& tf) {
  const auto ds = load_dataset(c.manifest);
  TrialSetup s;
  s.train = select(ds, c.filter(Split::train)).dataset;
  s.test = select(ds, c.filter(Split::test)).dataset;
  const auto [lo, hi] = default_t_range(s.train.num_classes);
  s.t_min = tf.t_min == 0 ? lo : tf.t_min;
  s.t_max = tf.t_max == 0 ? hi : tf.t_max;
  if (s.t_min < 2 || s.t_max > s.train.num_classes || s.t_min > s.t_max) {
    throw InvalidArgument("t range [" + std::to_string(s.t_min) + ", " + std::to_string(s.t_max) +
                          "] invalid for " + std::to_string(s.train.num_classes) + " classes");
  }
  s.plan = SubsetTrialPlan{.num_trials = tf.trials, .dedupe = !tf.no_dedupe, .master_seed = c.seed};
  s.filter = FilterConfig{.window = tf.window, .tie_rule = parse_tie_rule(tf.tie_rule)};
  return s;
}

inline DistributionSet run_distributions(const TrialSetup& s, const Common& c) {
  SubsetWorkspace ws(s.train, s.test, c.lambda);
  if (s.filter.window == 1) return accuracy_distributions(ws, s.t_min, s.t_max, s.plan, c.workers);
  auto sets = filtered_accuracy_distributions(ws, s.t_min, s.t_max, s.plan, {s.filter.window}, s.filter, c.workers);
  return std::move(sets.at(s.filter.window));
}

inline nlohmann::ordered_json eval_json(const EvalResult& r, const FeatureDataset& test) {
  nlohmann::ordered_json doc;
  doc["accuracy"] = r.accuracy;
  doc["num_correct"] = r.num_correct;
  doc["num_total"] = r.num_total;
  nlohmann::ordered_json per = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < r.per_class_accuracy.size(); ++k) {
    nlohmann::ordered_json row;
    row["class_id"] = k;
    row["name"] = k < test.class_names.size() ? test.class_names[k] : std::string{};
    row["correct"] = r.per_class_correct[k];
    row["total"] = r.per_class_total[k];
    if (r.per_class_total[k] == 0) {
      row["accuracy"] = nullptr;
    } else {
      row["accuracy"] = r.per_class_accuracy[k];
    }
    per.push_back(std::move(row));
  }
  doc["per_class"] = std::move(per);
  return doc;
}

template <class Writer>
std::string render(Writer&& w) {
  std::ostringstream os;
  w(os);
  return os.str();
}

}  // namespace detail

/// Runs one command line (args excludes the program name). Returns the exit code.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  using namespace detail;
  CLI::App app{"Recognition reliability toolkit: incremental RLS, subset reliability, temporal filtering", "reliab"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  Common common;
  TrialFlags trial;

  SynthSpec synth_spec;
  std::string synth_encoding = "bin";
  auto* synth = app.add_subcommand("synth", "Generate a synthetic multi-day dataset");
  add_common(*synth, common, false);
  synth->add_option("--num-classes", synth_spec.num_classes, "Number of objects");
  synth->add_option("--num-categories", synth_spec.num_categories, "Number of categories (divides num-classes)");
  synth->add_option("--dim", synth_spec.dim, "Feature dimension");
  synth->add_option("--frames", synth_spec.frames_per_session, "Frames per session");
  synth->add_option("--num-days", synth_spec.num_days, "Acquisition days");
  synth->add_option("--separation", synth_spec.class_separation, "Scale of class means");
  synth->add_option("--shrink", synth_spec.within_category_shrink, "Within-category offset scale");
  synth->add_option("--noise", synth_spec.noise_sigma, "Per-dimension frame noise sigma");
  synth->add_option("--rho", synth_spec.temporal_rho, "AR(1) correlation of consecutive frames");
  synth->add_option("--drift", synth_spec.day_drift_sigma, "Per-day class mean drift sigma");
  synth->add_option("--encoding", synth_encoding, "Feature file encoding: bin or csv");

  std::string model_path;
  bool lambda_search = false;
  auto* train = app.add_subcommand("train", "Fit an RLS model and save a checkpoint");
  add_common(*train, common, true, true);
  train->add_option("--model", model_path, "Checkpoint path (default <out-dir>/model.rls)");
  train->add_flag("--lambda-search", lambda_search, "Pick lambda by 5-fold CV on a 1e-4..1e4 grid");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint; prints JSON");
  add_common(*eval, common, true, true);
  eval->add_option("--model", model_path, "Checkpoint path")->required();

  std::string xm_by = "day";
  std::size_t xm_per_class = 0;
  bool xm_no_pooled = false;
  auto* xmatrix = app.add_subcommand("xmatrix", "Train-condition x test-condition accuracy matrix");
  add_common(*xmatrix, common);
  xmatrix->add_option("--by", xm_by, "Condition axis: day or variant");
  xmatrix->add_option("--per-class", xm_per_class, "Training examples per class per row (0 = smallest available)");
  xmatrix->add_flag("--no-pooled", xm_no_pooled, "Omit the pooled all-conditions row");

  std::string inc_sources = "1,2,3";
  int inc_test_day = 4;
  std::size_t inc_step = 10;
  auto* incremental = app.add_subcommand("incremental", "Incremental learning curve across day sources");
  add_common(*incremental, common);
  incremental->add_option("--sources", inc_sources, "Training days in feeding order");
  incremental->add_option("--test-day", inc_test_day, "Day whose test split is evaluated");
  incremental->add_option("--step", inc_step, "Examples per class between checkpoints")->check(CLI::PositiveNumber);

  auto* reliability = app.add_subcommand("reliability", "Accuracy distributions and confidence level curves");
  add_common(*reliability, common);
  add_trial_flags(*reliability, trial);

  std::string windows = "1-50";
  double frame_period = kDefaultFramePeriod;
  std::string filter_tie = "summed-score";
  auto* filter = app.add_subcommand("filter", "Temporal majority-filter sweep");
  add_common(*filter, common);
  filter->add_option("--model", model_path, "Checkpoint (default: fit on the train split)");
  filter->add_option("--windows", windows, "Window sizes, e.g. 1-50 or 1,5,11");
  filter->add_option("--frame-period", frame_period, "Seconds between frames");
  filter->add_option("--tie-rule", filter_tie, "summed-score or most-recent");

  double target = 0.98;
  auto* sheet = app.add_subcommand("datasheet", "Max objects recognizable at a target accuracy per confidence level");
  add_common(*sheet, common);
  add_trial_flags(*sheet, trial);
  sheet->add_option("--target-acc", target, "Target accuracy");

  std::string replay_config;
  std::string replay_out;
  auto* replay = app.add_subcommand("replay", "Re-run a command from its config echo");
  replay->add_option("--config", replay_config, "Config echo JSON")->required();
  replay->add_option("--out-dir", replay_out, "Override the output directory");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help(app.get_subcommands().empty() ? "" : app.get_subcommands().front()->get_name());
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kInvalidArgument;
  }

  try {
    if (replay->parsed()) {
      std::ifstream is(replay_config);
      if (!is) throw IoError("cannot open config echo " + replay_config);
      nlohmann::json doc;
      try {
        doc = nlohmann::json::parse(is);
      } catch (const nlohmann::json::exception& e) {
        throw InvalidData(replay_config + ": " + e.what());
      }
      return run_cli(replay_args(doc, replay_out), out, err);
    }

    CLI::App* sub = app.get_subcommands().front();
    const std::filesystem::path dir = common.out_dir;
    ensure_dir(dir);
    write_file(dir / (sub->get_name() + ".config.json"), config_echo(*sub).dump(2) + "\n");

    if (synth->parsed()) {
      synth_spec.seed = common.seed;
      const auto enc = synth_encoding == "csv" ? FeatureEncoding::csv
                       : synth_encoding == "bin"
                           ? FeatureEncoding::bin
                           : throw InvalidArgument("--encoding must be bin or csv");
      const auto manifest = save_dataset(synth_generate(synth_spec), dir, enc);
      out << manifest.string() << '\n';
    } else if (train->parsed()) {
      const auto ds = select(load_dataset(common.manifest), common.filter(
          common.split.empty() ? std::optional<Split>(Split::train) : std::nullopt)).dataset;
      double lambda = common.lambda;
      if (lambda_search) {
        const auto search = select_lambda_kfold(feature_matrix(ds), labels_of(ds), ds.num_classes);
        lambda = search.best_lambda;
        std::ostringstream os;
        os << "lambda,cv_accuracy\n";
        for (std::size_t i = 0; i < search.grid.size(); ++i) {
          os << text::format_real(search.grid[i]) << ',' << text::format_real(search.cv_accuracy[i]) << '\n';
        }
        write_file(dir / "lambda_search.csv", os.str());
      }
      const auto model = fit_dataset(ds, lambda);
      const std::filesystem::path path = model_path.empty() ? dir / "model.rls" : std::filesystem::path(model_path);
      save_checkpoint(model, path);
      out << path.string() << '\n';
    } else if (eval->parsed()) {
      const auto model = load_checkpoint(model_path);
      const auto test = select(load_dataset(common.manifest), common.filter(
          common.split.empty() ? std::optional<Split>(Split::test) : std::nullopt)).dataset;
      const auto text = eval_json(evaluate(model, test), test).dump(2) + "\n";
      write_file(dir / "eval.json", text);
      out << text;
    } else if (xmatrix->parsed()) {
      const auto ds = load_dataset(common.manifest);
      const auto base = select(ds, common.filter()).dataset;
      std::vector<Condition> conditions;
      if (xm_by == "day") {
        std::set<int> days;
        for (const auto& f : base.frames) days.insert(f.day);
        for (int d : days) {
          auto f = common.filter(Split::train);
          f.days = std::set<int>{d};
          Condition c{"day" + std::to_string(d), select(ds, f).dataset, {}};
          f.split = Split::test;
          c.test = select(ds, f).dataset;
          conditions.push_back(std::move(c));
        }
      } else if (xm_by == "variant") {
        std::set<std::string> variants;
        for (const auto& f : base.frames) variants.insert(f.variant);
        for (const auto& v : variants) {
          auto f = common.filter(Split::train);
          f.variant = v;
          Condition c{v, select(ds, f).dataset, {}};
          f.split = Split::test;
          c.test = select(ds, f).dataset;
          conditions.push_back(std::move(c));
        }
      } else {
        throw InvalidArgument("--by must be day or variant");
      }
      CrossMatrixOptions opts;
      if (xm_per_class > 0) opts.train_per_class = xm_per_class;
      opts.include_pooled = !xm_no_pooled;
      opts.workers = common.workers;
      const auto csv = render([&](std::ostream& os) { write_cross_matrix_csv(os, cross_matrix(conditions, common.lambda, opts)); });
      write_file(dir / "xmatrix.csv", csv);
      out << csv;
    } else if (incremental->parsed()) {
      const auto ds = load_dataset(common.manifest);
      std::vector<TaggedSource> sources;
      for (auto d : parse_int_list(inc_sources, "--sources")) {
        auto f = common.filter(Split::train);
        f.days = std::set<int>{static_cast<int>(d)};
        sources.push_back({"day" + std::to_string(d), select(ds, f).dataset});
      }
      auto tf = common.filter(Split::test);
      tf.days = std::set<int>{inc_test_day};
      tf.first_k_per_class.reset();
      const auto test = select(ds, tf).dataset;
      const auto csv = render([&](std::ostream& os) {
        write_learning_curve_csv(os, incremental_curve(sources, test, inc_step, common.lambda));
      });
      write_file(dir / "curve.csv", csv);
      out << csv;
    } else if (reliability->parsed()) {
      const auto setup = prepare_trials(common, trial);
      const auto levels = parse_percent_list(trial.levels, "--levels");
      const auto dists = run_distributions(setup, common);
      std::vector<ConfidenceCurve> curves;
      for (double l : levels) curves.push_back(level_curve(dists, l));
      write_file(dir / "distribution.csv", render([&](std::ostream& os) { write_distribution_csv(os, dists); }));
      const auto summary = render([&](std::ostream& os) { write_summary_csv(os, dists); });
      write_file(dir / "summary.csv", summary);
      write_file(dir / "level_curves.csv", render([&](std::ostream& os) { write_level_curves_csv(os, curves); }));
      out << summary;
    } else if (filter->parsed()) {
      const auto ds = load_dataset(common.manifest);
      const auto test = select(ds, common.filter(Split::test)).dataset;
      const auto model = model_path.empty() ? fit_dataset(select(ds, common.filter(Split::train)).dataset, common.lambda)
                                            : load_checkpoint(model_path);
      std::vector<std::size_t> ws;
      for (auto w : parse_int_list(windows, "--windows")) {
        if (w < 1) throw InvalidArgument("--windows: sizes must be >= 1");
        ws.push_back(static_cast<std::size_t>(w));
      }
      if (ws.empty()) throw InvalidArgument("--windows: empty list");
      const auto rows = filter_sweep(make_trace(model, test), ws, frame_period, parse_tie_rule(filter_tie));
      const auto csv = render([&](std::ostream& os) { write_sweep_csv(os, rows); });
      write_file(dir / "sweep.csv", csv);
      out << csv;
    } else if (sheet->parsed()) {
      const auto setup = prepare_trials(common, trial);
      const auto levels = parse_percent_list(trial.levels, "--levels");
      const auto dists = run_distributions(setup, common);
      const auto result = datasheet(dists, levels, target);
      write_file(dir / "summary.csv", render([&](std::ostream& os) { write_summary_csv(os, dists); }));
      write_file(dir / "datasheet.csv", render([&](std::ostream& os) { write_datasheet_csv(os, result); }));
      const auto table = render([&](std::ostream& os) { write_datasheet_table(os, result); });
      write_file(dir / "datasheet.txt", table);
      out << table;
    }
    return kOk;
  } catch (const InvalidArgument& e) {
    err << "invalid argument: " << e.what() << '\n';
    return kInvalidArgument;
  } catch (const InvalidData& e) {
    err << "invalid data: " << e.what() << '\n';
    return kInvalidData;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << '\n';
    return kIoError;
  }
}

}  // namespace reliab::cli

#include "collapse_lab/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "collapse_lab/balancing.hpp"
#include "collapse_lab/dataset.hpp"
#include "collapse_lab/error.hpp"
#include "collapse_lab/format.hpp"
#include "collapse_lab/kernels.hpp"
#include "collapse_lab/nc1.hpp"
#include "collapse_lab/retrain.hpp"
#include "collapse_lab/svm.hpp"
#include "collapse_lab/sweep.hpp"
#include "collapse_lab/synth.hpp"

namespace collapse_lab::cli {

namespace {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

// All resolved settings of a subcommand, in declaration order.
ojson provenance(const CLI::App& sub) {
  ojson settings = ojson::object();
  for (const CLI::Option* opt : sub.get_options()) {
    const std::string name = opt->get_single_name();
    if (name.empty() || name == "help" || name == "config") continue;
    if (opt->count() > 0) {
      std::string joined;
      for (const auto& r : opt->results()) {
        if (!joined.empty()) joined += ',';
        joined += r;
      }
      settings[name] = joined;
    } else {
      std::string d = opt->get_default_str();
      if (d.size() >= 2 && ((d.front() == '[' && d.back() == ']') || (d.front() == '{' && d.back() == '}'))) {
        d = d.substr(1, d.size() - 2);
      }
      settings[name] = d;
    }
  }
  ojson p;
  p["tool"] = "collapse_lab";
  p["version"] = kVersion;
  p["command"] = sub.get_name();
  p["settings"] = settings;
  return p;
}

// Schema line, provenance comment, then the body without its own schema line.
std::string csv_with_provenance(const std::string& csv, const ojson& prov) {
  std::string body = csv;
  const std::string schema = std::string(kCsvSchemaLine) + "\n";
  if (body.rfind(schema, 0) == 0) body.erase(0, schema.size());
  return schema + "# provenance=" + prov.dump() + "\n" + body;
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot write " + path.string());
  f << text;
  if (!f) throw ValidationError("failed writing " + path.string());
}

void emit(const std::string& text, const std::string& out_path, std::ostream& out) {
  if (out_path.empty()) out << text;
  else write_file(out_path, text);
}

std::string json_text(const ojson& j) { return j.dump(2) + "\n"; }

EmbeddingDataset load_split(const std::string& path, const std::string& split) {
  if (!split.empty()) {
    const Manifest mf = read_manifest(path);
    if (mf.split != split) {
      throw ValidationError("manifest " + path + " has split '" + mf.split +
                            "', expected '" + split + "'");
    }
  }
  return load_dataset(path);
}

struct TrainFlags {
  double lr = 0.01;
  std::size_t steps = 1000;
  std::size_t epochs = 0;
  std::size_t batch = 32;
  std::uint64_t seed = 0;

  void add_to(CLI::App* sub) {
    sub->add_option("--lr", lr, "learning rate");
    sub->add_option("--steps", steps, "gradient steps (ignored when --epochs > 0)");
    sub->add_option("--epochs", epochs, "passes over the training set");
    sub->add_option("--batch-size", batch, "mini-batch size, 0 for full batch");
    sub->add_option("--seed", seed, "seed");
  }
  TrainConfig config() const { return TrainConfig{lr, steps, epochs, batch, seed}; }
};

TrainingPlan balance_plan(const std::string& balance, const std::string& axis,
                          const EmbeddingDataset& d, std::uint64_t seed) {
  const BalanceAxis ax = parse_balance_axis(axis);
  if (balance == "none") return TrainingPlan::none();
  if (balance == "subset") return TrainingPlan::from(plan_subsetting(d, ax, seed));
  if (balance == "upsample") return TrainingPlan::from(plan_upsampling(d, ax));
  if (balance == "upweight") return TrainingPlan::from(plan_upweighting(d, ax));
  throw ValidationError("unknown balancing strategy '" + balance + "'");
}

std::string weights_csv(const std::vector<double>& w) {
  std::ostringstream s;
  s << kCsvSchemaLine << "\nindex,weight\n";
  char buf[40];
  for (std::size_t i = 0; i < w.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.12g", w[i]);
    s << i << ',' << buf << '\n';
  }
  return s.str();
}

using Action = std::function<int()>;

// Options that must be set on the command line or in the config file. They
// are checked after the config file is merged, so CLI11's own required()
// cannot be used.
constexpr const char* kRequired = "Required";

void check_required(const CLI::App* sub) {
  for (const CLI::Option* opt : sub->get_options()) {
    if (opt->get_group() == kRequired && opt->count() == 0) {
      throw ValidationError(opt->get_name() + " is required");
    }
  }
}

void add_config_option(CLI::App* sub) {
  sub->add_option("--config", "key=value settings file; flags on the command line win");
}

// Fills options not given on the command line from a key=value file.
void apply_config(CLI::App* sub) {
  const CLI::Option* cfg = sub->get_option("--config");
  if (cfg->count() == 0) return;
  const std::string path = cfg->results().front();
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigTOML().from_file(path);
  } catch (const CLI::FileError& e) {
    throw ValidationError(std::string("config file: ") + e.what());
  }
  for (const auto& item : items) {
    if (!item.parents.empty() && !(item.parents.size() == 1 && item.parents[0] == sub->get_name())) {
      continue;
    }
    if (item.name == "++" || item.name == "--") continue;
    CLI::Option* opt = nullptr;
    try {
      opt = sub->get_option("--" + item.name);
    } catch (const CLI::OptionNotFound&) {
      throw ValidationError("config file " + path + ": unknown setting '" + item.name + "'");
    }
    if (item.name == "config") throw ValidationError("config files cannot nest");
    if (opt->count() > 0) continue;
    std::vector<std::string> values;
    for (const auto& v : item.inputs) {
      if (opt->get_delimiter() != '\0' && v.find(opt->get_delimiter()) != std::string::npos) {
        std::stringstream ss(v);
        std::string part;
        while (std::getline(ss, part, opt->get_delimiter())) values.push_back(part);
      } else {
        values.push_back(v);
      }
    }
    try {
      opt->add_result(values);
      opt->run_callback();
    } catch (const CLI::Error& e) {
      throw ValidationError("config file " + path + ": setting '" + item.name + "': " + e.what());
    }
  }
}

// --- nc1 -------------------------------------------------------------------

Action add_nc1(CLI::App& app, std::ostream& out, std::ostream& err) {
  struct Flags {
    std::string data, mode = "hutchinson", dist = "rademacher", solver = "gram_exact", split,
                     out_path;
    std::size_t probes = 10;
    std::uint64_t seed = 0;
    double tol = 1e-8;
    std::size_t max_iter = 0;
    std::size_t dense_limit = kDefaultDenseLimit;
    bool sequential = false;
  };
  auto f = std::make_shared<Flags>();
  CLI::App* sub = app.add_subcommand("nc1", "within-class variability metric of an embedding file");
  add_config_option(sub);
  sub->add_option("--data", f->data, "dataset manifest")->group(kRequired);
  sub->add_option("--mode", f->mode, "exact or hutchinson")
      ->check(CLI::IsMember({"exact", "hutchinson"}));
  sub->add_option("--probes", f->probes, "number of probe vectors");
  sub->add_option("--dist", f->dist, "probe distribution")
      ->check(CLI::IsMember({"rademacher", "gaussian"}));
  sub->add_option("--seed", f->seed, "probe seed");
  sub->add_option("--solver", f->solver, "gram_exact or iterative");
  sub->add_option("--tol", f->tol, "iterative solver tolerance");
  sub->add_option("--max-iter", f->max_iter, "iterative solver cap (0 = default)");
  sub->add_option("--dense-limit", f->dense_limit, "largest N for dense matrices");
  sub->add_flag("--sequential", f->sequential, "one data pass per probe");
  sub->add_option("--split", f->split, "required manifest split");
  sub->add_option("--out", f->out_path, "output file (default stdout)");
  return [f, sub, &out, &err]() {
    const auto d = load_split(f->data, f->split);
    Nc1Report rep;
    if (f->mode == "exact") {
      rep = nc1_exact(d, f->dense_limit);
    } else {
      HutchinsonOptions opts;
      opts.probes = f->probes;
      opts.distribution = parse_probe_distribution(f->dist);
      opts.seed = f->seed;
      opts.solve.method = parse_pinv_method(f->solver);
      opts.solve.tol = f->tol;
      opts.solve.max_iter = f->max_iter;
      opts.block = !f->sequential;
      rep = nc1_hutchinson(d, opts);
    }
    ojson j = to_json(rep);
    j["provenance"] = provenance(*sub);
    emit(json_text(j), f->out_path, out);
    if (!rep.all_converged()) {
      ojson e;
      e["error"] = {{"type", "numerical_error"},
                    {"message", "iterative solve did not converge for every probe"},
                    {"exit_code", kExitNumerical}};
      err << e.dump() << '\n';
      return kExitNumerical;
    }
    return kExitOk;
  };
}

// --- memcalc ---------------------------------------------------------------

Action add_memcalc(CLI::App& app, std::ostream& out) {
  struct Flags {
    std::uint64_t n = 0;
    std::string out_path;
  };
  auto f = std::make_shared<Flags>();
  CLI::App* sub = app.add_subcommand("memcalc", "memory of dense versus streaming evaluation");
  add_config_option(sub);
  sub->add_option("--n", f->n, "feature dimension")->group(kRequired)->check(CLI::PositiveNumber);
  sub->add_option("--out", f->out_path, "output file (default stdout)");
  return [f, sub, &out]() {
    ojson j = to_json(memory_requirements(f->n));
    j["provenance"] = provenance(*sub);
    emit(json_text(j), f->out_path, out);
    return kExitOk;
  };
}

// --- llr -------------------------------------------------------------------

Action add_llr(CLI::App& app, std::ostream& out) {
  struct Flags {
    std::string data, test, balance = "none", axis = "group", checkpoint, split, out_dir;
    std::optional<double> afr_gamma;
    TrainFlags train;
  };
  auto f = std::make_shared<Flags>();
  CLI::App* sub = app.add_subcommand("llr", "retrain a linear layer on held-out embeddings");
  add_config_option(sub);
  sub->add_option("--data", f->data, "held-out manifest")->group(kRequired);
  sub->add_option("--test", f->test, "test manifest")->group(kRequired);
  sub->add_option("--balance", f->balance, "none, subset, upsample or upweight")
      ->check(CLI::IsMember({"none", "subset", "upsample", "upweight"}));
  sub->add_option("--axis", f->axis, "class or group")->check(CLI::IsMember({"class", "group"}));
  sub->add_option("--afr-gamma", f->afr_gamma, "loss-based reweighting inverse temperature");
  sub->add_option("--erm-checkpoint", f->checkpoint, "stage-one classifier header");
  f->train.add_to(sub);
  sub->add_option("--split", f->split, "required split of --data");
  sub->add_option("--out-dir", f->out_dir, "directory for report, checkpoint and weights")
      ->group(kRequired);
  return [f, sub, &out]() {
    const auto d = load_split(f->data, f->split);
    const auto test = load_dataset(f->test);
    TrainingPlan plan;
    if (f->afr_gamma) {
      const double gamma = *f->afr_gamma;
      if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ValidationError("--afr-gamma must be >= 0");
      if (f->balance != "none") throw ValidationError("--afr-gamma requires --balance none");
      std::vector<double> p(d.size(), 1.0);
      if (gamma > 0.0) {
        if (f->checkpoint.empty()) throw ValidationError("--afr-gamma > 0 needs --erm-checkpoint");
        const auto ref = load_classifier(f->checkpoint);
        p = ref.true_class_probability(d.features(), d.class_labels());
      }
      plan = TrainingPlan::from_weights(
          afr_weights(p, d.class_labels(), gamma, d.num_classes()).weights);
    } else {
      plan = balance_plan(f->balance, f->axis, d, f->train.seed);
    }
    const auto clf = train_linear(d, f->train.config(), plan);
    const auto rep = evaluate(clf, test);
    const ojson prov = provenance(*sub);
    ojson j = to_json(rep);
    j["provenance"] = prov;
    const fs::path dir = f->out_dir;
    fs::create_directories(dir);
    write_file(dir / "llr_report.json", json_text(j));
    write_file(dir / "llr_report.csv", csv_with_provenance(to_csv(rep), prov));
    write_file(dir / "llr_weights.csv",
               csv_with_provenance(weights_csv(effective_weights(plan, d.size())), prov));
    save_classifier(clf, dir / "llr_checkpoint");
    out << json_text(j);
    return kExitOk;
  };
}

// --- balance ---------------------------------------------------------------

Action add_balance(CLI::App& app, std::ostream& out) {
  struct Flags {
    std::string data, strategy = "upweight", axis = "group", split, out_path;
    std::uint64_t seed = 0;
  };
  auto f = std::make_shared<Flags>();
  CLI::App* sub = app.add_subcommand("balance", "emit a balancing plan for a dataset");
  add_config_option(sub);
  sub->add_option("--data", f->data, "dataset manifest")->group(kRequired);
  sub->add_option("--strategy", f->strategy, "subset, upsample or upweight")
      ->check(CLI::IsMember({"subset", "upsample", "upweight"}));
  sub->add_option("--axis", f->axis, "class or group")->check(CLI::IsMember({"class", "group"}));
  sub->add_option("--seed", f->seed, "seed for subsetting");
  sub->add_option("--split", f->split, "required manifest split");
  sub->add_option("--out", f->out_path, "output file (default stdout)");
  return [f, sub, &out]() {
    const auto d = load_split(f->data, f->split);
    const BalanceAxis ax = parse_balance_axis(f->axis);
    BalancePlan plan;
    if (f->strategy == "subset") plan = plan_subsetting(d, ax, f->seed);
    else if (f->strategy == "upsample") plan = plan_upsampling(d, ax);
    else plan = plan_upweighting(d, ax);
    ojson j = to_json(plan);
    j["provenance"] = provenance(*sub);
    emit(json_text(j), f->out_path, out);
    return kExitOk;
  };
}

// --- sweep -----------------------------------------------------------------

Action add_sweep(CLI::App& app, std::ostream& out) {
  struct Flags {
    std::vector<double> erm_ratios{0.05, 0.1, 0.2, 0.5, 1.0};
    std::vector<double> llr_ratios{0.05, 0.1, 0.2, 0.5, 1.0};
    std::vector<std::string> methods{"none"};
    std::vector<std::uint64_t> seeds{0, 1, 2};
    SweepConfig cfg;
    std::string out_dir;
  };
  auto f = std::make_shared<Flags>();
  auto& c = f->cfg;
  CLI::App* sub = app.add_subcommand("sweep", "two-stage group-ratio sweep on synthetic data");
  add_config_option(sub);
  sub->add_option("--erm-ratios", f->erm_ratios, "stage-one group ratios")->delimiter(',');
  sub->add_option("--ratios", f->llr_ratios, "held-out group ratios")->delimiter(',');
  sub->add_option("--methods", f->methods, "retraining methods")->delimiter(',');
  sub->add_option("--seeds", f->seeds, "seeds")->delimiter(',');
  sub->add_option("--dim", c.testbed.dim, "feature dimension");
  sub->add_option("--core", c.testbed.core_strength, "core signal strength");
  sub->add_option("--spurious", c.testbed.spurious_strength, "spurious signal strength");
  sub->add_option("--noise", c.testbed.noise, "noise scale");
  sub->add_option("--erm-majority", c.erm_majority, "majority group size of stage-one sets");
  sub->add_option("--heldout-majority", c.heldout_majority, "majority group size of held-out sets");
  sub->add_option("--test-per-group", c.test_per_group, "test examples per group");
  sub->add_option("--erm-lr", c.erm_train.learning_rate, "stage-one learning rate");
  sub->add_option("--erm-epochs", c.erm_train.epochs, "stage-one epochs");
  sub->add_option("--erm-batch-size", c.erm_train.batch_size, "stage-one batch size");
  sub->add_option("--lr", c.llr_train.learning_rate, "retraining learning rate");
  sub->add_option("--epochs", c.llr_train.epochs, "retraining epochs");
  sub->add_option("--batch-size", c.llr_train.batch_size, "retraining batch size");
  sub->add_option("--workers", c.workers, "worker threads over cells (0 = thread limit)");
  sub->add_option("--out-dir", f->out_dir, "output directory")->group(kRequired);
  return [f, sub, &out]() {
    SweepConfig cfg = f->cfg;
    cfg.erm_ratios = f->erm_ratios;
    cfg.llr_ratios = f->llr_ratios;
    cfg.seeds = f->seeds;
    cfg.methods.clear();
    for (const auto& m : f->methods) cfg.methods.push_back(RetrainMethod::parse(m));
    const auto result = run_sweep(cfg);
    const ojson prov = provenance(*sub);
    const fs::path dir = f->out_dir;
    fs::create_directories(dir);
    write_file(dir / "sweep_rows.csv", csv_with_provenance(rows_csv(result), prov));
    write_file(dir / "sweep_erm.csv", csv_with_provenance(erm_rows_csv(result), prov));
    write_file(dir / "sweep_aggregate.csv", csv_with_provenance(aggregate_csv(result), prov));
    write_file(dir / "sweep_pearson.csv", csv_with_provenance(pearson_csv(result), prov));
    std::size_t failed = 0;
    for (const auto& r : result.rows) failed += r.status != "ok";
    for (const auto& r : result.erm_rows) failed += r.status != "ok";
    ojson j;
    j["rows"] = result.rows.size();
    j["erm_rows"] = result.erm_rows.size();
    j["failed_cells"] = failed;
    j["files"] = {"sweep_rows.csv", "sweep_erm.csv", "sweep_aggregate.csv", "sweep_pearson.csv"};
    j["provenance"] = prov;
    write_file(dir / "sweep.json", json_text(j));
    out << json_text(j);
    return kExitOk;
  };
}

// --- margin ----------------------------------------------------------------

Action add_margin(CLI::App& app, std::ostream& out) {
  struct Flags {
    std::string data, test, split, out_path;
    std::vector<std::uint64_t> seeds{0, 1, 2};
    TrainFlags train;
  };
  auto f = std::make_shared<Flags>();
  CLI::App* sub = app.add_subcommand("margin", "held-out group margins against test accuracy");
  add_config_option(sub);
  sub->add_option("--data", f->data, "held-out manifest")->group(kRequired);
  sub->add_option("--test", f->test, "test manifest")->group(kRequired);
  sub->add_option("--seeds", f->seeds, "training seeds")->delimiter(',');
  f->train.add_to(sub);
  sub->add_option("--split", f->split, "required split of --data");
  sub->add_option("--out", f->out_path, "output CSV (default stdout)");
  return [f, sub, &out]() {
    const auto d = load_split(f->data, f->split);
    const auto test = load_dataset(f->test);
    if (test.num_groups() != d.num_groups()) {
      throw ValidationError("held-out and test sets have different group counts");
    }
    const std::size_t groups = d.num_groups();
    std::vector<std::vector<double>> margins(groups);
    std::vector<std::vector<double>> accs(groups);
    std::vector<double> all_m;
    std::vector<double> all_a;
    for (auto seed : f->seeds) {
      TrainConfig tc = f->train.config();
      tc.seed = seed;
      const auto clf = train_linear(d, tc);
      const auto m = min_group_margins(clf, d);
      const auto rep = evaluate(clf, test);
      for (std::size_t g = 0; g < groups; ++g) {
        if (!m[g] || !rep.group_accuracy[g]) continue;
        margins[g].push_back(*m[g]);
        accs[g].push_back(*rep.group_accuracy[g]);
        all_m.push_back(*m[g]);
        all_a.push_back(*rep.group_accuracy[g]);
      }
    }
    auto mean = [](const std::vector<double>& v) -> std::optional<double> {
      if (v.empty()) return std::nullopt;
      double s = 0.0;
      for (double x : v) s += x;
      return s / static_cast<double>(v.size());
    };
    auto corr = [](const std::vector<double>& a, const std::vector<double>& b) -> std::optional<double> {
      try {
        return pearson(a, b);
      } catch (const ValidationError&) {
        return std::nullopt;
      }
    };
    std::ostringstream csv;
    csv << kCsvSchemaLine << "\ngroup,min_margin,test_accuracy,pearson_r\n";
    for (std::size_t g = 0; g < groups; ++g) {
      csv << g << ',' << format_optional(mean(margins[g])) << ',' << format_optional(mean(accs[g]))
          << ',' << format_optional(corr(margins[g], accs[g])) << '\n';
    }
    csv << "all," << format_optional(mean(all_m)) << ',' << format_optional(mean(all_a)) << ','
        << format_optional(corr(all_m, all_a)) << '\n';
    emit(csv_with_provenance(csv.str(), provenance(*sub)), f->out_path, out);
    return kExitOk;
  };
}

// --- svm-err ---------------------------------------------------------------

Action add_svm_err(CLI::App& app, std::ostream& out) {
  struct Flags {
    std::string data, split, out_path;
    std::vector<std::size_t> checkpoints;
    double lr = 0.001;
    std::size_t batch = 0;
    std::uint64_t seed = 0;
  };
  auto f = std::make_shared<Flags>();
  CLI::App* sub = app.add_subcommand("svm-err", "directional error of gradient descent to the max-margin solution");
  add_config_option(sub);
  sub->add_option("--data", f->data, "binary dataset manifest")->group(kRequired);
  sub->add_option("--checkpoints", f->checkpoints, "steps to record")
      ->delimiter(',')
      ->group(kRequired);
  sub->add_option("--lr", f->lr, "learning rate");
  sub->add_option("--batch-size", f->batch, "mini-batch size, 0 for full batch");
  sub->add_option("--seed", f->seed, "seed");
  sub->add_option("--split", f->split, "required manifest split");
  sub->add_option("--out", f->out_path, "output CSV (default stdout)");
  return [f, sub, &out]() {
    const auto d = load_split(f->data, f->split);
    TrainConfig tc;
    tc.learning_rate = f->lr;
    tc.batch_size = f->batch;
    tc.seed = f->seed;
    const auto trace = implicit_bias_trace(d, tc, f->checkpoints, SvmOptions{});
    std::ostringstream csv;
    csv << kCsvSchemaLine << "\nstep,directional_error,train_loss\n";
    for (const auto& p : trace.points) {
      csv << p.step << ',' << format_double(p.directional_error) << ','
          << format_double(p.train_loss) << '\n';
    }
    emit(csv_with_provenance(csv.str(), provenance(*sub)), f->out_path, out);
    return kExitOk;
  };
}

// --- synth -----------------------------------------------------------------

Action add_synth(CLI::App& app, std::ostream& out) {
  struct Flags {
    std::string kind = "spurious", out_stem, dtype = "f64", split;
    SpuriousSpec spec;
    std::vector<std::size_t> group_counts;
    std::size_t per_class = 100;
    double jitter = 0.0;
    bool csv = false;
  };
  auto f = std::make_shared<Flags>();
  auto& s = f->spec;
  CLI::App* sub = app.add_subcommand("synth", "write a synthetic embedding dataset");
  add_config_option(sub);
  sub->add_option("--kind", f->kind, "spurious or collapsed")
      ->check(CLI::IsMember({"spurious", "collapsed"}));
  sub->add_option("--dim", s.dim, "feature dimension");
  sub->add_option("--classes", s.num_classes, "number of classes");
  sub->add_option("--groups-per-class", s.groups_per_class, "groups per class");
  sub->add_option("--core", s.core_strength, "core signal strength");
  sub->add_option("--spurious", s.spurious_strength, "spurious signal strength");
  sub->add_option("--noise", s.noise, "noise scale");
  sub->add_option("--majority", s.majority_count, "majority group size");
  sub->add_option("--ratio", s.group_ratio, "minority / majority group ratio");
  sub->add_option("--group-counts", f->group_counts, "explicit per-group counts")->delimiter(',');
  sub->add_option("--per-class", f->per_class, "examples per class (collapsed)");
  sub->add_option("--jitter", f->jitter, "uniform jitter magnitude (collapsed)");
  sub->add_option("--seed", s.seed, "seed");
  sub->add_option("--dtype", f->dtype, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
  sub->add_flag("--csv", f->csv, "write text files instead of binary blobs");
  sub->add_option("--split", f->split, "split name recorded in the manifest");
  sub->add_option("--out", f->out_stem, "output path stem")->group(kRequired);
  return [f, sub, &out]() {
    SpuriousSpec spec = f->spec;
    spec.group_counts = f->group_counts;
    const EmbeddingDataset d =
        f->kind == "collapsed"
            ? generate_collapsed(spec.dim, spec.num_classes, f->per_class, f->jitter, spec.seed)
            : generate_spurious(spec);
    const ojson prov = provenance(*sub);
    SaveOptions so;
    so.dtype = f->dtype == "f32" ? FeatureDtype::f32 : FeatureDtype::f64;
    so.csv = f->csv;
    so.split = f->split;
    so.provenance = prov;
    const fs::path manifest = save_dataset(d, f->out_stem, so);
    ojson j;
    j["manifest"] = manifest.string();
    j["m"] = d.size();
    j["n"] = d.dim();
    j["group_counts"] = group_stats(d).group_counts;
    j["provenance"] = prov;
    out << json_text(j);
    return kExitOk;
  };
}

// --- eval ------------------------------------------------------------------

Action add_eval(CLI::App& app, std::ostream& out) {
  struct Flags {
    std::string checkpoint, data, split, format = "json", out_path;
  };
  auto f = std::make_shared<Flags>();
  CLI::App* sub = app.add_subcommand("eval", "group accuracies of a saved classifier");
  add_config_option(sub);
  sub->add_option("--checkpoint", f->checkpoint, "classifier header")->group(kRequired);
  sub->add_option("--data", f->data, "dataset manifest")->group(kRequired);
  sub->add_option("--split", f->split, "required manifest split");
  sub->add_option("--format", f->format, "json or csv")->check(CLI::IsMember({"json", "csv"}));
  sub->add_option("--out", f->out_path, "output file (default stdout)");
  return [f, sub, &out]() {
    const auto clf = load_classifier(f->checkpoint);
    const auto d = load_split(f->data, f->split);
    const auto rep = evaluate(clf, d);
    const ojson prov = provenance(*sub);
    if (f->format == "csv") {
      emit(csv_with_provenance(to_csv(rep), prov), f->out_path, out);
    } else {
      ojson j = to_json(rep);
      j["provenance"] = prov;
      emit(json_text(j), f->out_path, out);
    }
    return kExitOk;
  };
}

int report_error(std::ostream& err, const char* type, const std::string& message, int code) {
  ojson e;
  e["error"] = {{"type", type}, {"message", message}, {"exit_code", code}};
  err << e.dump() << '\n';
  return code;
}

void apply_thread_settings(std::optional<int> threads, bool deterministic) {
  if (const char* env = std::getenv("COLLAPSE_LAB_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n > 0) kernels::set_thread_limit(n);
    } catch (const std::exception&) {
      throw ValidationError(std::string("COLLAPSE_LAB_THREADS is not an integer: ") + env);
    }
  }
  if (threads) kernels::set_thread_limit(*threads);
  if (deterministic) kernels::set_thread_limit(1);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Neural-collapse and last-layer retraining experiments on embeddings",
               "collapse_lab"};
  app.require_subcommand(1);
  app.fallthrough();
  app.require_subcommand(1);
  std::optional<int> threads;
  bool deterministic = false;
  app.add_option("--threads", threads, "cap on worker threads")->check(CLI::PositiveNumber);
  app.add_flag("--deterministic", deterministic, "run every kernel on one thread");
  app.set_version_flag("--version", kVersion);

  std::vector<std::pair<CLI::App*, Action>> actions;
  auto reg = [&](Action a) { actions.emplace_back(app.get_subcommands({}).back(), std::move(a)); };
  reg(add_nc1(app, out, err));
  reg(add_memcalc(app, out));
  reg(add_llr(app, out));
  reg(add_balance(app, out));
  reg(add_sweep(app, out));
  reg(add_margin(app, out));
  reg(add_svm_err(app, out));
  reg(add_synth(app, out));
  reg(add_eval(app, out));

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return kExitOk;
    }
    return report_error(err, "usage_error", e.what(), kExitValidation);
  }

  try {
    apply_thread_settings(threads, deterministic);
    for (auto& [sub, action] : actions) {
      if (sub->parsed()) {
        apply_config(sub);
        check_required(sub);
        return action();
      }
    }
    return report_error(err, "usage_error", "no subcommand", kExitValidation);
  } catch (const ValidationError& e) {
    return report_error(err, "validation_error", e.what(), kExitValidation);
  } catch (const InfeasibleError& e) {
    return report_error(err, "infeasible", e.what(), kExitNumerical);
  } catch (const NumericalError& e) {
    return report_error(err, "numerical_error", e.what(), kExitNumerical);
  } catch (const std::exception& e) {
    return report_error(err, "internal_error", e.what(), kExitNumerical);
  }
}

}  // namespace collapse_lab::cli

#include "collapse_lab/sweep.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <map>
#include <sstream>

#include <omp.h>

#include "collapse_lab/error.hpp"
#include "collapse_lab/format.hpp"
#include "collapse_lab/kernels.hpp"
#include "collapse_lab/rng.hpp"

namespace collapse_lab {

namespace {

constexpr std::uint64_t kTrainTag = 0x7472;
constexpr std::uint64_t kHeldoutTag = 0x686f;
constexpr std::uint64_t kTestTag = 0x7465;

std::uint64_t ratio_bits(double r) { return std::bit_cast<std::uint64_t>(r); }

struct MeanStd {
  std::size_t n = 0;
  std::optional<double> mean;
  std::optional<double> sd;
};

MeanStd mean_std(const std::vector<double>& v) {
  MeanStd out;
  out.n = v.size();
  if (v.empty()) return out;
  double s = 0.0;
  for (double x : v) s += x;
  const double m = s / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  out.mean = m;
  out.sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  return out;
}

void fill_scores(CellResult& cell, const EvalReport& rep) {
  cell.wga = rep.worst_group_accuracy;
  cell.aa = rep.average_accuracy;
  cell.group_accuracy = rep.group_accuracy;
}

EmbeddingDataset draw(const SpuriousSpec& base, std::size_t majority, double ratio,
                      std::uint64_t seed) {
  SpuriousSpec spec = base;
  spec.group_counts.clear();
  spec.majority_count = majority;
  spec.group_ratio = ratio;
  spec.seed = seed;
  return generate_spurious(spec);
}

EmbeddingDataset draw_test(const SpuriousSpec& base, std::size_t per_group, std::uint64_t seed) {
  SpuriousSpec spec = base;
  spec.group_counts.assign(base.num_classes * base.groups_per_class, per_group);
  spec.seed = seed;
  return generate_spurious(spec);
}

std::string group_header(std::size_t groups) {
  std::string h;
  for (std::size_t g = 0; g < groups; ++g) h += ",acc_g" + std::to_string(g);
  return h;
}

void write_scores(std::ostringstream& out, const CellResult& c, std::size_t groups) {
  out << ',' << csv_text(c.status) << ',' << format_optional(c.wga) << ','
      << format_optional(c.aa);
  for (std::size_t g = 0; g < groups; ++g) {
    out << ',' << (g < c.group_accuracy.size() ? format_optional(c.group_accuracy[g]) : "");
  }
  out << '\n';
}

std::string optional_setting(const std::optional<double>& v) {
  return v ? format_setting(*v) : std::string{};
}

}  // namespace

RetrainMethod RetrainMethod::parse(const std::string& text) {
  RetrainMethod m;
  if (text == "none") return m;
  if (text == "afr" || text.rfind("afr:", 0) == 0) {
    m.kind = Kind::afr;
    m.axis = BalanceAxis::class_label;
    if (text.size() > 4) {
      try {
        std::size_t used = 0;
        m.afr_gamma = std::stod(text.substr(4), &used);
        if (used != text.size() - 4) throw std::invalid_argument(text);
      } catch (const std::exception&) {
        throw ValidationError("bad AFR gamma in method '" + text + "'");
      }
      if (!(m.afr_gamma >= 0.0) || !std::isfinite(m.afr_gamma)) {
        throw ValidationError("AFR gamma must be >= 0");
      }
    }
    return m;
  }
  const auto dash = text.find('-');
  if (dash == std::string::npos) throw ValidationError("unknown method '" + text + "'");
  const std::string kind = text.substr(0, dash);
  if (kind == "subset") m.kind = Kind::subset;
  else if (kind == "upsample") m.kind = Kind::upsample;
  else if (kind == "upweight") m.kind = Kind::upweight;
  else throw ValidationError("unknown method '" + text + "'");
  m.axis = parse_balance_axis(text.substr(dash + 1));
  return m;
}

std::string RetrainMethod::name() const {
  switch (kind) {
    case Kind::none: return "none";
    case Kind::afr: return "afr:" + format_setting(afr_gamma);
    case Kind::subset: return "subset-" + to_string(axis);
    case Kind::upsample: return "upsample-" + to_string(axis);
    case Kind::upweight: return "upweight-" + to_string(axis);
  }
  return "none";
}

TrainingPlan make_training_plan(const RetrainMethod& method, const EmbeddingDataset& heldout,
                                std::uint64_t seed, const LinearClassifier* reference) {
  switch (method.kind) {
    case RetrainMethod::Kind::none: return TrainingPlan::none();
    case RetrainMethod::Kind::subset:
      return TrainingPlan::from(plan_subsetting(heldout, method.axis, seed));
    case RetrainMethod::Kind::upsample:
      return TrainingPlan::from(plan_upsampling(heldout, method.axis));
    case RetrainMethod::Kind::upweight:
      return TrainingPlan::from(plan_upweighting(heldout, method.axis));
    case RetrainMethod::Kind::afr: {
      std::vector<double> p(heldout.size(), 1.0);
      if (method.afr_gamma > 0.0) {
        if (reference == nullptr) {
          throw ValidationError("AFR with gamma > 0 needs a stage-one classifier");
        }
        p = reference->true_class_probability(heldout.features(), heldout.class_labels());
      }
      return TrainingPlan::from_weights(
          afr_weights(p, heldout.class_labels(), method.afr_gamma, heldout.num_classes()).weights);
    }
  }
  return TrainingPlan::none();
}

void SweepConfig::validate() const {
  testbed.validate();
  if (erm_ratios.empty() || llr_ratios.empty()) throw ValidationError("sweep: empty ratio list");
  for (double r : erm_ratios) {
    if (!(r > 0.0 && r <= 1.0)) throw ValidationError("sweep: ratios must lie in (0, 1]");
  }
  for (double r : llr_ratios) {
    if (!(r > 0.0 && r <= 1.0)) throw ValidationError("sweep: ratios must lie in (0, 1]");
  }
  if (methods.empty()) throw ValidationError("sweep: no methods");
  if (seeds.empty()) throw ValidationError("sweep: no seeds");
  if (erm_majority < 1 || heldout_majority < 1 || test_per_group < 1) {
    throw ValidationError("sweep: set sizes must be >= 1");
  }
  if (workers < 0) throw ValidationError("sweep: workers must be >= 0");
  erm_train.validate();
  llr_train.validate();
}

std::uint64_t train_seed(std::uint64_t seed, double erm_ratio) {
  return derive_seed(seed, {kTrainTag, ratio_bits(erm_ratio)});
}

std::uint64_t heldout_seed(std::uint64_t seed, double erm_ratio, double llr_ratio) {
  return derive_seed(seed, {kHeldoutTag, ratio_bits(erm_ratio), ratio_bits(llr_ratio)});
}

std::uint64_t test_seed(std::uint64_t seed) { return derive_seed(seed, {kTestTag}); }

SweepResult run_sweep(const SweepConfig& cfg) {
  cfg.validate();
  SweepResult result;
  result.num_groups = cfg.testbed.num_classes * cfg.testbed.groups_per_class;
  const std::size_t ne = cfg.erm_ratios.size();
  const std::size_t nl = cfg.llr_ratios.size();
  const std::size_t nm = cfg.methods.size();
  const std::size_t ns = cfg.seeds.size();

  std::vector<EmbeddingDataset> tests;
  tests.reserve(ns);
  for (auto s : cfg.seeds) tests.push_back(draw_test(cfg.testbed, cfg.test_per_group, test_seed(s)));

  // Stage one: one reference classifier per (erm ratio, seed).
  const std::size_t n_erm = ne * ns;
  std::vector<std::optional<LinearClassifier>> refs(n_erm);
  result.erm_rows.resize(n_erm);
  const int width = cfg.workers > 0 ? cfg.workers : kernels::thread_limit();
  const auto erm_cells = static_cast<long long>(n_erm);
#pragma omp parallel for schedule(dynamic, 1) num_threads(width)
  for (long long k = 0; k < erm_cells; ++k) {
    const auto idx = static_cast<std::size_t>(k);
    const std::size_t ei = idx / ns;
    const std::size_t si = idx % ns;
    CellResult& cell = result.erm_rows[idx];
    cell.erm_ratio = cfg.erm_ratios[ei];
    cell.method = "erm";
    cell.seed = cfg.seeds[si];
    try {
      const auto train = draw(cfg.testbed, cfg.erm_majority, cell.erm_ratio,
                              train_seed(cell.seed, cell.erm_ratio));
      TrainConfig tc = cfg.erm_train;
      tc.seed = derive_seed(cell.seed, {kTrainTag, 1});
      refs[idx] = train_linear(train, tc);
      fill_scores(cell, evaluate(*refs[idx], tests[si], kernels::Backend::serial));
    } catch (const std::exception& e) {
      cell.status = std::string("error: ") + e.what();
    }
  }

  // Stage two: every (erm ratio, llr ratio, method, seed) cell.
  const std::size_t n_cells = ne * nl * nm * ns;
  result.rows.resize(n_cells);
  const auto cells = static_cast<long long>(n_cells);
#pragma omp parallel for schedule(dynamic, 1) num_threads(width)
  for (long long k = 0; k < cells; ++k) {
    const auto idx = static_cast<std::size_t>(k);
    const std::size_t si = idx % ns;
    const std::size_t mi = (idx / ns) % nm;
    const std::size_t li = (idx / (ns * nm)) % nl;
    const std::size_t ei = idx / (ns * nm * nl);
    CellResult& cell = result.rows[idx];
    cell.erm_ratio = cfg.erm_ratios[ei];
    cell.llr_ratio = cfg.llr_ratios[li];
    cell.method = cfg.methods[mi].name();
    cell.seed = cfg.seeds[si];
    try {
      const auto heldout = draw(cfg.testbed, cfg.heldout_majority, *cell.llr_ratio,
                                heldout_seed(cell.seed, cell.erm_ratio, *cell.llr_ratio));
      const auto& ref = refs[ei * ns + si];
      const std::uint64_t cell_seed = derive_seed(cell.seed, {kHeldoutTag, mi});
      const TrainingPlan plan =
          make_training_plan(cfg.methods[mi], heldout, cell_seed, ref ? &*ref : nullptr);
      TrainConfig tc = cfg.llr_train;
      tc.seed = cell_seed;
      const auto clf = train_linear(heldout, tc, plan);
      fill_scores(cell, evaluate(clf, tests[si], kernels::Backend::serial));
    } catch (const std::exception& e) {
      cell.status = std::string("error: ") + e.what();
    }
  }

  result.aggregates = aggregate_rows(cfg, result);
  result.pearson = pearson_rows(cfg, result);
  return result;
}

std::vector<AggregateRow> aggregate_rows(const SweepConfig& cfg, const SweepResult& r) {
  std::vector<AggregateRow> out;
  auto summarize = [](AggregateRow row, const std::vector<const CellResult*>& cells) {
    std::vector<double> w;
    std::vector<double> a;
    for (const auto* c : cells) {
      if (c->status != "ok") continue;
      w.push_back(*c->wga);
      a.push_back(*c->aa);
    }
    const auto ws = mean_std(w);
    const auto as = mean_std(a);
    row.n = ws.n;
    row.wga_mean = ws.mean;
    row.wga_std = ws.sd;
    row.aa_mean = as.mean;
    row.aa_std = as.sd;
    return row;
  };
  for (double e : cfg.erm_ratios) {
    std::vector<const CellResult*> cells;
    for (const auto& c : r.erm_rows) {
      if (c.erm_ratio == e) cells.push_back(&c);
    }
    AggregateRow row;
    row.stage = "erm";
    row.erm_ratio = e;
    row.method = "erm";
    out.push_back(summarize(row, cells));
  }
  for (double e : cfg.erm_ratios) {
    for (double l : cfg.llr_ratios) {
      for (const auto& m : cfg.methods) {
        const std::string name = m.name();
        std::vector<const CellResult*> cells;
        for (const auto& c : r.rows) {
          if (c.erm_ratio == e && c.llr_ratio == l && c.method == name) cells.push_back(&c);
        }
        AggregateRow row;
        row.stage = "llr";
        row.erm_ratio = e;
        row.llr_ratio = l;
        row.method = name;
        out.push_back(summarize(row, cells));
      }
    }
  }
  return out;
}

std::vector<PearsonRow> pearson_rows(const SweepConfig& cfg, const SweepResult& r) {
  std::map<double, std::optional<double>> erm_mean;
  for (const auto& a : r.aggregates) {
    if (a.stage == "erm") erm_mean[a.erm_ratio] = a.wga_mean;
  }
  std::vector<PearsonRow> out;
  for (const auto& m : cfg.methods) {
    const std::string name = m.name();
    std::vector<double> defined;
    bool any_undefined = false;
    for (double l : cfg.llr_ratios) {
      PearsonRow row;
      row.method = name;
      row.llr_ratio = l;
      std::vector<double> x;
      std::vector<double> y;
      bool missing = false;
      for (double e : cfg.erm_ratios) {
        std::optional<double> llr;
        for (const auto& a : r.aggregates) {
          if (a.stage == "llr" && a.erm_ratio == e && a.llr_ratio == l && a.method == name) {
            llr = a.wga_mean;
          }
        }
        if (!erm_mean[e] || !llr) {
          missing = true;
          continue;
        }
        x.push_back(*erm_mean[e]);
        y.push_back(*llr);
      }
      if (missing) {
        row.status = "missing cells";
      } else {
        try {
          row.r = pearson(x, y);
        } catch (const ValidationError& err) {
          row.status = err.what();
        }
      }
      if (row.r) defined.push_back(*row.r);
      else any_undefined = true;
      out.push_back(row);
    }
    PearsonRow avg;
    avg.method = name;
    if (any_undefined) {
      avg.status = "undefined";
    } else {
      double s = 0.0;
      for (double v : defined) s += v;
      avg.r = s / static_cast<double>(defined.size());
    }
    out.push_back(avg);
  }
  return out;
}

std::string rows_csv(const SweepResult& r) {
  std::ostringstream out;
  out << kCsvSchemaLine << '\n'
      << "erm_ratio,llr_ratio,method,seed,status,wga,aa" << group_header(r.num_groups) << '\n';
  for (const auto& c : r.rows) {
    out << format_setting(c.erm_ratio) << ',' << optional_setting(c.llr_ratio) << ','
        << c.method << ',' << c.seed;
    write_scores(out, c, r.num_groups);
  }
  return out.str();
}

std::string erm_rows_csv(const SweepResult& r) {
  std::ostringstream out;
  out << kCsvSchemaLine << '\n'
      << "erm_ratio,seed,status,wga,aa" << group_header(r.num_groups) << '\n';
  for (const auto& c : r.erm_rows) {
    out << format_setting(c.erm_ratio) << ',' << c.seed;
    write_scores(out, c, r.num_groups);
  }
  return out.str();
}

std::string aggregate_csv(const SweepResult& r) {
  std::ostringstream out;
  out << kCsvSchemaLine << '\n'
      << "stage,erm_ratio,llr_ratio,method,n,wga_mean,wga_std,aa_mean,aa_std\n";
  for (const auto& a : r.aggregates) {
    out << a.stage << ',' << format_setting(a.erm_ratio) << ',' << optional_setting(a.llr_ratio)
        << ',' << a.method << ',' << a.n << ',' << format_optional(a.wga_mean) << ','
        << format_optional(a.wga_std) << ',' << format_optional(a.aa_mean) << ','
        << format_optional(a.aa_std) << '\n';
  }
  return out.str();
}

std::string pearson_csv(const SweepResult& r) {
  std::ostringstream out;
  out << kCsvSchemaLine << '\n' << "method,llr_ratio,pearson_r,status\n";
  for (const auto& p : r.pearson) {
    out << p.method << ',' << (p.llr_ratio ? format_setting(*p.llr_ratio) : "mean") << ','
        << format_optional(p.r) << ',' << csv_text(p.status) << '\n';
  }
  return out.str();
}

}  // namespace collapse_lab

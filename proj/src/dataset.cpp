#include "collapse_lab/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "collapse_lab/error.hpp"
#include "collapse_lab/rng.hpp"

namespace collapse_lab {

namespace fs = std::filesystem;

EmbeddingDataset::EmbeddingDataset(RowMatrix features, std::vector<std::uint32_t> class_labels,
                                   std::vector<std::uint32_t> group_labels,
                                   std::vector<std::uint32_t> group_to_class,
                                   std::size_t num_classes, std::string name)
    : features_(std::move(features)),
      class_labels_(std::move(class_labels)),
      group_labels_(std::move(group_labels)),
      group_to_class_(std::move(group_to_class)),
      num_classes_(num_classes),
      name_(std::move(name)) {
  const std::size_t m = size();
  if (m == 0) throw ValidationError("empty dataset");
  if (dim() == 0) throw ValidationError("feature dimension must be at least 1");
  if (num_classes_ < 2) throw ValidationError("need at least 2 classes");
  if (group_to_class_.empty()) throw ValidationError("need at least 1 group");
  if (class_labels_.size() != m || group_labels_.size() != m) {
    throw ValidationError("label count does not match number of feature rows");
  }
  for (std::size_t g = 0; g < group_to_class_.size(); ++g) {
    if (group_to_class_[g] >= num_classes_) {
      throw ValidationError("group_to_class maps group " + std::to_string(g) +
                            " to out-of-range class " + std::to_string(group_to_class_[g]));
    }
  }
  for (std::size_t i = 0; i < m; ++i) {
    if (class_labels_[i] >= num_classes_) {
      throw ValidationError("class label out of range at row " + std::to_string(i));
    }
    if (group_labels_[i] >= group_to_class_.size()) {
      throw ValidationError("group label out of range at row " + std::to_string(i));
    }
    if (group_to_class_[group_labels_[i]] != class_labels_[i]) {
      throw ValidationError("group/class inconsistency at row " + std::to_string(i) +
                            ": group " + std::to_string(group_labels_[i]) +
                            " belongs to class " +
                            std::to_string(group_to_class_[group_labels_[i]]) +
                            " but the row has class " + std::to_string(class_labels_[i]));
    }
  }
  if (!features_.allFinite()) throw ValidationError("features contain NaN or Inf");
}

EmbeddingDataset EmbeddingDataset::select(std::span<const std::size_t> indices) const {
  RowMatrix feats(static_cast<Eigen::Index>(indices.size()), features_.cols());
  std::vector<std::uint32_t> cls(indices.size());
  std::vector<std::uint32_t> grp(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const std::size_t i = indices[k];
    if (i >= size()) throw ValidationError("selection index out of range");
    feats.row(static_cast<Eigen::Index>(k)) = features_.row(static_cast<Eigen::Index>(i));
    cls[k] = class_labels_[i];
    grp[k] = group_labels_[i];
  }
  return EmbeddingDataset(std::move(feats), std::move(cls), std::move(grp), group_to_class_,
                          num_classes_, name_);
}

EmbeddingDataset EmbeddingDataset::scaled(double factor) const {
  return EmbeddingDataset(features_ * factor, class_labels_, group_labels_, group_to_class_,
                          num_classes_, name_);
}

EmbeddingDataset EmbeddingDataset::renamed(std::string name) const {
  return EmbeddingDataset(features_, class_labels_, group_labels_, group_to_class_,
                          num_classes_, std::move(name));
}

GroupStats group_stats(const EmbeddingDataset& d) {
  GroupStats s;
  s.group_counts.assign(d.num_groups(), 0);
  s.class_counts.assign(d.num_classes(), 0);
  for (std::size_t i = 0; i < d.size(); ++i) {
    ++s.group_counts[d.group_labels()[i]];
    ++s.class_counts[d.class_labels()[i]];
  }
  s.class_group_ratio.assign(d.num_classes(), 1.0);
  for (std::size_t c = 0; c < d.num_classes(); ++c) {
    std::size_t lo = 0;
    std::size_t hi = 0;
    for (std::size_t g = 0; g < d.num_groups(); ++g) {
      if (d.group_to_class()[g] != c || s.group_counts[g] == 0) continue;
      lo = lo == 0 ? s.group_counts[g] : std::min(lo, s.group_counts[g]);
      hi = std::max(hi, s.group_counts[g]);
    }
    if (hi > 0) s.class_group_ratio[c] = static_cast<double>(lo) / static_cast<double>(hi);
  }
  return s;
}

namespace {

std::vector<std::vector<std::size_t>> indices_by_group(const EmbeddingDataset& d) {
  std::vector<std::vector<std::size_t>> by_group(d.num_groups());
  for (std::size_t i = 0; i < d.size(); ++i) by_group[d.group_labels()[i]].push_back(i);
  return by_group;
}

}  // namespace

std::vector<std::size_t> group_ratio_selection(const EmbeddingDataset& d, double target_ratio,
                                               std::uint64_t seed,
                                               const SubsampleOptions& opts) {
  if (!(target_ratio > 0.0 && target_ratio <= 1.0)) {
    throw ValidationError("target group ratio must be in (0, 1]");
  }
  auto by_group = indices_by_group(d);
  std::vector<std::size_t> keep(d.num_groups(), 0);
  for (std::size_t g = 0; g < d.num_groups(); ++g) keep[g] = by_group[g].size();

  for (std::size_t c = 0; c < d.num_classes(); ++c) {
    std::size_t minority = 0;
    bool any = false;
    for (std::size_t g = 0; g < d.num_groups(); ++g) {
      if (d.group_to_class()[g] != c || by_group[g].empty()) continue;
      minority = any ? std::min(minority, by_group[g].size()) : by_group[g].size();
      any = true;
    }
    if (!any) throw ValidationError("class " + std::to_string(c) + " is empty");
    const auto target = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(static_cast<double>(minority) / target_ratio)));
    std::size_t majority = 0;
    std::size_t majority_group = 0;
    std::size_t nonempty = 0;
    for (std::size_t g = 0; g < d.num_groups(); ++g) {
      if (d.group_to_class()[g] != c || by_group[g].empty()) continue;
      ++nonempty;
      if (by_group[g].size() <= majority) continue;
      majority = by_group[g].size();
      majority_group = g;
    }
    // A single group has ratio 1 by convention; nothing to remove.
    if (nonempty == 1) continue;
    if (target > majority) {
      std::ostringstream msg;
      msg << "target ratio " << target_ratio << " is below the achievable minimum for class "
          << c << ": group " << majority_group << " would need " << target
          << " examples but has " << majority << " (minority examples are never removed)";
      throw ValidationError(msg.str());
    }
    for (std::size_t g = 0; g < d.num_groups(); ++g) {
      if (d.group_to_class()[g] != c || by_group[g].size() == minority) continue;
      keep[g] = std::min(keep[g], target);
    }
  }

  if (opts.max_total) {
    std::size_t total = 0;
    for (std::size_t k : keep) total += k;
    if (*opts.max_total == 0) throw ValidationError("max_total must be positive");
    if (total > *opts.max_total) {
      const double scale = static_cast<double>(*opts.max_total) / static_cast<double>(total);
      for (std::size_t g = 0; g < keep.size(); ++g) {
        if (keep[g] == 0) continue;
        keep[g] = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::floor(static_cast<double>(keep[g]) * scale)));
      }
    }
  }

  std::vector<std::size_t> selected;
  for (std::size_t g = 0; g < d.num_groups(); ++g) {
    auto& idx = by_group[g];
    if (keep[g] < idx.size()) {
      CounterRng rng(seed, g);
      rng.partial_shuffle(std::span<std::size_t>(idx), keep[g]);
    }
    selected.insert(selected.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(keep[g]));
  }
  std::sort(selected.begin(), selected.end());
  return selected;
}

EmbeddingDataset subsample_to_group_ratio(const EmbeddingDataset& d, double target_ratio,
                                          std::uint64_t seed, const SubsampleOptions& opts) {
  const auto idx = group_ratio_selection(d, target_ratio, seed, opts);
  return d.select(idx);
}

// --- I/O ------------------------------------------------------------------

namespace {

std::string dtype_name(FeatureDtype t) { return t == FeatureDtype::f32 ? "f32" : "f64"; }

bool has_csv_extension(const std::string& p) {
  return fs::path(p).extension() == ".csv";
}

fs::path resolve(const fs::path& base_dir, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base_dir / path;
}

template <typename T>
T byteswap_value(T v) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  std::reverse(bytes, bytes + sizeof(T));
  std::memcpy(&v, bytes, sizeof(T));
  return v;
}

template <typename T>
T from_file_order(T v, bool big_endian) {
  const bool host_big = std::endian::native == std::endian::big;
  return big_endian != host_big ? byteswap_value(v) : v;
}

template <typename T>
T to_little(T v) {
  return std::endian::native == std::endian::big ? byteswap_value(v) : v;
}

std::ifstream open_in(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ValidationError("cannot open file: " + p.string());
  return in;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s, std::size_t row) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    while (used < s.size() && std::isspace(static_cast<unsigned char>(s[used]))) ++used;
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::out_of_range&) {
    return std::numeric_limits<double>::infinity();
  } catch (const std::exception&) {
    throw ValidationError("malformed number '" + s + "' in row " + std::to_string(row));
  }
}

RowMatrix read_features(const fs::path& path, const Manifest& mf) {
  RowMatrix feats(static_cast<Eigen::Index>(mf.m), static_cast<Eigen::Index>(mf.n));
  if (has_csv_extension(path.string())) {
    if (mf.m * mf.n > 1'000'000) {
      throw ValidationError("CSV features are limited to 1e6 entries; use a binary blob");
    }
    auto in = open_in(path);
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      const auto cells = split_csv_line(line);
      if (row >= mf.m) throw ValidationError("dimension mismatch: more feature rows than m");
      if (cells.size() != mf.n) {
        throw ValidationError("dimension mismatch: feature row " + std::to_string(row) +
                              " has " + std::to_string(cells.size()) + " values, expected " +
                              std::to_string(mf.n));
      }
      for (std::size_t j = 0; j < mf.n; ++j) feats(row, j) = parse_double(cells[j], row);
      ++row;
    }
    if (row != mf.m) throw ValidationError("dimension mismatch: fewer feature rows than m");
    return feats;
  }

  const std::size_t width = mf.dtype == FeatureDtype::f32 ? 4 : 8;
  const std::uintmax_t expected = static_cast<std::uintmax_t>(mf.m) * mf.n * width;
  std::error_code ec;
  const auto actual = fs::file_size(path, ec);
  if (ec) throw ValidationError("cannot open feature blob: " + path.string());
  if (actual != expected) {
    throw ValidationError("dimension mismatch: feature blob has " + std::to_string(actual) +
                          " bytes, manifest implies " + std::to_string(expected));
  }
  auto in = open_in(path);
  std::vector<char> buf(mf.n * width);
  for (std::size_t i = 0; i < mf.m; ++i) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!in) throw ValidationError("short read in feature blob");
    for (std::size_t j = 0; j < mf.n; ++j) {
      if (width == 4) {
        std::uint32_t bits;
        std::memcpy(&bits, buf.data() + j * 4, 4);
        feats(i, j) = static_cast<double>(
            std::bit_cast<float>(from_file_order(bits, mf.big_endian)));
      } else {
        std::uint64_t bits;
        std::memcpy(&bits, buf.data() + j * 8, 8);
        feats(i, j) = std::bit_cast<double>(from_file_order(bits, mf.big_endian));
      }
    }
  }
  return feats;
}

void read_labels(const fs::path& path, const Manifest& mf, std::vector<std::uint32_t>& cls,
                 std::vector<std::uint32_t>& grp) {
  cls.assign(mf.m, 0);
  grp.assign(mf.m, 0);
  if (has_csv_extension(path.string())) {
    auto in = open_in(path);
    std::string line;
    bool header_seen = false;
    std::vector<bool> seen(mf.m, false);
    std::size_t rows = 0;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      if (!header_seen) {
        if (line != "index,class,group") {
          throw ValidationError("labels CSV must start with header 'index,class,group'");
        }
        header_seen = true;
        continue;
      }
      const auto cells = split_csv_line(line);
      if (cells.size() != 3) throw ValidationError("labels CSV rows need 3 columns");
      long long idx = 0;
      long long c = 0;
      long long g = 0;
      try {
        idx = std::stoll(cells[0]);
        c = std::stoll(cells[1]);
        g = std::stoll(cells[2]);
      } catch (const std::exception&) {
        throw ValidationError("malformed labels CSV row: " + line);
      }
      if (idx < 0 || static_cast<std::size_t>(idx) >= mf.m || seen[idx]) {
        throw ValidationError("labels CSV index out of range or repeated: " + cells[0]);
      }
      if (c < 0 || static_cast<std::size_t>(c) >= mf.classes) {
        throw ValidationError("label out of range: class " + cells[1]);
      }
      if (g < 0 || static_cast<std::size_t>(g) >= mf.groups) {
        throw ValidationError("label out of range: group " + cells[2]);
      }
      seen[idx] = true;
      cls[idx] = static_cast<std::uint32_t>(c);
      grp[idx] = static_cast<std::uint32_t>(g);
      ++rows;
    }
    if (rows != mf.m) throw ValidationError("dimension mismatch: labels CSV row count != m");
    return;
  }
  std::error_code ec;
  const auto actual = fs::file_size(path, ec);
  if (ec) throw ValidationError("cannot open labels file: " + path.string());
  if (actual != static_cast<std::uintmax_t>(mf.m) * 8) {
    throw ValidationError("dimension mismatch: labels file has " + std::to_string(actual) +
                          " bytes, expected " + std::to_string(mf.m * 8));
  }
  auto in = open_in(path);
  for (std::size_t i = 0; i < mf.m; ++i) {
    std::uint32_t pair[2];
    in.read(reinterpret_cast<char*>(pair), 8);
    if (!in) throw ValidationError("short read in labels file");
    cls[i] = from_file_order(pair[0], mf.big_endian);
    grp[i] = from_file_order(pair[1], mf.big_endian);
    if (cls[i] >= mf.classes) throw ValidationError("label out of range at row " + std::to_string(i));
    if (grp[i] >= mf.groups) throw ValidationError("group label out of range at row " + std::to_string(i));
  }
}

template <typename T>
T required(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) throw ValidationError(std::string("manifest missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ValidationError(std::string("manifest field '") + key + "' has the wrong type");
  }
}

}  // namespace

Manifest read_manifest(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw ValidationError("cannot open manifest: " + manifest_path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("manifest is not valid JSON: " + std::string(e.what()));
  }
  Manifest mf;
  mf.features_path = required<std::string>(j, "features_path");
  const auto dtype = required<std::string>(j, "dtype");
  if (dtype == "f32") mf.dtype = FeatureDtype::f32;
  else if (dtype == "f64") mf.dtype = FeatureDtype::f64;
  else throw ValidationError("manifest dtype must be \"f32\" or \"f64\"");
  mf.m = required<std::size_t>(j, "m");
  mf.n = required<std::size_t>(j, "n");
  mf.classes = required<std::size_t>(j, "classes");
  mf.groups = required<std::size_t>(j, "groups");
  mf.group_to_class = required<std::vector<std::uint32_t>>(j, "group_to_class");
  mf.labels_path = required<std::string>(j, "labels_path");
  if (j.contains("byte_order")) {
    const auto order = j.at("byte_order").get<std::string>();
    if (order == "big") mf.big_endian = true;
    else if (order != "little") throw ValidationError("byte_order must be \"little\" or \"big\"");
  }
  if (j.contains("name")) mf.name = j.at("name").get<std::string>();
  if (j.contains("split")) mf.split = j.at("split").get<std::string>();

  if (mf.m == 0) throw ValidationError("empty dataset");
  if (mf.n == 0) throw ValidationError("feature dimension must be at least 1");
  if (mf.group_to_class.size() != mf.groups) {
    throw ValidationError("group_to_class length does not match groups");
  }
  return mf;
}

EmbeddingDataset load_dataset(const fs::path& manifest_path) {
  const Manifest mf = read_manifest(manifest_path);
  const fs::path base = manifest_path.parent_path();
  RowMatrix feats = read_features(resolve(base, mf.features_path), mf);
  std::vector<std::uint32_t> cls;
  std::vector<std::uint32_t> grp;
  read_labels(resolve(base, mf.labels_path), mf, cls, grp);
  std::string name = mf.name.empty() ? manifest_path.stem().string() : mf.name;
  return EmbeddingDataset(std::move(feats), std::move(cls), std::move(grp), mf.group_to_class,
                          mf.classes, std::move(name));
}

fs::path save_dataset(const EmbeddingDataset& d, const fs::path& stem, const SaveOptions& opts) {
  const fs::path dir = stem.parent_path();
  if (!dir.empty()) fs::create_directories(dir);
  const std::string base = stem.filename().string();
  const std::string feat_name =
      opts.csv ? base + ".features.csv" : base + "." + dtype_name(opts.dtype);
  const std::string label_name = opts.csv ? base + ".labels.csv" : base + ".labels";

  {
    std::ofstream out(dir / feat_name, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + (dir / feat_name).string());
    if (opts.csv) {
      char buf[32];
      for (std::size_t i = 0; i < d.size(); ++i) {
        for (std::size_t j = 0; j < d.dim(); ++j) {
          std::snprintf(buf, sizeof buf, "%.17g", d.features()(i, j));
          if (j) out << ',';
          out << buf;
        }
        out << '\n';
      }
    } else {
      for (std::size_t i = 0; i < d.size(); ++i) {
        for (std::size_t j = 0; j < d.dim(); ++j) {
          if (opts.dtype == FeatureDtype::f32) {
            const auto bits = to_little(std::bit_cast<std::uint32_t>(
                static_cast<float>(d.features()(i, j))));
            out.write(reinterpret_cast<const char*>(&bits), 4);
          } else {
            const auto bits = to_little(std::bit_cast<std::uint64_t>(d.features()(i, j)));
            out.write(reinterpret_cast<const char*>(&bits), 8);
          }
        }
      }
    }
  }
  {
    std::ofstream out(dir / label_name, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + (dir / label_name).string());
    if (opts.csv) {
      out << "index,class,group\n";
      for (std::size_t i = 0; i < d.size(); ++i) {
        out << i << ',' << d.class_labels()[i] << ',' << d.group_labels()[i] << '\n';
      }
    } else {
      for (std::size_t i = 0; i < d.size(); ++i) {
        const std::uint32_t pair[2] = {to_little(d.class_labels()[i]),
                                       to_little(d.group_labels()[i])};
        out.write(reinterpret_cast<const char*>(pair), 8);
      }
    }
  }

  nlohmann::ordered_json j;
  j["features_path"] = feat_name;
  j["dtype"] = opts.csv ? "f64" : dtype_name(opts.dtype);
  j["m"] = d.size();
  j["n"] = d.dim();
  j["classes"] = d.num_classes();
  j["groups"] = d.num_groups();
  j["group_to_class"] = d.group_to_class();
  j["labels_path"] = label_name;
  j["byte_order"] = "little";
  j["name"] = d.name();
  if (!opts.split.empty()) j["split"] = opts.split;
  if (!opts.provenance.is_null()) j["provenance"] = opts.provenance;
  const fs::path manifest = dir / (base + ".json");
  std::ofstream out(manifest);
  if (!out) throw ValidationError("cannot write " + manifest.string());
  out << j.dump(2) << '\n';
  return manifest;
}

}  // namespace collapse_lab

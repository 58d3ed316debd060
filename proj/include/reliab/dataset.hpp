#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "reliab/binary_io.hpp"
#include "reliab/errors.hpp"
#include "reliab/rls.hpp"
#include "reliab/text.hpp"

namespace reliab {

enum class Split { train, test };

inline std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw InvalidArgument("unknown split \"" + s + "\" (expected train or test)");
}

struct FrameRecord {
  std::vector<float> features;
  ClassId class_id = 0;
  std::string object_name;
  std::string category_name;
  int day = 1;
  Split split = Split::train;
  std::int64_t session_seq = 0;
  std::string variant;

  bool operator==(const FrameRecord&) const = default;
};

/// Frames sharing (class, object, day, split, variant) form one acquisition
/// session.
using SessionKey = std::tuple<ClassId, std::string, int, Split, std::string>;

inline SessionKey session_key(const FrameRecord& f) {
  return {f.class_id, f.object_name, f.day, f.split, f.variant};
}

inline std::string session_label(const FrameRecord& f) {
  return std::to_string(f.class_id) + "/" + f.object_name + "/d" + std::to_string(f.day) + "/" + to_string(f.split) +
         "/" + f.variant;
}

struct FeatureDataset {
  std::string name;
  std::size_t dim = 0;
  std::size_t num_classes = 0;
  std::vector<std::string> class_names;
  /// Category of each class, aligned with class_names.
  std::vector<std::string> class_categories;
  std::vector<FrameRecord> frames;

  bool operator==(const FeatureDataset&) const = default;

  std::size_t size() const { return frames.size(); }
  bool empty() const { return frames.empty(); }
};

/// Throws InvalidData if any structural invariant is broken.
inline void validate(const FeatureDataset& ds) {
  if (ds.dim < 1) throw InvalidData("dataset dim must be >= 1");
  if (ds.class_names.size() != ds.num_classes) throw InvalidData("class_names length differs from num_classes");
  if (!ds.class_categories.empty() && ds.class_categories.size() != ds.num_classes) {
    throw InvalidData("categories length differs from num_classes");
  }
  std::map<SessionKey, std::int64_t> last_seq;
  for (std::size_t i = 0; i < ds.frames.size(); ++i) {
    const auto& f = ds.frames[i];
    if (f.class_id < 0 || static_cast<std::size_t>(f.class_id) >= ds.num_classes) {
      throw InvalidData("frame " + std::to_string(i) + ": class id " + std::to_string(f.class_id) + " out of range");
    }
    if (f.features.size() != ds.dim) {
      throw InvalidData("frame " + std::to_string(i) + ": " + std::to_string(f.features.size()) +
                        " features, expected " + std::to_string(ds.dim));
    }
    for (float v : f.features) {
      if (!std::isfinite(v)) throw InvalidData("frame " + std::to_string(i) + ": non-finite feature value");
    }
    const auto key = session_key(f);
    auto it = last_seq.find(key);
    if (it != last_seq.end() && f.session_seq <= it->second) {
      throw InvalidData("frame " + std::to_string(i) + ": session_seq not increasing within session " +
                        session_label(f));
    }
    last_seq[key] = f.session_seq;
  }
}

/// Features as an n×d double matrix, in frame order.
inline Matrix feature_matrix(const FeatureDataset& ds) {
  Matrix x(static_cast<Eigen::Index>(ds.frames.size()), static_cast<Eigen::Index>(ds.dim));
  for (std::size_t i = 0; i < ds.frames.size(); ++i) {
    const auto& f = ds.frames[i].features;
    for (std::size_t j = 0; j < ds.dim; ++j) {
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = static_cast<double>(f[j]);
    }
  }
  return x;
}

inline std::vector<ClassId> labels_of(const FeatureDataset& ds) {
  std::vector<ClassId> out;
  out.reserve(ds.frames.size());
  for (const auto& f : ds.frames) out.push_back(f.class_id);
  return out;
}

inline std::vector<std::size_t> class_counts(const FeatureDataset& ds) {
  std::vector<std::size_t> counts(ds.num_classes, 0);
  for (const auto& f : ds.frames) ++counts[static_cast<std::size_t>(f.class_id)];
  return counts;
}

inline RlsModel fit_dataset(const FeatureDataset& ds, double lambda) {
  return RlsModel::fit_batch(feature_matrix(ds), labels_of(ds), ds.num_classes, lambda);
}

/// Throws InvalidArgument unless the two datasets share dim and class vocabulary.
inline void require_compatible(const FeatureDataset& a, const FeatureDataset& b, const std::string& what) {
  if (a.dim != b.dim || a.num_classes != b.num_classes || a.class_names != b.class_names) {
    throw InvalidArgument(what + ": datasets differ in dimension or class vocabulary");
  }
}

// ---------------------------------------------------------------------------
// Selection

struct SelectionFilter {
  std::optional<std::set<int>> days;
  std::optional<Split> split;
  std::optional<std::string> variant;
  /// Original class ids to keep; output ids are dense in ascending order.
  std::optional<std::vector<ClassId>> classes;
  /// Keep the earliest k frames of each class (after the other filters).
  std::optional<std::size_t> first_k_per_class;
};

struct Selection {
  FeatureDataset dataset;
  /// Original class id -> id in `dataset`.
  std::map<ClassId, ClassId> id_map;
};

inline Selection select(const FeatureDataset& ds, const SelectionFilter& filter) {
  Selection out;
  std::vector<ClassId> kept_classes;
  if (filter.classes) {
    std::set<ClassId> uniq(filter.classes->begin(), filter.classes->end());
    for (ClassId c : uniq) {
      if (c < 0 || static_cast<std::size_t>(c) >= ds.num_classes) {
        throw InvalidArgument("class " + std::to_string(c) + " not in dataset with " +
                              std::to_string(ds.num_classes) + " classes");
      }
      kept_classes.push_back(c);
    }
  } else {
    for (std::size_t c = 0; c < ds.num_classes; ++c) kept_classes.push_back(static_cast<ClassId>(c));
  }
  if (kept_classes.empty()) throw EmptySelection("selection: empty class subset");
  if (filter.first_k_per_class && *filter.first_k_per_class == 0) {
    throw InvalidArgument("first_k_per_class must be >= 1");
  }

  std::vector<ClassId> remap(ds.num_classes, -1);
  for (std::size_t i = 0; i < kept_classes.size(); ++i) {
    remap[static_cast<std::size_t>(kept_classes[i])] = static_cast<ClassId>(i);
    out.id_map[kept_classes[i]] = static_cast<ClassId>(i);
  }

  auto& res = out.dataset;
  res.name = ds.name;
  res.dim = ds.dim;
  res.num_classes = kept_classes.size();
  for (ClassId c : kept_classes) {
    res.class_names.push_back(ds.class_names[static_cast<std::size_t>(c)]);
    if (!ds.class_categories.empty()) res.class_categories.push_back(ds.class_categories[static_cast<std::size_t>(c)]);
  }

  std::vector<std::size_t> taken(kept_classes.size(), 0);
  for (const auto& f : ds.frames) {
    if (filter.days && !filter.days->contains(f.day)) continue;
    if (filter.split && *filter.split != f.split) continue;
    if (filter.variant && *filter.variant != f.variant) continue;
    const ClassId mapped = remap[static_cast<std::size_t>(f.class_id)];
    if (mapped < 0) continue;
    auto& count = taken[static_cast<std::size_t>(mapped)];
    if (filter.first_k_per_class && count >= *filter.first_k_per_class) continue;
    ++count;
    res.frames.push_back(f);
    res.frames.back().class_id = mapped;
  }
  if (res.frames.empty()) throw EmptySelection("selection matched no frames");
  return out;
}

// ---------------------------------------------------------------------------
// On-disk format

enum class FeatureEncoding { csv, bin };

inline std::string to_string(FeatureEncoding e) { return e == FeatureEncoding::csv ? "csv" : "bin"; }

namespace detail {

inline std::vector<std::vector<float>> read_bin_features(const std::filesystem::path& path, std::size_t dim) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open feature file " + path.string());
  try {
    binary::expect_magic(is, "ICF1");
    const auto n = binary::read_le<std::uint32_t>(is);
    const auto d = binary::read_le<std::uint32_t>(is);
    if (d != dim) {
      throw InvalidData("dimension mismatch: file has d=" + std::to_string(d) + ", manifest says " +
                        std::to_string(dim));
    }
    std::vector<std::vector<float>> rows(n, std::vector<float>(d));
    for (std::uint32_t i = 0; i < n; ++i) {
      for (std::uint32_t j = 0; j < d; ++j) {
        const float v = binary::read_le<float>(is);
        if (!std::isfinite(v)) {
          throw InvalidData("row " + std::to_string(i) + ": non-finite value in column " + std::to_string(j));
        }
        rows[i][j] = v;
      }
    }
    return rows;
  } catch (const InvalidData& e) {
    throw InvalidData(path.string() + ": " + e.what());
  }
}

inline void write_bin_features(const std::filesystem::path& path, const std::vector<const FrameRecord*>& frames,
                               std::size_t dim) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  binary::write_magic(os, "ICF1");
  binary::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(frames.size()));
  binary::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(dim));
  for (const auto* f : frames) {
    for (float v : f->features) binary::write_le<float>(os, v);
  }
  if (!os) throw IoError("write failed: " + path.string());
}

struct CsvRows {
  std::vector<std::int64_t> seq;
  std::vector<std::vector<float>> features;
};

inline CsvRows read_csv_features(const std::filesystem::path& path, std::size_t dim) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open feature file " + path.string());
  const std::string where = path.string();
  std::string line;
  if (!std::getline(is, line)) throw InvalidData(where + ": missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = text::split(line, ',');
  if (header.empty() || header[0] != "seq") throw InvalidData(where + ": header must start with \"seq\"");
  if (header.size() - 1 != dim) {
    throw InvalidData(where + ": dimension mismatch: header has " + std::to_string(header.size() - 1) +
                      " feature columns, manifest says " + std::to_string(dim));
  }
  CsvRows rows;
  std::size_t row_no = 0;
  while (std::getline(is, line)) {
    ++row_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = text::split(line, ',');
    const std::string at = where + " row " + std::to_string(row_no);
    if (cells.size() != dim + 1) {
      throw InvalidData(at + ": " + std::to_string(cells.size() - 1) + " feature values, expected " +
                        std::to_string(dim));
    }
    std::int64_t seq = 0;
    if (!text::parse_number(cells[0], seq)) throw InvalidData(at + ": bad seq \"" + std::string(cells[0]) + "\"");
    if (!rows.seq.empty() && seq <= rows.seq.back()) throw InvalidData(at + ": seq not strictly increasing");
    std::vector<float> values(dim);
    for (std::size_t j = 0; j < dim; ++j) {
      if (!text::parse_number(cells[j + 1], values[j]) || !std::isfinite(values[j])) {
        throw InvalidData(at + ": invalid or non-finite value in column f" + std::to_string(j));
      }
    }
    rows.seq.push_back(seq);
    rows.features.push_back(std::move(values));
  }
  return rows;
}

inline void write_csv_features(const std::filesystem::path& path, const std::vector<const FrameRecord*>& frames,
                               std::size_t dim) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << "seq";
  for (std::size_t j = 0; j < dim; ++j) os << ",f" << j;
  os << '\n';
  for (const auto* f : frames) {
    os << f->session_seq;
    for (float v : f->features) os << ',' << text::format_real(v);
    os << '\n';
  }
  if (!os) throw IoError("write failed: " + path.string());
}

template <class T>
T json_field(const nlohmann::json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key)) throw InvalidData(where + ": missing field \"" + key + "\"");
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw InvalidData(where + ": field \"" + key + "\" has the wrong type");
  }
}

}  // namespace detail

/// Reads a manifest and every feature file it references. Frames appear in
/// manifest file order, then row order.
inline FeatureDataset load_dataset(const std::filesystem::path& manifest_path) {
  std::ifstream is(manifest_path);
  if (!is) throw IoError("cannot open manifest " + manifest_path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidData(manifest_path.string() + ": " + e.what());
  }
  const std::string where = manifest_path.string();
  FeatureDataset ds;
  ds.name = doc.value("name", std::string{});
  ds.dim = detail::json_field<std::size_t>(doc, "dim", where);
  ds.num_classes = detail::json_field<std::size_t>(doc, "num_classes", where);
  ds.class_names = detail::json_field<std::vector<std::string>>(doc, "class_names", where);
  if (doc.contains("categories")) ds.class_categories = detail::json_field<std::vector<std::string>>(doc, "categories", where);
  if (ds.dim < 1) throw InvalidData(where + ": dim must be >= 1");
  if (ds.class_names.size() != ds.num_classes) throw InvalidData(where + ": class_names length differs from num_classes");
  if (!ds.class_categories.empty() && ds.class_categories.size() != ds.num_classes) {
    throw InvalidData(where + ": categories length differs from num_classes");
  }
  const auto files = detail::json_field<nlohmann::json>(doc, "files", where);
  if (!files.is_array()) throw InvalidData(where + ": \"files\" must be an array");

  const auto base = manifest_path.parent_path();
  for (std::size_t k = 0; k < files.size(); ++k) {
    const auto& entry = files[k];
    const std::string ew = where + " files[" + std::to_string(k) + "]";
    const auto rel = detail::json_field<std::string>(entry, "path", ew);
    const auto encoding = detail::json_field<std::string>(entry, "encoding", ew);
    FrameRecord proto;
    proto.day = detail::json_field<int>(entry, "day", ew);
    proto.split = parse_split(detail::json_field<std::string>(entry, "split", ew));
    proto.variant = entry.value("variant", std::string{});
    proto.object_name = detail::json_field<std::string>(entry, "object", ew);
    const auto cid = detail::json_field<long long>(entry, "class_id", ew);
    if (cid < 0 || static_cast<std::size_t>(cid) >= ds.num_classes) {
      throw InvalidData(ew + ": unknown class id " + std::to_string(cid));
    }
    if (proto.day < 1) throw InvalidData(ew + ": day must be positive");
    proto.class_id = static_cast<ClassId>(cid);
    if (!ds.class_categories.empty()) proto.category_name = ds.class_categories[static_cast<std::size_t>(cid)];

    const auto path = base / rel;
    if (!std::filesystem::exists(path)) throw IoError(ew + ": feature file not found: " + path.string());
    if (encoding == "csv") {
      auto rows = detail::read_csv_features(path, ds.dim);
      for (std::size_t i = 0; i < rows.seq.size(); ++i) {
        FrameRecord f = proto;
        f.session_seq = rows.seq[i];
        f.features = std::move(rows.features[i]);
        ds.frames.push_back(std::move(f));
      }
    } else if (encoding == "bin") {
      auto rows = detail::read_bin_features(path, ds.dim);
      for (std::size_t i = 0; i < rows.size(); ++i) {
        FrameRecord f = proto;
        f.session_seq = static_cast<std::int64_t>(i);
        f.features = std::move(rows[i]);
        ds.frames.push_back(std::move(f));
      }
    } else {
      throw InvalidData(ew + ": unknown encoding \"" + encoding + "\"");
    }
  }
  validate(ds);
  return ds;
}

/// Writes `manifest.json` plus one feature file per session into `dir`.
///
/// Sessions are emitted in order of first appearance, so datasets whose
/// sessions are contiguous (everything produced by load, select and the
/// generator) round-trip exactly. With the binary encoding a session whose
/// seq values are not 0..n-1 is written as CSV instead, since binary files
/// carry no seq column.
inline std::filesystem::path save_dataset(const FeatureDataset& ds, const std::filesystem::path& dir,
                                          FeatureEncoding encoding = FeatureEncoding::bin) {
  validate(ds);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());

  std::vector<SessionKey> order;
  std::map<SessionKey, std::vector<const FrameRecord*>> sessions;
  for (const auto& f : ds.frames) {
    const auto key = session_key(f);
    auto [it, inserted] = sessions.try_emplace(key);
    if (inserted) order.push_back(key);
    it->second.push_back(&f);
  }

  nlohmann::ordered_json doc;
  doc["name"] = ds.name;
  doc["dim"] = ds.dim;
  doc["num_classes"] = ds.num_classes;
  doc["class_names"] = ds.class_names;
  doc["categories"] = ds.class_categories;
  doc["files"] = nlohmann::ordered_json::array();
  for (std::size_t s = 0; s < order.size(); ++s) {
    const auto& frames = sessions[order[s]];
    bool implicit_seq = true;
    for (std::size_t i = 0; i < frames.size(); ++i) {
      if (frames[i]->session_seq != static_cast<std::int64_t>(i)) implicit_seq = false;
    }
    const auto enc = (encoding == FeatureEncoding::bin && implicit_seq) ? FeatureEncoding::bin : FeatureEncoding::csv;
    char name[32];
    std::snprintf(name, sizeof(name), "session_%05zu.%s", s, enc == FeatureEncoding::bin ? "bin" : "csv");
    if (enc == FeatureEncoding::bin) {
      detail::write_bin_features(dir / name, frames, ds.dim);
    } else {
      detail::write_csv_features(dir / name, frames, ds.dim);
    }
    const auto& first = *frames.front();
    nlohmann::ordered_json entry;
    entry["path"] = name;
    entry["encoding"] = to_string(enc);
    entry["day"] = first.day;
    entry["split"] = to_string(first.split);
    entry["variant"] = first.variant;
    entry["object"] = first.object_name;
    entry["class_id"] = first.class_id;
    doc["files"].push_back(std::move(entry));
  }
  const auto manifest = dir / "manifest.json";
  std::ofstream os(manifest, std::ios::trunc);
  if (!os) throw IoError("cannot open " + manifest.string() + " for writing");
  os << doc.dump(2) << '\n';
  if (!os) throw IoError("write failed: " + manifest.string());
  return manifest;
}

}  // namespace reliab

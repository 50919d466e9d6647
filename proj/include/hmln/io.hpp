#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "hmln/backtrace.hpp"
#include "hmln/core.hpp"
#include "hmln/errors.hpp"
#include "hmln/learning.hpp"
#include "hmln/map_inference.hpp"
#include "hmln/sampler.hpp"
#include "hmln/similarity.hpp"

namespace hmln::io {

using json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

// Rounds to 9 significant digits so serialized numbers are stable across
// platforms; the JSON writer then emits the shortest exact form.
inline double round_sig9(double v) {
  if (!std::isfinite(v) || v == 0.0) return v == 0.0 ? 0.0 : v;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return std::strtod(buf, nullptr);
}

inline json number9(double v) {
  if (!std::isfinite(v)) return nullptr;
  return round_sig9(v);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  return in;
}

////////////////////////////////////////////////////////////////////////////////
// Dataset (JSON lines)
////////////////////////////////////////////////////////////////////////////////

enum class Split { kTrain, kTest };

struct DatasetRecord {
  int schema_version = kSchemaVersion;
  std::string instance_id;
  Split split = Split::kTrain;
  std::vector<GroundPredicate> predicates;
  // Human-written caption predicates for test images (used by MAP scoring).
  std::vector<GroundPredicate> reference_predicates;
  std::optional<double> avg_caption_similarity;
  std::optional<std::string> caption_text;
};

namespace detail {

[[noreturn]] inline void fail_at(const std::string& source, std::size_t line,
                                 const std::string& msg) {
  throw ValidationError(source + ":" + std::to_string(line) + ": " + msg);
}

inline void check_keys(const json& obj, const std::set<std::string>& allowed,
                       const std::string& where, const std::string& source,
                       std::size_t line) {
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.contains(key)) {
      fail_at(source, line, "unknown field '" + where + key + "'");
    }
  }
}

inline const json& require(const json& obj, const std::string& key,
                           const std::string& where, const std::string& source,
                           std::size_t line) {
  if (!obj.contains(key)) {
    fail_at(source, line, "missing field '" + where + key + "'");
  }
  return obj.at(key);
}

inline std::string require_string(const json& obj, const std::string& key,
                                  const std::string& where,
                                  const std::string& source, std::size_t line) {
  const json& v = require(obj, key, where, source, line);
  if (!v.is_string()) {
    fail_at(source, line, "field '" + where + key + "' must be a string");
  }
  return v.get<std::string>();
}

inline double require_number(const json& obj, const std::string& key,
                             const std::string& where, const std::string& source,
                             std::size_t line) {
  const json& v = require(obj, key, where, source, line);
  if (!v.is_number()) {
    fail_at(source, line, "field '" + where + key + "' must be a number");
  }
  return v.get<double>();
}

inline std::vector<GroundPredicate> parse_predicates(const json& arr,
                                                     const std::string& field,
                                                     const std::string& source,
                                                     std::size_t line) {
  if (!arr.is_array()) {
    fail_at(source, line, "field '" + field + "' must be an array");
  }
  std::vector<GroundPredicate> out;
  std::set<std::string> ids;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string where = field + "[" + std::to_string(i) + "].";
    const json& p = arr[i];
    if (!p.is_object()) fail_at(source, line, "'" + field + "' entries must be objects");
    check_keys(p, {"subject", "relation", "object", "g"}, where, source, line);
    const std::string subject = require_string(p, "subject", where, source, line);
    const std::string relation = require_string(p, "relation", where, source, line);
    const std::string object =
        p.contains("object") ? require_string(p, "object", where, source, line) : "";
    const double g = require_number(p, "g", where, source, line);
    if (subject.empty() || relation.empty()) {
      fail_at(source, line, "'" + where + "subject' and '" + where +
                                "relation' must be non-empty");
    }
    if (!std::isfinite(g) || g < -1.0 || g > 1.0) {
      std::ostringstream msg;
      msg << "field '" << where << "g' = " << g << " is outside [-1, 1]";
      fail_at(source, line, msg.str());
    }
    GroundPredicate gp = make_predicate(subject, relation, object, g);
    if (!ids.insert(gp.id).second) {
      fail_at(source, line, "predicate '" + gp.id + "' repeats in '" + field + "'");
    }
    out.push_back(std::move(gp));
  }
  return out;
}

inline json predicates_json(const std::vector<GroundPredicate>& ps) {
  json arr = json::array();
  for (const auto& p : ps) {
    json o;
    o["subject"] = p.subject;
    o["relation"] = p.relation;
    o["object"] = p.object;
    o["g"] = round_sig9(p.g);
    arr.push_back(std::move(o));
  }
  return arr;
}

}  // namespace detail

inline DatasetRecord parse_record(const json& obj, const std::string& source,
                                  std::size_t line) {
  using namespace detail;
  if (!obj.is_object()) fail_at(source, line, "record must be a JSON object");
  check_keys(obj,
             {"schema_version", "instance_id", "split", "predicates",
              "reference_predicates", "avg_caption_similarity", "caption_text"},
             "", source, line);
  DatasetRecord r;
  const json& version = require(obj, "schema_version", "", source, line);
  if (!version.is_number_integer() || version.get<int>() != kSchemaVersion) {
    fail_at(source, line, "unsupported schema_version (expected " +
                              std::to_string(kSchemaVersion) + ")");
  }
  r.schema_version = version.get<int>();
  r.instance_id = require_string(obj, "instance_id", "", source, line);
  if (r.instance_id.empty()) fail_at(source, line, "'instance_id' is empty");
  const std::string split = require_string(obj, "split", "", source, line);
  if (split == "train") {
    r.split = Split::kTrain;
  } else if (split == "test") {
    r.split = Split::kTest;
  } else {
    fail_at(source, line, "field 'split' must be \"train\" or \"test\"");
  }
  r.predicates = parse_predicates(require(obj, "predicates", "", source, line),
                                  "predicates", source, line);
  if (obj.contains("reference_predicates")) {
    r.reference_predicates = parse_predicates(
        obj.at("reference_predicates"), "reference_predicates", source, line);
  }
  if (obj.contains("avg_caption_similarity")) {
    const double v = require_number(obj, "avg_caption_similarity", "", source, line);
    if (!std::isfinite(v)) fail_at(source, line, "'avg_caption_similarity' must be finite");
    r.avg_caption_similarity = v;
  }
  if (obj.contains("caption_text")) {
    r.caption_text = require_string(obj, "caption_text", "", source, line);
  }
  return r;
}

// One JSON object per line. Blank lines and a provenance header object
// ({"provenance": ...}) are skipped. Instance ids must be unique.
inline std::vector<DatasetRecord> parse_dataset(std::istream& in,
                                                const std::string& source) {
  std::vector<DatasetRecord> out;
  std::set<std::string> ids;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(text);
    } catch (const json::parse_error& e) {
      detail::fail_at(source, line, std::string("malformed JSON: ") + e.what());
    }
    if (obj.is_object() && obj.size() == 1 && obj.contains("provenance")) continue;
    DatasetRecord r = parse_record(obj, source, line);
    if (!ids.insert(r.instance_id).second) {
      detail::fail_at(source, line, "duplicate instance_id '" + r.instance_id + "'");
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<DatasetRecord> load_dataset(const std::filesystem::path& path) {
  auto in = open_input(path);
  return parse_dataset(in, path.string());
}

inline json record_json(const DatasetRecord& r) {
  json o;
  o["schema_version"] = r.schema_version;
  o["instance_id"] = r.instance_id;
  o["split"] = r.split == Split::kTrain ? "train" : "test";
  o["predicates"] = detail::predicates_json(r.predicates);
  if (!r.reference_predicates.empty()) {
    o["reference_predicates"] = detail::predicates_json(r.reference_predicates);
  }
  if (r.avg_caption_similarity) {
    o["avg_caption_similarity"] = round_sig9(*r.avg_caption_similarity);
  }
  if (r.caption_text) o["caption_text"] = *r.caption_text;
  return o;
}

inline void save_dataset(std::ostream& out, const std::vector<DatasetRecord>& records) {
  for (const auto& r : records) out << record_json(r).dump() << '\n';
}

////////////////////////////////////////////////////////////////////////////////
// Similarity table (TSV: token, token, score)
////////////////////////////////////////////////////////////////////////////////

inline SimilarityTable parse_similarity(std::istream& in, const std::string& source) {
  SimilarityTable table;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (text.empty() || text[0] == '#') continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
      const std::size_t tab = text.find('\t', start);
      fields.push_back(text.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 3 || fields[0].empty() || fields[1].empty()) {
      detail::fail_at(source, line, "expected 'token<TAB>token<TAB>score'");
    }
    char* end = nullptr;
    const double score = std::strtod(fields[2].c_str(), &end);
    if (end == fields[2].c_str() || *end != '\0') {
      detail::fail_at(source, line, "score '" + fields[2] + "' is not a number");
    }
    try {
      table.add(fields[0], fields[1], score);
    } catch (const ValidationError& e) {
      detail::fail_at(source, line, e.what());
    }
  }
  return table;
}

inline SimilarityTable load_similarity(const std::filesystem::path& path) {
  auto in = open_input(path);
  return parse_similarity(in, path.string());
}

inline void save_similarity(std::ostream& out, const SimilarityTable& table) {
  for (const auto& [key, score] : table.entries()) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", score);
    out << key.first << '\t' << key.second << '\t' << buf << '\n';
  }
}

////////////////////////////////////////////////////////////////////////////////
// Model file
////////////////////////////////////////////////////////////////////////////////

// Weights, g and potentials are written at full round-trip precision so a
// loaded model is identical to the saved one.
inline json model_json(const HmlnModel& model, const json& provenance = json::object()) {
  json o;
  o["schema_version"] = kSchemaVersion;
  o["epsilon"] = model.epsilon();
  json atoms = json::array();
  for (const auto& a : model.atoms()) {
    json j;
    j["id"] = a.id;
    j["subject"] = a.subject;
    j["relation"] = a.relation;
    j["object"] = a.object;
    j["g"] = a.g;
    atoms.push_back(std::move(j));
  }
  o["atoms"] = std::move(atoms);
  json features = json::array();
  for (const auto& f : model.features()) {
    json j;
    j["id"] = f.id;
    j["atoms"] = json::array({model.atoms()[f.atoms[0]].id, model.atoms()[f.atoms[1]].id});
    j["weight"] = f.weight;
    j["conj_value"] = f.conj_value;
    j["xor_value"] = f.xor_value;
    features.push_back(std::move(j));
  }
  o["features"] = std::move(features);
  o["provenance"] = provenance;
  return o;
}

inline void save_model(std::ostream& out, const HmlnModel& model,
                       const json& provenance = json::object()) {
  out << model_json(model, provenance).dump(2) << '\n';
}

inline HmlnModel parse_model(const json& o, const std::string& source) {
  try {
    if (o.at("schema_version").get<int>() != kSchemaVersion) {
      throw ValidationError(source + ": unsupported model schema_version");
    }
    std::vector<GroundPredicate> atoms;
    for (const auto& a : o.at("atoms")) {
      atoms.push_back({a.at("id").get<std::string>(), a.at("subject").get<std::string>(),
                       a.at("relation").get<std::string>(),
                       a.at("object").get<std::string>(), a.at("g").get<double>()});
    }
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < atoms.size(); ++i) index.emplace(atoms[i].id, i);
    std::vector<FeaturePair> features;
    for (const auto& f : o.at("features")) {
      const auto ids = f.at("atoms").get<std::vector<std::string>>();
      if (ids.size() != 2 || !index.contains(ids[0]) || !index.contains(ids[1])) {
        throw ValidationError(source + ": feature " +
                              std::to_string(f.at("id").get<std::size_t>()) +
                              " must name two model atoms");
      }
      features.push_back({f.at("id").get<std::size_t>(),
                          {index.at(ids[0]), index.at(ids[1])},
                          f.at("weight").get<double>(),
                          f.at("conj_value").get<double>(),
                          f.at("xor_value").get<double>()});
    }
    return HmlnModel(std::move(atoms), std::move(features),
                     o.at("epsilon").get<double>());
  } catch (const json::exception& e) {
    throw ValidationError(source + ": malformed model file: " + e.what());
  }
}

inline HmlnModel load_model(const std::filesystem::path& path) {
  auto in = open_input(path);
  json o;
  try {
    o = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": malformed JSON: " + e.what());
  }
  return parse_model(o, path.string());
}

////////////////////////////////////////////////////////////////////////////////
// Pipeline configuration
////////////////////////////////////////////////////////////////////////////////

struct PipelineConfig {
  std::filesystem::path train;
  std::filesystem::path test;
  std::filesystem::path similarity;
  SimilarityTable::MissingPolicy similarity_missing =
      SimilarityTable::MissingPolicy::kError;
  double epsilon = kDefaultEpsilon;
  std::uint64_t seed = 0;
  LearningConfig learning;
  SamplerConfig sampler;
  double relevance_threshold = 0.75;
  double clip_threshold = 1.0;
  ClipMode clip_mode = ClipMode::kCap;
  MapOptions map;
  std::uint64_t hash = 0;  // FNV-1a of the canonical config JSON
};

namespace detail {

template <typename T>
void read_opt(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

inline std::filesystem::path resolve(const std::filesystem::path& base,
                                     const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

inline ClipMode parse_clip_mode(const std::string& s) {
  if (s == "cap") return ClipMode::kCap;
  if (s == "floor") return ClipMode::kFloor;
  throw ValidationError("clip_mode must be \"cap\" or \"floor\"");
}

}  // namespace detail

inline std::string clip_mode_name(ClipMode m) {
  return m == ClipMode::kCap ? "cap" : "floor";
}

// Paths inside the config are resolved against `base_dir`.
inline PipelineConfig parse_config(const json& o,
                                   const std::filesystem::path& base_dir) {
  using detail::read_opt;
  PipelineConfig c;
  try {
    if (!o.is_object()) throw ValidationError("config must be a JSON object");
    detail::check_keys(o,
                       {"train", "test", "similarity", "similarity_missing",
                        "epsilon", "seed", "learning", "sampler", "backtrace",
                        "map"},
                       "", "config", 0);
    if (o.contains("train")) c.train = detail::resolve(base_dir, o.at("train").get<std::string>());
    if (o.contains("test")) c.test = detail::resolve(base_dir, o.at("test").get<std::string>());
    if (o.contains("similarity")) {
      c.similarity = detail::resolve(base_dir, o.at("similarity").get<std::string>());
    }
    if (o.contains("similarity_missing")) {
      const auto s = o.at("similarity_missing").get<std::string>();
      if (s == "error") {
        c.similarity_missing = SimilarityTable::MissingPolicy::kError;
      } else if (s == "zero") {
        c.similarity_missing = SimilarityTable::MissingPolicy::kZero;
      } else {
        throw ValidationError("similarity_missing must be \"error\" or \"zero\"");
      }
    }
    read_opt(o, "epsilon", c.epsilon);
    read_opt(o, "seed", c.seed);
    if (o.contains("learning")) {
      const json& l = o.at("learning");
      detail::check_keys(l, {"learning_rate", "iterations", "cd_samples"},
                         "learning.", "config", 0);
      read_opt(l, "learning_rate", c.learning.learning_rate);
      read_opt(l, "iterations", c.learning.iterations);
      read_opt(l, "cd_samples", c.learning.cd_samples);
    }
    if (o.contains("sampler")) {
      const json& s = o.at("sampler");
      detail::check_keys(s, {"burn_in", "thinning_interval", "total_samples"},
                         "sampler.", "config", 0);
      read_opt(s, "burn_in", c.sampler.burn_in);
      read_opt(s, "thinning_interval", c.sampler.thinning_interval);
      read_opt(s, "total_samples", c.sampler.total_samples);
    }
    if (o.contains("backtrace")) {
      const json& b = o.at("backtrace");
      detail::check_keys(b, {"relevance_threshold", "clip_threshold", "clip_mode"},
                         "backtrace.", "config", 0);
      read_opt(b, "relevance_threshold", c.relevance_threshold);
      if (b.contains("clip_threshold")) {
        const json& t = b.at("clip_threshold");
        c.clip_threshold = t.is_string() && t.get<std::string>() == "inf"
                               ? std::numeric_limits<double>::infinity()
                               : t.get<double>();
      }
      if (b.contains("clip_mode")) {
        c.clip_mode = detail::parse_clip_mode(b.at("clip_mode").get<std::string>());
      }
    }
    if (o.contains("map")) {
      const json& m = o.at("map");
      detail::check_keys(m, {"soft_evidence_floor", "closed_world_slice",
                             "max_binary_vars", "node_limit"},
                         "map.", "config", 0);
      read_opt(m, "soft_evidence_floor", c.map.soft_evidence_floor);
      read_opt(m, "closed_world_slice", c.map.closed_world_slice);
      read_opt(m, "max_binary_vars", c.map.solve.max_binary_vars);
      read_opt(m, "node_limit", c.map.solve.node_limit);
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("invalid config: ") + e.what());
  }
  c.learning.validate();
  c.sampler.validate();
  c.hash = fnv1a(o.dump());
  return c;
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
  auto in = open_input(path);
  json o;
  try {
    o = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": malformed JSON: " + e.what());
  }
  return parse_config(o, path.parent_path());
}

}  // namespace hmln::io

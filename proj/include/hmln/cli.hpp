#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "hmln/backtrace.hpp"
#include "hmln/errors.hpp"
#include "hmln/io.hpp"
#include "hmln/learning.hpp"
#include "hmln/lp_writer.hpp"
#include "hmln/map_inference.hpp"
#include "hmln/pipeline.hpp"

namespace hmln::cli {

using io::json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitGuard = 2;

namespace detail {

struct Options {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out;
  std::string model;
  std::string instance;
  std::string backtrace;
  std::string map;
  std::string clip_mode;
  std::optional<double> clip_threshold;
};

inline io::PipelineConfig load(const Options& o) {
  if (o.config.empty()) throw ValidationError("--config is required");
  io::PipelineConfig c = io::load_config(o.config);
  if (o.seed) c.seed = *o.seed;
  return c;
}

inline std::vector<io::DatasetRecord> require_dataset(const std::filesystem::path& p,
                                                      const char* key) {
  if (p.empty()) throw ValidationError(std::string("config has no '") + key + "' path");
  return io::load_dataset(p);
}

inline SimilarityTable require_similarity(const io::PipelineConfig& c) {
  if (c.similarity.empty()) throw ValidationError("config has no 'similarity' path");
  SimilarityTable t = io::load_similarity(c.similarity);
  t.set_missing_policy(c.similarity_missing);
  return t;
}

inline json provenance(const io::PipelineConfig& c) {
  json p;
  p["seed"] = c.seed;
  p["config_hash"] = io::hex64(c.hash);
  return p;
}

inline json threshold_json(double t) {
  if (std::isinf(t)) return "inf";
  return io::round_sig9(t);
}

// Writes to --out when given, otherwise to the command's output stream.
inline void emit(const Options& o, std::ostream& out, const std::string& text) {
  if (o.out.empty()) {
    out << text;
    return;
  }
  std::ofstream f(o.out, std::ios::binary);
  if (!f) throw ValidationError("cannot write '" + o.out + "'");
  f << text;
  if (!f) throw ValidationError("failed writing '" + o.out + "'");
}

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

inline json load_json(const std::string& path) {
  auto in = io::open_input(path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(path + ": malformed JSON: " + e.what());
  }
}

////////////////////////////////////////////////////////////////////////////////

inline std::string cmd_ground(const Options& o) {
  const auto c = load(o);
  const auto train = require_dataset(c.train, "train");
  const auto inst = grounding_instances(train);
  const HmlnModel model = build_model(inst, c.epsilon);
  std::ostringstream s;
  io::save_model(s, model, provenance(c));
  return s.str();
}

inline std::string cmd_learn(const Options& o) {
  const auto c = load(o);
  const auto train = require_dataset(c.train, "train");
  const HmlnModel model = build_model(grounding_instances(train), c.epsilon);
  const auto instances = training_instances(model, train);
  LearningConfig lc = c.learning;
  lc.seed = learning_seed(c.seed);
  const FitResult fitted = fit(model, instances, lc);
  json p = provenance(c);
  p["learning_rate"] = lc.learning_rate;
  p["iterations"] = lc.iterations;
  p["cd_samples"] = lc.cd_samples;
  std::ostringstream s;
  io::save_model(s, fitted.model, p);
  return s.str();
}

inline HmlnModel require_model(const Options& o) {
  if (o.model.empty()) throw ValidationError("--model is required");
  return io::load_model(o.model);
}

inline std::string proof_name(Proof p) {
  return p == Proof::kOptimal ? "optimal" : "node_limit";
}

inline std::string cmd_map(const Options& o) {
  const HmlnModel model = require_model(o);
  const auto c = load(o);
  const auto test = require_dataset(c.test, "test");
  const auto sim = require_similarity(c);
  json records = json::array();
  double total = 0.0;
  for (const auto& r : test) {
    const MapScore score = map_record(model, r, sim, c.map);
    const HmlnModel conditioned = map_conditioned(model, r);
    json assignment = json::array();
    for (std::size_t i = 0; i < conditioned.num_atoms(); ++i) {
      if (score.solution.assignment[i]) assignment.push_back(conditioned.atoms()[i].id);
    }
    json rec;
    rec["instance_id"] = r.instance_id;
    rec["objective"] = io::number9(score.solution.objective_value);
    rec["proof"] = proof_name(score.solution.proof);
    rec["soft_evidence"] = score.soft.size();
    rec["true_atoms"] = std::move(assignment);
    records.push_back(std::move(rec));
    total += score.solution.objective_value;
  }
  json j;
  j["schema_version"] = io::kSchemaVersion;
  j["seed"] = c.seed;
  j["config_hash"] = io::hex64(c.hash);
  j["soft_evidence_floor"] = io::round_sig9(c.map.soft_evidence_floor);
  j["records"] = std::move(records);
  j["mean_objective"] =
      test.empty() ? json(nullptr) : io::number9(total / static_cast<double>(test.size()));
  return dump(j);
}

inline BacktraceConfig backtrace_config(const io::PipelineConfig& c, const Options& o) {
  BacktraceConfig b;
  b.relevance_threshold = c.relevance_threshold;
  b.clip_threshold = c.clip_threshold;
  b.clip_mode = c.clip_mode;
  if (!o.clip_mode.empty()) b.clip_mode = io::detail::parse_clip_mode(o.clip_mode);
  if (o.clip_threshold) b.clip_threshold = *o.clip_threshold;
  b.sampler = c.sampler;
  b.validate();
  return b;
}

inline json densities_json(const ContrastiveResult& r) {
  json arr = json::array();
  for (const auto& d : r.per_example) {
    json e;
    e["example_id"] = d.example_id;
    e["density"] = io::number9(d.density);
    arr.push_back(std::move(e));
  }
  return arr;
}

inline std::string cmd_backtrace(const Options& o) {
  const HmlnModel model = require_model(o);
  const auto c = load(o);
  const auto train = require_dataset(c.train, "train");
  const auto test = require_dataset(c.test, "test");
  const auto sim = require_similarity(c);
  const BacktraceConfig b = backtrace_config(c, o);
  const auto traced = backtrace_all(model, test, train, sim, b, c.seed);

  json records = json::array();
  for (std::size_t k = 0; k < traced.size(); ++k) {
    const auto& t = traced[k];
    json rec;
    rec["instance_id"] = t.instance_id;
    rec["sampler_seed"] = backtrace_seed(c.seed, k);
    rec["relevant_examples"] = t.relevant;
    if (t.result) {
      rec["densities"] = densities_json(*t.result);
      rec["maximal"] = t.result->maximal;
      rec["minimal"] = t.result->minimal;
      rec["hellinger"] = io::number9(t.result->hellinger);
      rec["log_joint"] = io::number9(t.result->log_joint);
      rec["samples"] = t.result->samples;
    } else {
      rec["densities"] = json::array();
      rec["maximal"] = nullptr;
      rec["minimal"] = nullptr;
      rec["hellinger"] = nullptr;
      rec["log_joint"] = nullptr;
      rec["samples"] = 0;
    }
    rec["avg_caption_similarity"] = t.avg_caption_similarity
                                        ? io::number9(*t.avg_caption_similarity)
                                        : json(nullptr);
    records.push_back(std::move(rec));
  }
  json j;
  j["schema_version"] = io::kSchemaVersion;
  j["seed"] = c.seed;
  j["config_hash"] = io::hex64(c.hash);
  j["relevance_threshold"] = io::round_sig9(b.relevance_threshold);
  j["clip_threshold"] = threshold_json(b.clip_threshold);
  j["clip_mode"] = io::clip_mode_name(b.clip_mode);
  j["sampler"] = {{"burn_in", b.sampler.burn_in},
                  {"thinning_interval", b.sampler.thinning_interval},
                  {"total_samples", b.sampler.total_samples}};
  j["records"] = std::move(records);
  return dump(j);
}

inline std::string cmd_export_lp(const Options& o) {
  const HmlnModel model = require_model(o);
  if (o.instance.empty()) throw ValidationError("--instance is required");
  const auto c = load(o);
  const auto test = require_dataset(c.test, "test");
  const auto sim = require_similarity(c);
  const auto it = std::find_if(test.begin(), test.end(), [&](const auto& r) {
    return r.instance_id == o.instance;
  });
  if (it == test.end()) {
    throw ValidationError("no test record with instance_id '" + o.instance + "'");
  }
  const HmlnModel conditioned = map_conditioned(model, *it);
  const auto soft = build_soft_evidence(conditioned, it->predicates,
                                        it->reference_predicates, sim,
                                        c.map.soft_evidence_floor);
  std::vector<std::pair<std::size_t, bool>> evidence;
  for (const auto& y : it->predicates) {
    evidence.emplace_back(conditioned.atom_index(y.id), true);
  }
  std::ostringstream s;
  write_lp(encode(conditioned, evidence, soft), s);
  return s.str();
}

inline std::string cmd_report(const Options& o) {
  if (o.backtrace.empty()) throw ValidationError("--backtrace is required");
  const json bt = load_json(o.backtrace);
  json records = json::array();
  double hellinger_sum = 0.0;
  std::size_t traced = 0;
  try {
    for (const auto& r : bt.at("records")) {
      json rec;
      rec["instance_id"] = r.at("instance_id");
      rec["relevant_examples"] = r.at("relevant_examples").size();
      rec["densities"] = r.at("densities");
      rec["maximal"] = r.at("maximal");
      rec["minimal"] = r.at("minimal");
      rec["hellinger"] = r.at("hellinger");
      rec["log_joint"] = r.at("log_joint");
      const json& avg = r.at("avg_caption_similarity");
      rec["avg_caption_similarity"] = avg;
      rec["similarity_report_x"] =
          avg.is_number() ? io::number9(similarity_report_x(avg.get<double>()))
                          : json(nullptr);
      if (r.at("hellinger").is_number()) {
        hellinger_sum += r.at("hellinger").get<double>();
        ++traced;
      }
      records.push_back(std::move(rec));
    }
    json j;
    j["schema_version"] = io::kSchemaVersion;
    j["seed"] = bt.at("seed");
    j["config_hash"] = bt.at("config_hash");
    j["relevance_threshold"] = bt.at("relevance_threshold");
    j["clip_threshold"] = bt.at("clip_threshold");
    j["clip_mode"] = bt.at("clip_mode");
    j["records"] = std::move(records);
    j["summary"] = {{"records", j["records"].size()},
                    {"traced", traced},
                    {"mean_hellinger",
                     traced ? io::number9(hellinger_sum / static_cast<double>(traced))
                            : json(nullptr)}};
    if (!o.map.empty()) {
      const json mp = load_json(o.map);
      json m;
      m["mean_objective"] = mp.at("mean_objective");
      json mr = json::array();
      for (const auto& r : mp.at("records")) {
        mr.push_back({{"instance_id", r.at("instance_id")},
                      {"objective", r.at("objective")},
                      {"proof", r.at("proof")}});
      }
      m["records"] = std::move(mr);
      j["map"] = std::move(m);
    }
    return dump(j);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed input to report: ") + e.what());
  }
}

}  // namespace detail

// Runs the command line `args` (without the program name). Returns the exit
// status: 0 success, 1 validation or usage error, 2 guard refusal.
inline int run(const std::vector<std::string>& args, std::ostream& out,
               std::ostream& err) {
  detail::Options o;
  CLI::App app{"Hybrid Markov logic captioning engine", "hmln_cli"};
  app.require_subcommand(1);
  app.add_option("--seed", o.seed, "Root seed (overrides the config)");
  app.add_option("--config", o.config, "Pipeline config JSON");
  app.add_option("--out", o.out, "Output file (default: stdout)");

  auto* ground = app.add_subcommand("ground", "Ground the training split into a zero-weight model");
  auto* learn = app.add_subcommand("learn", "Ground and fit weights by contrastive divergence");
  auto* map = app.add_subcommand("map", "Score test captions by MAP inference");
  map->add_option("--model", o.model, "Model file")->required();
  auto* backtrace = app.add_subcommand("backtrace", "Back-trace test captions to training examples");
  backtrace->add_option("--model", o.model, "Model file")->required();
  backtrace->add_option("--clip-mode", o.clip_mode, "cap or floor")
      ->check(CLI::IsMember({"cap", "floor"}));
  backtrace->add_option("--clip-threshold", o.clip_threshold, "Clip threshold");
  auto* export_lp = app.add_subcommand("export-lp", "Write one test record's MAP problem as LP");
  export_lp->add_option("--model", o.model, "Model file")->required();
  export_lp->add_option("--instance", o.instance, "Test instance id")->required();
  auto* report = app.add_subcommand("report", "Summarize back-trace (and MAP) output");
  report->add_option("--backtrace", o.backtrace, "Back-trace JSON")->required();
  report->add_option("--map", o.map, "MAP JSON");
  for (auto* sub : {ground, learn, map, backtrace, export_lp, report}) {
    sub->fallthrough();
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitValidation;
  }

  try {
    std::string text;
    if (ground->parsed()) {
      text = detail::cmd_ground(o);
    } else if (learn->parsed()) {
      text = detail::cmd_learn(o);
    } else if (map->parsed()) {
      text = detail::cmd_map(o);
    } else if (backtrace->parsed()) {
      text = detail::cmd_backtrace(o);
    } else if (export_lp->parsed()) {
      text = detail::cmd_export_lp(o);
    } else {
      text = detail::cmd_report(o);
    }
    detail::emit(o, out, text);
    return kExitOk;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const GuardError& e) {
    err << "refused: " << e.what() << '\n';
    return kExitGuard;
  } catch (const ContractViolation& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitGuard;
  }
}

}  // namespace hmln::cli

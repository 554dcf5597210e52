/* Copyright 2026 The predbias Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#ifndef PREDBIAS_PIPELINE_HPP_
#define PREDBIAS_PIPELINE_HPP_

// End-to-end orchestration. Every stage reads its inputs from the output
// directory (or, for ingest, from the configured input files) and writes its
// artifacts there, so stages can be re-run independently:
//
//   ingest     -> dataset.jsonl predicates.json entities.json predictions.jsonl confusion.csv
//   identify   -> flagged.txt candidates.csv
//   embed      -> embeddings.csv
//   train      -> encoder.csv loss_trace.csv filtration.csv prototypes.csv
//   prototypes -> similarity.csv
//   transfer   -> plan.jsonl dataset.enhanced.jsonl
//   resample   -> repeat_factors.csv index.txt
//   audit      -> report.csv summary.json
//
// Artifacts are written as "<name>.partial" and renamed once the stage
// succeeds.

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "predbias/audit.hpp"
#include "predbias/contrastive.hpp"
#include "predbias/corpus.hpp"
#include "predbias/embedding.hpp"
#include "predbias/error.hpp"
#include "predbias/io.hpp"
#include "predbias/prototype.hpp"
#include "predbias/resample.hpp"
#include "predbias/transfer.hpp"

namespace predbias {

namespace fs = std::filesystem;

struct PipelineConfig {
  // Input files; relative paths resolve against the config file's directory.
  fs::path dataset;
  fs::path predicates;
  fs::path entities;     // optional
  fs::path predictions;
  fs::path confusion;
  fs::path embeddings;   // optional; the built-in featurizer is used when empty

  std::uint64_t seed = 0;
  std::size_t embedding_dim = 256;
  std::size_t encoder_dim = 0;  // 0: same as the base embedding dim

  TrainConfig train;
  PrototypeConfig prototype;

  double k_g = 0.05;
  bool direction_constraint = true;
  bool transfer_indistinguishable = true;

  double t = 3e7;
  bool resample_on_enhanced = true;

  std::optional<double> pq;
  fs::path sgg_ground_truth;  // optional dataset JSONL used as recall ground truth
  fs::path sgg_predictions;   // optional ranked scene-graph predictions
  std::vector<int> recall_k = {20, 50, 100};

  static PipelineConfig from_json(const nlohmann::json& j, const fs::path& base_dir = {}) {
    PipelineConfig c;
    try {
      auto path_of = [&](const nlohmann::json& obj, const char* key) -> fs::path {
        if (!obj.contains(key) || obj.at(key).is_null()) return {};
        fs::path p = obj.at(key).get<std::string>();
        return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
      };
      const auto& in = j.at("inputs");
      c.dataset = path_of(in, "dataset");
      c.predicates = path_of(in, "predicates");
      c.entities = path_of(in, "entities");
      c.predictions = path_of(in, "predictions");
      c.confusion = path_of(in, "confusion");
      c.embeddings = path_of(in, "embeddings");
      c.seed = j.value("seed", std::uint64_t{0});

      const auto emb = j.value("embedding", nlohmann::json::object());
      c.embedding_dim = emb.value("dim", c.embedding_dim);
      c.encoder_dim = emb.value("encoder_dim", c.encoder_dim);

      const auto tr = j.value("train", nlohmann::json::object());
      c.train.temperature = tr.value("temperature", c.train.temperature);
      c.train.margin = degrees_to_radians(tr.value("margin_degrees", 10.0));
      c.train.lambda = tr.value("lambda", c.train.lambda);
      c.train.learning_rate = tr.value("learning_rate", c.train.learning_rate);
      c.train.momentum = tr.value("momentum", c.train.momentum);
      c.train.epochs = tr.value("epochs", c.train.epochs);
      c.train.batch_size = tr.value("batch_size", c.train.batch_size);
      c.train.init_noise = tr.value("init_noise", c.train.init_noise);

      const auto pr = j.value("prototype", nlohmann::json::object());
      c.prototype.beta = pr.value("beta", c.prototype.beta);
      c.prototype.gamma = pr.value("gamma", c.prototype.gamma);
      c.prototype.mu = pr.value("mu", c.prototype.mu);
      c.prototype.drop_percent = pr.value("drop_percent", c.prototype.drop_percent);
      c.prototype.protect_below = pr.value("protect_below", c.prototype.protect_below);
      c.prototype.max_step = pr.value("max_step", c.prototype.max_step);
      const auto schedule = pr.value("schedule", std::string("batch"));
      if (schedule == "batch") {
        c.prototype.schedule = PrototypeSchedule::kPerBatch;
      } else if (schedule == "epoch") {
        c.prototype.schedule = PrototypeSchedule::kPerEpoch;
      } else {
        throw Error(ErrorKind::kConfig, "prototype.schedule must be \"batch\" or \"epoch\"");
      }

      const auto tf = j.value("transfer", nlohmann::json::object());
      c.k_g = tf.value("k_g", c.k_g);
      c.direction_constraint = tf.value("direction_constraint", c.direction_constraint);
      c.transfer_indistinguishable = tf.value("indistinguishable", c.transfer_indistinguishable);

      const auto rs = j.value("resample", nlohmann::json::object());
      c.t = rs.value("t", c.t);
      const auto source = rs.value("scarcity_source", std::string("enhanced"));
      if (source != "enhanced" && source != "original")
        throw Error(ErrorKind::kConfig, "resample.scarcity_source must be \"enhanced\" or \"original\"");
      c.resample_on_enhanced = source == "enhanced";

      const auto au = j.value("audit", nlohmann::json::object());
      if (au.contains("pq") && !au.at("pq").is_null()) c.pq = au.at("pq").get<double>();
      c.sgg_ground_truth = path_of(au, "ground_truth");
      c.sgg_predictions = path_of(au, "predictions");
      c.recall_k = au.value("k", c.recall_k);
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      throw Error(ErrorKind::kConfig, e.what());
    }
    c.validate();
    return c;
  }

  static PipelineConfig load(const fs::path& path) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::kConfig, path.string() + ": " + e.what());
    }
    return from_json(j, path.parent_path());
  }

  void validate() const {
    if (dataset.empty() || predicates.empty() || predictions.empty() || confusion.empty())
      throw Error(ErrorKind::kConfig, "inputs.dataset, inputs.predicates, inputs.predictions and inputs.confusion are required");
    if (embedding_dim < 2) throw Error(ErrorKind::kConfig, "embedding.dim must be >= 2");
    TrainConfig tc = train;
    tc.validate();
    prototype.validate();
    if (!(k_g >= 0.0 && k_g <= 1.0)) throw Error(ErrorKind::kConfig, "transfer.k_g must lie in [0,1]");
    if (!(t > 0.0)) throw Error(ErrorKind::kConfig, "resample.t must be > 0");
    for (int k : recall_k)
      if (k <= 0) throw Error(ErrorKind::kConfig, "audit.k entries must be positive");
  }
};

inline constexpr std::array<std::string_view, 8> kStages = {"ingest", "identify",   "embed",    "train",
                                                             "prototypes", "transfer", "resample", "audit"};

namespace artifacts {
inline constexpr std::string_view kDataset = "dataset.jsonl";
inline constexpr std::string_view kPredicates = "predicates.json";
inline constexpr std::string_view kEntities = "entities.json";
inline constexpr std::string_view kPredictions = "predictions.jsonl";
inline constexpr std::string_view kConfusion = "confusion.csv";
inline constexpr std::string_view kFlagged = "flagged.txt";
inline constexpr std::string_view kCandidates = "candidates.csv";
inline constexpr std::string_view kEmbeddings = "embeddings.csv";
inline constexpr std::string_view kEncoder = "encoder.csv";
inline constexpr std::string_view kLossTrace = "loss_trace.csv";
inline constexpr std::string_view kFiltration = "filtration.csv";
inline constexpr std::string_view kPrototypes = "prototypes.csv";
inline constexpr std::string_view kSimilarity = "similarity.csv";
inline constexpr std::string_view kPlan = "plan.jsonl";
inline constexpr std::string_view kEnhanced = "dataset.enhanced.jsonl";
inline constexpr std::string_view kRepeatFactors = "repeat_factors.csv";
inline constexpr std::string_view kIndex = "index.txt";
inline constexpr std::string_view kReport = "report.csv";
inline constexpr std::string_view kSummary = "summary.json";
}  // namespace artifacts

// Collects a stage's outputs under ".partial" names and renames them together.
class StageOutputs {
 public:
  explicit StageOutputs(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

  std::ofstream open(std::string_view name) {
    names_.emplace_back(name);
    return open_output(dir_ / (std::string(name) + ".partial"));
  }

  void commit() {
    for (const auto& n : names_) fs::rename(dir_ / (n + ".partial"), dir_ / n);
    names_.clear();
  }

 private:
  fs::path dir_;
  std::vector<std::string> names_;
};

class Pipeline {
 public:
  Pipeline(PipelineConfig config, fs::path out_dir) : config_(std::move(config)), out_(std::move(out_dir)) {}

  const PipelineConfig& config() const { return config_; }
  const fs::path& out_dir() const { return out_; }

  void run_all() {
    for (auto stage : kStages) run_stage(stage);
  }

  void run_stage(std::string_view stage) {
    log(LogLevel::kInfo, "stage " + std::string(stage));
    try {
      if (stage == "ingest") return ingest();
      if (stage == "identify") return identify();
      if (stage == "embed") return embed();
      if (stage == "train") return train();
      if (stage == "prototypes") return prototypes();
      if (stage == "transfer") return transfer();
      if (stage == "resample") return resample();
      if (stage == "audit") return audit();
    } catch (const Error& e) {
      throw e.with_context("stage " + std::string(stage));
    } catch (const std::exception& e) {
      throw Error(ErrorKind::kIo, "stage " + std::string(stage) + ": " + e.what());
    }
    throw Error(ErrorKind::kConfig, "unknown stage '" + std::string(stage) + "'");
  }

 private:
  fs::path artifact(std::string_view name) const {
    fs::path p = out_ / std::string(name);
    if (!fs::exists(p)) throw Error(ErrorKind::kDependency, "missing upstream artifact " + p.string());
    return p;
  }

  PredicateVocab vocab() const { return PredicateVocab(load_labels(artifact(artifacts::kPredicates))); }

  Dataset dataset(std::string_view name = artifacts::kDataset) const {
    return load_dataset(artifact(name), vocab(), load_labels(artifact(artifacts::kEntities)));
  }

  std::vector<PredictionRecord> predictions(std::size_t q) const {
    return load_predictions(artifact(artifacts::kPredictions), q);
  }

  void ingest() {
    auto input_file = [](const fs::path& p, std::string_view what) {
      if (!fs::exists(p)) throw Error(ErrorKind::kDependency, "missing " + std::string(what) + " " + p.string());
      return p;
    };
    const PredicateVocab v(load_labels(input_file(config_.predicates, "predicate vocabulary")));
    std::vector<std::string> entities;
    if (!config_.entities.empty()) entities = load_labels(input_file(config_.entities, "entity vocabulary"));
    const Dataset ds = load_dataset(input_file(config_.dataset, "dataset"), v, entities);
    const auto preds = load_predictions(input_file(config_.predictions, "prediction file"), v.size());
    const auto conf = load_confusion(input_file(config_.confusion, "confusion matrix"), v);
    index_predictions(preds);  // rejects duplicates early

    StageOutputs out(out_);
    {
      auto f = out.open(artifacts::kDataset);
      write_dataset(f, ds);
    }
    {
      auto f = out.open(artifacts::kPredicates);
      f << nlohmann::json(v.labels()).dump() << '\n';
    }
    {
      auto f = out.open(artifacts::kEntities);
      f << nlohmann::json(entities).dump() << '\n';
    }
    {
      auto f = out.open(artifacts::kPredictions);
      write_predictions(f, preds);
    }
    {
      auto f = out.open(artifacts::kConfusion);
      write_confusion(f, conf, v);
    }
    out.commit();
    log(LogLevel::kInfo, "ingested " + std::to_string(ds.relations.size()) + " relations, " +
                             std::to_string(ds.na_pairs.size()) + " NA pairs, " + std::to_string(ds.image_ids.size()) +
                             " images");
  }

  void identify() {
    const Dataset ds = dataset();
    const auto preds = predictions(ds.vocab.size());
    const auto flagged = identify_indistinguishable(ds, preds);
    const auto candidates = identify_potential_positives(ds, preds);
    StageOutputs out(out_);
    {
      auto f = out.open(artifacts::kFlagged);
      for (RelationId id : flagged) f << id << '\n';
    }
    {
      auto f = out.open(artifacts::kCandidates);
      f << "relation_id,predicted,na_score\n";
      for (const auto& c : candidates)
        f << c.relation_id << ',' << ds.vocab.label(c.predicted) << ',' << format_double(c.na_score) << '\n';
    }
    out.commit();
    log(LogLevel::kInfo, std::to_string(flagged.size()) + " indistinguishable, " + std::to_string(candidates.size()) +
                             " NA candidates");
  }

  void embed() {
    const Dataset ds = dataset();
    EmbeddingTable table;
    std::string comment;
    if (!config_.embeddings.empty()) {
      if (!fs::exists(config_.embeddings))
        throw Error(ErrorKind::kDependency, "missing embedding file " + config_.embeddings.string());
      const auto external = load_external_embeddings(config_.embeddings);
      table.dim = external.dim;
      for (const auto& r : ds.relations) table.rows.emplace(r.relation_id, external.at(r.relation_id));
      comment = "source=external";
    } else {
      table = featurize_dataset(ds, config_.embedding_dim, config_.seed);
      comment = "source=featurizer";
    }
    StageOutputs out(out_);
    {
      auto f = out.open(artifacts::kEmbeddings);
      write_embeddings(f, table, comment);
    }
    out.commit();
  }

  void train() {
    const Dataset ds = dataset();
    const auto table = load_external_embeddings(artifact(artifacts::kEmbeddings));
    const auto conf = load_confusion(artifact(artifacts::kConfusion), ds.vocab);
    std::vector<TrainingSample> samples;
    samples.reserve(ds.relations.size());
    for (const auto& r : ds.relations) samples.push_back({r.relation_id, *r.predicate, table.at(r.relation_id)});
    if (samples.empty()) throw Error(ErrorKind::kPrecondition, "dataset has no annotated relations to train on");

    TrainConfig tc = config_.train;
    tc.seed = config_.seed;
    const std::size_t out_dim = config_.encoder_dim ? config_.encoder_dim : table.dim;
    const auto init = EncoderParams::initialize(out_dim, table.dim, tc.seed, tc.init_noise);

    std::vector<Vector> encoded;
    std::vector<PredicateIndex> labels;
    for (const auto& s : samples) {
      encoded.push_back(encode(init, s.base));
      labels.push_back(s.predicate);
    }
    PrototypeLearner learner(samples, PrototypeSpace::from_class_means(encoded, labels, ds.vocab.size()),
                             config_.prototype);
    const auto result = fit(samples, out_dim, conf, tc, learner.hooks(), init);

    StageOutputs out(out_);
    {
      auto f = out.open(artifacts::kEncoder);
      write_encoder(f, result.params);
    }
    {
      auto f = out.open(artifacts::kLossTrace);
      write_loss_trace(f, result.trace);
    }
    {
      auto f = out.open(artifacts::kFiltration);
      write_filtration_log(f, learner.events());
    }
    {
      auto f = out.open(artifacts::kPrototypes);
      write_prototypes(f, learner.space(), ds.vocab);
    }
    out.commit();
    log(LogLevel::kInfo, "trained " + std::to_string(result.trace.size()) + " epochs, dropped " +
                             std::to_string(learner.events().size()) + " samples");
  }

  void prototypes() {
    const auto v = vocab();
    auto in = open_input(artifact(artifacts::kPrototypes));
    const auto space = parse_prototypes(in, v);
    const auto s = similarity_matrix(space);
    StageOutputs out(out_);
    {
      auto f = out.open(artifacts::kSimilarity);
      write_similarity(f, s, v);
    }
    out.commit();
  }

  std::set<RelationId> read_flagged() const {
    std::set<RelationId> ids;
    auto in = open_input(artifact(artifacts::kFlagged));
    std::string line;
    while (std::getline(in, line)) {
      if (trim(line).empty()) continue;
      std::int64_t id = 0;
      if (!try_parse_int(line, id)) throw Error(ErrorKind::kParse, "bad id in flagged list: " + line);
      ids.insert(id);
    }
    return ids;
  }

  std::vector<NaCandidate> read_candidates(const PredicateVocab& v) const {
    std::vector<NaCandidate> out;
    auto in = open_input(artifact(artifacts::kCandidates));
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      if (trim(line).empty()) continue;
      const auto f = split_csv(line);
      NaCandidate c;
      std::int64_t id = 0;
      if (f.size() != 3 || !try_parse_int(f[0], id) || !try_parse_double(f[2], c.na_score))
        throw Error(ErrorKind::kParse, "bad candidate row: " + line);
      const auto p = v.find(std::string(f[1]));
      if (!p) throw Error(ErrorKind::kVocabulary, "unknown predicate in candidates: " + std::string(f[1]));
      c.relation_id = id;
      c.predicted = *p;
      out.push_back(c);
    }
    return out;
  }

  void transfer() {
    const Dataset ds = dataset();
    const auto preds = predictions(ds.vocab.size());
    const auto flagged = read_flagged();
    const auto candidates = read_candidates(ds.vocab);
    auto sin = open_input(artifact(artifacts::kSimilarity));
    const auto similarity = parse_similarity(sin, ds.vocab);

    TransferPlan plan;
    if (config_.transfer_indistinguishable)
      plan.moves = plan_indistinguishable(ds, flagged, preds, similarity, config_.direction_constraint);
    const auto scarcity = compute_scarcity(ds);
    for (auto& m : plan_na_promotions(ds, candidates, scarcity, config_.k_g)) plan.moves.push_back(m);
    plan.validate();

    StageOutputs out(out_);
    {
      auto f = out.open(artifacts::kPlan);
      write_plan(f, plan, ds.vocab);
    }
    const Dataset enhanced = apply_plan(ds, plan);
    {
      auto f = out.open(artifacts::kEnhanced);
      write_dataset(f, enhanced);
    }
    out.commit();
    log(LogLevel::kInfo, std::to_string(plan.count(MoveKind::kIndistinguishable)) + " relabels, " +
                             std::to_string(plan.count(MoveKind::kNaPromotion)) + " NA promotions");
  }

  void resample() {
    const Dataset enhanced = dataset(artifacts::kEnhanced);
    const auto scarcity = config_.resample_on_enhanced ? compute_scarcity(enhanced) : compute_scarcity(dataset());
    const auto plan = plan_resampling(enhanced, scarcity, config_.t, config_.seed);
    StageOutputs out(out_);
    {
      auto f = out.open(artifacts::kRepeatFactors);
      write_repeat_factors(f, plan.per_image);
    }
    {
      auto f = out.open(artifacts::kIndex);
      write_index(f, plan.materialized_index);
    }
    out.commit();
    log(LogLevel::kInfo, "index has " + std::to_string(plan.materialized_index.size()) + " entries");
  }

  void audit() {
    const Dataset original = dataset();
    const Dataset enhanced = dataset(artifacts::kEnhanced);
    TransferPlan plan;
    {
      auto in = open_input(artifact(artifacts::kPlan));
      plan = parse_plan(in, original.vocab);
    }
    const auto rep = transfer_report(original, enhanced, plan);

    nlohmann::ordered_json summary;
    summary["images"] = original.image_ids.size();
    summary["relations_before"] = original.relations.size();
    summary["relations_after"] = enhanced.relations.size();
    summary["na_pairs_before"] = original.na_pairs.size();
    summary["na_pairs_after"] = enhanced.na_pairs.size();
    summary["transfer"] = report_json(rep);
    const fs::path index_path = out_ / std::string(artifacts::kIndex);
    if (fs::exists(index_path)) {
      auto in = open_input(index_path);
      std::size_t n = 0;
      std::string line;
      while (std::getline(in, line)) n += trim(line).empty() ? 0 : 1;
      summary["index_length"] = n;
    }

    nlohmann::ordered_json metrics = nlohmann::ordered_json::object();
    if (!config_.sgg_ground_truth.empty() && !config_.sgg_predictions.empty()) {
      const auto gt = scene_triplets(load_dataset(config_.sgg_ground_truth, original.vocab, original.entity_vocab));
      auto pin = open_input(config_.sgg_predictions);
      const auto pred = parse_scene_graphs(pin);
      for (int k : config_.recall_k) {
        const double r = 100.0 * recall_at_k(gt, pred, k);
        const double mr = 100.0 * mean_recall_at_k(gt, pred, k);
        const std::string suffix = "@" + std::to_string(k);
        metrics["R" + suffix] = r;
        metrics["mR" + suffix] = mr;
        metrics["F" + suffix] = f_score(r, mr);
        if (config_.pq) metrics["PR" + suffix] = pr_score(r, mr, *config_.pq);
      }
    }
    summary["metrics"] = std::move(metrics);

    StageOutputs out(out_);
    {
      auto f = out.open(artifacts::kReport);
      write_report_csv(f, rep);
    }
    {
      auto f = out.open(artifacts::kSummary);
      f << summary.dump(2) << '\n';
    }
    out.commit();
  }

  PipelineConfig config_;
  fs::path out_;
};

// Runs every stage (or one, when `stage` is set) for the config at `path`.
inline void run(const fs::path& config_path, const fs::path& out_dir, std::optional<std::uint64_t> seed = std::nullopt,
                std::optional<std::string> stage = std::nullopt) {
  auto config = PipelineConfig::load(config_path);
  if (seed) config.seed = *seed;
  Pipeline pipeline(std::move(config), out_dir);
  if (stage) {
    pipeline.run_stage(*stage);
  } else {
    pipeline.run_all();
  }
}

}  // namespace predbias

#endif  // PREDBIAS_PIPELINE_HPP_

#include "veto/model.hpp"

#include "veto/errors.hpp"

namespace veto {

void ModelConfig::validate() const {
  patch.validate();
  encoder.validate();
  baseline.validate();
  if (encoder.embed_dim != patch.embed_dim()) {
    throw ValidationError("model: encoder embedding dim " + std::to_string(encoder.embed_dim) +
                          " must equal visual_patch_dim + depth_patch_dim = " +
                          std::to_string(patch.embed_dim()));
  }
  if (visual_channels < 1) throw ValidationError("model: visual_channels must be positive");
  if (feature_height < 3 || feature_width < 3) {
    throw ValidationError("model: feature grid must be at least 3x3");
  }
  if (feature_height < patch.pooled_resolution || feature_width < patch.pooled_resolution) {
    throw ValidationError("model: feature grid smaller than the pooled resolution");
  }
  if (class_embed_dim < 1) throw ValidationError("model: class_embed_dim must be positive");
  if (num_entity_classes < 1) throw ValidationError("model: num_entity_classes must be positive");
  if (num_predicates < 1) throw ValidationError("model: num_predicates must be positive");
  if (geom.out_channels < 1 || geom.hidden_channels < 1) {
    throw ValidationError("model: geometric channels must be positive");
  }
}

nlohmann::json ModelConfig::to_json() const {
  return {{"pooled_resolution", patch.pooled_resolution},
          {"patch_blocks", patch.patch_blocks},
          {"visual_patch_dim", patch.visual_patch_dim},
          {"depth_patch_dim", patch.depth_patch_dim},
          {"layers", encoder.layers},
          {"heads", encoder.heads},
          {"embed_dim", encoder.embed_dim},
          {"mlp_hidden", encoder.mlp_hidden},
          {"attention_dropout", encoder.attention_dropout},
          {"geom_channels", geom.out_channels},
          {"geom_hidden", geom.hidden_channels},
          {"baseline_hidden1", baseline.hidden1},
          {"baseline_hidden2", baseline.hidden2},
          {"baseline_entity_dim", baseline.entity_dim},
          {"baseline_canvas", baseline.canvas_resolution},
          {"baseline_union_pooled", baseline.union_pooled},
          {"visual_channels", visual_channels},
          {"feature_height", feature_height},
          {"feature_width", feature_width},
          {"class_embed_dim", class_embed_dim},
          {"num_entity_classes", num_entity_classes},
          {"num_predicates", num_predicates}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.patch.pooled_resolution = j.value("pooled_resolution", cfg.patch.pooled_resolution);
  cfg.patch.patch_blocks = j.value("patch_blocks", cfg.patch.patch_blocks);
  cfg.patch.visual_patch_dim = j.value("visual_patch_dim", cfg.patch.visual_patch_dim);
  cfg.patch.depth_patch_dim = j.value("depth_patch_dim", cfg.patch.depth_patch_dim);
  cfg.encoder.layers = j.value("layers", cfg.encoder.layers);
  cfg.encoder.heads = j.value("heads", cfg.encoder.heads);
  cfg.encoder.embed_dim = j.value("embed_dim", cfg.patch.embed_dim());
  cfg.encoder.mlp_hidden = j.value("mlp_hidden", 4 * cfg.encoder.embed_dim);
  cfg.encoder.attention_dropout = j.value("attention_dropout", cfg.encoder.attention_dropout);
  cfg.geom.out_channels = j.value("geom_channels", cfg.geom.out_channels);
  cfg.geom.hidden_channels = j.value("geom_hidden", cfg.geom.hidden_channels);
  cfg.baseline.hidden1 = j.value("baseline_hidden1", cfg.baseline.hidden1);
  cfg.baseline.hidden2 = j.value("baseline_hidden2", cfg.baseline.hidden2);
  cfg.baseline.entity_dim = j.value("baseline_entity_dim", cfg.baseline.entity_dim);
  cfg.baseline.canvas_resolution = j.value("baseline_canvas", cfg.baseline.canvas_resolution);
  cfg.baseline.union_pooled = j.value("baseline_union_pooled", cfg.baseline.union_pooled);
  cfg.visual_channels = j.value("visual_channels", cfg.visual_channels);
  cfg.feature_height = j.value("feature_height", cfg.feature_height);
  cfg.feature_width = j.value("feature_width", cfg.feature_width);
  cfg.class_embed_dim = j.value("class_embed_dim", cfg.class_embed_dim);
  cfg.num_entity_classes = j.value("num_entity_classes", cfg.num_entity_classes);
  cfg.num_predicates = j.value("num_predicates", cfg.num_predicates);
  return cfg;
}

VetoModel::VetoModel(const ModelConfig& cfg, std::uint64_t seed, const PredicateGroups* groups)
    : cfg_(cfg) {
  cfg.validate();
  if (groups != nullptr && groups->num_predicates() != cfg.num_predicates) {
    throw ValidationError("model: expert groups cover " +
                          std::to_string(groups->num_predicates()) + " predicates, config has " +
                          std::to_string(cfg.num_predicates));
  }
  RngStream init_rng(seed, "init");
  extractor_.emplace(cfg.geom, store_, init_rng);
  fusion_.emplace(cfg.patch, cfg.visual_channels, cfg.geom.out_channels, store_, init_rng);
  cues_.emplace(cfg.encoder.embed_dim, cfg.num_entity_classes, cfg.class_embed_dim, store_,
                init_rng);
  encoder_.emplace(cfg.encoder, cfg.patch.patch_count(), store_, init_rng);
  if (groups != nullptr) {
    groups_ = *groups;
    expert_heads_.emplace(cfg.encoder.embed_dim, *groups_, store_, init_rng);
  } else {
    single_head_.emplace(cfg.encoder.embed_dim, cfg.num_predicates, store_, init_rng, "head");
  }
}

Var VetoModel::relation_feature(Tape& tape, const SceneInstance& scene, int subject, int object,
                                RngStream* dropout_rng) const {
  const int n = static_cast<int>(scene.entities.size());
  if (subject < 0 || subject >= n || object < 0 || object >= n || subject == object) {
    throw ValidationError("relation_feature: invalid ordered pair (" + std::to_string(subject) +
                          ", " + std::to_string(object) + ")");
  }
  const EntityDetection& subj = scene.entities[static_cast<std::size_t>(subject)];
  const EntityDetection& obj = scene.entities[static_cast<std::size_t>(object)];
  if (subj.visual.extent(0) != cfg_.visual_channels) {
    throw ShapeError("relation_feature: scene has " + std::to_string(subj.visual.extent(0)) +
                     " visual channels, model expects " + std::to_string(cfg_.visual_channels));
  }

  Var subj_visual{Tensor(subj.visual)};
  Var obj_visual{Tensor(obj.visual)};
  Var subj_geom = extractor_->forward(tape, Var(Tensor(subj.depth)));
  Var obj_geom = extractor_->forward(tape, Var(Tensor(obj.depth)));

  RelationPatches patches =
      cross_relation_patches(tape, subj_visual, obj_visual, subj_geom, obj_geom, cfg_.patch);
  std::vector<Var> tokens = fusion_->forward(tape, patches);
  auto [location_token, semantic_token] =
      cues_->forward(tape, subj, obj, scene.image_width, scene.image_height);
  TokenSequence sequence = encoder_->assemble(tape, tokens, location_token, semantic_token);
  return encoder_->forward(tape, sequence, dropout_rng);
}

Var VetoModel::single_logits(Tape& tape, const Var& y) const {
  if (!single_head_) throw ValidationError("model: single-head logits requested from a MEET model");
  return single_head_->logits(tape, y);
}

std::vector<Var> VetoModel::expert_logits(Tape& tape, const Var& y) const {
  if (!expert_heads_) throw ValidationError("model: expert logits requested from a single-head model");
  return expert_heads_->logits(tape, y);
}

Var VetoModel::expert_logits(Tape& tape, const Var& y, int expert) const {
  if (!expert_heads_) throw ValidationError("model: expert logits requested from a single-head model");
  return expert_heads_->logits_for(tape, y, expert);
}

RankedPrediction VetoModel::predict_pair(const SceneInstance& scene, int subject,
                                         int object) const {
  Tape tape;  // never replayed; inference only reads the forward values
  Var y = relation_feature(tape, scene, subject, object);
  if (is_meet()) {
    std::vector<std::vector<double>> logits;
    for (const Var& v : expert_logits(tape, y)) logits.push_back(v.value().vec());
    return merge_expert_predictions(logits, *groups_);
  }
  return rank_single_head(single_logits(tape, y).value().vec());
}

BaselineModel::BaselineModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg.validate();
  RngStream init_rng(seed, "init");
  head_.emplace(cfg.baseline, cfg.visual_channels, cfg.feature_height, cfg.feature_width,
                cfg.num_entity_classes, cfg.class_embed_dim, cfg.num_predicates, store_,
                init_rng);
}

Var BaselineModel::logits(Tape& tape, const SceneInstance& scene, const Tensor& canvas,
                          int subject, int object) const {
  return head_->forward(tape, scene, canvas, subject, object);
}

RankedPrediction BaselineModel::predict_pair(const SceneInstance& scene, int subject,
                                             int object) const {
  Tape tape;
  const Tensor canvas = whole_image_canvas(scene, cfg_.baseline.canvas_resolution);
  return rank_single_head(logits(tape, scene, canvas, subject, object).value().vec());
}

nlohmann::json ParamCountReport::to_json() const {
  return {{"veto_total", veto_total},
          {"veto_patch_projections", veto_patch_projections},
          {"baseline_total", baseline_total},
          {"baseline_dense_projections", baseline_dense_projections},
          {"projection_ratio", projection_ratio},
          {"veto_breakdown", veto_breakdown}};
}

ParamCountReport count_parameters(const ModelConfig& cfg) {
  ParamCountReport report;
  VetoModel veto(cfg, /*seed=*/0);
  BaselineModel baseline(cfg, /*seed=*/0);

  report.veto_total = veto.store().trainable_count();
  report.veto_patch_projections = veto.store().trainable_count("patch.");
  report.baseline_total = baseline.store().trainable_count();
  report.baseline_dense_projections = baseline.store().trainable_count("baseline.dense1.") +
                                      baseline.store().trainable_count("baseline.dense2.");
  report.projection_ratio = static_cast<double>(report.baseline_dense_projections) /
                            static_cast<double>(report.veto_patch_projections);
  for (const std::string& prefix : {"geom", "patch", "cue", "encoder", "head"}) {
    report.veto_breakdown[prefix] = veto.store().trainable_count(prefix + std::string("."));
  }
  return report;
}

ParamCountReport count_parameters_analytic(const ModelConfig& cfg) {
  cfg.validate();
  const std::int64_t dim = cfg.encoder.embed_dim;
  const std::int64_t k2 = cfg.patch.patch_blocks * cfg.patch.patch_blocks;
  const std::int64_t tokens = cfg.patch.token_count();
  const std::int64_t w = cfg.class_embed_dim;

  ParamCountReport report;
  const std::int64_t geom = cfg.geom.hidden_channels * 1 + cfg.geom.hidden_channels +
                            cfg.geom.out_channels * cfg.geom.hidden_channels * 9 +
                            cfg.geom.out_channels;
  const std::int64_t patch =
      cfg.patch.visual_patch_dim * (2 * cfg.visual_channels * k2) + cfg.patch.visual_patch_dim +
      cfg.patch.depth_patch_dim * (2 * cfg.geom.out_channels * k2) + cfg.patch.depth_patch_dim;
  const std::int64_t cue = dim * 16 + dim + dim * (2 * w) + dim + cfg.num_entity_classes * w;
  const std::int64_t hd = cfg.encoder.head_dim();
  const std::int64_t per_layer = 2 * (2 * dim) +                            // pre-block norms
                                 cfg.encoder.heads * 3 * (hd * dim + hd) +  // q, k, v
                                 dim * dim + dim +                          // output projection
                                 cfg.encoder.mlp_hidden * dim + cfg.encoder.mlp_hidden +
                                 dim * cfg.encoder.mlp_hidden + dim;
  const std::int64_t encoder = dim + tokens * dim + cfg.encoder.layers * per_layer + 2 * dim;
  const std::int64_t head = cfg.num_predicates * dim + cfg.num_predicates;

  report.veto_breakdown = {{"geom", geom}, {"patch", patch}, {"cue", cue},
                           {"encoder", encoder}, {"head", head}};
  report.veto_total = geom + patch + cue + encoder + head;
  report.veto_patch_projections = patch;

  const std::int64_t flat = static_cast<std::int64_t>(cfg.visual_channels) *
                            cfg.feature_height * cfg.feature_width;
  const std::int64_t union_flat = static_cast<std::int64_t>(cfg.visual_channels) *
                                  cfg.baseline.union_pooled * cfg.baseline.union_pooled;
  const std::int64_t dense = cfg.baseline.hidden1 * flat + cfg.baseline.hidden1 +
                             cfg.baseline.hidden2 * cfg.baseline.hidden1 + cfg.baseline.hidden2;
  const std::int64_t entity_in = cfg.baseline.hidden2 + 8 + w;
  report.baseline_dense_projections = dense;
  report.baseline_total = dense + cfg.baseline.entity_dim * entity_in + cfg.baseline.entity_dim +
                          cfg.num_predicates * union_flat + cfg.num_predicates +
                          cfg.num_predicates * (2 * cfg.baseline.entity_dim) +
                          cfg.num_predicates + cfg.num_entity_classes * w;
  report.projection_ratio = static_cast<double>(report.baseline_dense_projections) /
                            static_cast<double>(report.veto_patch_projections);
  return report;
}

PredictedGraph predict_scene(const PairPredictor& predictor, const SceneInstance& scene) {
  PredictedGraph graph;
  const int n = static_cast<int>(scene.entities.size());
  for (int s = 0; s < n; ++s) {
    for (int o = 0; o < n; ++o) {
      if (s == o) continue;
      graph.pairs.push_back(PairPrediction{s, o, predictor(scene, s, o)});
    }
  }
  return graph;
}

MetricReport evaluate_scenes(const PairPredictor& predictor,
                             const std::vector<SceneInstance>& scenes, int num_predicates,
                             const std::vector<int>& ks,
                             const std::vector<std::int64_t>& train_frequency,
                             const EvalOptions& options) {
  if (scenes.empty()) throw ValidationError("evaluate: split is empty");
  std::vector<std::vector<SceneRecallStats>> per_scene;
  per_scene.reserve(scenes.size());
  for (const SceneInstance& scene : scenes) {
    const PredictedGraph graph = predict_scene(predictor, scene);
    std::vector<SceneRecallStats> stats;
    stats.reserve(ks.size());
    for (int k : ks) stats.push_back(recall_at_k(graph, scene, num_predicates, k, options));
    per_scene.push_back(std::move(stats));
  }
  return aggregate_report(per_scene, ks, train_frequency);
}

std::vector<double> group_mean_recall(const MetricReport& report, const PredicateGroups& groups,
                                      std::size_t k_index) {
  // per_predicate_recall is in descending-frequency order, which matches the
  // concatenation of the groups' members.
  std::vector<double> out;
  std::size_t cursor = 0;
  for (const ExpertGroup& group : groups.groups) {
    double acc = 0.0;
    int counted = 0;
    for (std::size_t i = 0; i < group.members.size(); ++i, ++cursor) {
      const double r = report.per_predicate_recall[k_index][cursor];
      if (r >= 0.0) {
        acc += r;
        ++counted;
      }
    }
    out.push_back(counted > 0 ? acc / counted : -1.0);
  }
  return out;
}

}  // namespace veto

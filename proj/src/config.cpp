#include "veto/config.hpp"

#include <fstream>

#include "veto/errors.hpp"

namespace veto {

void TrainConfig::validate() const {
  if (mode != "single" && mode != "rwt" && mode != "meet" && mode != "baseline") {
    throw ValidationError("train: mode must be single, rwt, meet or baseline (got '" + mode +
                          "')");
  }
  if (steps < 1) throw ValidationError("train: steps must be positive");
  if (batch_size < 1) throw ValidationError("train: batch_size must be positive");
  if (adam.learning_rate <= 0.0) throw ValidationError("train: learning rate must be positive");
  if (adam.beta1 < 0.0 || adam.beta1 >= 1.0 || adam.beta2 < 0.0 || adam.beta2 >= 1.0) {
    throw ValidationError("train: Adam betas must be in [0, 1)");
  }
  if (schedule.warmup_steps < 0) throw ValidationError("train: warmup_steps must be >= 0");
  if (schedule.decay_factor <= 0.0 || schedule.decay_factor >= 1.0) {
    throw ValidationError("train: decay_factor must be in (0, 1)");
  }
  if (schedule.max_decays < 0 || schedule.patience < 1) {
    throw ValidationError("train: max_decays must be >= 0 and patience >= 1");
  }
  if (eval_every < 1 || checkpoint_every < 1) {
    throw ValidationError("train: eval_every and checkpoint_every must be positive");
  }
  if (eval_k < 1) throw ValidationError("train: eval_k must be positive");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"mode", mode},
          {"steps", steps},
          {"batch_size", batch_size},
          {"learning_rate", adam.learning_rate},
          {"beta1", adam.beta1},
          {"beta2", adam.beta2},
          {"adam_eps", adam.eps},
          {"warmup_steps", schedule.warmup_steps},
          {"decay_factor", schedule.decay_factor},
          {"max_decays", schedule.max_decays},
          {"patience", schedule.patience},
          {"eval_every", eval_every},
          {"checkpoint_every", checkpoint_every},
          {"eval_k", eval_k},
          {"resume_from", resume_from}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  cfg.mode = j.value("mode", cfg.mode);
  cfg.steps = j.value("steps", cfg.steps);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.adam.learning_rate = j.value("learning_rate", cfg.adam.learning_rate);
  cfg.adam.beta1 = j.value("beta1", cfg.adam.beta1);
  cfg.adam.beta2 = j.value("beta2", cfg.adam.beta2);
  cfg.adam.eps = j.value("adam_eps", cfg.adam.eps);
  cfg.schedule.warmup_steps = j.value("warmup_steps", cfg.schedule.warmup_steps);
  cfg.schedule.decay_factor = j.value("decay_factor", cfg.schedule.decay_factor);
  cfg.schedule.max_decays = j.value("max_decays", cfg.schedule.max_decays);
  cfg.schedule.patience = j.value("patience", cfg.schedule.patience);
  cfg.eval_every = j.value("eval_every", cfg.eval_every);
  cfg.checkpoint_every = j.value("checkpoint_every", cfg.checkpoint_every);
  cfg.eval_k = j.value("eval_k", cfg.eval_k);
  cfg.resume_from = j.value("resume_from", cfg.resume_from);
  return cfg;
}

void RunConfig::validate() const {
  synth.validate();
  model.validate();
  train.validate();
  if (meet_groups < 1) throw ValidationError("meet: need at least one expert group");
  if (meet_groups > model.num_predicates) {
    throw ValidationError("meet: more expert groups than predicates");
  }
  if (!meet_boundaries.empty()) {
    if (meet_boundaries.front() != 0 ||
        meet_boundaries.back() != model.num_predicates) {
      throw ValidationError("meet: explicit boundaries must run from 0 to the predicate count");
    }
  }
  if (eval_ks.empty()) throw ValidationError("eval: needs at least one k");
  for (int k : eval_ks) {
    if (k < 1) throw ValidationError("eval: ks must be positive");
  }
  if (!graph_constrained) {
    throw ValidationError("eval: graph_constrained=false is a config stub and not implemented");
  }
}

nlohmann::json RunConfig::to_json() const {
  return {{"synth", synth.to_json()},
          {"model", model.to_json()},
          {"meet", {{"num_experts", meet_groups}, {"boundaries", meet_boundaries}}},
          {"train", train.to_json()},
          {"eval", {{"ks", eval_ks}, {"graph_constrained", graph_constrained}}},
          {"paths", {{"data_dir", data_dir}, {"out_dir", out_dir}}},
          {"seed", seed}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig cfg;
  if (j.contains("synth")) cfg.synth = SynthConfig::from_json(j.at("synth"));
  if (j.contains("model")) cfg.model = ModelConfig::from_json(j.at("model"));
  if (j.contains("meet")) {
    cfg.meet_groups = j.at("meet").value("num_experts", cfg.meet_groups);
    cfg.meet_boundaries = j.at("meet").value("boundaries", cfg.meet_boundaries);
  }
  if (j.contains("train")) cfg.train = TrainConfig::from_json(j.at("train"));
  if (j.contains("eval")) {
    cfg.eval_ks = j.at("eval").value("ks", cfg.eval_ks);
    cfg.graph_constrained = j.at("eval").value("graph_constrained", cfg.graph_constrained);
  }
  if (j.contains("paths")) {
    cfg.data_dir = j.at("paths").value("data_dir", cfg.data_dir);
    cfg.out_dir = j.at("paths").value("out_dir", cfg.out_dir);
  }
  cfg.seed = j.value("seed", cfg.seed);
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("config parse error in " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

void RunConfig::align_with(const DatasetManifest& manifest, const SceneInstance& sample) {
  model.num_predicates = manifest.num_predicates();
  model.num_entity_classes = manifest.num_entity_classes();
  if (sample.entities.empty()) throw ValidationError("dataset scenes have no entities");
  const Tensor& visual = sample.entities.front().visual;
  model.visual_channels = static_cast<int>(visual.extent(0));
  model.feature_height = static_cast<int>(visual.extent(1));
  model.feature_width = static_cast<int>(visual.extent(2));
  validate();
}

}  // namespace veto

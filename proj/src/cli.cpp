#include "veto/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <iostream>

#include "veto/config.hpp"
#include "veto/errors.hpp"
#include "veto/gradcheck.hpp"
#include "veto/trainer.hpp"

#include "CLI11.hpp"

namespace veto {

namespace {

struct CommonFlags {
  std::string config_path;
  std::string out_dir;
  std::string data_dir;
  std::string split = "val";
  std::string checkpoint;
  std::string resume;
  std::int64_t seed = -1;  // -1 = keep the config's seed
};

RunConfig load_config(const CommonFlags& flags) {
  if (flags.config_path.empty()) throw ValidationError("--config is required");
  RunConfig cfg = RunConfig::load(flags.config_path);
  if (flags.seed >= 0) cfg.seed = static_cast<std::uint64_t>(flags.seed);
  if (!flags.out_dir.empty()) cfg.out_dir = flags.out_dir;
  if (!flags.data_dir.empty()) cfg.data_dir = flags.data_dir;
  if (!flags.resume.empty()) cfg.train.resume_from = flags.resume;
  return cfg;
}

int cmd_synth(const CommonFlags& flags) {
  RunConfig cfg = load_config(flags);
  cfg.synth.validate();
  const std::filesystem::path out = cfg.data_dir;
  const DatasetManifest manifest = synthesize_dataset(cfg.synth, cfg.seed, out);
  std::cout << "wrote " << manifest.train_scenes.size() << " train / "
            << manifest.val_scenes.size() << " val / " << manifest.test_scenes.size()
            << " test scenes under " << out.string() << "\n";
  return 0;
}

int cmd_train(const CommonFlags& flags) {
  RunConfig cfg = load_config(flags);
  const Dataset dataset = load_dataset(cfg.data_dir);
  if (dataset.train.empty()) throw ValidationError("dataset has no training scenes");
  cfg.align_with(dataset.manifest, dataset.train.front());
  Trainer trainer(cfg, dataset);
  trainer.run();
  const MetricReport report = trainer.evaluate("val", cfg.eval_ks);
  std::cout << "trained " << trainer.step() << " steps; validation metrics:\n"
            << render_report_table(report);
  std::cout << "checkpoint: " << (std::filesystem::path(cfg.out_dir) / "checkpoint.json").string()
            << "\n";
  return 0;
}

int cmd_eval(const CommonFlags& flags) {
  if (flags.checkpoint.empty()) throw ValidationError("--checkpoint is required");
  RunConfig cfg = checkpoint_config(flags.checkpoint);
  if (!flags.data_dir.empty()) cfg.data_dir = flags.data_dir;
  if (!flags.out_dir.empty()) cfg.out_dir = flags.out_dir;
  const Dataset dataset = load_dataset(cfg.data_dir);
  if (dataset.split(flags.split).empty()) {
    throw ValidationError("split '" + flags.split + "' is empty");
  }

  cfg.train.resume_from = flags.checkpoint;
  Trainer trainer(cfg, dataset);
  const MetricReport report = trainer.evaluate(flags.split, cfg.eval_ks);

  std::filesystem::create_directories(cfg.out_dir);
  const auto report_path =
      std::filesystem::path(cfg.out_dir) / ("report_" + flags.split + ".json");
  write_json_atomic(report_to_json(report, cfg.to_json()), report_path, 2);
  std::cout << flags.split << " split, " << report.scenes << " scenes, " << report.gt_triplets
            << " ground-truth triplets\n"
            << render_report_table(report) << "report: " << report_path.string() << "\n";
  return 0;
}

int cmd_params(const CommonFlags& flags) {
  RunConfig cfg = load_config(flags);
  cfg.model.validate();
  const ParamCountReport report = count_parameters_analytic(cfg.model);
  std::printf("relation network total:        %11lld\n",
              static_cast<long long>(report.veto_total));
  for (const auto& [name, count] : report.veto_breakdown) {
    std::printf("  %-10s %11lld\n", name.c_str(), static_cast<long long>(count));
  }
  std::printf("patch projections (f_v + f_d): %11lld\n",
              static_cast<long long>(report.veto_patch_projections));
  std::printf("baseline total:                %11lld\n",
              static_cast<long long>(report.baseline_total));
  std::printf("baseline dense projections:    %11lld\n",
              static_cast<long long>(report.baseline_dense_projections));
  std::printf("dense / patch projection ratio: %10.1f\n", report.projection_ratio);
  if (!flags.out_dir.empty()) {
    std::filesystem::create_directories(flags.out_dir);
    nlohmann::json j = report.to_json();
    j["fingerprint"] = cfg.to_json();
    write_json_atomic(j, std::filesystem::path(flags.out_dir) / "params.json", 2);
  }
  return 0;
}

// Builds a small random scene directly; gradient checking needs no dataset.
SceneInstance toy_scene(const ModelConfig& cfg, RngStream& rng, int entities) {
  SceneInstance scene;
  scene.image_width = 64.0;
  scene.image_height = 64.0;
  for (int e = 0; e < entities; ++e) {
    EntityDetection ent;
    const double x1 = rng.uniform(0.0, 30.0), y1 = rng.uniform(0.0, 30.0);
    ent.box = {x1, y1, x1 + rng.uniform(10.0, 30.0), y1 + rng.uniform(10.0, 30.0)};
    ent.class_id = static_cast<int>(rng.uniform_int(cfg.num_entity_classes));
    ent.score = 1.0;
    ent.visual = Tensor({cfg.visual_channels, cfg.feature_height, cfg.feature_width});
    for (std::int64_t i = 0; i < ent.visual.numel(); ++i) ent.visual[i] = rng.normal(0.0, 0.5);
    ent.depth = Tensor({1, cfg.feature_height, cfg.feature_width});
    for (std::int64_t i = 0; i < ent.depth.numel(); ++i) ent.depth[i] = rng.normal(0.0, 0.5);
    scene.entities.push_back(std::move(ent));
  }
  return scene;
}

ModelConfig gradcheck_model_config() {
  ModelConfig cfg;
  cfg.patch.pooled_resolution = 8;
  cfg.patch.patch_blocks = 2;
  cfg.patch.visual_patch_dim = 12;
  cfg.patch.depth_patch_dim = 12;
  cfg.encoder.layers = 2;
  cfg.encoder.heads = 2;
  cfg.encoder.embed_dim = 24;
  cfg.encoder.mlp_hidden = 32;
  cfg.geom.out_channels = 2;
  cfg.geom.hidden_channels = 2;
  cfg.visual_channels = 3;
  cfg.feature_height = 8;
  cfg.feature_width = 8;
  cfg.class_embed_dim = 6;
  cfg.num_entity_classes = 4;
  cfg.num_predicates = 6;
  cfg.baseline.hidden1 = 32;
  cfg.baseline.hidden2 = 16;
  cfg.baseline.entity_dim = 16;
  cfg.baseline.canvas_resolution = 8;
  cfg.baseline.union_pooled = 4;
  return cfg;
}

bool report_line(const char* name, const GradCheckReport& report) {
  std::printf("[gradcheck] %-22s %s\n", name, report.summary().c_str());
  return report.passed;
}

int cmd_gradcheck(const CommonFlags& flags) {
  ModelConfig cfg = gradcheck_model_config();
  if (!flags.config_path.empty()) {
    cfg = RunConfig::load(flags.config_path).model;
  }
  cfg.validate();
  RngStream rng(3, "gradcheck");
  bool ok = true;

  // Per-op checks at the tight tolerances.
  {
    ParameterStore store;
    Var a = store.add_normal("a", {3, 4}, 1.0, rng);
    Var b = store.add_normal("b", {4, 2}, 1.0, rng);
    Tensor probe({3, 2});
    for (std::int64_t i = 0; i < probe.numel(); ++i) probe[i] = rng.normal();
    auto loss = [&](Tape& t) { return sum(t, mul(t, matmul(t, a, b), Var(probe))); };
    ok &= report_line("matmul (1e-6)", check_gradients(store, loss, {.tolerance = 1e-6}));
  }
  {
    ParameterStore store;
    Var x = store.add_normal("x", {5}, 1.0, rng);
    Tensor probe({5});
    for (std::int64_t i = 0; i < probe.numel(); ++i) probe[i] = rng.normal();
    auto loss = [&](Tape& t) { return sum(t, mul(t, softmax(t, x, -1), Var(probe))); };
    ok &= report_line("softmax (1e-6)", check_gradients(store, loss, {.tolerance = 1e-6}));
  }
  {
    ParameterStore store;
    Var x = store.add_normal("x", {8}, 1.0, rng);
    Var g = store.add_normal("gain", {8}, 0.5, rng);
    Var b = store.add_normal("bias", {8}, 0.5, rng);
    Tensor probe({8});
    for (std::int64_t i = 0; i < probe.numel(); ++i) probe[i] = rng.normal();
    auto loss = [&](Tape& t) {
      return sum(t, mul(t, layer_norm(t, x, g, b, 1e-5), Var(probe)));
    };
    ok &= report_line("layer_norm (1e-5)", check_gradients(store, loss, {.tolerance = 1e-5}));
  }
  {
    ParameterStore store;
    Var x = store.add_normal("x", {2, 5, 7}, 1.0, rng);
    Tensor probe({2, 3, 3});
    for (std::int64_t i = 0; i < probe.numel(); ++i) probe[i] = rng.normal();
    auto loss = [&](Tape& t) { return sum(t, mul(t, avg_pool(t, x, 3), Var(probe))); };
    ok &= report_line("avg_pool (1e-6)", check_gradients(store, loss, {.tolerance = 1e-6}));
  }

  // End-to-end: extractor -> patches -> encoder -> expert heads -> loss.
  {
    std::vector<std::int64_t> freq = {40, 24, 12, 6, 3, 1};
    const PredicateGroups groups = build_groups(freq, 2);
    VetoModel model(cfg, 11, &groups);
    const SceneInstance scene = toy_scene(cfg, rng, 3);
    RngStream sub_rng(5, "gradcheck-subsample");
    GradCheckOptions options;
    options.tolerance = 1e-4;
    options.subsample_threshold = 256;
    options.subsample = 96;
    options.subsample_rng = &sub_rng;
    auto loss = [&](Tape& t) {
      Var y01 = model.relation_feature(t, scene, 0, 1);
      Var y20 = model.relation_feature(t, scene, 2, 0);
      std::vector<std::vector<Var>> logits(groups.groups.size());
      std::vector<std::vector<int>> labels(groups.groups.size());
      // Fixed routing: both samples visit both experts.
      const int predicates[2] = {1, 4};
      const Var ys[2] = {y01, y20};
      for (int g = 0; g < groups.num_groups(); ++g) {
        for (int s = 0; s < 2; ++s) {
          logits[static_cast<std::size_t>(g)].push_back(model.expert_logits(t, ys[s], g));
          labels[static_cast<std::size_t>(g)].push_back(
              groups.groups[static_cast<std::size_t>(g)]
                  .local_labels[static_cast<std::size_t>(predicates[s])]);
        }
      }
      return multi_expert_loss(t, logits, labels);
    };
    ok &= report_line("relation net (1e-4)", check_gradients(model.store(), loss, options));
  }

  // Baseline head end to end.
  {
    BaselineModel model(cfg, 13);
    const SceneInstance scene = toy_scene(cfg, rng, 2);
    const Tensor canvas = whole_image_canvas(scene, cfg.baseline.canvas_resolution);
    RngStream sub_rng(6, "gradcheck-subsample");
    GradCheckOptions options;
    options.tolerance = 1e-4;
    options.subsample_threshold = 256;
    options.subsample = 96;
    options.subsample_rng = &sub_rng;
    auto loss = [&](Tape& t) {
      Var logits = model.logits(t, scene, canvas, 0, 1);
      return cross_entropy(t, logits, {2});
    };
    ok &= report_line("baseline head (1e-4)", check_gradients(model.store(), loss, options));
  }

  if (!ok) throw NumericError("gradient check failed");
  return 0;
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"Local-level relation encoder with mutually exclusive expert debiasing"};
  app.require_subcommand(1);
  CommonFlags flags;

  auto add_common = [&](CLI::App* cmd, bool with_config) {
    if (with_config) cmd->add_option("--config", flags.config_path, "run config (JSON)");
    cmd->add_option("--seed", flags.seed, "override the config seed");
    cmd->add_option("--out-dir", flags.out_dir, "output directory override");
    return cmd;
  };

  CLI::App* synth = add_common(app.add_subcommand("synth", "generate a synthetic dataset"), true);
  synth->add_option("--data", flags.data_dir, "dataset directory (defaults to paths.data_dir)");

  CLI::App* train = add_common(app.add_subcommand("train", "train a relation model"), true);
  train->add_option("--data", flags.data_dir, "dataset directory override");
  train->add_option("--resume", flags.resume, "checkpoint to resume from");

  CLI::App* evalc = add_common(app.add_subcommand("eval", "evaluate a checkpoint"), false);
  evalc->add_option("--checkpoint", flags.checkpoint, "checkpoint path")->required();
  evalc->add_option("--split", flags.split, "train | val | test")->required();
  evalc->add_option("--data", flags.data_dir, "dataset directory override");

  add_common(app.add_subcommand("params", "report trainable parameter counts"), true);
  add_common(app.add_subcommand("gradcheck", "finite-difference gradient checks"), true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (app.got_subcommand("synth")) return cmd_synth(flags);
    if (app.got_subcommand("train")) return cmd_train(flags);
    if (app.got_subcommand("eval")) return cmd_eval(flags);
    if (app.got_subcommand("params")) return cmd_params(flags);
    if (app.got_subcommand("gradcheck")) return cmd_gradcheck(flags);
    throw ValidationError("no subcommand");
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace veto

#include "veto/patches.hpp"

#include <algorithm>
#include <cmath>

#include "veto/errors.hpp"

namespace veto {

void PatchConfig::validate() const {
  if (pooled_resolution < 1 || patch_blocks < 1) {
    throw ValidationError("patch config: resolutions must be positive");
  }
  if (pooled_resolution % patch_blocks != 0) {
    throw ValidationError("patch config: patch size " + std::to_string(patch_blocks) +
                          " must divide pooled resolution " + std::to_string(pooled_resolution));
  }
  if (visual_patch_dim < 1 || depth_patch_dim < 1) {
    throw ValidationError("patch config: projected patch dims must be positive");
  }
}

RelationPatches cross_relation_patches(Tape& tape, const Var& subject_visual,
                                       const Var& object_visual, const Var& subject_geom,
                                       const Var& object_geom, const PatchConfig& cfg) {
  cfg.validate();
  auto check_pair = [](const Var& a, const Var& b, const char* what) {
    if (a.shape() != b.shape()) {
      throw ShapeError(std::string("cross_relation_patches: subject and object ") + what +
                       " grids disagree: " + shape_str(a.shape()) + " vs " +
                       shape_str(b.shape()));
    }
  };
  check_pair(subject_visual, object_visual, "visual");
  check_pair(subject_geom, object_geom, "geometric");

  const std::int64_t p = cfg.pooled_resolution;
  Var pooled_sub_v = avg_pool(tape, subject_visual, p);
  Var pooled_obj_v = avg_pool(tape, object_visual, p);
  Var pooled_sub_g = avg_pool(tape, subject_geom, p);
  Var pooled_obj_g = avg_pool(tape, object_geom, p);

  // Channel fusion keeps the subject half first.
  Var fused_v = concat(tape, {pooled_sub_v, pooled_obj_v}, 0);
  Var fused_g = concat(tape, {pooled_sub_g, pooled_obj_g}, 0);

  RelationPatches out;
  out.visual = split_blocks(tape, fused_v, cfg.patch_blocks);
  out.depth = split_blocks(tape, fused_g, cfg.patch_blocks);
  return out;
}

PatchFusion::PatchFusion(const PatchConfig& cfg, int visual_channels, int geom_channels,
                         ParameterStore& store, RngStream& init_rng, const std::string& prefix)
    : cfg_(cfg) {
  cfg.validate();
  const int k2 = cfg.patch_blocks * cfg.patch_blocks;
  visual_in_ = 2 * visual_channels * k2;
  depth_in_ = 2 * geom_channels * k2;
  visual_w_ = store.add_xavier(prefix + ".visual.weight", {cfg.visual_patch_dim, visual_in_},
                               visual_in_, cfg.visual_patch_dim, init_rng);
  visual_b_ = store.add_zeros(prefix + ".visual.bias", {cfg.visual_patch_dim});
  depth_w_ = store.add_xavier(prefix + ".depth.weight", {cfg.depth_patch_dim, depth_in_},
                              depth_in_, cfg.depth_patch_dim, init_rng);
  depth_b_ = store.add_zeros(prefix + ".depth.bias", {cfg.depth_patch_dim});
}

std::vector<Var> PatchFusion::forward(Tape& tape, const RelationPatches& patches) const {
  if (patches.visual.size() != patches.depth.size()) {
    throw ShapeError("patch fusion: modality patch lists differ in length");
  }
  if (static_cast<int>(patches.visual.size()) != cfg_.patch_count()) {
    throw ShapeError("patch fusion: expected " + std::to_string(cfg_.patch_count()) +
                     " patches, got " + std::to_string(patches.visual.size()));
  }
  std::vector<Var> tokens;
  tokens.reserve(patches.visual.size());
  for (std::size_t i = 0; i < patches.visual.size(); ++i) {
    Var v = reshape(tape, patches.visual[i], {visual_in_});
    Var d = reshape(tape, patches.depth[i], {depth_in_});
    Var pv = linear(tape, v, visual_w_, visual_b_);
    Var pd = linear(tape, d, depth_w_, depth_b_);
    tokens.push_back(concat(tape, {pv, pd}, 0));
  }
  return tokens;
}

Tensor location_descriptor(const EntityDetection& e, double image_width, double image_height) {
  const double x1 = e.box[0], y1 = e.box[1], x2 = e.box[2], y2 = e.box[3];
  return Tensor({8}, {x1 / image_width, y1 / image_height, x2 / image_width, y2 / image_height,
                      0.5 * (x1 + x2) / image_width, 0.5 * (y1 + y2) / image_height,
                      (x2 - x1) / image_width, (y2 - y1) / image_height});
}

CueTokenBuilder::CueTokenBuilder(int embed_dim, int num_entity_classes, int class_embed_dim,
                                 ParameterStore& store, RngStream& init_rng,
                                 const std::string& prefix) {
  location_w_ = store.add_xavier(prefix + ".location.weight", {embed_dim, 16}, 16, embed_dim,
                                 init_rng);
  location_b_ = store.add_zeros(prefix + ".location.bias", {embed_dim});
  semantic_w_ = store.add_xavier(prefix + ".semantic.weight", {embed_dim, 2 * class_embed_dim},
                                 2 * class_embed_dim, embed_dim, init_rng);
  semantic_b_ = store.add_zeros(prefix + ".semantic.bias", {embed_dim});
  class_embed_ = store.add_normal(prefix + ".class_embed", {num_entity_classes, class_embed_dim},
                                  0.02, init_rng);
}

std::pair<Var, Var> CueTokenBuilder::forward(Tape& tape, const EntityDetection& subject,
                                             const EntityDetection& object, double image_width,
                                             double image_height) const {
  Var loc_pair = Var(Tensor({16}));
  {
    Tensor both({16});
    const Tensor ls = location_descriptor(subject, image_width, image_height);
    const Tensor lo = location_descriptor(object, image_width, image_height);
    for (int i = 0; i < 8; ++i) {
      both[i] = ls[i];
      both[8 + i] = lo[i];
    }
    loc_pair = Var(std::move(both));
  }
  Var location_token = relu(tape, linear(tape, loc_pair, location_w_, location_b_));

  Var ws = row(tape, class_embed_, subject.class_id);
  Var wo = row(tape, class_embed_, object.class_id);
  Var sem_pair = concat(tape, {ws, wo}, 0);
  Var semantic_token = relu(tape, linear(tape, sem_pair, semantic_w_, semantic_b_));
  return {location_token, semantic_token};
}

void BaselineConfig::validate() const {
  if (hidden1 < 1 || hidden2 < 1 || entity_dim < 1) {
    throw ValidationError("baseline config: layer widths must be positive");
  }
  if (canvas_resolution < 1 || union_pooled < 1) {
    throw ValidationError("baseline config: canvas and union resolutions must be positive");
  }
}

Tensor whole_image_canvas(const SceneInstance& scene, int canvas_resolution) {
  if (scene.entities.empty()) throw ValidationError("canvas of an empty scene");
  const std::int64_t c = scene.entities.front().visual.extent(0);
  const std::int64_t r = canvas_resolution;
  Tensor canvas({c, r, r});
  Tensor coverage({1, r, r});
  for (const EntityDetection& e : scene.entities) {
    const std::int64_t h = e.visual.extent(1), w = e.visual.extent(2);
    const auto cell = [&](double coord, double size) {
      return std::clamp<std::int64_t>(
          static_cast<std::int64_t>(coord / size * static_cast<double>(r)), 0, r - 1);
    };
    const std::int64_t cy0 = cell(e.box[1], scene.image_height);
    const std::int64_t cy1 = std::max(cy0 + 1, cell(e.box[3], scene.image_height));
    const std::int64_t cx0 = cell(e.box[0], scene.image_width);
    const std::int64_t cx1 = std::max(cx0 + 1, cell(e.box[2], scene.image_width));
    for (std::int64_t y = cy0; y < cy1; ++y) {
      for (std::int64_t x = cx0; x < cx1; ++x) {
        const std::int64_t sy = (y - cy0) * h / (cy1 - cy0);
        const std::int64_t sx = (x - cx0) * w / (cx1 - cx0);
        for (std::int64_t ch = 0; ch < c; ++ch) {
          canvas.at3(ch, y, x) += e.visual.at3(ch, sy, sx);
        }
        coverage.at3(0, y, x) += 1.0;
      }
    }
  }
  for (std::int64_t y = 0; y < r; ++y)
    for (std::int64_t x = 0; x < r; ++x) {
      const double n = coverage.at3(0, y, x);
      if (n > 1.0) {
        for (std::int64_t ch = 0; ch < c; ++ch) canvas.at3(ch, y, x) /= n;
      }
    }
  return canvas;
}

Tensor union_box_features(const Tensor& canvas, const EntityDetection& subject,
                          const EntityDetection& object, double image_width,
                          double image_height, int union_pooled) {
  const std::int64_t c = canvas.extent(0), r = canvas.extent(1);
  const double x1 = std::min(subject.box[0], object.box[0]);
  const double y1 = std::min(subject.box[1], object.box[1]);
  const double x2 = std::max(subject.box[2], object.box[2]);
  const double y2 = std::max(subject.box[3], object.box[3]);
  const auto lo = [&](double coord, double size) {
    return std::clamp<std::int64_t>(
        static_cast<std::int64_t>(coord / size * static_cast<double>(r)), 0, r - 1);
  };
  const std::int64_t cy0 = lo(y1, image_height);
  const std::int64_t cy1 = std::max(cy0 + 1, lo(y2, image_height));
  const std::int64_t cx0 = lo(x1, image_width);
  const std::int64_t cx1 = std::max(cx0 + 1, lo(x2, image_width));

  const std::int64_t p = union_pooled;
  Tensor out({c, p, p});
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t y = 0; y < p; ++y)
      for (std::int64_t x = 0; x < p; ++x) {
        const std::int64_t sy = cy0 + y * (cy1 - cy0) / p;
        const std::int64_t sx = cx0 + x * (cx1 - cx0) / p;
        out.at3(ch, y, x) = canvas.at3(ch, sy, sx);
      }
  return out;
}

BaselineRelationHead::BaselineRelationHead(const BaselineConfig& cfg, int visual_channels,
                                           int feature_height, int feature_width,
                                           int num_entity_classes, int class_embed_dim,
                                           int num_predicates, ParameterStore& store,
                                           RngStream& init_rng, const std::string& prefix)
    : cfg_(cfg) {
  cfg.validate();
  const int flat = visual_channels * feature_height * feature_width;
  const int union_flat = visual_channels * cfg.union_pooled * cfg.union_pooled;
  dense1_w_ = store.add_xavier(prefix + ".dense1.weight", {cfg.hidden1, flat}, flat, cfg.hidden1,
                               init_rng);
  dense1_b_ = store.add_zeros(prefix + ".dense1.bias", {cfg.hidden1});
  dense2_w_ = store.add_xavier(prefix + ".dense2.weight", {cfg.hidden2, cfg.hidden1},
                               cfg.hidden1, cfg.hidden2, init_rng);
  dense2_b_ = store.add_zeros(prefix + ".dense2.bias", {cfg.hidden2});
  const int entity_in = cfg.hidden2 + 8 + class_embed_dim;
  entity_w_ = store.add_xavier(prefix + ".entity.weight", {cfg.entity_dim, entity_in}, entity_in,
                               cfg.entity_dim, init_rng);
  entity_b_ = store.add_zeros(prefix + ".entity.bias", {cfg.entity_dim});
  union_w_ = store.add_xavier(prefix + ".union.weight", {num_predicates, union_flat}, union_flat,
                              num_predicates, init_rng);
  union_b_ = store.add_zeros(prefix + ".union.bias", {num_predicates});
  pair_w_ = store.add_xavier(prefix + ".pair.weight", {num_predicates, 2 * cfg.entity_dim},
                             2 * cfg.entity_dim, num_predicates, init_rng);
  pair_b_ = store.add_zeros(prefix + ".pair.bias", {num_predicates});
  class_embed_ = store.add_normal(prefix + ".class_embed", {num_entity_classes, class_embed_dim},
                                  0.02, init_rng);
}

Var BaselineRelationHead::forward(Tape& tape, const SceneInstance& scene, const Tensor& canvas,
                                  int subject, int object) const {
  auto entity_repr = [&](int index) {
    const EntityDetection& e = scene.entities[static_cast<std::size_t>(index)];
    Var flat = Var(Tensor({e.visual.numel()}, e.visual.vec()));
    Var hidden = relu(tape, linear(tape, flat, dense1_w_, dense1_b_));
    Var bottleneck = linear(tape, hidden, dense2_w_, dense2_b_);
    Var loc = Var(location_descriptor(e, scene.image_width, scene.image_height));
    Var sem = row(tape, class_embed_, e.class_id);
    Var joined = concat(tape, {bottleneck, loc, sem}, 0);
    return linear(tape, joined, entity_w_, entity_b_);
  };
  Var q_subject = entity_repr(subject);
  Var q_object = entity_repr(object);

  const Tensor u = union_box_features(canvas, scene.entities[static_cast<std::size_t>(subject)],
                                      scene.entities[static_cast<std::size_t>(object)],
                                      scene.image_width, scene.image_height, cfg_.union_pooled);
  Var union_flat = Var(Tensor({u.numel()}, u.vec()));
  Var union_term = linear(tape, union_flat, union_w_, union_b_);
  Var pair_term = linear(tape, concat(tape, {q_subject, q_object}, 0), pair_w_, pair_b_);
  return add(tape, union_term, pair_term);
}

}  // namespace veto

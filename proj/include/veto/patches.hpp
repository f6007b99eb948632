#pragma once

#include <string>
#include <utility>
#include <vector>

#include "veto/autograd.hpp"
#include "veto/parameters.hpp"
#include "veto/scene.hpp"

namespace veto {

// Patch geometry: entity grids are average-pooled to pooled_resolution x
// pooled_resolution blocks, subject/object grids are fused channel-wise, and
// the fused grid splits into (pooled_resolution/patch_blocks)^2 spatial
// patches. visual_patch_dim + depth_patch_dim is the encoder embedding width.
struct PatchConfig {
  int pooled_resolution = 8;   // blocks per side after pooling
  int patch_blocks = 2;        // patch size, in blocks
  int visual_patch_dim = 288;  // projected dim of a visual patch
  int depth_patch_dim = 288;   // projected dim of a geometric patch

  int embed_dim() const { return visual_patch_dim + depth_patch_dim; }
  int patches_per_side() const { return pooled_resolution / patch_blocks; }
  int patch_count() const { return patches_per_side() * patches_per_side(); }
  int token_count() const { return patch_count() + 3; }  // class + patches + 2 cues

  void validate() const;
};

// Output of cross-relation patch generation: row-major spatial tiles of the
// channel-fused subject/object grids, one list per modality.
struct RelationPatches {
  std::vector<Var> visual;  // each [2*c_v × k × k]
  std::vector<Var> depth;   // each [2*c_d × k × k]
};

// Pools both entities' grids, fuses them channel-wise with the subject half
// first, and splits spatially. The two modalities are processed identically.
RelationPatches cross_relation_patches(Tape& tape, const Var& subject_visual,
                                       const Var& object_visual, const Var& subject_geom,
                                       const Var& object_geom, const PatchConfig& cfg);

// Cross-modality patch fusion: one shared linear map per modality projects
// each flattened patch down, and corresponding patches concatenate into a
// single token, halving the token count relative to separate modalities.
class PatchFusion {
 public:
  PatchFusion(const PatchConfig& cfg, int visual_channels, int geom_channels,
              ParameterStore& store, RngStream& init_rng,
              const std::string& prefix = "patch");

  // (p/k)^2 tokens of width embed_dim.
  std::vector<Var> forward(Tape& tape, const RelationPatches& patches) const;

 private:
  PatchConfig cfg_;
  int visual_in_, depth_in_;
  Var visual_w_, visual_b_;
  Var depth_w_, depth_b_;
};

// Normalized 8-dim box geometry: [x1/W, y1/H, x2/W, y2/H, cx/W, cy/H, bw/W, bh/H].
Tensor location_descriptor(const EntityDetection& entity, double image_width,
                           double image_height);

// Location and semantic cue tokens for an ordered entity pair. Each is
// relu(f(concat of the two cue features)) projected to the embedding width;
// the semantic feature is a learned class-embedding row.
class CueTokenBuilder {
 public:
  CueTokenBuilder(int embed_dim, int num_entity_classes, int class_embed_dim,
                  ParameterStore& store, RngStream& init_rng,
                  const std::string& prefix = "cue");

  std::pair<Var, Var> forward(Tape& tape, const EntityDetection& subject,
                              const EntityDetection& object, double image_width,
                              double image_height) const;

 private:
  Var location_w_, location_b_;
  Var semantic_w_, semantic_b_;
  Var class_embed_;
};

// The conventional global-projection relation head: a dense two-layer
// bottleneck per entity, a combined entity representation, and a union-region
// term. Kept for parameter comparison and as a training baseline.
struct BaselineConfig {
  int hidden1 = 4096;
  int hidden2 = 512;
  int entity_dim = 512;
  int canvas_resolution = 16;  // synthetic whole-image grid side
  int union_pooled = 8;        // union crop is resampled to this resolution

  void validate() const;
};

// Scene-level canvas the union features are cropped from: entity grids are
// nearest-pasted into their box regions, overlaps averaged.
Tensor whole_image_canvas(const SceneInstance& scene, int canvas_resolution);

// Union box of the two entities, cropped from the canvas and nearest-resampled
// to union_pooled x union_pooled. Constant with respect to the parameters.
Tensor union_box_features(const Tensor& canvas, const EntityDetection& subject,
                          const EntityDetection& object, double image_width,
                          double image_height, int union_pooled);

class BaselineRelationHead {
 public:
  BaselineRelationHead(const BaselineConfig& cfg, int visual_channels, int feature_height,
                       int feature_width, int num_entity_classes, int class_embed_dim,
                       int num_predicates, ParameterStore& store, RngStream& init_rng,
                       const std::string& prefix = "baseline");

  Var forward(Tape& tape, const SceneInstance& scene, const Tensor& canvas, int subject,
              int object) const;

 private:
  BaselineConfig cfg_;
  Var dense1_w_, dense1_b_;   // flatten(r) -> hidden1
  Var dense2_w_, dense2_b_;   // hidden1 -> hidden2
  Var entity_w_, entity_b_;   // (hidden2 + 8 + class_embed) -> entity_dim
  Var union_w_, union_b_;     // flatten(union features) -> predicates
  Var pair_w_, pair_b_;       // 2*entity_dim -> predicates
  Var class_embed_;
};

}  // namespace veto

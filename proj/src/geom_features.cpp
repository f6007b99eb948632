#include "veto/geom_features.hpp"

#include "veto/errors.hpp"

namespace veto {

GeometricExtractor::GeometricExtractor(const GeomConfig& cfg, ParameterStore& store,
                                       RngStream& init_rng, const std::string& prefix)
    : cfg_(cfg) {
  if (cfg.out_channels < 1 || cfg.hidden_channels < 1) {
    throw ValidationError("geometric extractor needs positive channel counts");
  }
  pointwise_w_ = store.add_xavier(prefix + ".pointwise.weight",
                                  {cfg.hidden_channels, 1, 1, 1}, 1, cfg.hidden_channels,
                                  init_rng);
  pointwise_b_ = store.add_zeros(prefix + ".pointwise.bias", {cfg.hidden_channels});
  conv_w_ = store.add_xavier(prefix + ".conv.weight",
                             {cfg.out_channels, cfg.hidden_channels, 3, 3},
                             cfg.hidden_channels * 9, cfg.out_channels, init_rng);
  conv_b_ = store.add_zeros(prefix + ".conv.bias", {cfg.out_channels});
}

Var GeometricExtractor::forward(Tape& tape, const Var& depth) const {
  if (depth.value().rank() != 3 || depth.value().extent(0) != 1) {
    throw ShapeError("geometric extractor expects a 1×h×w depth grid, got " +
                     shape_str(depth.shape()));
  }
  Var hidden = gelu(tape, conv2d(tape, depth, pointwise_w_, pointwise_b_, 0));
  return conv2d(tape, hidden, conv_w_, conv_b_, 1);
}

}  // namespace veto

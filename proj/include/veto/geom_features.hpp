#pragma once

#include <string>

#include "veto/autograd.hpp"
#include "veto/parameters.hpp"

namespace veto {

// Trainable geometric feature extractor: a pointwise (1x1) convolution from
// the 1-channel depth grid to `hidden_channels`, a smooth nonlinearity, then
// a 3x3 same-padded convolution to `out_channels`. Stands in for the depth
// feature extractor that is trained from scratch alongside the relation net.
struct GeomConfig {
  int out_channels = 32;
  int hidden_channels = 32;
};

class GeometricExtractor {
 public:
  GeometricExtractor(const GeomConfig& cfg, ParameterStore& store, RngStream& init_rng,
                     const std::string& prefix = "geom");

  // depth [1×h×w] -> features [out_channels×h×w]; needs h, w >= 3.
  Var forward(Tape& tape, const Var& depth) const;

  int out_channels() const { return cfg_.out_channels; }

 private:
  GeomConfig cfg_;
  Var pointwise_w_, pointwise_b_;
  Var conv_w_, conv_b_;
};

}  // namespace veto

#pragma once

#include <memory>
#include <string>
#include <vector>

#include "duet/autodiff.hpp"
#include "duet/fusion.hpp"

namespace duet {

// One window's loss graph. Parameter nodes are listed in the same order as
// ModelParams::for_each_tensor, so gradients line up with optimizer buffers.
struct WindowGraph {
  ag::Tape tape;
  std::vector<std::pair<std::string, ag::Index>> param_nodes;
  ag::Index loss = -1;
  ag::Index y_hat_norm = -1;
};

// Builds the L1 training loss (normalized scale) for a raw window (X, Y).
// rng is split into "gate"/"mask" substreams exactly as duet_forward does.
std::unique_ptr<WindowGraph> build_window_graph(const ModelParams& params, const DuetConfig& cfg,
                                                const Matrix& X, const Matrix& Y, RunMode mode,
                                                const RngStream& rng);

}  // namespace duet

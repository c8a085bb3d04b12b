#pragma once

#include "duet/channel.hpp"
#include "duet/data.hpp"
#include "duet/model.hpp"

namespace duet {

// Single-head attention over channels with additive -1e9 masking of closed
// lanes.
Matrix masked_attention(const Matrix& X_temp, const ChannelMask& mask, const FusionParams& params);

// Pre-norm block: h = X + Attn(LN1(X), mask); out = h + FFN(LN2(h)).
Matrix fusion_block(const Matrix& X_temp, const ChannelMask& mask, const FusionParams& params);

Matrix predict(const Matrix& X_mix, const PredictorParams& params);

Matrix layer_norm_rows(const Matrix& x, const Matrix& gain, const Matrix& bias, double eps = 1e-5);

// Mask a variant forces regardless of CCM: identity (no_ccm) or all-ones
// (full_attention). Returns false if the variant samples the mask normally.
bool variant_forced_mask(VariantKind v, int n, ChannelMask* out);

struct ForwardTrace {
  Matrix X_norm;
  NormStats stats;
  TcmOutput tcm;
  CcmOutput ccm;
  ChannelMask mask;  // mask actually used (after variant forcing)
  Matrix X_mix;
  Matrix Y_hat_norm;
  Matrix Y_hat;  // denormalized
};

// Full pipeline on one look-back window. rng is split into "gate" and "mask"
// substreams internally.
ForwardTrace duet_forward_trace(const Matrix& X, const ModelParams& params, const DuetConfig& cfg,
                                RunMode mode, const RngStream& rng);

Matrix duet_forward(const Matrix& X, const ModelParams& params, const DuetConfig& cfg, RunMode mode,
                    const RngStream& rng);

}  // namespace duet

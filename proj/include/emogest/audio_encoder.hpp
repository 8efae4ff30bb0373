#pragma once

// Learned audio encoder: 2-D convolutions with squeeze-excitation residual
// blocks over the mel spectrogram, frequency pooling, projection to the
// feature dimension, and linear temporal resampling to the pose frame rate.

#include <string>
#include <vector>

#include "emogest/audio.hpp"
#include "emogest/config.hpp"
#include "emogest/nn.hpp"

namespace emogest {

class AudioEncoder {
 public:
  AudioEncoder() = default;

  AudioEncoder(nn::ParamStore& ps, const std::string& prefix, const RunConfig& cfg, Rng& rng)
      : feature_dim_(cfg.model.feature_dim) {
    const auto& widths = cfg.model.encoder_widths;
    stem_ = nn::Conv2dLayer(ps, prefix + ".stem", 1, widths[0], 3, 3, 1, 1, 1, 1, rng);
    std::size_t in_ch = widths[0];
    for (std::size_t i = 0; i < widths.size(); ++i) {
      blocks_.emplace_back(ps, prefix + ".block" + std::to_string(i), in_ch, widths[i], 2, rng);
      in_ch = widths[i];
    }
    proj_ = nn::Linear(ps, prefix + ".proj", in_ch, feature_dim_, rng);
  }

  // mel {T,M} -> {target_frames, D}
  nn::Var operator()(const MelSpectrogram& mel, std::size_t target_frames) const {
    using namespace ag;
    if (mel.frames() < 4)
      throw ValidationError("AudioEncoder: need at least 4 mel frames, got " +
                            std::to_string(mel.frames()));
    Var x = constant(mel.values.reshaped({1, mel.frames(), mel.mel_bins()}));
    x = relu(stem_(x));
    for (const auto& block : blocks_) x = block(x);
    // {C,T',W'} -> {T',C} by averaging the frequency axis
    const std::size_t C = x->value.dim(0), T = x->value.dim(1), W = x->value.dim(2);
    Var tw = reshape(x, {C, T * W});
    Var grid = transpose(tw);                       // {T*W, C}
    Var folded = reshape(grid, {T, W * C});
    // reshape interleaves (w,c); average the W groups per channel via matmul
    // with a fixed pooling matrix.
    Tensor pool({W * C, C});
    for (std::size_t w = 0; w < W; ++w)
      for (std::size_t c = 0; c < C; ++c) pool(w * C + c, c) = 1.0 / static_cast<double>(W);
    Var pooled = matmul(folded, constant(pool));    // {T', C}
    return time_resample(proj_(pooled), target_frames);
  }

  std::size_t feature_dim() const { return feature_dim_; }

 private:
  nn::Conv2dLayer stem_;
  std::vector<nn::SEResBlock> blocks_;
  nn::Linear proj_;
  std::size_t feature_dim_ = 0;
};

}  // namespace emogest

#pragma once

// Transformer generator: audio features as keys/values, sampled reference
// postures as queries, motion-transition infusion on the transition slice,
// per-frame decoding to joint positions.

#include <cmath>
#include <string>
#include <vector>

#include "emogest/audio_encoder.hpp"
#include "emogest/config.hpp"
#include "emogest/core.hpp"
#include "emogest/keyframe_sampler.hpp"
#include "emogest/nn.hpp"

namespace emogest {

// L x L row-stochastic temporal correlation matrix.
struct CorrelationMatrix {
  Tensor values;

  void validate(double tol = 1e-6) const {
    for (std::size_t r = 0; r < values.rows(); ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < values.cols(); ++c) {
        if (values(r, c) < 0.0 || values(r, c) > 1.0)
          throw ValidationError("CorrelationMatrix: entry outside [0,1]");
        s += values(r, c);
      }
      if (std::fabs(s - 1.0) > tol)
        throw ValidationError("CorrelationMatrix: row " + std::to_string(r) + " sums to " +
                              std::to_string(s));
    }
  }
};

// Per-channel AdaIN style: gain and bias.
struct StyleVector {
  Tensor gamma;  // {1,D}
  Tensor beta;   // {1,D}
};

// Row-softmax of chunk trans^T / sqrt(D).
inline nn::Var correlation_v(const nn::Var& chunk, const nn::Var& trans) {
  using namespace ag;
  if (chunk->value.rows() != trans->value.rows())
    throw ValidationError("correlation: chunk and transition lengths differ");
  if (chunk->value.cols() != trans->value.cols())
    throw ValidationError("correlation: feature dimension mismatch");
  const double d = static_cast<double>(chunk->value.cols());
  return row_softmax(mul_scalar(matmul(chunk, transpose(trans)), 1.0 / std::sqrt(d)));
}

inline CorrelationMatrix correlation(const Tensor& chunk, const Tensor& trans) {
  return {correlation_v(ag::constant(chunk), ag::constant(trans))->value};
}

inline Tensor adain_apply(const Tensor& content, const StyleVector& style,
                          double sigma_floor = 1e-8) {
  return nn::adain(ag::constant(content), ag::constant(style.gamma), ag::constant(style.beta),
                   sigma_floor)
      ->value;
}

// The motion-transition infusion head: correlation matrices between the head
// chunk / tail chunk and the transition embedding are composed into a global
// temporal dependency, encoded to an AdaIN style by a small MLP, and applied
// to the transition embedding.
class MotionInfusion {
 public:
  MotionInfusion() = default;

  MotionInfusion(nn::ParamStore& ps, const std::string& prefix, const RunConfig& cfg, Rng& rng)
      : transition_frames_(cfg.layout.transition_frames),
        feature_dim_(cfg.model.feature_dim),
        softplus_gamma_(cfg.model.softplus_gamma),
        gamma_eps_(cfg.model.gamma_eps) {
    const std::size_t L = transition_frames_;
    enc1_ = nn::Linear(ps, prefix + ".enc1", L * L, cfg.mtim_hidden(), rng);
    enc2_ = nn::Linear(ps, prefix + ".enc2", cfg.mtim_hidden(), 2 * feature_dim_, rng);
  }

  // Global dependency {L,L} -> (gamma, beta), gamma kept positive through a
  // softplus unless configured off.
  std::pair<nn::Var, nn::Var> style_v(const nn::Var& global_dependency) const {
    using namespace ag;
    const std::size_t L = transition_frames_;
    nn::Var h = relu(enc1_(reshape(global_dependency, {1, L * L})));
    nn::Var raw = enc2_(h);
    nn::Var gamma = slice_cols(raw, 0, feature_dim_);
    if (softplus_gamma_) gamma = add_scalar(softplus(gamma), gamma_eps_);
    nn::Var beta = slice_cols(raw, feature_dim_, 2 * feature_dim_);
    return {gamma, beta};
  }

  // f_head {head,D}, f_tran {L,D}, f_tail {tail,D} -> restyled {L,D}.
  nn::Var operator()(const nn::Var& f_head, const nn::Var& f_tran, const nn::Var& f_tail,
                     const SegmentLayout& layout) const {
    using namespace ag;
    const std::size_t L = layout.transition_frames;
    if (f_tran->value.rows() != L)
      throw ValidationError("MotionInfusion: transition embedding has wrong length");
    nn::Var head_chunk = slice_rows(f_head, f_head->value.rows() - L, f_head->value.rows());
    nn::Var tail_chunk = slice_rows(f_tail, 0, L);
    nn::Var c_head = correlation_v(head_chunk, f_tran);
    nn::Var c_tail = correlation_v(tail_chunk, f_tran);
    nn::Var global_dep = matmul(c_head, c_tail);
    auto [gamma, beta] = style_v(global_dep);
    return nn::adain(f_tran, gamma, beta);
  }

 private:
  std::size_t transition_frames_ = 30;
  std::size_t feature_dim_ = 512;
  bool softplus_gamma_ = true;
  double gamma_eps_ = 1e-4;
  nn::Linear enc1_, enc2_;
};

class GeneratorModel {
 public:
  GeneratorModel() = default;

  GeneratorModel(const RunConfig& cfg, std::uint64_t seed)
      : cfg_(cfg), layout_(cfg.layout), skeleton_(cfg.skeleton) {
    Rng rng(derive_seed(seed, 0x9e4e7ULL));
    const std::size_t D = cfg.model.feature_dim;
    const std::size_t j3 = skeleton_.joint_count * 3;
    audio_encoder_ = AudioEncoder(params, "audio_enc", cfg, rng);
    pose_embed_ = nn::Linear(params, "pose_embed", j3, D, rng);
    seed_embed_ = nn::Linear(params, "seed_embed", cfg.seed_frames * j3, D, rng);
    for (std::size_t b = 0; b < cfg.model.attention_blocks; ++b)
      blocks_.emplace_back(params, "block" + std::to_string(b), D, cfg.model.heads,
                           cfg.ff_hidden(), rng);
    mtim_ = MotionInfusion(params, "mtim", cfg, rng);
    dec1_ = nn::Linear(params, "dec1", D, cfg.decoder_hidden(), rng);
    dec2_ = nn::Linear(params, "dec2", cfg.decoder_hidden(), j3, rng);
    positions_ = nn::sinusoidal_positions(layout_.total(), D);
  }

  const SegmentLayout& layout() const { return layout_; }
  const SkeletonSpec& skeleton() const { return skeleton_; }
  const AudioEncoder& audio_encoder() const { return audio_encoder_; }

  // Stacked cross-attention: reference-posture embeddings query the audio
  // feature sequence.
  nn::Var cross_attend_v(const nn::Var& query_ref, const nn::Var& audio_feats) const {
    if (!query_ref->value.same_shape(audio_feats->value))
      throw ValidationError("cross_attend: query and audio features must both be {N,D}");
    nn::Var x = query_ref;
    for (const auto& block : blocks_) x = block(x, audio_feats);
    return x;
  }

  Tensor cross_attend(const Tensor& query_ref, const Tensor& audio_feats) const {
    return cross_attend_v(ag::constant(query_ref), ag::constant(audio_feats))->value;
  }

  // Per-frame MLP from features to joint positions.
  nn::Var decode_v(const nn::Var& features) const {
    using namespace ag;
    return dec2_(relu(dec1_(features)));
  }

  PoseSequence decode_poses(const Tensor& features) const {
    return PoseSequence::from_matrix(decode_v(ag::constant(features))->value, skeleton_);
  }

  struct Forward {
    nn::Var poses;   // {N, J*3}
    nn::Var f_head;  // backbone features per segment (post-MTIM transition)
    nn::Var f_tran;
    nn::Var f_tail;
  };

  // Full differentiable pipeline from a precomputed mel spectrogram and a
  // sampled reference track.
  Forward forward(const MelSpectrogram& mel, const PoseSequence& reference_track,
                  const PoseSequence& seed_poses) const {
    using namespace ag;
    const std::size_t N = layout_.total();
    if (reference_track.frames() != N)
      throw ValidationError("GeneratorModel: reference track must cover all frames");
    nn::Var audio_feats = audio_encoder_(mel, N);
    nn::Var q = add(pose_embed_(constant(reference_track.as_matrix())), constant(positions_));
    nn::Var feats = cross_attend_v(q, audio_feats);

    const SegmentSlices s = segment_slices(layout_);
    nn::Var f_head = slice_rows(feats, s.head.begin, s.head.end);
    nn::Var f_tran = slice_rows(feats, s.transition.begin, s.transition.end);
    nn::Var f_tail = slice_rows(feats, s.tail.begin, s.tail.end);
    nn::Var f_tran_styled = mtim_(f_head, f_tran, f_tail, layout_);
    nn::Var total = concat_rows({f_head, f_tran_styled, f_tail});

    const Tensor seed_row = seed_poses.as_matrix().reshaped(
        {1, seed_poses.frames() * seed_poses.joints() * 3});
    nn::Var conditioned = add_rv(total, seed_embed_(constant(seed_row)));
    Forward out;
    out.poses = decode_v(conditioned);
    out.f_head = f_head;
    out.f_tran = f_tran_styled;
    out.f_tail = f_tail;
    return out;
  }

  // Inference entry point: the full audio -> mel -> features -> poses chain,
  // deterministic given (weights, sample, sampler_seed).
  PoseSequence generate(const EmotionTransitionSample& sample, const KeyframeSampler& sampler,
                        std::uint64_t sampler_seed) const {
    AudioClip audio = sample.audio;
    if (audio.sample_rate != cfg_.audio.sample_rate)
      audio = resample_linear(audio, cfg_.audio.sample_rate);
    const MelSpectrogram mel = compute_mel(audio, cfg_.audio.fft_size, cfg_.audio.hop_length,
                                           cfg_.audio.mel_bins, cfg_.audio.log_floor);
    const PoseSequence track = sampler.sample_reference_track(
        1, layout_, sample.head_pose_gt, sample.tail_pose_gt, sampler_seed);
    Forward f = forward(mel, track, sample.seed_poses);
    return PoseSequence::from_matrix(f.poses->value, skeleton_);
  }

  nn::ParamStore params;

 private:
  RunConfig cfg_;
  SegmentLayout layout_;
  SkeletonSpec skeleton_;
  AudioEncoder audio_encoder_;
  nn::Linear pose_embed_, seed_embed_;
  std::vector<nn::AttentionBlock> blocks_;
  MotionInfusion mtim_;
  nn::Linear dec1_, dec2_;
  Tensor positions_;
};

}  // namespace emogest

#pragma once

// Conditional VAE over fixed-length pose chunks. The chunk encoder gives the
// posterior, the keyframe encoder gives the conditional prior, and the
// decoder reconstructs a chunk from (latent, keyframe). At inference, chunks
// sampled from the prior are blended into a full-length reference track.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "emogest/config.hpp"
#include "emogest/core.hpp"
#include "emogest/nn.hpp"
#include "emogest/rng.hpp"

namespace emogest {

struct LatentGaussian {
  Tensor mean;     // {1,Z}
  Tensor log_var;  // {1,Z}, clamped to [-10,10]
};

// Closed-form KL(N(mu1,var1) || N(mu2,var2)) for diagonal Gaussians, summed
// over coordinates.
inline double kl_divergence(const LatentGaussian& posterior, const LatentGaussian& prior) {
  if (!posterior.mean.same_shape(prior.mean))
    throw ValidationError("kl_divergence: dimension mismatch");
  double kl = 0.0;
  for (std::size_t i = 0; i < posterior.mean.size(); ++i) {
    const double lv1 = std::clamp(posterior.log_var[i], -10.0, 10.0);
    const double lv2 = std::clamp(prior.log_var[i], -10.0, 10.0);
    const double v1 = std::exp(lv1), v2 = std::exp(lv2);
    const double dm = posterior.mean[i] - prior.mean[i];
    kl += 0.5 * (lv2 - lv1 + (v1 + dm * dm) / v2 - 1.0);
  }
  return kl;
}

// Lay L-frame chunks at their start offsets and crossfade across each
// internal boundary: B+1 frames centered on the boundary ramp linearly from
// the left chunk (held at its last frame where it has no data) to the right
// chunk (held at its first frame).
inline Tensor blend_chunks(const std::vector<Tensor>& chunks,
                           const std::vector<std::size_t>& starts, std::size_t total_frames,
                           std::size_t crossfade) {
  if (chunks.empty() || chunks.size() != starts.size())
    throw ValidationError("blend_chunks: chunk/start mismatch");
  const std::size_t L = chunks[0].rows();
  const std::size_t cols = chunks[0].cols();
  Tensor track({total_frames, cols});
  for (std::size_t k = 0; k < chunks.size(); ++k) {
    const std::size_t end = std::min(starts[k] + L, total_frames);
    for (std::size_t t = starts[k]; t < end; ++t)
      for (std::size_t c = 0; c < cols; ++c) track(t, c) = chunks[k](t - starts[k], c);
  }
  const std::size_t B = crossfade;
  if (B > 0) {
    for (std::size_t k = 1; k < chunks.size(); ++k) {
      const long pos = static_cast<long>(starts[k]);
      const Tensor& left = chunks[k - 1];
      const Tensor& right = chunks[k];
      for (std::size_t i = 0; i <= B; ++i) {
        const long t = pos - static_cast<long>(B / 2) + static_cast<long>(i);
        if (t < 0 || t >= static_cast<long>(total_frames)) continue;
        const double alpha = static_cast<double>(i) / static_cast<double>(B);
        const long lt =
            std::clamp<long>(t - static_cast<long>(starts[k - 1]), 0, static_cast<long>(L) - 1);
        const long rt = std::clamp<long>(t - pos, 0, static_cast<long>(L) - 1);
        for (std::size_t c = 0; c < cols; ++c)
          track(static_cast<std::size_t>(t), c) =
              (1.0 - alpha) * left(static_cast<std::size_t>(lt), c) +
              alpha * right(static_cast<std::size_t>(rt), c);
      }
    }
  }
  return track;
}

class KeyframeSampler {
 public:
  KeyframeSampler() = default;

  KeyframeSampler(const RunConfig& cfg, std::uint64_t seed)
      : layout_(cfg.layout),
        skeleton_(cfg.skeleton),
        latent_dim_(cfg.sampler.latent_dim),
        crossfade_(cfg.sampler.crossfade),
        beta_kl_(cfg.sampler.beta_kl) {
    Rng rng(derive_seed(seed, 0x5a3717e5ULL));
    const std::size_t j3 = skeleton_.joint_count * 3;
    const std::size_t L = layout_.transition_frames;
    const std::size_t h = cfg.sampler.hidden;
    enc1_ = nn::Linear(params, "enc1", L * j3, h, rng);
    enc2_ = nn::Linear(params, "enc2", h, h, rng);
    enc_mu_ = nn::Linear(params, "enc_mu", h, latent_dim_, rng);
    enc_lv_ = nn::Linear(params, "enc_lv", h, latent_dim_, rng);
    pri1_ = nn::Linear(params, "pri1", j3, h, rng);
    pri_mu_ = nn::Linear(params, "pri_mu", h, latent_dim_, rng);
    pri_lv_ = nn::Linear(params, "pri_lv", h, latent_dim_, rng);
    dec1_ = nn::Linear(params, "dec1", latent_dim_ + j3, h, rng);
    dec2_ = nn::Linear(params, "dec2", h, L * j3, rng);
  }

  std::size_t latent_dim() const { return latent_dim_; }
  std::size_t chunk_frames() const { return layout_.transition_frames; }
  const SkeletonSpec& skeleton() const { return skeleton_; }
  const SegmentLayout& layout() const { return layout_; }
  double beta_kl() const { return beta_kl_; }
  std::size_t crossfade() const { return crossfade_; }
  bool trained() const { return trained_; }
  void mark_trained(bool t = true) { trained_ = t; }

  // ---- graph-building paths (used in pretraining) ----

  std::pair<nn::Var, nn::Var> posterior_v(const nn::Var& chunk_row) const {
    using namespace ag;
    nn::Var h = relu(enc2_(relu(enc1_(chunk_row))));
    return {enc_mu_(h), clamp_(enc_lv_(h), -10.0, 10.0)};
  }

  std::pair<nn::Var, nn::Var> prior_v(const nn::Var& keyframe_row) const {
    using namespace ag;
    nn::Var h = relu(pri1_(keyframe_row));
    return {pri_mu_(h), clamp_(pri_lv_(h), -10.0, 10.0)};
  }

  nn::Var decode_v(const nn::Var& z, const nn::Var& keyframe_row) const {
    using namespace ag;
    nn::Var h = relu(dec1_(concat_cols({z, keyframe_row})));
    return reshape(dec2_(h), {layout_.transition_frames, skeleton_.joint_count * 3});
  }

  static nn::Var kl_v(const nn::Var& mu1, const nn::Var& lv1, const nn::Var& mu2,
                      const nn::Var& lv2) {
    using namespace ag;
    // 0.5 * sum(lv2 - lv1 + (exp(lv1) + (mu1-mu2)^2) / exp(lv2) - 1)
    nn::Var dm = sub(mu1, mu2);
    nn::Var num = add(exp_(lv1), mul(dm, dm));
    nn::Var term = add(sub(lv2, lv1), add_scalar(mul(num, exp_(neg(lv2))), -1.0));
    return mul_scalar(sum_all(term), 0.5);
  }

  // ---- plain-value API ----

  LatentGaussian encode_chunk(const PoseSequence& chunk) const {
    if (chunk.frames() != layout_.transition_frames)
      throw ValidationError("encode_chunk: expected " +
                            std::to_string(layout_.transition_frames) + " frames, got " +
                            std::to_string(chunk.frames()));
    auto [mu, lv] = posterior_v(ag::constant(
        chunk.as_matrix().reshaped({1, chunk.frames() * chunk.joints() * 3})));
    return {mu->value, lv->value};
  }

  LatentGaussian encode_keyframe(const Tensor& pose_row) const {
    if (pose_row.rank() != 2 || pose_row.rows() != 1 ||
        pose_row.cols() != skeleton_.joint_count * 3)
      throw ValidationError("encode_keyframe: expected a single {1,J*3} pose row");
    auto [mu, lv] = prior_v(ag::constant(pose_row));
    return {mu->value, lv->value};
  }

  PoseSequence decode_chunk(const Tensor& z, const Tensor& keyframe_row) const {
    if (z.rank() != 2 || z.rows() != 1 || z.cols() != latent_dim_)
      throw ValidationError("decode_chunk: latent must be {1,Z}");
    nn::Var out = decode_v(ag::constant(z), ag::constant(keyframe_row));
    return PoseSequence::from_matrix(out->value, skeleton_);
  }

  // Reparameterized draw.
  static Tensor sample_latent(const LatentGaussian& g, Rng& rng) {
    Tensor z({1, g.mean.size()});
    for (std::size_t i = 0; i < z.size(); ++i)
      z(0, i) = g.mean[i] + std::exp(0.5 * std::clamp(g.log_var[i], -10.0, 10.0)) * rng.normal();
    return z;
  }

  // Sample chunks from the conditional prior (one averaged draw of
  // `samples_per_position` latents per chunk slot) and stitch a full-length
  // track. Keyframes for head/tail slots come from the matching ground-truth
  // frames; the transition slot uses a random head or tail frame. Boundaries
  // are smoothed with a linear crossfade that completes over `crossfade()`
  // frame steps.
  PoseSequence sample_reference_track(std::size_t samples_per_position,
                                      const SegmentLayout& layout, const PoseSequence& head_gt,
                                      const PoseSequence& tail_gt, std::uint64_t seed) const {
    if (!trained_)
      throw MissingPrerequisiteError(
          "sample_reference_track: keyframe sampler has not been trained (run the sampler "
          "pretraining stage)");
    if (samples_per_position == 0)
      throw ValidationError("sample_reference_track: samples_per_position must be positive");
    layout.validate();
    const SegmentSlices slices = segment_slices(layout);
    const std::size_t N = layout.total();
    const std::size_t L = layout.transition_frames;
    const std::size_t j3 = skeleton_.joint_count * 3;
    Rng rng(seed);

    const Tensor head_m = head_gt.as_matrix();
    const Tensor tail_m = tail_gt.as_matrix();
    auto row_of = [j3](const Tensor& m, std::size_t r) {
      Tensor row({1, j3});
      for (std::size_t c = 0; c < j3; ++c) row(0, c) = m(r, c);
      return row;
    };

    auto keyframe_for = [&](std::size_t begin, std::size_t end) -> Tensor {
      const std::size_t mid = (begin + end) / 2;
      if (mid < slices.head.end) {
        const std::size_t lo = std::min(begin, slices.head.end - 1);
        const std::size_t hi = std::min(end, slices.head.end);
        return row_of(head_m, lo + rng.integer(std::max<std::size_t>(hi - lo, 1)));
      }
      if (mid >= slices.tail.begin) {
        const std::size_t lo = std::max(begin, slices.tail.begin) - slices.tail.begin;
        const std::size_t hi = std::min(end - slices.tail.begin, tail_gt.frames());
        return row_of(tail_m, lo + rng.integer(std::max<std::size_t>(hi - lo, 1)));
      }
      return rng.integer(2) == 0
                 ? row_of(head_m, static_cast<std::size_t>(rng.integer(head_gt.frames())))
                 : row_of(tail_m, static_cast<std::size_t>(rng.integer(tail_gt.frames())));
    };

    // Decode one chunk per slot.
    std::vector<Tensor> chunks;
    std::vector<std::size_t> starts;
    for (std::size_t pos = 0; pos < N; pos += L) {
      const std::size_t end = std::min(pos + L, N);
      const Tensor kf = keyframe_for(pos, end);
      const LatentGaussian prior = encode_keyframe(kf);
      Tensor chunk({L, j3});
      for (std::size_t s = 0; s < samples_per_position; ++s) {
        const Tensor z = sample_latent(prior, rng);
        nn::Var dec = decode_v(ag::constant(z), ag::constant(kf));
        flat(chunk) += flat(dec->value);
      }
      flat(chunk) /= static_cast<double>(samples_per_position);
      chunks.push_back(std::move(chunk));
      starts.push_back(pos);
    }

    return PoseSequence::from_matrix(blend_chunks(chunks, starts, N, crossfade_), skeleton_);
  }

  nn::ParamStore params;

 private:
  SegmentLayout layout_;
  SkeletonSpec skeleton_;
  std::size_t latent_dim_ = 32;
  std::size_t crossfade_ = 4;
  double beta_kl_ = 0.1;
  bool trained_ = false;
  nn::Linear enc1_, enc2_, enc_mu_, enc_lv_, pri1_, pri_mu_, pri_lv_, dec1_, dec2_;
};

struct SamplerReport {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double final_kl = 0.0;
  std::size_t epochs_run = 0;
};

// Pretrain on every L-frame chunk of the ground-truth head/tail segments.
// Loss: L1 reconstruction + beta * KL(posterior || keyframe prior), with the
// keyframe drawn at random from inside the chunk each visit.
inline SamplerReport pretrain_sampler(KeyframeSampler& sampler,
                                      const std::vector<PoseSequence>& chunks,
                                      const SamplerConfig& cfg, std::uint64_t seed) {
  if (chunks.empty()) throw ValidationError("pretrain_sampler: no chunks");
  const std::size_t L = sampler.chunk_frames();
  for (const auto& c : chunks)
    if (c.frames() != L) throw ValidationError("pretrain_sampler: chunk length mismatch");
  const std::size_t j3 = sampler.skeleton().joint_count * 3;

  Rng rng(derive_seed(seed, 0x4b5a17ULL));
  nn::Adam opt(cfg.learning_rate);
  SamplerReport report;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = rng.permutation(chunks.size());
    double epoch_loss = 0.0, epoch_kl = 0.0;
    for (std::size_t idx : order) {
      const Tensor chunk_m = chunks[idx].as_matrix();
      const Tensor chunk_row = chunk_m.reshaped({1, L * j3});
      const std::size_t kf_idx = static_cast<std::size_t>(rng.integer(L));
      Tensor kf({1, j3});
      for (std::size_t c = 0; c < j3; ++c) kf(0, c) = chunk_m(kf_idx, c);

      auto [mu_q, lv_q] = sampler.posterior_v(ag::constant(chunk_row));
      auto [mu_p, lv_p] = sampler.prior_v(ag::constant(kf));
      Tensor noise = rng.normal_tensor({1, sampler.latent_dim()});
      nn::Var z =
          ag::add(mu_q, ag::mul(ag::exp_(ag::mul_scalar(lv_q, 0.5)), ag::constant(noise)));
      nn::Var recon = sampler.decode_v(z, ag::constant(kf));
      nn::Var l1 = ag::l1_loss(recon, ag::constant(chunk_m));
      nn::Var kl = KeyframeSampler::kl_v(mu_q, lv_q, mu_p, lv_p);
      nn::Var loss = ag::add(l1, ag::mul_scalar(kl, sampler.beta_kl()));

      sampler.params.zero_grad();
      ag::backward(loss);
      opt.step(sampler.params);
      epoch_loss += loss->value[0];
      epoch_kl += kl->value[0];
    }
    epoch_loss /= static_cast<double>(chunks.size());
    epoch_kl /= static_cast<double>(chunks.size());
    if (epoch == 0) report.initial_loss = epoch_loss;
    report.final_loss = epoch_loss;
    report.final_kl = epoch_kl;
    ++report.epochs_run;
  }
  sampler.mark_trained();
  return report;
}

}  // namespace emogest

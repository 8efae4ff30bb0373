#pragma once

// Objectives and the alternating min-max training loop: masked L1
// reconstruction on head/tail, adversarial losses against the motion
// discriminator, and the weak emotion-mixture supervision on transitions.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "emogest/auxiliary_models.hpp"
#include "emogest/checkpoint.hpp"
#include "emogest/config.hpp"
#include "emogest/core.hpp"
#include "emogest/emotion_mixture.hpp"
#include "emogest/generator.hpp"
#include "emogest/keyframe_sampler.hpp"

namespace emogest {

// Mean L1 over the head and tail slices only; the transition slice never
// contributes.
inline nn::Var reconstruction_loss_v(const nn::Var& pred_flat,
                                     const EmotionTransitionSample& sample,
                                     const SegmentLayout& layout) {
  using namespace ag;
  const SegmentSlices s = segment_slices(layout);
  if (pred_flat->value.rows() != layout.total())
    throw ValidationError("reconstruction_loss: prediction must cover all frames");
  nn::Var head = slice_rows(pred_flat, s.head.begin, s.head.end);
  nn::Var tail = slice_rows(pred_flat, s.tail.begin, s.tail.end);
  nn::Var diff = concat_rows({sub(head, constant(sample.head_pose_gt.as_matrix())),
                              sub(tail, constant(sample.tail_pose_gt.as_matrix()))});
  return mean_all(abs_(diff));
}

inline double reconstruction_loss(const PoseSequence& pred, const EmotionTransitionSample& sample,
                                  const SegmentLayout& layout) {
  return reconstruction_loss_v(ag::constant(pred.as_matrix()), sample, layout)->value[0];
}

// Binary cross-entropy pair for one (real, fake) example. The discriminator
// loss detaches the fake path; the generator loss is the non-saturating
// -log D(fake). real_target < 1 enables one-sided label smoothing.
struct AdversarialLosses {
  nn::Var loss_d;
  nn::Var loss_g;
};

inline nn::Var bce_v(const nn::Var& p, double target) {
  using namespace ag;
  // -(t log p + (1-t) log(1-p))
  nn::Var term = mul_scalar(log_clamped(p), target);
  nn::Var anti = mul_scalar(log_clamped(add_scalar(neg(p), 1.0)), 1.0 - target);
  return neg(add(term, anti));
}

inline AdversarialLosses adversarial_losses_v(const nn::Var& real_flat, const nn::Var& fake_flat,
                                              const MotionDiscriminator& disc,
                                              double real_target = 1.0) {
  using namespace ag;
  if (real_flat->value.rows() != fake_flat->value.rows())
    throw ValidationError("adversarial_losses: real and fake lengths differ");
  nn::Var d_real = disc.score_v(real_flat);
  nn::Var d_fake_detached = disc.score_v(detach(fake_flat));
  AdversarialLosses out;
  out.loss_d = add(bce_v(d_real, real_target), bce_v(d_fake_detached, 0.0));
  out.loss_g = neg(log_clamped(disc.score_v(fake_flat)));
  return out;
}

inline std::pair<double, double> adversarial_losses(const PoseSequence& real,
                                                    const PoseSequence& fake,
                                                    const MotionDiscriminator& disc,
                                                    double real_target = 1.0) {
  AdversarialLosses l = adversarial_losses_v(ag::constant(real.as_matrix()),
                                             ag::constant(fake.as_matrix()), disc, real_target);
  return {l.loss_d->value[0], l.loss_g->value[0]};
}

// lambda_r * L_rec + lambda_adv * L_adv + L_emotion, aborting with a
// diagnostic that names the offending part when any term is non-finite.
inline nn::Var total_loss_v(const nn::Var& l_rec, const nn::Var& l_adv, const nn::Var& l_emotion,
                            double lambda_r, double lambda_adv) {
  auto check = [](const nn::Var& v, const char* name) {
    if (!std::isfinite(v->value[0]))
      throw NumericError(std::string("total_loss: non-finite ") + name);
  };
  check(l_rec, "reconstruction loss");
  check(l_adv, "adversarial loss");
  check(l_emotion, "emotion loss");
  using namespace ag;
  return add(add(mul_scalar(l_rec, lambda_r), mul_scalar(l_adv, lambda_adv)), l_emotion);
}

inline double total_loss(double l_rec, double l_adv, double l_emotion, double lambda_r,
                         double lambda_adv) {
  return total_loss_v(ag::constant(Tensor::scalar(l_rec)), ag::constant(Tensor::scalar(l_adv)),
                      ag::constant(Tensor::scalar(l_emotion)), lambda_r, lambda_adv)
      ->value[0];
}

// The discriminator's "real" sequence: ground-truth head and tail joined by a
// linear bridge across the unsupervised transition, i.e. the smoothest motion
// consistent with the annotations.
inline Tensor real_sequence_matrix(const EmotionTransitionSample& sample,
                                   const SegmentLayout& layout) {
  const SegmentSlices s = segment_slices(layout);
  const Tensor head = sample.head_pose_gt.as_matrix();
  const Tensor tail = sample.tail_pose_gt.as_matrix();
  const std::size_t j3 = head.cols();
  Tensor out({layout.total(), j3});
  for (std::size_t t = 0; t < layout.head_frames; ++t)
    for (std::size_t c = 0; c < j3; ++c) out(s.head.begin + t, c) = head(t, c);
  for (std::size_t t = 0; t < layout.tail_frames; ++t)
    for (std::size_t c = 0; c < j3; ++c) out(s.tail.begin + t, c) = tail(t, c);
  const std::size_t L = layout.transition_frames;
  for (std::size_t t = 0; t < L; ++t) {
    const double a = static_cast<double>(t + 1) / static_cast<double>(L + 1);
    for (std::size_t c = 0; c < j3; ++c)
      out(s.transition.begin + t, c) =
          (1.0 - a) * head(layout.head_frames - 1, c) + a * tail(0, c);
  }
  return out;
}

struct EpochStats {
  std::size_t epoch = 0;
  double l_rec = 0.0;
  double l_adv_d = 0.0;
  double l_adv_g = 0.0;
  double l_emotion = 0.0;
  double total = 0.0;
  double sigma_mean = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> history;
  bool halted_on_nan = false;
  std::string halt_reason;
};

// Generator-side trainable bundle. The mixture holds its own parameters but
// is optimized jointly with the generator.
struct GestureSystem {
  GeneratorModel generator;
  EmotionMixture mixture;
  MotionDiscriminator discriminator;

  GestureSystem(const RunConfig& cfg, std::uint64_t seed)
      : generator(cfg, derive_seed(seed, 1)),
        mixture(cfg, derive_seed(seed, 2)),
        discriminator(cfg, derive_seed(seed, 3)) {}
};

inline Checkpoint make_model_checkpoint(const RunConfig& cfg, const GestureSystem& system,
                                        const KeyframeSampler& sampler) {
  Checkpoint ckpt;
  ckpt.config = cfg;
  ckpt.seed = cfg.seed;
  ckpt.put_section("generator", system.generator.params);
  ckpt.put_section("mixture", system.mixture.params);
  ckpt.put_section("discriminator", system.discriminator.params);
  ckpt.put_section("sampler", sampler.params);
  ckpt.meta["sampler_trained"] = sampler.trained() ? "1" : "0";
  return ckpt;
}

// Alternating min-max loop, one discriminator step then one generator step
// per batch. Gradients are accumulated sample-by-sample (equivalent to batch
// averaging and deterministic under a fixed seed). History records every loss
// term per epoch. A non-finite loss halts training; the caller still gets the
// last finite epoch's weights through the checkpoint directory.
inline TrainResult train(GestureSystem& system, const KeyframeSampler& sampler,
                         const EmotionClassifier& classifier,
                         const std::vector<EmotionTransitionSample>& dataset,
                         const RunConfig& cfg, const std::string& out_dir = "") {
  if (!sampler.trained())
    throw MissingPrerequisiteError("train: keyframe sampler is not pretrained");
  if (!classifier.trained())
    throw MissingPrerequisiteError("train: emotion classifier is not pretrained");
  if (dataset.empty()) throw ValidationError("train: empty dataset");
  const std::uint64_t classifier_checksum = classifier.params.checksum();

  const SegmentLayout& layout = cfg.layout;
  const SegmentSlices slices = segment_slices(layout);

  // Mel spectrograms and bridge sequences are pure per-sample inputs; cache.
  std::vector<MelSpectrogram> mels;
  std::vector<Tensor> reals;
  mels.reserve(dataset.size());
  reals.reserve(dataset.size());
  for (const auto& sample : dataset) {
    AudioClip audio = sample.audio;
    if (audio.sample_rate != cfg.audio.sample_rate)
      audio = resample_linear(audio, cfg.audio.sample_rate);
    mels.push_back(compute_mel(audio, cfg.audio.fft_size, cfg.audio.hop_length,
                               cfg.audio.mel_bins, cfg.audio.log_floor));
    reals.push_back(real_sequence_matrix(sample, layout));
  }

  nn::Adam opt_g(cfg.train.learning_rate);
  nn::Adam opt_mix(cfg.train.learning_rate);
  nn::Adam opt_d(cfg.train.learning_rate);
  Rng shuffle_rng(derive_seed(cfg.seed, 0x7a11ULL));

  const bool save_to_disk = !out_dir.empty();
  if (save_to_disk) std::filesystem::create_directories(out_dir);
  std::ofstream history_log;
  if (save_to_disk) history_log.open(out_dir + "/history.jsonl");

  auto save_checkpoint = [&](const std::string& name) {
    if (!save_to_disk) return;
    make_model_checkpoint(cfg, system, sampler).save(out_dir + "/" + name);
  };

  TrainResult result;
  for (std::size_t epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    EpochStats stats;
    stats.epoch = epoch + 1;
    std::size_t seen = 0;
    const auto order = shuffle_rng.permutation(dataset.size());

    try {
      for (std::size_t batch_start = 0; batch_start < order.size();
           batch_start += cfg.train.batch_size) {
        const std::size_t batch_end =
            std::min(batch_start + cfg.train.batch_size, order.size());
        const double inv_batch = 1.0 / static_cast<double>(batch_end - batch_start);

        // Forward pass per sample; graphs shared between the D and G steps.
        std::vector<GeneratorModel::Forward> forwards;
        std::vector<std::size_t> ids;
        for (std::size_t b = batch_start; b < batch_end; ++b) {
          const std::size_t i = order[b];
          const std::uint64_t track_seed = derive_seed(cfg.seed, 0xf2ac4ULL, epoch, i);
          const PoseSequence track = sampler.sample_reference_track(
              1, layout, dataset[i].head_pose_gt, dataset[i].tail_pose_gt, track_seed);
          forwards.push_back(system.generator.forward(mels[i], track, dataset[i].seed_poses));
          ids.push_back(i);
        }

        // --- discriminator step (fake detached) ---
        system.discriminator.params.zero_grad();
        double batch_ld = 0.0;
        {
          std::vector<nn::Var> terms;
          for (std::size_t b = 0; b < forwards.size(); ++b) {
            nn::Var d_real = system.discriminator.score_v(ag::constant(reals[ids[b]]));
            nn::Var d_fake = system.discriminator.score_v(ag::detach(forwards[b].poses));
            terms.push_back(ag::add(bce_v(d_real, cfg.discriminator.real_target),
                                    bce_v(d_fake, 0.0)));
          }
          nn::Var loss_d = ag::mul_scalar(ag::sum_all(ag::concat_cols(terms)), inv_batch);
          if (!std::isfinite(loss_d->value[0]))
            throw NumericError("train: non-finite discriminator loss");
          ag::backward(loss_d);
          nn::clip_grad_norm(system.discriminator.params, cfg.train.grad_clip);
          opt_d.step(system.discriminator.params);
          batch_ld = loss_d->value[0];
        }

        // --- generator + mixture step ---
        system.generator.params.zero_grad();
        system.mixture.params.zero_grad();
        std::vector<nn::Var> recs, advs, emos, sigmas;
        for (std::size_t b = 0; b < forwards.size(); ++b) {
          const auto& sample = dataset[ids[b]];
          const auto& fwd = forwards[b];
          recs.push_back(reconstruction_loss_v(fwd.poses, sample, layout));
          advs.push_back(ag::neg(ag::log_clamped(system.discriminator.score_v(fwd.poses))));
          nn::Var sigma = system.mixture.sigma_v(fwd.f_head, fwd.f_tail);
          sigmas.push_back(sigma);
          nn::Var label = EmotionMixture::soft_label_v(sigma, sample.head_emotion,
                                                       sample.tail_emotion,
                                                       cfg.emotions.size());
          nn::Var trans_pose =
              ag::slice_rows(fwd.poses, slices.transition.begin, slices.transition.end);
          emos.push_back(weak_emotion_loss_v(trans_pose, label, classifier));
        }
        nn::Var l_rec = ag::mul_scalar(ag::sum_all(ag::concat_cols(recs)), inv_batch);
        nn::Var l_adv = ag::mul_scalar(ag::sum_all(ag::concat_cols(advs)), inv_batch);
        nn::Var l_emo = ag::mul_scalar(ag::sum_all(ag::concat_cols(emos)), inv_batch);
        nn::Var total =
            total_loss_v(l_rec, l_adv, l_emo, cfg.train.lambda_r, cfg.train.lambda_adv);
        ag::backward(total);
        nn::clip_grad_norm(system.generator.params, cfg.train.grad_clip);
        nn::clip_grad_norm(system.mixture.params, cfg.train.grad_clip);
        opt_g.step(system.generator.params);
        opt_mix.step(system.mixture.params);

        const std::size_t n = batch_end - batch_start;
        stats.l_rec += l_rec->value[0] * n;
        stats.l_adv_d += batch_ld * n;
        stats.l_adv_g += l_adv->value[0] * n;
        stats.l_emotion += l_emo->value[0] * n;
        stats.total += total->value[0] * n;
        for (const auto& s : sigmas) stats.sigma_mean += s->value[0];
        seen += n;
      }
    } catch (const NumericError& e) {
      result.halted_on_nan = true;
      result.halt_reason = e.what();
      save_checkpoint("checkpoint_last_good.ckpt");
      break;
    }

    stats.l_rec /= seen;
    stats.l_adv_d /= seen;
    stats.l_adv_g /= seen;
    stats.l_emotion /= seen;
    stats.total /= seen;
    stats.sigma_mean /= seen;
    result.history.push_back(stats);

    if (history_log) {
      history_log << "{\"epoch\":" << stats.epoch << ",\"l_rec\":" << stats.l_rec
                  << ",\"l_adv_d\":" << stats.l_adv_d << ",\"l_adv_g\":" << stats.l_adv_g
                  << ",\"l_emotion\":" << stats.l_emotion << ",\"total\":" << stats.total
                  << ",\"sigma_mean\":" << stats.sigma_mean << "}\n";
      history_log.flush();
    }
    save_checkpoint("checkpoint_last_good.ckpt");
    if (cfg.train.checkpoint_every && (epoch + 1) % cfg.train.checkpoint_every == 0)
      save_checkpoint("checkpoint_epoch" + std::to_string(epoch + 1) + ".ckpt");

    if (classifier.params.checksum() != classifier_checksum)
      throw std::logic_error("train: frozen classifier weights drifted");
  }

  save_checkpoint("checkpoint_final.ckpt");
  return result;
}

}  // namespace emogest

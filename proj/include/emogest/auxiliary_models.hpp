#pragma once

// Pose-based emotion classifier (pretrained, then frozen to supply weak
// supervision) and the velocity-feature motion discriminator.

#include <algorithm>
#include <string>
#include <vector>

#include "emogest/config.hpp"
#include "emogest/core.hpp"
#include "emogest/nn.hpp"
#include "emogest/rng.hpp"

namespace emogest {

struct EmotionLogits {
  Tensor values;  // {1,E}

  Tensor probabilities() const {
    Tensor p = values;
    double m = p[0];
    for (std::size_t i = 1; i < p.size(); ++i) m = std::max(m, p[i]);
    double z = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] = std::exp(p[i] - m);
      z += p[i];
    }
    for (std::size_t i = 0; i < p.size(); ++i) p[i] /= z;
    return p;
  }

  int argmax() const {
    int best = 0;
    for (std::size_t i = 1; i < values.size(); ++i)
      if (values[i] > values[best]) best = static_cast<int>(i);
    return best;
  }
};

// Transformer encoder over per-frame pose embeddings, temporal mean pooling,
// MLP head. Positions are sampled from normalized-time sinusoids, so the
// shorter transition windows reuse the curves the training windows saw.
class EmotionClassifier {
 public:
  EmotionClassifier() = default;

  EmotionClassifier(const RunConfig& cfg, std::uint64_t seed)
      : vocab_(cfg.emotions),
        skeleton_(cfg.skeleton),
        train_window_(cfg.layout.head_frames),
        eval_window_(cfg.layout.transition_frames),
        hidden_(cfg.classifier.hidden) {
    Rng rng(derive_seed(seed, 0xc1a551fULL));
    const std::size_t j3 = skeleton_.joint_count * 3;
    const std::size_t heads = hidden_ % cfg.model.heads == 0 ? cfg.model.heads : 1;
    embed_ = nn::Linear(params, "embed", j3, hidden_, rng);
    for (std::size_t b = 0; b < cfg.classifier.blocks; ++b)
      blocks_.emplace_back(params, "block" + std::to_string(b), hidden_, heads, 2 * hidden_, rng);
    head1_ = nn::Linear(params, "head1", hidden_, hidden_, rng);
    head2_ = nn::Linear(params, "head2", hidden_, vocab_.size(), rng);
  }

  const EmotionVocabulary& vocabulary() const { return vocab_; }
  std::size_t train_window() const { return train_window_; }
  std::size_t eval_window() const { return eval_window_; }
  bool trained() const { return trained_; }
  void mark_trained(bool t = true) { trained_ = t; }

  // poses_flat {T, J*3} -> logits {1,E}; differentiable w.r.t. the input.
  nn::Var logits_v(const nn::Var& poses_flat) const {
    using namespace ag;
    const std::size_t T = poses_flat->value.rows();
    Var x = add(embed_(poses_flat),
                constant(nn::sinusoidal_positions(T, hidden_)));
    for (const auto& block : blocks_) x = block(x, nullptr);
    Var pooled = mean_axis0(x);
    return head2_(relu(head1_(pooled)));
  }

  nn::Var log_probs_v(const nn::Var& poses_flat) const {
    return ag::log_row_softmax(logits_v(poses_flat));
  }

  EmotionLogits classify_emotion(const PoseSequence& poses) const {
    if (poses.frames() != train_window_ && poses.frames() != eval_window_)
      throw ValidationError("classify_emotion: window must be " + std::to_string(train_window_) +
                            " or " + std::to_string(eval_window_) + " frames, got " +
                            std::to_string(poses.frames()));
    nn::Var out = logits_v(ag::constant(poses.as_matrix()));
    if (!out->value.all_finite()) throw NumericError("classify_emotion: non-finite logits");
    return {out->value};
  }

  nn::ParamStore params;

 private:
  EmotionVocabulary vocab_;
  SkeletonSpec skeleton_;
  std::size_t train_window_ = 60;
  std::size_t eval_window_ = 30;
  std::size_t hidden_ = 128;
  bool trained_ = false;
  nn::Linear embed_;
  std::vector<nn::AttentionBlock> blocks_;
  nn::Linear head1_, head2_;
};

struct ClassifierReport {
  double accuracy = 0.0;
  std::vector<double> per_class_accuracy;
  std::size_t epochs_run = 0;
};

// Cross-entropy pretraining on hard single-emotion windows. Refuses when any
// vocabulary class has no examples. Early-stops at the configured train
// accuracy.
inline ClassifierReport pretrain_classifier(
    EmotionClassifier& clf, const std::vector<std::pair<PoseSequence, EmotionLabel>>& dataset,
    const ClassifierConfig& cfg, std::uint64_t seed) {
  if (dataset.empty()) throw ValidationError("pretrain_classifier: empty dataset");
  const std::size_t E = clf.vocabulary().size();
  std::vector<std::size_t> class_counts(E, 0);
  for (const auto& [poses, label] : dataset) {
    if (label.id < 0 || static_cast<std::size_t>(label.id) >= E)
      throw ValidationError("pretrain_classifier: label id out of range");
    ++class_counts[static_cast<std::size_t>(label.id)];
  }
  for (std::size_t e = 0; e < E; ++e)
    if (class_counts[e] == 0)
      throw ValidationError("pretrain_classifier: class '" + clf.vocabulary().names()[e] +
                            "' has no training examples");

  Rng rng(derive_seed(seed, 0x17a1a6ULL));
  nn::Adam opt(cfg.learning_rate);
  ClassifierReport report;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = rng.permutation(dataset.size());
    std::vector<std::size_t> correct(E, 0);
    std::size_t total_correct = 0;
    for (std::size_t idx : order) {
      const auto& [poses, label] = dataset[idx];
      nn::Var logp = clf.log_probs_v(ag::constant(poses.as_matrix()));
      // NLL of the hard label
      Tensor onehot({1, E});
      onehot(0, static_cast<std::size_t>(label.id)) = 1.0;
      nn::Var loss = ag::neg(ag::sum_all(ag::mul(logp, ag::constant(onehot))));

      int pred = 0;
      for (std::size_t e = 1; e < E; ++e)
        if (logp->value(0, e) > logp->value(0, static_cast<std::size_t>(pred)))
          pred = static_cast<int>(e);
      if (pred == label.id) {
        ++correct[static_cast<std::size_t>(label.id)];
        ++total_correct;
      }

      clf.params.zero_grad();
      ag::backward(loss);
      opt.step(clf.params);
    }
    report.accuracy = static_cast<double>(total_correct) / static_cast<double>(dataset.size());
    report.per_class_accuracy.assign(E, 0.0);
    for (std::size_t e = 0; e < E; ++e)
      report.per_class_accuracy[e] =
          static_cast<double>(correct[e]) / static_cast<double>(class_counts[e]);
    ++report.epochs_run;
    if (report.accuracy >= cfg.target_accuracy) break;
  }
  clf.mark_trained();
  return report;
}

// Measures train-set accuracy without updating weights.
inline double classifier_accuracy(
    const EmotionClassifier& clf,
    const std::vector<std::pair<PoseSequence, EmotionLabel>>& dataset) {
  if (dataset.empty()) throw ValidationError("classifier_accuracy: empty dataset");
  std::size_t correct = 0;
  for (const auto& [poses, label] : dataset)
    if (clf.classify_emotion(poses).argmax() == label.id) ++correct;
  return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

// Temporal-conv discriminator over frame-difference (velocity) features with
// an optional raw-position channel, sigmoid output in (0,1).
class MotionDiscriminator {
 public:
  MotionDiscriminator() = default;

  MotionDiscriminator(const RunConfig& cfg, std::uint64_t seed)
      : use_positions_(cfg.discriminator.use_positions) {
    Rng rng(derive_seed(seed, 0xd15cULL));
    const std::size_t j3 = cfg.skeleton.joint_count * 3;
    std::size_t in_ch = use_positions_ ? 2 * j3 : j3;
    for (std::size_t i = 0; i < cfg.discriminator.widths.size(); ++i) {
      convs_.emplace_back(params, "conv" + std::to_string(i), in_ch,
                          cfg.discriminator.widths[i], 5, 2, 2, rng);
      in_ch = cfg.discriminator.widths[i];
    }
    out_ = nn::Linear(params, "out", in_ch, 1, rng);
  }

  // poses_flat {N, J*3} -> score {1,1} in (0,1)
  nn::Var score_v(const nn::Var& poses_flat) const {
    using namespace ag;
    const std::size_t N = poses_flat->value.rows();
    if (N < 2) throw ValidationError("MotionDiscriminator: need at least 2 frames");
    Var velocity = sub(slice_rows(poses_flat, 1, N), slice_rows(poses_flat, 0, N - 1));
    Var x = use_positions_ ? concat_cols({velocity, slice_rows(poses_flat, 0, N - 1)}) : velocity;
    for (const auto& conv : convs_) x = leaky_relu(conv(x));
    return sigmoid(out_(mean_axis0(x)));
  }

  double discriminate(const PoseSequence& poses) const {
    return score_v(ag::constant(poses.as_matrix()))->value[0];
  }

  nn::ParamStore params;

 private:
  bool use_positions_ = false;
  std::vector<nn::Conv1dLayer> convs_;
  nn::Linear out_;
};

}  // namespace emogest

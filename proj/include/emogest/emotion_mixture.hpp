#pragma once

// Emotion mixture: a motion-deformation matrix between head and tail feature
// sequences drives a learnable two-way mixture weight sigma, which splits a
// soft emotion label between the head and tail classes. A frozen pose-based
// classifier turns that label into the weak supervision loss for generated
// transition gestures.

#include <cmath>
#include <string>
#include <vector>

#include "emogest/auxiliary_models.hpp"
#include "emogest/config.hpp"
#include "emogest/core.hpp"
#include "emogest/nn.hpp"

namespace emogest {

// Head-frames x tail-frames row-stochastic deformation matrix.
struct DeformationMatrix {
  Tensor values;

  void validate(double tol = 1e-6) const {
    for (std::size_t r = 0; r < values.rows(); ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < values.cols(); ++c) s += values(r, c);
      if (std::fabs(s - 1.0) > tol)
        throw ValidationError("DeformationMatrix: row " + std::to_string(r) +
                              " sums to " + std::to_string(s));
    }
  }
};

struct MixtureWeights {
  double sigma = 0.5;
  double complement = 0.5;  // 1 - sigma, exact by construction
};

// Two-point-support soft label over the emotion vocabulary.
struct SoftEmotionLabel {
  Tensor probs;  // {1,E}

  void validate(double tol = 1e-6) const {
    double s = 0.0;
    std::size_t support = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      if (probs[i] < 0) throw ValidationError("SoftEmotionLabel: negative probability");
      if (probs[i] > 0) ++support;
      s += probs[i];
    }
    if (std::fabs(s - 1.0) > tol) throw ValidationError("SoftEmotionLabel: does not sum to 1");
    if (support > 2) throw ValidationError("SoftEmotionLabel: support wider than two classes");
  }
};

// Row-softmax of f_head f_tail^T / sqrt(D).
inline nn::Var deformation_v(const nn::Var& f_head, const nn::Var& f_tail) {
  using namespace ag;
  if (f_head->value.cols() != f_tail->value.cols())
    throw ValidationError("deformation: feature dimension mismatch");
  const double d = static_cast<double>(f_head->value.cols());
  return row_softmax(mul_scalar(matmul(f_head, transpose(f_tail)), 1.0 / std::sqrt(d)));
}

inline DeformationMatrix deformation(const Tensor& f_head, const Tensor& f_tail) {
  return {deformation_v(ag::constant(f_head), ag::constant(f_tail))->value};
}

class EmotionMixture {
 public:
  EmotionMixture() = default;

  EmotionMixture(const RunConfig& cfg, std::uint64_t seed)
      : head_frames_(cfg.layout.head_frames),
        tail_frames_(cfg.layout.tail_frames),
        feature_dim_(cfg.model.feature_dim) {
    Rng rng(derive_seed(seed, 0x3141fULL));
    head_map_ = nn::Linear(params, "head_map", feature_dim_, tail_frames_, rng);
    tail_map_ = nn::Linear(params, "tail_map", feature_dim_, head_frames_, rng);
  }

  // sigma as a {1,1} graph node; gradients reach both linear maps and the
  // upstream features.
  nn::Var sigma_v(const nn::Var& f_head, const nn::Var& f_tail) const {
    using namespace ag;
    if (f_head->value.rows() != head_frames_ || f_tail->value.rows() != tail_frames_ ||
        f_head->value.cols() != feature_dim_ || f_tail->value.cols() != feature_dim_)
      throw ValidationError("EmotionMixture: feature shapes do not match the layout");
    nn::Var s = deformation_v(f_head, f_tail);                 // {H,T}
    nn::Var e_head = max_all(mul(head_map_(f_head), s));       // {H,T} pooled to a scalar
    nn::Var e_tail = max_all(mul(tail_map_(f_tail), transpose(s)));  // {T,H} pooled
    nn::Var sm = row_softmax(concat_cols({e_head, e_tail}));   // {1,2}
    return slice_cols(sm, 0, 1);
  }

  MixtureWeights mixture_weights(const Tensor& f_head, const Tensor& f_tail) const {
    const double sigma = sigma_v(ag::constant(f_head), ag::constant(f_tail))->value[0];
    return {sigma, 1.0 - sigma};
  }

  static SoftEmotionLabel soft_label(const MixtureWeights& w, const EmotionLabel& head,
                                     const EmotionLabel& tail, std::size_t emotion_count) {
    if (head.id == tail.id)
      throw ValidationError("soft_label: head and tail emotions must differ");
    if (head.id < 0 || tail.id < 0 || static_cast<std::size_t>(head.id) >= emotion_count ||
        static_cast<std::size_t>(tail.id) >= emotion_count)
      throw ValidationError("soft_label: label id out of range");
    Tensor probs({1, emotion_count});
    probs(0, static_cast<std::size_t>(head.id)) = w.sigma;
    probs(0, static_cast<std::size_t>(tail.id)) = w.complement;
    return {probs};
  }

  // Graph version: probs = sigma * onehot(head) + (1 - sigma) * onehot(tail).
  static nn::Var soft_label_v(const nn::Var& sigma, const EmotionLabel& head,
                              const EmotionLabel& tail, std::size_t emotion_count) {
    using namespace ag;
    if (head.id == tail.id)
      throw ValidationError("soft_label: head and tail emotions must differ");
    Tensor oh_head({1, emotion_count}), oh_tail({1, emotion_count});
    oh_head(0, static_cast<std::size_t>(head.id)) = 1.0;
    oh_tail(0, static_cast<std::size_t>(tail.id)) = 1.0;
    nn::Var complement = add_scalar(neg(sigma), 1.0);
    return add(scale_by(constant(oh_head), sigma), scale_by(constant(oh_tail), complement));
  }

  std::size_t head_frames() const { return head_frames_; }
  std::size_t tail_frames() const { return tail_frames_; }

  nn::ParamStore params;

 private:
  std::size_t head_frames_ = 60;
  std::size_t tail_frames_ = 60;
  std::size_t feature_dim_ = 512;
  nn::Linear head_map_, tail_map_;
};

// Cross-entropy between a soft label and the frozen classifier's
// log-probabilities on generated transition poses. Gradients flow into the
// generator (through the poses) and into the mixture parameters (through the
// label); the classifier itself must be frozen by the caller.
inline nn::Var weak_emotion_loss_v(const nn::Var& transition_flat, const nn::Var& label,
                                   const EmotionClassifier& classifier) {
  using namespace ag;
  nn::Var logp = classifier.log_probs_v(transition_flat);
  if (!logp->value.all_finite())
    throw NumericError("weak_emotion_loss: classifier output is not a distribution");
  return neg(sum_all(mul(label, logp)));
}

inline double weak_emotion_loss(const PoseSequence& transition_poses,
                                const SoftEmotionLabel& label,
                                const EmotionClassifier& classifier) {
  label.validate();
  return weak_emotion_loss_v(ag::constant(transition_poses.as_matrix()),
                             ag::constant(label.probs), classifier)
      ->value[0];
}

}  // namespace emogest

#pragma once

// Evaluation: chunk autoencoder feature extractor, Gaussian-moment Frechet
// gesture distance, beat consistency, diversity, emotion accuracy, and the
// replayable metrics report.

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "emogest/audio.hpp"
#include "emogest/auxiliary_models.hpp"
#include "emogest/config.hpp"
#include "emogest/core.hpp"
#include "emogest/nn.hpp"
#include "emogest/rng.hpp"

namespace emogest {

// ---------------------------------------------------------------------------
// feature extractor (sequence autoencoder over L-frame chunks)
// ---------------------------------------------------------------------------

class FgdExtractor {
 public:
  FgdExtractor() = default;

  FgdExtractor(const RunConfig& cfg, std::uint64_t seed)
      : chunk_frames_(cfg.layout.transition_frames),
        feature_dim_(cfg.eval.fgd_feature_dim),
        input_dim_(cfg.layout.transition_frames * cfg.skeleton.joint_count * 3) {
    Rng rng(derive_seed(seed, 0xf6dULL));
    const std::size_t h = cfg.eval.fgd_hidden;
    e1_ = nn::Linear(params, "e1", input_dim_, h, rng);
    e2_ = nn::Linear(params, "e2", h, feature_dim_, rng);
    d1_ = nn::Linear(params, "d1", feature_dim_, h, rng);
    d2_ = nn::Linear(params, "d2", h, input_dim_, rng);
  }

  std::size_t chunk_frames() const { return chunk_frames_; }
  std::size_t feature_dim() const { return feature_dim_; }
  bool trained() const { return trained_; }
  void mark_trained(bool t = true) { trained_ = t; }

  nn::Var embed_v(const nn::Var& chunk_row) const {
    using namespace ag;
    return e2_(relu(e1_(chunk_row)));
  }

  nn::Var reconstruct_v(const nn::Var& chunk_row) const {
    using namespace ag;
    return d2_(relu(d1_(embed_v(chunk_row))));
  }

  // chunk {L, J*3} -> feature {1,F}
  Tensor embed(const Tensor& chunk) const {
    if (chunk.rank() != 2 || chunk.rows() != chunk_frames_ ||
        chunk.rows() * chunk.cols() != input_dim_)
      throw ValidationError("FgdExtractor::embed: chunk shape mismatch");
    return embed_v(ag::constant(chunk.reshaped({1, input_dim_})))->value;
  }

  nn::ParamStore params;

 private:
  std::size_t chunk_frames_ = 30;
  std::size_t feature_dim_ = 128;
  std::size_t input_dim_ = 0;
  bool trained_ = false;
  nn::Linear e1_, e2_, d1_, d2_;
};

struct ExtractorReport {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::size_t epochs_run = 0;
  bool small_dataset_warning = false;
};

inline ExtractorReport train_fgd_extractor(FgdExtractor& extractor,
                                           const std::vector<Tensor>& chunks,
                                           const EvalConfig& cfg, std::uint64_t seed) {
  if (chunks.empty()) throw ValidationError("train_fgd_extractor: no chunks");
  ExtractorReport report;
  report.small_dataset_warning = chunks.size() < 100;
  for (const auto& c : chunks)
    if (c.rank() != 2 || c.rows() != extractor.chunk_frames())
      throw ValidationError("train_fgd_extractor: chunk length mismatch");
  const std::size_t flat = chunks[0].rows() * chunks[0].cols();

  Rng rng(derive_seed(seed, 0xf6d7ULL));
  nn::Adam opt(cfg.fgd_learning_rate);
  for (std::size_t epoch = 0; epoch < cfg.fgd_epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (std::size_t idx : rng.permutation(chunks.size())) {
      nn::Var row = ag::constant(chunks[idx].reshaped({1, flat}));
      nn::Var loss = ag::l1_loss(extractor.reconstruct_v(row), row);
      extractor.params.zero_grad();
      ag::backward(loss);
      opt.step(extractor.params);
      epoch_loss += loss->value[0];
    }
    epoch_loss /= static_cast<double>(chunks.size());
    if (epoch == 0) report.initial_loss = epoch_loss;
    report.final_loss = epoch_loss;
    ++report.epochs_run;
  }
  extractor.mark_trained();
  return report;
}

// ---------------------------------------------------------------------------
// Gaussian moments and the Frechet distance
// ---------------------------------------------------------------------------

struct GaussianStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;

  // Unbiased covariance of row-stacked feature vectors.
  static GaussianStats from_features(const std::vector<Tensor>& features) {
    if (features.empty()) throw ValidationError("GaussianStats: no features");
    const std::size_t F = features[0].size();
    const std::size_t n = features.size();
    GaussianStats g;
    g.mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(F));
    for (const auto& f : features)
      for (std::size_t i = 0; i < F; ++i) g.mean(static_cast<Eigen::Index>(i)) += f[i];
    g.mean /= static_cast<double>(n);
    g.cov = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(F), static_cast<Eigen::Index>(F));
    if (n > 1) {
      for (const auto& f : features) {
        Eigen::VectorXd d(static_cast<Eigen::Index>(F));
        for (std::size_t i = 0; i < F; ++i) d(static_cast<Eigen::Index>(i)) = f[i];
        d -= g.mean;
        g.cov.noalias() += d * d.transpose();
      }
      g.cov /= static_cast<double>(n - 1);
    }
    return g;
  }

  void validate(double tol = 1e-8) const {
    if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > tol)
      throw ValidationError("GaussianStats: covariance not symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (cov + cov.transpose()));
    if (es.eigenvalues().minCoeff() < -tol)
      throw ValidationError("GaussianStats: covariance has negative eigenvalues");
  }
};

// ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^{1/2}), square roots through
// self-adjoint eigendecompositions with eps*I regularization.
inline double frechet_distance(const GaussianStats& a, const GaussianStats& b,
                               double eps = 1e-6) {
  if (a.mean.size() != b.mean.size())
    throw ValidationError("frechet_distance: dimension mismatch");
  const Eigen::Index F = a.mean.size();
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(F, F);
  const Eigen::MatrixXd sa = 0.5 * (a.cov + a.cov.transpose()) + eps * I;
  const Eigen::MatrixXd sb = 0.5 * (b.cov + b.cov.transpose()) + eps * I;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> esa(sa);
  if (esa.eigenvalues().minCoeff() < -eps)
    throw NumericError("frechet_distance: covariance not PSD after regularization");
  const Eigen::MatrixXd root_a = esa.operatorSqrt();

  // Tr((Sa Sb)^{1/2}) via the symmetric similar matrix root_a Sb root_a.
  const Eigen::MatrixXd m = root_a * sb * root_a;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> esm(0.5 * (m + m.transpose()));
  double trace_sqrt = 0.0;
  for (Eigen::Index i = 0; i < F; ++i)
    trace_sqrt += std::sqrt(std::max(esm.eigenvalues()(i), 0.0));

  const double d2 = (a.mean - b.mean).squaredNorm() + sa.trace() + sb.trace() - 2.0 * trace_sqrt;
  if (d2 < -1e-6) throw NumericError("frechet_distance: negative distance " + std::to_string(d2));
  return std::max(d2, 0.0);
}

// ---------------------------------------------------------------------------
// FGD over chunk draws
// ---------------------------------------------------------------------------

namespace eval_detail {

// A random L-chunk fully inside the head or the tail segment.
inline Tensor random_ht_chunk(const Tensor& seq_matrix, const SegmentLayout& layout, Rng& rng) {
  const std::size_t L = layout.transition_frames;
  const SegmentSlices s = segment_slices(layout);
  const std::size_t head_starts = layout.head_frames - L + 1;
  const std::size_t tail_starts = layout.tail_frames - L + 1;
  const std::size_t pick = static_cast<std::size_t>(rng.integer(head_starts + tail_starts));
  const std::size_t begin =
      pick < head_starts ? s.head.begin + pick : s.tail.begin + (pick - head_starts);
  Tensor chunk({L, seq_matrix.cols()});
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t c = 0; c < seq_matrix.cols(); ++c) chunk(t, c) = seq_matrix(begin + t, c);
  return chunk;
}

inline Tensor transition_chunk(const Tensor& seq_matrix, const SegmentLayout& layout) {
  const SegmentSlices s = segment_slices(layout);
  Tensor chunk({layout.transition_frames, seq_matrix.cols()});
  for (std::size_t t = 0; t < layout.transition_frames; ++t)
    for (std::size_t c = 0; c < seq_matrix.cols(); ++c)
      chunk(t, c) = seq_matrix(s.transition.begin + t, c);
  return chunk;
}

}  // namespace eval_detail

// Average Frechet distance over `draws` seeded rounds; each round embeds one
// random head/tail chunk per generated sequence against one per ground-truth
// sequence.
inline double fgd_ht(const std::vector<PoseSequence>& generated,
                     const std::vector<PoseSequence>& ground_truth,
                     const FgdExtractor& extractor, const SegmentLayout& layout,
                     std::uint64_t seed, std::size_t draws = 5) {
  if (generated.empty() || ground_truth.empty()) throw ValidationError("fgd_ht: empty input");
  layout.validate();
  if (layout.head_frames < layout.transition_frames ||
      layout.tail_frames < layout.transition_frames)
    throw ValidationError("fgd_ht: segments shorter than the chunk length");
  double acc = 0.0;
  for (std::size_t d = 0; d < draws; ++d) {
    Rng rng(derive_seed(seed, 0xf9dULL, d));
    std::vector<Tensor> gen_feats, gt_feats;
    for (const auto& p : generated)
      gen_feats.push_back(
          extractor.embed(eval_detail::random_ht_chunk(p.as_matrix(), layout, rng)));
    for (const auto& p : ground_truth)
      gt_feats.push_back(
          extractor.embed(eval_detail::random_ht_chunk(p.as_matrix(), layout, rng)));
    acc += frechet_distance(GaussianStats::from_features(gen_feats),
                            GaussianStats::from_features(gt_feats));
  }
  return acc / static_cast<double>(draws);
}

// Transition chunks of the generated sequences against seeded head/tail chunk
// draws of the same sequences (no transition ground truth exists).
inline double fgd_trans(const std::vector<PoseSequence>& generated, const FgdExtractor& extractor,
                        const SegmentLayout& layout, std::uint64_t seed, std::size_t draws = 5) {
  if (generated.empty()) throw ValidationError("fgd_trans: empty input");
  layout.validate();
  std::vector<Tensor> trans_feats;
  for (const auto& p : generated)
    trans_feats.push_back(extractor.embed(eval_detail::transition_chunk(p.as_matrix(), layout)));
  const GaussianStats trans_stats = GaussianStats::from_features(trans_feats);
  double acc = 0.0;
  for (std::size_t d = 0; d < draws; ++d) {
    Rng rng(derive_seed(seed, 0xfbdULL, d));
    std::vector<Tensor> ht_feats;
    for (const auto& p : generated)
      ht_feats.push_back(
          extractor.embed(eval_detail::random_ht_chunk(p.as_matrix(), layout, rng)));
    acc += frechet_distance(trans_stats, GaussianStats::from_features(ht_feats));
  }
  return acc / static_cast<double>(draws);
}

// ---------------------------------------------------------------------------
// beat consistency
// ---------------------------------------------------------------------------

struct BeatConsistencyResult {
  double value = 0.0;
  bool no_motion_beats = false;
  std::size_t audio_beats = 0;
  std::size_t motion_beats = 0;
};

// Kernel scorer: mean over motion beats of exp(-d^2 / (2 sigma^2)) where d is
// the gap to the nearest audio beat.
inline double beat_consistency_from_beats(const std::vector<double>& motion_beats,
                                          const std::vector<double>& audio_beats, double sigma) {
  if (sigma <= 0) throw ValidationError("beat_consistency: sigma must be positive");
  if (motion_beats.empty() || audio_beats.empty()) return 0.0;
  double acc = 0.0;
  for (double tm : motion_beats) {
    double best = std::numeric_limits<double>::infinity();
    for (double ta : audio_beats) best = std::min(best, std::fabs(tm - ta));
    acc += std::exp(-best * best / (2.0 * sigma * sigma));
  }
  return acc / static_cast<double>(motion_beats.size());
}

// Audio beats: peaks of the positive difference of a short-window RMS
// envelope. Motion beats: local minima of mean joint speed. Score: mean over
// motion beats of a Gaussian kernel on the distance to the nearest audio
// beat.
inline BeatConsistencyResult beat_consistency(const PoseSequence& poses, const AudioClip& audio,
                                              double sigma = 0.1) {
  if (audio.samples.empty()) throw ValidationError("beat_consistency: empty audio");
  if (sigma <= 0) throw ValidationError("beat_consistency: sigma must be positive");
  BeatConsistencyResult result;

  // envelope at 100 Hz
  const std::size_t win = std::max<std::size_t>(
      static_cast<std::size_t>(std::llround(audio.sample_rate / 100.0)), 1);
  std::vector<double> env;
  for (std::size_t i = 0; i + win <= audio.samples.size(); i += win) {
    double acc = 0.0;
    for (std::size_t k = 0; k < win; ++k) acc += audio.samples[i + k] * audio.samples[i + k];
    env.push_back(std::sqrt(acc / static_cast<double>(win)));
  }
  std::vector<double> onset(env.size(), 0.0);
  for (std::size_t i = 1; i < env.size(); ++i) onset[i] = std::max(env[i] - env[i - 1], 0.0);
  double mean = 0.0;
  for (double v : onset) mean += v;
  mean /= std::max<std::size_t>(onset.size(), 1);
  double var = 0.0;
  for (double v : onset) var += (v - mean) * (v - mean);
  const double thresh = mean + std::sqrt(var / std::max<std::size_t>(onset.size(), 1));
  std::vector<double> audio_beats;
  for (std::size_t i = 1; i + 1 < onset.size(); ++i)
    if (onset[i] > thresh && onset[i] >= onset[i - 1] && onset[i] >= onset[i + 1])
      audio_beats.push_back((static_cast<double>(i) + 0.5) * static_cast<double>(win) /
                            audio.sample_rate);
  result.audio_beats = audio_beats.size();

  // mean joint speed per frame interval
  const std::size_t T = poses.frames();
  const double fps = poses.skeleton.fps;
  std::vector<double> speed(T > 1 ? T - 1 : 0, 0.0);
  for (std::size_t t = 0; t + 1 < T; ++t) {
    double acc = 0.0;
    for (std::size_t j = 0; j < poses.joints(); ++j) {
      double sq = 0.0;
      for (std::size_t a = 0; a < 3; ++a) {
        const double d = poses.data(t + 1, j, a) - poses.data(t, j, a);
        sq += d * d;
      }
      acc += std::sqrt(sq);
    }
    speed[t] = acc / static_cast<double>(poses.joints());
  }
  std::vector<double> motion_beats;
  for (std::size_t t = 1; t + 1 < speed.size(); ++t)
    if (speed[t] <= speed[t - 1] && speed[t] < speed[t + 1])
      motion_beats.push_back(static_cast<double>(t + 1) / fps);
  result.motion_beats = motion_beats.size();

  if (motion_beats.empty()) {
    result.no_motion_beats = true;
    result.value = 0.0;
    return result;
  }
  result.value = beat_consistency_from_beats(motion_beats, audio_beats, sigma);
  return result;
}

// ---------------------------------------------------------------------------
// diversity
// ---------------------------------------------------------------------------

struct DiversityResult {
  double mean = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  bool degenerate = false;
  std::size_t pairs = 0;
};

// Mean L1 distance over seeded random index pairs; 95% CI via bootstrap.
// Features are canonicalized by lexicographic sort, so the score is invariant
// to the order of the input set.
inline DiversityResult diversity(const std::vector<Tensor>& features, std::size_t pair_count,
                                 std::uint64_t seed) {
  if (features.size() < 2) throw ValidationError("diversity: need at least 2 feature vectors");
  std::vector<const Tensor*> canon;
  canon.reserve(features.size());
  for (const auto& f : features) canon.push_back(&f);
  std::sort(canon.begin(), canon.end(), [](const Tensor* a, const Tensor* b) {
    return std::lexicographical_compare(a->raw().begin(), a->raw().end(), b->raw().begin(),
                                        b->raw().end());
  });

  Rng rng(derive_seed(seed, 0xd1feULL));
  std::vector<double> dists;
  dists.reserve(pair_count);
  for (std::size_t p = 0; p < pair_count; ++p) {
    const std::size_t i = static_cast<std::size_t>(rng.integer(canon.size()));
    std::size_t j = static_cast<std::size_t>(rng.integer(canon.size() - 1));
    if (j >= i) ++j;
    double d = 0.0;
    for (std::size_t k = 0; k < canon[i]->size(); ++k)
      d += std::fabs((*canon[i])[k] - (*canon[j])[k]);
    dists.push_back(d / static_cast<double>(canon[i]->size()));
  }
  DiversityResult result;
  result.pairs = pair_count;
  for (double d : dists) result.mean += d;
  result.mean /= static_cast<double>(dists.size());
  result.degenerate = result.mean == 0.0;

  // bootstrap CI over the pair distances
  std::vector<double> boot;
  boot.reserve(1000);
  for (std::size_t b = 0; b < 1000; ++b) {
    double acc = 0.0;
    for (std::size_t p = 0; p < dists.size(); ++p)
      acc += dists[static_cast<std::size_t>(rng.integer(dists.size()))];
    boot.push_back(acc / static_cast<double>(dists.size()));
  }
  std::sort(boot.begin(), boot.end());
  result.ci_low = boot[static_cast<std::size_t>(0.025 * (boot.size() - 1))];
  result.ci_high = boot[static_cast<std::size_t>(0.975 * (boot.size() - 1))];
  return result;
}

// ---------------------------------------------------------------------------
// emotion accuracy
// ---------------------------------------------------------------------------

inline double emo_acc(const std::vector<std::pair<PoseSequence, EmotionLabel>>& segments,
                      const EmotionClassifier& classifier) {
  if (segments.empty()) throw ValidationError("emo_acc: empty segment set");
  std::size_t correct = 0;
  for (const auto& [poses, label] : segments)
    if (classifier.classify_emotion(poses).argmax() == label.id) ++correct;
  return 100.0 * static_cast<double>(correct) / static_cast<double>(segments.size());
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

struct MetricsReport {
  double fgd_ht = 0.0;
  double fgd_trans = 0.0;
  double bc = 0.0;
  double diversity_mean = 0.0;
  double diversity_ci_low = 0.0;
  double diversity_ci_high = 0.0;
  double emo_acc = 0.0;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::uint64_t fgd_ht_seed = 0;
  std::uint64_t fgd_trans_seed = 0;
  std::uint64_t diversity_seed = 0;
  std::size_t generations_per_audio = 0;
  std::size_t evaluated_samples = 0;
  bool bc_warning_no_motion_beats = false;

  std::string to_json() const {
    std::ostringstream os;
    os.precision(17);
    os << "{\n";
    os << "  \"fgd_ht\": " << fgd_ht << ",\n";
    os << "  \"fgd_trans\": " << fgd_trans << ",\n";
    os << "  \"bc\": " << bc << ",\n";
    os << "  \"diversity\": {\"mean\": " << diversity_mean << ", \"ci_low\": " << diversity_ci_low
       << ", \"ci_high\": " << diversity_ci_high << "},\n";
    os << "  \"emo_acc\": " << emo_acc << ",\n";
    os << "  \"config_hash\": \"" << config_hash << "\",\n";
    os << "  \"seed\": " << seed << ",\n";
    os << "  \"chunk_draw_seeds\": {\"fgd_ht\": " << fgd_ht_seed
       << ", \"fgd_trans\": " << fgd_trans_seed << ", \"diversity\": " << diversity_seed
       << "},\n";
    os << "  \"generations_per_audio\": " << generations_per_audio << ",\n";
    os << "  \"evaluated_samples\": " << evaluated_samples << ",\n";
    os << "  \"bc_warning_no_motion_beats\": " << (bc_warning_no_motion_beats ? "true" : "false")
       << "\n";
    os << "}\n";
    return os.str();
  }
};

}  // namespace emogest

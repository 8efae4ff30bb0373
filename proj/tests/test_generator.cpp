#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "emogest/generator.hpp"
#include "emogest/rng.hpp"
#include "oracles.hpp"

using namespace emogest;
using ag::Var;
using Catch::Approx;

namespace {

// Small end-to-end configuration: 2 joints, 20-frame layout, 1 s of audio.
RunConfig tiny_config() {
  RunConfig cfg = RunConfig::desk_preset();
  cfg.skeleton = SkeletonSpec::desk_default(2);
  cfg.layout = SegmentLayout{8, 4, 8};
  cfg.seed_frames = 2;
  cfg.model.feature_dim = 8;
  cfg.model.heads = 2;
  cfg.model.encoder_widths = {4, 4, 8};
  cfg.model.mtim_hidden = 8;
  cfg.sampler.latent_dim = 4;
  cfg.sampler.hidden = 16;
  cfg.audio.sample_rate = 4000;
  cfg.audio.fft_size = 256;
  cfg.audio.hop_length = 256;
  cfg.audio.mel_bins = 16;
  return cfg;
}

EmotionTransitionSample tiny_sample(const RunConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  EmotionTransitionSample s;
  s.sample_id = "tiny" + std::to_string(seed);
  s.audio.sample_rate = cfg.audio.sample_rate;
  const double dur = cfg.layout.total() / cfg.skeleton.fps;
  const std::size_t n = static_cast<std::size_t>(dur * cfg.audio.sample_rate);
  s.audio.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    s.audio.samples[i] = 0.5 * std::sin(2.0 * M_PI * 200.0 * i / cfg.audio.sample_rate) +
                         0.1 * rng.normal();
  s.head_pose_gt =
      PoseSequence(rng.normal_tensor({cfg.layout.head_frames, cfg.skeleton.joint_count, 3}),
                   cfg.skeleton);
  s.tail_pose_gt =
      PoseSequence(rng.normal_tensor({cfg.layout.tail_frames, cfg.skeleton.joint_count, 3}),
                   cfg.skeleton);
  s.seed_poses = PoseSequence(
      rng.normal_tensor({cfg.seed_frames, cfg.skeleton.joint_count, 3}), cfg.skeleton);
  s.head_emotion = cfg.emotions.label(std::string("neutral"));
  s.tail_emotion = cfg.emotions.label(std::string("anger"));
  return s;
}

}  // namespace

TEST_CASE("attention: uniform weights average the values") {
  // zero queries -> constant logits -> uniform attention
  Tensor q({3, 4});
  Rng rng(1);
  Tensor k = rng.normal_tensor({4, 4});
  Tensor v({4, 4});
  for (std::size_t i = 0; i < 4; ++i) v(i, i) = 1.0;  // identity rows
  Tensor kc = k;
  // force equal logits by zero q regardless of k
  Var out = ag::attention(ag::constant(q), ag::constant(kc), ag::constant(v));
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 4; ++c) REQUIRE(out->value(r, c) == Approx(0.25).margin(1e-12));
}

TEST_CASE("attention: saturated match picks out one value row") {
  const std::size_t n = 4, d = 4;
  Tensor q({1, d}), k({n, d});
  Rng rng(2);
  Tensor v = rng.normal_tensor({n, d});
  // query aligned with key 2 at logit gap >= 20 after scaling
  for (std::size_t c = 0; c < d; ++c) {
    q(0, c) = 10.0;
    k(2, c) = 1.0;
  }
  Var out = ag::attention(ag::constant(q), ag::constant(k), ag::constant(v));
  for (std::size_t c = 0; c < d; ++c)
    REQUIRE(std::fabs(out->value(0, c) - v(2, c)) < 1e-3);
}

TEST_CASE("attention matches the dense-loop reference on random instances") {
  Rng rng(3);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t n = 2 + rng.integer(4);
    const std::size_t m = 2 + rng.integer(4);
    const std::size_t d = 2 + rng.integer(4);
    Tensor q = rng.normal_tensor({n, d});
    Tensor k = rng.normal_tensor({m, d});
    Tensor v = rng.normal_tensor({m, d});
    Var out = ag::attention(ag::constant(q), ag::constant(k), ag::constant(v));
    auto ref = oracle::attention(oracle::to_mat(q), oracle::to_mat(k), oracle::to_mat(v));
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < d; ++c)
        REQUIRE(std::fabs(out->value(r, c) - ref[r][c]) < 1e-6);
  }
}

TEST_CASE("correlation: constant embeddings give uniform rows") {
  const std::size_t L = 5, D = 3;
  Tensor chunk = Tensor::full({L, D}, 0.7);
  Tensor trans = Tensor::full({L, D}, -1.3);
  CorrelationMatrix c = correlation(chunk, trans);
  c.validate();
  for (std::size_t r = 0; r < L; ++r)
    for (std::size_t j = 0; j < L; ++j) REQUIRE(c.values(r, j) == Approx(1.0 / L).margin(1e-12));
}

TEST_CASE("correlation: scaled basis rows saturate the diagonal") {
  const std::size_t L = 4, D = 4;
  Tensor basis({L, D});
  for (std::size_t i = 0; i < L; ++i) basis(i, i) = 8.0;
  CorrelationMatrix c = correlation(basis, basis);
  c.validate();
  for (std::size_t i = 0; i < L; ++i) REQUIRE(c.values(i, i) > 0.99);
}

TEST_CASE("correlation matches the reference on random instances") {
  Rng rng(5);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t L = 2 + rng.integer(4);
    const std::size_t D = 2 + rng.integer(5);
    Tensor chunk = rng.normal_tensor({L, D});
    Tensor trans = rng.normal_tensor({L, D});
    CorrelationMatrix c = correlation(chunk, trans);
    c.validate();
    auto ref = oracle::scaled_gram_softmax(oracle::to_mat(chunk), oracle::to_mat(trans));
    for (std::size_t r = 0; r < L; ++r)
      for (std::size_t j = 0; j < L; ++j) REQUIRE(std::fabs(c.values(r, j) - ref[r][j]) < 1e-6);
  }
}

TEST_CASE("correlation rejects mismatched lengths") {
  Tensor a({3, 4}), b({4, 4}), c({3, 5});
  REQUIRE_THROWS_AS(correlation(a, b), ValidationError);
  REQUIRE_THROWS_AS(correlation(a, c), ValidationError);
}

TEST_CASE("adain reproduces its own statistics and matches the reference") {
  Rng rng(7);
  const std::size_t L = 6, D = 5;
  Tensor content = rng.normal_tensor({L, D}, 0.5, 2.0);

  // style = content's own per-channel stats -> identity
  StyleVector self_style;
  self_style.gamma = Tensor({1, D});
  self_style.beta = Tensor({1, D});
  for (std::size_t c = 0; c < D; ++c) {
    double mu = 0.0;
    for (std::size_t r = 0; r < L; ++r) mu += content(r, c);
    mu /= L;
    double var = 0.0;
    for (std::size_t r = 0; r < L; ++r) var += (content(r, c) - mu) * (content(r, c) - mu);
    self_style.gamma(0, c) = std::sqrt(var / L);
    self_style.beta(0, c) = mu;
  }
  Tensor identity_out = adain_apply(content, self_style);
  for (std::size_t i = 0; i < content.size(); ++i)
    REQUIRE(identity_out[i] == Approx(content[i]).margin(1e-9));

  // arbitrary style: output stats equal the style
  StyleVector style;
  style.gamma = rng.uniform_tensor({1, D}, 0.3, 2.0);
  style.beta = rng.normal_tensor({1, D});
  Tensor out = adain_apply(content, style);
  for (std::size_t c = 0; c < D; ++c) {
    double mu = 0.0;
    for (std::size_t r = 0; r < L; ++r) mu += out(r, c);
    mu /= L;
    double var = 0.0;
    for (std::size_t r = 0; r < L; ++r) var += (out(r, c) - mu) * (out(r, c) - mu);
    REQUIRE(mu == Approx(style.beta(0, c)).margin(1e-5));
    REQUIRE(std::sqrt(var / L) == Approx(style.gamma(0, c)).margin(1e-5));
  }

  // reference comparison on random instances
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t rows = 2 + rng.integer(5);
    const std::size_t cols = 1 + rng.integer(5);
    Tensor x = rng.normal_tensor({rows, cols});
    Tensor g = rng.uniform_tensor({1, cols}, 0.2, 1.8);
    Tensor b = rng.normal_tensor({1, cols});
    Tensor got = adain_apply(x, {g, b});
    auto ref = oracle::adain(oracle::to_mat(x), std::vector<double>(g.data(), g.data() + cols),
                             std::vector<double>(b.data(), b.data() + cols));
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) REQUIRE(std::fabs(got(r, c) - ref[r][c]) < 1e-7);
  }
}

TEST_CASE("adain clamps degenerate channels instead of dividing by zero") {
  Tensor content({4, 2});
  for (std::size_t r = 0; r < 4; ++r) content(r, 0) = 3.0;  // zero variance channel
  content(0, 1) = 1.0;
  content(1, 1) = -1.0;
  StyleVector style{Tensor::ones({1, 2}), Tensor({1, 2})};
  Tensor out = adain_apply(content, style);
  REQUIRE(out.all_finite());
  REQUIRE(nn::degenerate_channels(content) == std::vector<std::size_t>{0});
}

TEST_CASE("motion infusion matches a straight-line reference with frozen weights") {
  RunConfig cfg = tiny_config();
  cfg.layout = SegmentLayout{5, 3, 5};
  cfg.model.feature_dim = 4;
  cfg.model.mtim_hidden = 6;
  Rng rng(11);
  nn::ParamStore ps;
  Rng init(123);
  MotionInfusion mtim(ps, "mtim", cfg, init);

  const std::size_t L = 3, D = 4;
  Tensor f_head = rng.normal_tensor({5, D});
  Tensor f_tran = rng.normal_tensor({L, D});
  Tensor f_tail = rng.normal_tensor({5, D});

  Var out = mtim(ag::constant(f_head), ag::constant(f_tran), ag::constant(f_tail), cfg.layout);

  // straight-line reference
  auto head_chunk = oracle::to_mat(f_head);
  head_chunk.erase(head_chunk.begin(), head_chunk.begin() + 2);  // last L rows
  auto tail_chunk = oracle::to_mat(f_tail);
  tail_chunk.resize(L);  // first L rows
  auto c_head = oracle::scaled_gram_softmax(head_chunk, oracle::to_mat(f_tran));
  auto c_tail = oracle::scaled_gram_softmax(tail_chunk, oracle::to_mat(f_tran));
  auto global_dep = oracle::matmul(c_head, c_tail);

  const Tensor w1 = ps.find("mtim.enc1.w")->value;
  const Tensor b1 = ps.find("mtim.enc1.b")->value;
  const Tensor w2 = ps.find("mtim.enc2.w")->value;
  const Tensor b2 = ps.find("mtim.enc2.b")->value;
  std::vector<double> flat_g;
  for (const auto& row : global_dep)
    for (double v : row) flat_g.push_back(v);
  std::vector<double> h(w1.cols(), 0.0);
  for (std::size_t j = 0; j < w1.cols(); ++j) {
    double acc = b1(0, j);
    for (std::size_t i = 0; i < flat_g.size(); ++i) acc += flat_g[i] * w1(i, j);
    h[j] = std::max(acc, 0.0);
  }
  std::vector<double> raw(w2.cols(), 0.0);
  for (std::size_t j = 0; j < w2.cols(); ++j) {
    double acc = b2(0, j);
    for (std::size_t i = 0; i < h.size(); ++i) acc += h[i] * w2(i, j);
    raw[j] = acc;
  }
  std::vector<double> gamma(D), beta(D);
  for (std::size_t c = 0; c < D; ++c) {
    gamma[c] = std::log1p(std::exp(raw[c])) + cfg.model.gamma_eps;
    beta[c] = raw[D + c];
  }
  auto ref = oracle::adain(oracle::to_mat(f_tran), gamma, beta);
  for (std::size_t r = 0; r < L; ++r)
    for (std::size_t c = 0; c < D; ++c) REQUIRE(std::fabs(out->value(r, c) - ref[r][c]) < 1e-6);
}

TEST_CASE("generator forward keeps head and tail embeddings bit-exact") {
  RunConfig cfg = tiny_config();
  GeneratorModel gen(cfg, 99);
  KeyframeSampler sampler(cfg, 99);
  sampler.mark_trained();
  EmotionTransitionSample sample = tiny_sample(cfg, 1);

  AudioClip audio = resample_linear(sample.audio, cfg.audio.sample_rate);
  MelSpectrogram mel =
      compute_mel(audio, cfg.audio.fft_size, cfg.audio.hop_length, cfg.audio.mel_bins);
  PoseSequence track =
      sampler.sample_reference_track(1, cfg.layout, sample.head_pose_gt, sample.tail_pose_gt, 7);
  auto fwd = gen.forward(mel, track, sample.seed_poses);

  // rebuild the backbone without the infusion; the returned head/tail slices
  // must match it bitwise
  const SegmentSlices s = segment_slices(cfg.layout);
  Var audio_feats = gen.audio_encoder()(mel, cfg.layout.total());
  Var q = ag::add_rv(
      ag::matmul(ag::constant(track.as_matrix()), gen.params.find("pose_embed.w")),
      gen.params.find("pose_embed.b"));
  Var pos = ag::constant(nn::sinusoidal_positions(cfg.layout.total(), cfg.model.feature_dim));
  Var feats = gen.cross_attend_v(ag::add(q, pos), audio_feats);
  for (std::size_t t = s.head.begin; t < s.head.end; ++t)
    for (std::size_t c = 0; c < cfg.model.feature_dim; ++c)
      REQUIRE(fwd.f_head->value(t - s.head.begin, c) == feats->value(t, c));
  for (std::size_t t = s.tail.begin; t < s.tail.end; ++t)
    for (std::size_t c = 0; c < cfg.model.feature_dim; ++c)
      REQUIRE(fwd.f_tail->value(t - s.tail.begin, c) == feats->value(t, c));
}

TEST_CASE("decoder: zero weights give zero poses, identity projection copies features") {
  RunConfig cfg = tiny_config();
  cfg.model.decoder_hidden = cfg.model.feature_dim;
  GeneratorModel gen(cfg, 5);
  const std::size_t D = cfg.model.feature_dim;
  const std::size_t j3 = cfg.skeleton.joint_count * 3;

  gen.params.find("dec1.w")->value.fill(0.0);
  gen.params.find("dec1.b")->value.fill(0.0);
  gen.params.find("dec2.w")->value.fill(0.0);
  gen.params.find("dec2.b")->value.fill(0.0);
  Rng rng(6);
  Tensor feats = rng.normal_tensor({cfg.layout.total(), D});
  PoseSequence zero = gen.decode_poses(feats);
  for (std::size_t i = 0; i < zero.data.size(); ++i) REQUIRE(zero.data[i] == 0.0);

  // identity-like: dec1 = I (features kept through relu for non-negative
  // input), dec2 picks the first j3 channels
  Tensor& w1 = gen.params.find("dec1.w")->value;
  for (std::size_t i = 0; i < D; ++i) w1(i, i) = 1.0;
  Tensor& w2 = gen.params.find("dec2.w")->value;
  for (std::size_t i = 0; i < j3; ++i) w2(i, i) = 1.0;
  Tensor pos_feats = rng.uniform_tensor({1, D}, 0.1, 1.0);
  PoseSequence copied = gen.decode_poses(pos_feats);
  REQUIRE(copied.frames() == 1);
  for (std::size_t i = 0; i < j3; ++i) REQUIRE(copied.data[i] == Approx(pos_feats[i]));
}

TEST_CASE("generate: shape, determinism, and seed diversity") {
  RunConfig cfg = tiny_config();
  GeneratorModel gen(cfg, 42);
  KeyframeSampler sampler(cfg, 42);
  sampler.mark_trained();
  EmotionTransitionSample sample = tiny_sample(cfg, 2);

  PoseSequence a = gen.generate(sample, sampler, 1234);
  REQUIRE(a.frames() == cfg.layout.total());
  REQUIRE(a.joints() == cfg.skeleton.joint_count);
  REQUIRE(a.data.all_finite());

  PoseSequence b = gen.generate(sample, sampler, 1234);
  for (std::size_t i = 0; i < a.data.size(); ++i) REQUIRE(a.data[i] == b.data[i]);

  PoseSequence c = gen.generate(sample, sampler, 4321);
  double l1 = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) l1 += std::fabs(a.data[i] - c.data[i]);
  REQUIRE(l1 > 0.0);
}

TEST_CASE("cross_attend validates shapes") {
  RunConfig cfg = tiny_config();
  GeneratorModel gen(cfg, 1);
  Tensor q({cfg.layout.total(), cfg.model.feature_dim});
  Tensor bad({cfg.layout.total() - 1, cfg.model.feature_dim});
  REQUIRE_THROWS_AS(gen.cross_attend(q, bad), ValidationError);
}

TEST_CASE("generator end-to-end gradients match finite differences") {
  RunConfig cfg = tiny_config();
  GeneratorModel gen(cfg, 77);
  KeyframeSampler sampler(cfg, 77);
  sampler.mark_trained();
  EmotionTransitionSample sample = tiny_sample(cfg, 3);

  AudioClip audio = resample_linear(sample.audio, cfg.audio.sample_rate);
  MelSpectrogram mel =
      compute_mel(audio, cfg.audio.fft_size, cfg.audio.hop_length, cfg.audio.mel_bins);
  PoseSequence track =
      sampler.sample_reference_track(1, cfg.layout, sample.head_pose_gt, sample.tail_pose_gt, 7);

  Rng rng(17);
  std::vector<ag::Var> probes = {
      gen.params.find("audio_enc.stem.w"),  gen.params.find("audio_enc.block1.conv1.w"),
      gen.params.find("pose_embed.w"),      gen.params.find("block0.wq.w"),
      gen.params.find("block2.wo.w"),       gen.params.find("mtim.enc1.w"),
      gen.params.find("mtim.enc2.w"),       gen.params.find("seed_embed.w"),
      gen.params.find("dec1.w"),            gen.params.find("dec2.b"),
  };
  auto fd = oracle::finite_difference_check(
      [&] {
        auto fwd = gen.forward(mel, track, sample.seed_poses);
        return ag::sum_all(ag::tanh_(fwd.poses));
      },
      probes, 2, rng);
  REQUIRE(fd.max_rel_error < 1e-4);
}

TEST_CASE("correlation matrices stay row-stochastic over random inputs") {
  Rng rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t L = 2 + rng.integer(6);
    const std::size_t D = 2 + rng.integer(6);
    CorrelationMatrix c =
        correlation(rng.normal_tensor({L, D}, 0.0, 3.0), rng.normal_tensor({L, D}, 0.0, 3.0));
    c.validate(1e-6);
  }
}

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "emogest/keyframe_sampler.hpp"
#include "emogest/rng.hpp"
#include "oracles.hpp"

using namespace emogest;
using Catch::Approx;

namespace {

RunConfig sampler_config() {
  RunConfig cfg = RunConfig::desk_preset();
  cfg.skeleton = SkeletonSpec::desk_default(2);
  cfg.layout = SegmentLayout{8, 4, 8};
  cfg.sampler.latent_dim = 4;
  cfg.sampler.hidden = 24;
  cfg.sampler.crossfade = 2;
  return cfg;
}

PoseSequence random_poses(const SkeletonSpec& skel, std::size_t frames, std::uint64_t seed) {
  Rng rng(seed);
  return PoseSequence(rng.normal_tensor({frames, skel.joint_count, 3}), skel);
}

}  // namespace

TEST_CASE("kl divergence closed forms") {
  LatentGaussian a{Tensor({1, 3}), Tensor({1, 3})};
  REQUIRE(kl_divergence(a, a) == Approx(0.0).margin(1e-12));

  LatentGaussian p{Tensor::scalar(0.0).reshaped({1, 1}), Tensor({1, 1})};
  LatentGaussian q{Tensor::full({1, 1}, 1.0), Tensor({1, 1})};
  REQUIRE(kl_divergence(p, q) == Approx(0.5).margin(1e-12));

  // N(0, e) vs N(0, 1): 0.5 (e - 1 - ln e) = 0.5 (e - 2)
  LatentGaussian wide{Tensor({1, 1}), Tensor::full({1, 1}, 1.0)};
  LatentGaussian unit{Tensor({1, 1}), Tensor({1, 1})};
  REQUIRE(kl_divergence(wide, unit) == Approx(0.5 * (std::exp(1.0) - 2.0)).epsilon(1e-9));
}

TEST_CASE("kl divergence is nonnegative and matches the reference") {
  Rng rng(41);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t z = 1 + rng.integer(5);
    std::vector<double> mu1(z), lv1(z), mu2(z), lv2(z);
    LatentGaussian a{Tensor({1, z}), Tensor({1, z})};
    LatentGaussian b{Tensor({1, z}), Tensor({1, z})};
    for (std::size_t i = 0; i < z; ++i) {
      mu1[i] = a.mean(0, i) = rng.normal();
      lv1[i] = a.log_var(0, i) = rng.uniform(-2.0, 2.0);
      mu2[i] = b.mean(0, i) = rng.normal();
      lv2[i] = b.log_var(0, i) = rng.uniform(-2.0, 2.0);
    }
    const double got = kl_divergence(a, b);
    REQUIRE(got >= 0.0);
    REQUIRE(std::fabs(got - oracle::kl_gaussian(mu1, lv1, mu2, lv2)) < 1e-6);

    // graph version agrees
    nn::Var kg = KeyframeSampler::kl_v(ag::constant(a.mean), ag::constant(a.log_var),
                                       ag::constant(b.mean), ag::constant(b.log_var));
    REQUIRE(std::fabs(kg->value[0] - got) < 1e-9);
  }
}

TEST_CASE("encoders produce deterministic latent gaussians of the right width") {
  RunConfig cfg = sampler_config();
  KeyframeSampler sampler(cfg, 9);
  PoseSequence chunk = random_poses(cfg.skeleton, cfg.layout.transition_frames, 1);
  LatentGaussian g1 = sampler.encode_chunk(chunk);
  LatentGaussian g2 = sampler.encode_chunk(chunk);
  REQUIRE(g1.mean.cols() == cfg.sampler.latent_dim);
  REQUIRE(g1.log_var.cols() == cfg.sampler.latent_dim);
  for (std::size_t i = 0; i < g1.mean.size(); ++i) {
    REQUIRE(g1.mean[i] == g2.mean[i]);
    REQUIRE(g1.log_var[i] == g2.log_var[i]);
  }
  REQUIRE_THROWS_AS(sampler.encode_chunk(random_poses(cfg.skeleton, 3, 2)), ValidationError);

  Tensor kf({1, cfg.skeleton.joint_count * 3});
  LatentGaussian prior = sampler.encode_keyframe(kf);
  REQUIRE(prior.mean.cols() == cfg.sampler.latent_dim);
  REQUIRE_THROWS_AS(sampler.encode_keyframe(Tensor({2, cfg.skeleton.joint_count * 3})),
                    ValidationError);
}

TEST_CASE("zero-weight encoders reduce to their biases") {
  RunConfig cfg = sampler_config();
  KeyframeSampler sampler(cfg, 10);
  for (const char* name : {"enc1.w", "enc2.w", "enc_mu.w", "enc_lv.w"})
    sampler.params.find(name)->value.fill(0.0);
  sampler.params.find("enc_mu.b")->value.fill(0.25);
  sampler.params.find("enc_lv.b")->value.fill(-0.5);
  LatentGaussian g =
      sampler.encode_chunk(random_poses(cfg.skeleton, cfg.layout.transition_frames, 3));
  for (std::size_t i = 0; i < g.mean.size(); ++i) {
    REQUIRE(g.mean[i] == Approx(0.25));
    REQUIRE(g.log_var[i] == Approx(-0.5));
  }
}

TEST_CASE("decode produces chunk-shaped deterministic output") {
  RunConfig cfg = sampler_config();
  KeyframeSampler sampler(cfg, 11);
  Rng rng(4);
  Tensor z = rng.normal_tensor({1, cfg.sampler.latent_dim});
  Tensor kf = rng.normal_tensor({1, cfg.skeleton.joint_count * 3});
  PoseSequence a = sampler.decode_chunk(z, kf);
  PoseSequence b = sampler.decode_chunk(z, kf);
  REQUIRE(a.frames() == cfg.layout.transition_frames);
  REQUIRE(a.joints() == cfg.skeleton.joint_count);
  for (std::size_t i = 0; i < a.data.size(); ++i) REQUIRE(a.data[i] == b.data[i]);
}

TEST_CASE("training on one repeated chunk collapses the reconstruction error") {
  RunConfig cfg = sampler_config();
  cfg.sampler.epochs = 150;
  cfg.sampler.learning_rate = 3e-3;
  KeyframeSampler sampler(cfg, 12);
  PoseSequence chunk = random_poses(cfg.skeleton, cfg.layout.transition_frames, 5);

  auto recon_l1 = [&] {
    LatentGaussian post = sampler.encode_chunk(chunk);
    Tensor kf({1, cfg.skeleton.joint_count * 3});
    const Tensor m = chunk.as_matrix();
    for (std::size_t c = 0; c < kf.cols(); ++c) kf(0, c) = m(0, c);
    PoseSequence rec = sampler.decode_chunk(post.mean, kf);
    double acc = 0.0;
    for (std::size_t i = 0; i < rec.data.size(); ++i)
      acc += std::fabs(rec.data[i] - chunk.data[i]);
    return acc / static_cast<double>(rec.data.size());
  };

  const double before = recon_l1();
  SamplerReport report = pretrain_sampler(sampler, {chunk}, cfg.sampler, 77);
  const double after = recon_l1();
  REQUIRE(report.epochs_run == cfg.sampler.epochs);
  REQUIRE(after < 0.10 * before);
  REQUIRE(sampler.trained());
}

TEST_CASE("latent sampling concentrates around the mean") {
  LatentGaussian g{Tensor({1, 3}), Tensor({1, 3})};
  g.mean(0, 0) = 1.0;
  g.mean(0, 1) = -2.0;
  g.log_var.fill(std::log(0.09));  // sigma = 0.3
  Rng rng(5);
  Tensor acc({1, 3});
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    Tensor z = KeyframeSampler::sample_latent(g, rng);
    for (std::size_t c = 0; c < 3; ++c) acc(0, c) += z(0, c);
  }
  for (std::size_t c = 0; c < 3; ++c) {
    const double mean = acc(0, c) / n;
    REQUIRE(std::fabs(mean - g.mean(0, c)) < 3.0 * 0.3 / std::sqrt(static_cast<double>(n)));
  }
}

TEST_CASE("blend_chunks: crossfade midpoint averages left and right") {
  Tensor left = Tensor::full({4, 2}, 0.0);
  Tensor right = Tensor::full({4, 2}, 1.0);
  Tensor track = blend_chunks({left, right}, {0, 4}, 8, 2);
  // fade window is frames 3..5 with weights 0, 1/2, 1
  REQUIRE(track(2, 0) == 0.0);
  REQUIRE(track(3, 0) == 0.0);
  REQUIRE(track(4, 0) == Approx(0.5));
  REQUIRE(track(5, 0) == 1.0);
  REQUIRE(track(7, 1) == 1.0);
}

TEST_CASE("reference track covers the layout and is seed-deterministic") {
  RunConfig cfg = RunConfig::desk_preset();
  cfg.skeleton = SkeletonSpec::desk_default(2);
  cfg.sampler.latent_dim = 4;
  cfg.sampler.hidden = 16;
  KeyframeSampler sampler(cfg, 20);
  sampler.mark_trained();
  PoseSequence head = random_poses(cfg.skeleton, cfg.layout.head_frames, 6);
  PoseSequence tail = random_poses(cfg.skeleton, cfg.layout.tail_frames, 7);

  // default layout: 150 frames from 5 chunks of 30
  PoseSequence track = sampler.sample_reference_track(1, cfg.layout, head, tail, 99);
  REQUIRE(track.frames() == 150);
  REQUIRE(track.data.all_finite());

  PoseSequence again = sampler.sample_reference_track(1, cfg.layout, head, tail, 99);
  for (std::size_t i = 0; i < track.data.size(); ++i)
    REQUIRE(track.data[i] == again.data[i]);

  PoseSequence other = sampler.sample_reference_track(1, cfg.layout, head, tail, 100);
  double l1 = 0.0;
  for (std::size_t i = 0; i < track.data.size(); ++i)
    l1 += std::fabs(track.data[i] - other.data[i]);
  REQUIRE(l1 > 0.0);
}

TEST_CASE("untrained sampler refuses to produce tracks") {
  RunConfig cfg = sampler_config();
  KeyframeSampler sampler(cfg, 21);
  PoseSequence head = random_poses(cfg.skeleton, cfg.layout.head_frames, 8);
  PoseSequence tail = random_poses(cfg.skeleton, cfg.layout.tail_frames, 9);
  REQUIRE_THROWS_AS(sampler.sample_reference_track(1, cfg.layout, head, tail, 1),
                    MissingPrerequisiteError);
}

TEST_CASE("vae gradients pass the finite-difference check") {
  RunConfig cfg = sampler_config();
  KeyframeSampler sampler(cfg, 22);
  PoseSequence chunk = random_poses(cfg.skeleton, cfg.layout.transition_frames, 10);
  const Tensor chunk_m = chunk.as_matrix();
  const Tensor chunk_row = chunk_m.reshaped({1, chunk_m.size()});
  Tensor kf({1, cfg.skeleton.joint_count * 3});
  for (std::size_t c = 0; c < kf.cols(); ++c) kf(0, c) = chunk_m(1, c);
  Rng noise_rng(11);
  const Tensor noise = noise_rng.normal_tensor({1, cfg.sampler.latent_dim});

  Rng rng(12);
  auto fd = oracle::finite_difference_check(
      [&] {
        auto [mu_q, lv_q] = sampler.posterior_v(ag::constant(chunk_row));
        auto [mu_p, lv_p] = sampler.prior_v(ag::constant(kf));
        nn::Var z = ag::add(
            mu_q, ag::mul(ag::exp_(ag::mul_scalar(lv_q, 0.5)), ag::constant(noise)));
        nn::Var recon = sampler.decode_v(z, ag::constant(kf));
        nn::Var l1 = ag::l1_loss(recon, ag::constant(chunk_m));
        return ag::add(l1, ag::mul_scalar(
                               KeyframeSampler::kl_v(mu_q, lv_q, mu_p, lv_p), 0.1));
      },
      {sampler.params.find("enc1.w"), sampler.params.find("enc_mu.w"),
       sampler.params.find("enc_lv.w"), sampler.params.find("pri_mu.b"),
       sampler.params.find("dec1.w"), sampler.params.find("dec2.w")},
      4, rng);
  REQUIRE(fd.max_rel_error < 1e-4);
}

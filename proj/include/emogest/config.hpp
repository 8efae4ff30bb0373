#pragma once

// Run configuration: every tunable in one struct, serialized as a flat
// key = value document. Parsing is strict (unknown keys are errors) and the
// round trip is lossless, including doubles.

#include <cstdio>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "emogest/core.hpp"

namespace emogest {

struct AudioConfig {
  double sample_rate = 16000.0;
  std::size_t fft_size = 1024;
  std::size_t hop_length = 512;
  std::size_t mel_bins = 80;
  double log_floor = 1e-5;
};

struct ModelConfig {
  std::size_t feature_dim = 512;  // D
  std::size_t heads = 8;
  std::size_t attention_blocks = 3;
  std::vector<std::size_t> encoder_widths = {32, 64, 128};
  std::size_t ff_hidden = 0;       // 0 = 2*D
  std::size_t decoder_hidden = 0;  // 0 = D
  std::size_t mtim_hidden = 0;     // 0 = D
  bool softplus_gamma = true;
  double gamma_eps = 1e-4;
};

struct SamplerConfig {
  std::size_t latent_dim = 32;
  std::size_t hidden = 128;
  double beta_kl = 0.1;
  std::size_t crossfade = 4;
  double learning_rate = 1e-3;
  std::size_t epochs = 40;
};

struct ClassifierConfig {
  std::size_t blocks = 3;
  std::size_t hidden = 128;
  double learning_rate = 1e-3;
  std::size_t epochs = 60;
  double target_accuracy = 0.99;  // early-stop threshold on train accuracy
};

struct DiscriminatorConfig {
  std::vector<std::size_t> widths = {64, 64};
  bool use_positions = false;  // concat raw poses to velocity features
  double real_target = 0.9;    // label smoothing for the real class
};

struct TrainConfig {
  double lambda_r = 20.0;
  double lambda_adv = 2.0;
  double learning_rate = 3e-4;
  std::size_t epochs = 100;
  std::size_t batch_size = 96;
  double grad_clip = 5.0;
  std::size_t checkpoint_every = 10;
};

struct EvalConfig {
  std::size_t fgd_feature_dim = 128;
  std::size_t fgd_hidden = 256;
  double fgd_learning_rate = 1e-3;
  std::size_t fgd_epochs = 40;
  double bc_sigma = 0.1;  // seconds
  std::size_t diversity_pairs = 500;
  std::size_t generations_per_audio = 5;
  std::size_t fgd_chunk_draws = 5;
};

struct DataConfig {
  std::size_t pairs_per_head = 2;
  int confidence_threshold = 4;
  double speaker_sim_threshold = 0.75;
  double wer_threshold = 0.125;
  std::size_t max_retries = 2;
  std::size_t phoneme_budget = 30;
  double test_fraction = 0.2;
};

struct RunConfig {
  std::uint64_t seed = 42;
  bool deterministic = true;
  std::size_t seed_frames = 4;  // M conditioning poses
  SegmentLayout layout;
  SkeletonSpec skeleton = SkeletonSpec::desk_default();
  EmotionVocabulary emotions = EmotionVocabulary::beat_default();
  AudioConfig audio;
  ModelConfig model;
  SamplerConfig sampler;
  ClassifierConfig classifier;
  DiscriminatorConfig discriminator;
  TrainConfig train;
  EvalConfig eval;
  DataConfig data;

  std::size_t ff_hidden() const {
    return model.ff_hidden ? model.ff_hidden : 2 * model.feature_dim;
  }
  std::size_t decoder_hidden() const {
    return model.decoder_hidden ? model.decoder_hidden : model.feature_dim;
  }
  std::size_t mtim_hidden() const {
    return model.mtim_hidden ? model.mtim_hidden : model.feature_dim;
  }

  void validate() const {
    layout.validate();
    skeleton.validate();
    emotions.validate();
    if (model.feature_dim == 0 || model.heads == 0 || model.feature_dim % model.heads != 0)
      throw ValidationError("RunConfig: feature_dim must be a positive multiple of heads");
    if (train.lambda_r <= 0 || train.lambda_adv <= 0 || train.learning_rate <= 0)
      throw ValidationError("RunConfig: loss weights and learning rate must be positive");
    if (train.epochs == 0 || train.batch_size == 0)
      throw ValidationError("RunConfig: epochs and batch_size must be positive");
    if (audio.sample_rate <= 0 || audio.fft_size < audio.hop_length)
      throw ValidationError("RunConfig: bad audio analysis parameters");
    if (seed_frames == 0 || seed_frames > layout.head_frames)
      throw ValidationError("RunConfig: seed_frames must be in [1, head_frames]");
    if (model.encoder_widths.empty() || discriminator.widths.empty())
      throw ValidationError("RunConfig: encoder/discriminator widths must be non-empty");
  }

  // Small-dimension preset used by the synthetic desk-scale pipeline.
  static RunConfig desk_preset() {
    RunConfig c;
    c.skeleton = SkeletonSpec::desk_default(8);
    c.emotions = EmotionVocabulary(
        {"neutral", "anger", "happiness", "sadness", "surprise"});
    c.audio.sample_rate = 8000.0;
    c.audio.fft_size = 512;
    c.audio.hop_length = 512;
    c.audio.mel_bins = 32;
    c.model.feature_dim = 32;
    c.model.heads = 2;
    c.model.encoder_widths = {8, 16, 32};
    c.sampler.latent_dim = 8;
    c.sampler.hidden = 64;
    c.classifier.blocks = 2;
    c.classifier.hidden = 64;
    c.discriminator.widths = {16, 16};
    c.train.learning_rate = 1e-3;
    c.train.epochs = 20;
    c.train.batch_size = 16;
    c.eval.fgd_feature_dim = 16;
    c.eval.fgd_hidden = 64;
    return c;
  }

  std::string serialize() const;
  static RunConfig parse(const std::string& text);
  void save(const std::string& path) const;
  static RunConfig load(const std::string& path);
  std::uint64_t hash() const;
};

// ---------------------------------------------------------------------------

namespace config_detail {

inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

inline std::string join_strings(const std::vector<std::string>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
  return s;
}

inline std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

inline std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!s.empty()) out.push_back(cur);
  return out;
}

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace config_detail

inline std::string RunConfig::serialize() const {
  using namespace config_detail;
  std::ostringstream os;
  auto put = [&os](const std::string& k, const std::string& v) { os << k << " = " << v << "\n"; };
  put("run.seed", std::to_string(seed));
  put("run.deterministic", deterministic ? "true" : "false");
  put("run.seed_frames", std::to_string(seed_frames));
  put("layout.head_frames", std::to_string(layout.head_frames));
  put("layout.transition_frames", std::to_string(layout.transition_frames));
  put("layout.tail_frames", std::to_string(layout.tail_frames));
  put("skeleton.joint_count", std::to_string(skeleton.joint_count));
  put("skeleton.joint_names", join_strings(skeleton.joint_names));
  put("skeleton.parent_index", join_ints(skeleton.parent_index));
  put("skeleton.fps", fmt_double(skeleton.fps));
  put("emotions.names", join_strings(emotions.names()));
  put("audio.sample_rate", fmt_double(audio.sample_rate));
  put("audio.fft_size", std::to_string(audio.fft_size));
  put("audio.hop_length", std::to_string(audio.hop_length));
  put("audio.mel_bins", std::to_string(audio.mel_bins));
  put("audio.log_floor", fmt_double(audio.log_floor));
  put("model.feature_dim", std::to_string(model.feature_dim));
  put("model.heads", std::to_string(model.heads));
  put("model.attention_blocks", std::to_string(model.attention_blocks));
  put("model.encoder_widths", join_sizes(model.encoder_widths));
  put("model.ff_hidden", std::to_string(model.ff_hidden));
  put("model.decoder_hidden", std::to_string(model.decoder_hidden));
  put("model.mtim_hidden", std::to_string(model.mtim_hidden));
  put("model.softplus_gamma", model.softplus_gamma ? "true" : "false");
  put("model.gamma_eps", fmt_double(model.gamma_eps));
  put("sampler.latent_dim", std::to_string(sampler.latent_dim));
  put("sampler.hidden", std::to_string(sampler.hidden));
  put("sampler.beta_kl", fmt_double(sampler.beta_kl));
  put("sampler.crossfade", std::to_string(sampler.crossfade));
  put("sampler.learning_rate", fmt_double(sampler.learning_rate));
  put("sampler.epochs", std::to_string(sampler.epochs));
  put("classifier.blocks", std::to_string(classifier.blocks));
  put("classifier.hidden", std::to_string(classifier.hidden));
  put("classifier.learning_rate", fmt_double(classifier.learning_rate));
  put("classifier.epochs", std::to_string(classifier.epochs));
  put("classifier.target_accuracy", fmt_double(classifier.target_accuracy));
  put("discriminator.widths", join_sizes(discriminator.widths));
  put("discriminator.use_positions", discriminator.use_positions ? "true" : "false");
  put("discriminator.real_target", fmt_double(discriminator.real_target));
  put("train.lambda_r", fmt_double(train.lambda_r));
  put("train.lambda_adv", fmt_double(train.lambda_adv));
  put("train.learning_rate", fmt_double(train.learning_rate));
  put("train.epochs", std::to_string(train.epochs));
  put("train.batch_size", std::to_string(train.batch_size));
  put("train.grad_clip", fmt_double(train.grad_clip));
  put("train.checkpoint_every", std::to_string(train.checkpoint_every));
  put("eval.fgd_feature_dim", std::to_string(eval.fgd_feature_dim));
  put("eval.fgd_hidden", std::to_string(eval.fgd_hidden));
  put("eval.fgd_learning_rate", fmt_double(eval.fgd_learning_rate));
  put("eval.fgd_epochs", std::to_string(eval.fgd_epochs));
  put("eval.bc_sigma", fmt_double(eval.bc_sigma));
  put("eval.diversity_pairs", std::to_string(eval.diversity_pairs));
  put("eval.generations_per_audio", std::to_string(eval.generations_per_audio));
  put("eval.fgd_chunk_draws", std::to_string(eval.fgd_chunk_draws));
  put("data.pairs_per_head", std::to_string(data.pairs_per_head));
  put("data.confidence_threshold", std::to_string(data.confidence_threshold));
  put("data.speaker_sim_threshold", fmt_double(data.speaker_sim_threshold));
  put("data.wer_threshold", fmt_double(data.wer_threshold));
  put("data.max_retries", std::to_string(data.max_retries));
  put("data.phoneme_budget", std::to_string(data.phoneme_budget));
  put("data.test_fraction", fmt_double(data.test_fraction));
  return os.str();
}

inline RunConfig RunConfig::parse(const std::string& text) {
  using namespace config_detail;
  RunConfig c;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ValidationError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(t.substr(0, eq));
    const std::string val = trim(t.substr(eq + 1));
    auto as_u64 = [&] { return static_cast<std::uint64_t>(std::stoull(val)); };
    auto as_size = [&] { return static_cast<std::size_t>(std::stoull(val)); };
    auto as_int = [&] { return std::stoi(val); };
    auto as_double = [&] { return std::stod(val); };
    auto as_bool = [&] {
      if (val == "true") return true;
      if (val == "false") return false;
      throw ValidationError("config key " + key + ": expected true/false");
    };
    auto as_sizes = [&] {
      std::vector<std::size_t> out;
      for (const auto& p : split_commas(val)) out.push_back(std::stoull(trim(p)));
      return out;
    };
    auto as_ints = [&] {
      std::vector<int> out;
      for (const auto& p : split_commas(val)) out.push_back(std::stoi(trim(p)));
      return out;
    };
    auto as_strings = [&] {
      std::vector<std::string> out;
      for (const auto& p : split_commas(val)) out.push_back(trim(p));
      return out;
    };

    if (key == "run.seed") c.seed = as_u64();
    else if (key == "run.deterministic") c.deterministic = as_bool();
    else if (key == "run.seed_frames") c.seed_frames = as_size();
    else if (key == "layout.head_frames") c.layout.head_frames = as_size();
    else if (key == "layout.transition_frames") c.layout.transition_frames = as_size();
    else if (key == "layout.tail_frames") c.layout.tail_frames = as_size();
    else if (key == "skeleton.joint_count") c.skeleton.joint_count = as_size();
    else if (key == "skeleton.joint_names") c.skeleton.joint_names = as_strings();
    else if (key == "skeleton.parent_index") c.skeleton.parent_index = as_ints();
    else if (key == "skeleton.fps") c.skeleton.fps = as_double();
    else if (key == "emotions.names") c.emotions = EmotionVocabulary(as_strings());
    else if (key == "audio.sample_rate") c.audio.sample_rate = as_double();
    else if (key == "audio.fft_size") c.audio.fft_size = as_size();
    else if (key == "audio.hop_length") c.audio.hop_length = as_size();
    else if (key == "audio.mel_bins") c.audio.mel_bins = as_size();
    else if (key == "audio.log_floor") c.audio.log_floor = as_double();
    else if (key == "model.feature_dim") c.model.feature_dim = as_size();
    else if (key == "model.heads") c.model.heads = as_size();
    else if (key == "model.attention_blocks") c.model.attention_blocks = as_size();
    else if (key == "model.encoder_widths") c.model.encoder_widths = as_sizes();
    else if (key == "model.ff_hidden") c.model.ff_hidden = as_size();
    else if (key == "model.decoder_hidden") c.model.decoder_hidden = as_size();
    else if (key == "model.mtim_hidden") c.model.mtim_hidden = as_size();
    else if (key == "model.softplus_gamma") c.model.softplus_gamma = as_bool();
    else if (key == "model.gamma_eps") c.model.gamma_eps = as_double();
    else if (key == "sampler.latent_dim") c.sampler.latent_dim = as_size();
    else if (key == "sampler.hidden") c.sampler.hidden = as_size();
    else if (key == "sampler.beta_kl") c.sampler.beta_kl = as_double();
    else if (key == "sampler.crossfade") c.sampler.crossfade = as_size();
    else if (key == "sampler.learning_rate") c.sampler.learning_rate = as_double();
    else if (key == "sampler.epochs") c.sampler.epochs = as_size();
    else if (key == "classifier.blocks") c.classifier.blocks = as_size();
    else if (key == "classifier.hidden") c.classifier.hidden = as_size();
    else if (key == "classifier.learning_rate") c.classifier.learning_rate = as_double();
    else if (key == "classifier.epochs") c.classifier.epochs = as_size();
    else if (key == "classifier.target_accuracy") c.classifier.target_accuracy = as_double();
    else if (key == "discriminator.widths") c.discriminator.widths = as_sizes();
    else if (key == "discriminator.use_positions") c.discriminator.use_positions = as_bool();
    else if (key == "discriminator.real_target") c.discriminator.real_target = as_double();
    else if (key == "train.lambda_r") c.train.lambda_r = as_double();
    else if (key == "train.lambda_adv") c.train.lambda_adv = as_double();
    else if (key == "train.learning_rate") c.train.learning_rate = as_double();
    else if (key == "train.epochs") c.train.epochs = as_size();
    else if (key == "train.batch_size") c.train.batch_size = as_size();
    else if (key == "train.grad_clip") c.train.grad_clip = as_double();
    else if (key == "train.checkpoint_every") c.train.checkpoint_every = as_size();
    else if (key == "eval.fgd_feature_dim") c.eval.fgd_feature_dim = as_size();
    else if (key == "eval.fgd_hidden") c.eval.fgd_hidden = as_size();
    else if (key == "eval.fgd_learning_rate") c.eval.fgd_learning_rate = as_double();
    else if (key == "eval.fgd_epochs") c.eval.fgd_epochs = as_size();
    else if (key == "eval.bc_sigma") c.eval.bc_sigma = as_double();
    else if (key == "eval.diversity_pairs") c.eval.diversity_pairs = as_size();
    else if (key == "eval.generations_per_audio") c.eval.generations_per_audio = as_size();
    else if (key == "eval.fgd_chunk_draws") c.eval.fgd_chunk_draws = as_size();
    else if (key == "data.pairs_per_head") c.data.pairs_per_head = as_size();
    else if (key == "data.confidence_threshold") c.data.confidence_threshold = as_int();
    else if (key == "data.speaker_sim_threshold") c.data.speaker_sim_threshold = as_double();
    else if (key == "data.wer_threshold") c.data.wer_threshold = as_double();
    else if (key == "data.max_retries") c.data.max_retries = as_size();
    else if (key == "data.phoneme_budget") c.data.phoneme_budget = as_size();
    else if (key == "data.test_fraction") c.data.test_fraction = as_double();
    else throw ValidationError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
  }
  return c;
}

inline void RunConfig::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("RunConfig::save: cannot open " + path);
  out << serialize();
}

inline RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingPrerequisiteError("RunConfig::load: cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return parse(os.str());
}

// FNV-1a over the canonical serialization.
inline std::uint64_t RunConfig::hash() const {
  const std::string s = serialize();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string hash_hex(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace emogest
